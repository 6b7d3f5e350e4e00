#pragma once

#include "echokit/features.hpp"

namespace echokit {

struct PitchConfig {
  double min_f0_hz = 60.0;
  double max_f0_hz = 400.0;
  double frame_length_s = 0.040;  // long enough for two periods at 60 Hz
  double frame_shift_s = 0.010;
  int max_candidates = 8;
  double transition_weight = 2.0;   // DP penalty per |log lag ratio|
  double lag_bias = 0.02;           // slight preference for shorter lags
  double voicing_threshold = 0.35;  // pov below this counts as unvoiced
};

namespace detail {

struct PitchCandidate {
  int lag = 0;
  double ncc = 0.0;     // normalized autocorrelation at this lag
  double merit = 0.0;   // ncc minus the octave bias
};

// Normalized cross-correlation over a fixed overlap so all lags are
// comparable: r(t) = sum x[n] x[n+t] / sqrt(sum x^2 * sum x_shifted^2).
inline std::vector<double> nccf(const float *x, int frame_len, int min_lag, int max_lag) {
  const int overlap = frame_len - max_lag;
  std::vector<double> r(max_lag + 1, 0.0);
  double e0 = 1e-20;
  for (int n = 0; n < overlap; ++n) e0 += static_cast<double>(x[n]) * x[n];
  for (int lag = min_lag; lag <= max_lag; ++lag) {
    double cross = 0.0, e1 = 1e-20;
    for (int n = 0; n < overlap; ++n) {
      cross += static_cast<double>(x[n]) * x[n + lag];
      e1 += static_cast<double>(x[n + lag]) * x[n + lag];
    }
    r[lag] = cross / std::sqrt(e0 * e1);
  }
  return r;
}

}  // namespace detail

// Three pitch-related columns per 10 ms frame: pov (peak normalized
// autocorrelation, clamped to [0,1], a probability-of-voicing surrogate),
// logf0 (DP-smoothed pitch with unvoiced stretches interpolated from
// voiced neighbors), and dlogf0 (symmetric first difference).
inline FeatureMatrix compute_pitch(const AudioTrack &audio, const PitchConfig &config = {}) {
  audio.validate();
  const int sr = audio.sample_rate;
  const int len = static_cast<int>(std::lround(config.frame_length_s * sr));
  const int shift = static_cast<int>(std::lround(config.frame_shift_s * sr));
  const int min_lag = std::max(2, static_cast<int>(std::floor(sr / config.max_f0_hz)));
  const int max_lag = std::min(len - 8, static_cast<int>(std::ceil(sr / config.min_f0_hz)));
  if (max_lag <= min_lag)
    throw RangeError("compute_pitch: f0 search range empty for this frame length");
  const int t = frame_count(audio.samples.size(), len, shift);
  if (t == 0) throw InsufficientDataError("compute_pitch: audio shorter than one pitch window");

  std::vector<std::vector<detail::PitchCandidate>> cands(t);
  std::vector<double> pov(t, 0.0);
  std::vector<std::vector<double>> ncc(t);

  for (int k = 0; k < t; ++k) {
    const float *frame = audio.samples.data() + static_cast<std::size_t>(k) * shift;
    ncc[k] = detail::nccf(frame, len, min_lag, max_lag);
    const auto &r = ncc[k];

    double peak = 0.0;
    for (int lag = min_lag; lag <= max_lag; ++lag) peak = std::max(peak, r[lag]);
    pov[k] = std::min(1.0, std::max(0.0, peak));

    auto &c = cands[k];
    for (int lag = min_lag; lag <= max_lag; ++lag) {
      bool local_max = (lag == min_lag || r[lag] >= r[lag - 1]) &&
                       (lag == max_lag || r[lag] >= r[lag + 1]);
      if (!local_max) continue;
      detail::PitchCandidate pc;
      pc.lag = lag;
      pc.ncc = r[lag];
      pc.merit = r[lag] - config.lag_bias * (lag - min_lag) / static_cast<double>(max_lag - min_lag);
      c.push_back(pc);
    }
    std::stable_sort(c.begin(), c.end(), [](const auto &a, const auto &b) {
      if (a.merit != b.merit) return a.merit > b.merit;
      return a.lag < b.lag;
    });
    if (static_cast<int>(c.size()) > config.max_candidates) c.resize(config.max_candidates);
    if (c.empty()) c.push_back({min_lag, 0.0, 0.0});
  }

  // DP over candidates: stay close in log-lag between frames
  std::vector<std::vector<double>> cost(t);
  std::vector<std::vector<int>> back(t);
  for (int k = 0; k < t; ++k) {
    cost[k].assign(cands[k].size(), 0.0);
    back[k].assign(cands[k].size(), -1);
    for (std::size_t i = 0; i < cands[k].size(); ++i) {
      double local = -cands[k][i].merit;
      if (k == 0) {
        cost[k][i] = local;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      int best_j = 0;
      for (std::size_t j = 0; j < cands[k - 1].size(); ++j) {
        double trans = config.transition_weight *
                       std::abs(std::log(static_cast<double>(cands[k][i].lag) / cands[k - 1][j].lag));
        if (cost[k - 1][j] + trans < best) {
          best = cost[k - 1][j] + trans;
          best_j = static_cast<int>(j);
        }
      }
      cost[k][i] = local + best;
      back[k][i] = best_j;
    }
  }
  std::vector<int> path(t, 0);
  {
    std::size_t best_i = 0;
    for (std::size_t i = 1; i < cost[t - 1].size(); ++i)
      if (cost[t - 1][i] < cost[t - 1][best_i]) best_i = i;
    path[t - 1] = static_cast<int>(best_i);
    for (int k = t - 1; k > 0; --k) path[k - 1] = back[k][path[k]];
  }

  // readout with parabolic interpolation around the chosen lag
  std::vector<double> logf0(t);
  std::vector<bool> voiced(t);
  for (int k = 0; k < t; ++k) {
    const auto &r = ncc[k];
    int lag = cands[k][path[k]].lag;
    double refined = lag;
    if (lag > min_lag && lag < max_lag) {
      double ym = r[lag - 1], y0 = r[lag], yp = r[lag + 1];
      double denom = ym - 2.0 * y0 + yp;
      if (std::abs(denom) > 1e-12) refined += 0.5 * (ym - yp) / denom;
    }
    refined = std::min(static_cast<double>(max_lag), std::max(static_cast<double>(min_lag), refined));
    logf0[k] = std::log(sr / refined);
    voiced[k] = pov[k] >= config.voicing_threshold;
  }

  // unvoiced stretches carry interpolated logf0 from voiced neighbors
  {
    int first_voiced = -1, last_voiced = -1;
    for (int k = 0; k < t; ++k)
      if (voiced[k]) {
        if (first_voiced < 0) first_voiced = k;
        last_voiced = k;
      }
    if (first_voiced < 0) {
      std::fill(logf0.begin(), logf0.end(), std::log(150.0));
    } else {
      for (int k = 0; k < first_voiced; ++k) logf0[k] = logf0[first_voiced];
      for (int k = last_voiced + 1; k < t; ++k) logf0[k] = logf0[last_voiced];
      int prev = first_voiced;
      for (int k = first_voiced + 1; k <= last_voiced; ++k) {
        if (!voiced[k]) continue;
        for (int u = prev + 1; u < k; ++u) {
          double a = static_cast<double>(u - prev) / (k - prev);
          logf0[u] = (1.0 - a) * logf0[prev] + a * logf0[k];
        }
        prev = k;
      }
    }
  }

  FeatureMatrix out;
  out.resize(t, 3);
  out.frame_shift_s = config.frame_shift_s;
  out.frame_length_s = config.frame_length_s;
  out.column_labels = {"pov", "logf0", "dlogf0"};
  for (int k = 0; k < t; ++k) {
    out.at(k, 0) = pov[k];
    out.at(k, 1) = logf0[k];
    double d;
    if (t == 1)
      d = 0.0;
    else if (k == 0)
      d = logf0[1] - logf0[0];
    else if (k == t - 1)
      d = logf0[t - 1] - logf0[t - 2];
    else
      d = 0.5 * (logf0[k + 1] - logf0[k - 1]);
    out.at(k, 2) = d;
  }
  return out;
}

}  // namespace echokit
