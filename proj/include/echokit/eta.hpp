#pragma once

#include <fstream>

#include "echokit/session.hpp"

namespace echokit {

// Mean over all echo-return positions of the per-position temporal variance
// inside a sliding window of ultrasound frames. High values mean the frame
// content changes quickly, a proxy for tongue movement.
struct EtaSignal {
  std::vector<double> values;   // one per window position
  double window_s = 0.16;
  int hop_frames = 1;
  double fps = 121.2;
  double start_offset_s = 0.0;  // time of the first window's center
  bool normalized = false;

  double center_time(std::size_t i) const { return start_offset_s + i * hop_frames / fps; }
  double hop_s() const { return hop_frames / fps; }
};

// Population (divide-by-W) variance. All per-pixel series are shifted by the
// pixel's first-frame value before accumulation; variance is shift-invariant,
// and this makes constant sequences come out as exact zeros instead of
// rounding dust.
inline EtaSignal compute_eta(const UltrasoundSequence &seq, double window_s = 0.16,
                             int hop_frames = 1) {
  seq.validate();
  if (hop_frames < 1) throw RangeError("compute_eta: hop_frames must be >= 1");
  const int w = static_cast<int>(std::lround(window_s * seq.fps));
  if (w < 2)
    throw RangeError("compute_eta: window of " + std::to_string(window_s) +
                     " s spans fewer than 2 frames at fps " + std::to_string(seq.fps));
  const int t_total = seq.num_frames;
  if (t_total < w)
    throw InsufficientDataError("compute_eta: need at least W=" + std::to_string(w) +
                                " frames, have T=" + std::to_string(t_total));

  const int num_windows = (t_total - w) / hop_frames + 1;
  const int rows = seq.num_scanlines;
  const int cols = seq.num_echoes;

  std::vector<double> totals(num_windows, 0.0);

  // Prefix sums per scan line keep the working set small; windows are then
  // range differences, O(T * pixels) overall.
  std::vector<double> ps(static_cast<std::size_t>(t_total + 1) * cols);
  std::vector<double> pq(static_cast<std::size_t>(t_total + 1) * cols);
  std::vector<double> base(cols);

  for (int r = 0; r < rows; ++r) {
    const float *first = seq.frame(0) + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) base[c] = first[c];
    for (int c = 0; c < cols; ++c) {
      ps[c] = 0.0;
      pq[c] = 0.0;
    }
    for (int t = 0; t < t_total; ++t) {
      const float *row = seq.frame(t) + static_cast<std::size_t>(r) * cols;
      const double *sp = &ps[static_cast<std::size_t>(t) * cols];
      const double *qp = &pq[static_cast<std::size_t>(t) * cols];
      double *sn = &ps[static_cast<std::size_t>(t + 1) * cols];
      double *qn = &pq[static_cast<std::size_t>(t + 1) * cols];
      for (int c = 0; c < cols; ++c) {
        double d = row[c] - base[c];
        sn[c] = sp[c] + d;
        qn[c] = qp[c] + d * d;
      }
    }
    for (int wi = 0; wi < num_windows; ++wi) {
      const int p = wi * hop_frames;
      const double *s0 = &ps[static_cast<std::size_t>(p) * cols];
      const double *s1 = &ps[static_cast<std::size_t>(p + w) * cols];
      const double *q0 = &pq[static_cast<std::size_t>(p) * cols];
      const double *q1 = &pq[static_cast<std::size_t>(p + w) * cols];
      double acc = 0.0;
      for (int c = 0; c < cols; ++c) {
        double s = s1[c] - s0[c];
        double q = q1[c] - q0[c];
        acc += q - s * s / w;
      }
      totals[wi] += acc;
    }
  }

  EtaSignal sig;
  sig.window_s = window_s;
  sig.hop_frames = hop_frames;
  sig.fps = seq.fps;
  sig.start_offset_s = seq.sync_offset_s + (w - 1) / (2.0 * seq.fps);
  sig.normalized = false;
  sig.values.resize(num_windows);
  const double denom = static_cast<double>(w) * rows * cols;
  for (int wi = 0; wi < num_windows; ++wi) sig.values[wi] = totals[wi] / denom;
  return sig;
}

// Per-utterance min-max scaling. Constant signals map to all-zeros.
// Re-normalizing is rejected so a trace cannot be scaled twice by accident.
inline EtaSignal normalize_unity(const EtaSignal &sig) {
  if (sig.normalized) throw ValidationError("normalize_unity: signal is already normalized");
  if (sig.values.empty()) throw InsufficientDataError("normalize_unity: empty signal");
  EtaSignal out = sig;
  double lo = sig.values[0], hi = sig.values[0];
  for (double v : sig.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
  } else {
    for (double &v : out.values) v = (v - lo) / (hi - lo);
  }
  out.normalized = true;
  return out;
}

inline const char *kEtaActive = "active";
inline const char *kEtaInactive = "inactive";

// Thresholds a normalized signal into active/inactive runs. Segment times
// come from window centers, extended half a hop on each side.
inline SegmentLabeling eta_activity(const EtaSignal &sig, double threshold) {
  if (!sig.normalized) throw ValidationError("eta_activity: signal must be normalized");
  if (threshold < 0 || threshold > 1)
    throw RangeError("eta_activity: threshold " + std::to_string(threshold) + " outside [0,1]");
  if (sig.values.empty()) throw InsufficientDataError("eta_activity: empty signal");

  SegmentLabeling out;
  const double half_hop = 0.5 * sig.hop_s();
  std::size_t run_start = 0;
  bool run_active = sig.values[0] >= threshold;
  auto flush = [&](std::size_t last) {
    Segment s;
    s.start_s = sig.center_time(run_start) - half_hop;
    s.end_s = sig.center_time(last) + half_hop;
    s.label = run_active ? kEtaActive : kEtaInactive;
    out.segments.push_back(s);
  };
  for (std::size_t i = 1; i < sig.values.size(); ++i) {
    bool active = sig.values[i] >= threshold;
    if (active != run_active) {
      flush(i - 1);
      run_start = i;
      run_active = active;
    }
  }
  flush(sig.values.size() - 1);
  return out;
}

// Resamples the signal onto an acoustic frame clock by nearest window
// center; positions outside the window span clamp to the edge value.
// Acoustic frame k is anchored at its center, (k + 0.5) * frame_shift_s.
inline std::vector<double> eta_frame_feature(const EtaSignal &sig, double frame_shift_s,
                                             int num_frames) {
  if (num_frames <= 0) throw RangeError("eta_frame_feature: requested zero frames");
  if (sig.values.empty()) throw InsufficientDataError("eta_frame_feature: empty signal");
  const double step = sig.hop_s();
  const long last = static_cast<long>(sig.values.size()) - 1;
  std::vector<double> out(num_frames);
  for (int k = 0; k < num_frames; ++k) {
    double t = (k + 0.5) * frame_shift_s;
    long j = static_cast<long>(std::floor((t - sig.start_offset_s) / step));
    long lo = std::min(std::max(j, 0L), last);
    long hi = std::min(std::max(j + 1, 0L), last);
    // tie goes to the lower index
    double dl = std::abs(t - sig.center_time(static_cast<std::size_t>(lo)));
    double dh = std::abs(t - sig.center_time(static_cast<std::size_t>(hi)));
    out[k] = sig.values[static_cast<std::size_t>(dh < dl ? hi : lo)];
  }
  return out;
}

// Trace export for plotting: `t_center_s,value` rows.
inline void export_eta_csv(const EtaSignal &sig, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ETA trace: " + path);
  out << "t_center_s,value\n";
  char buf[80];
  for (std::size_t i = 0; i < sig.values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.12g\n", sig.center_time(i), sig.values[i]);
    out << buf;
  }
}

}  // namespace echokit
