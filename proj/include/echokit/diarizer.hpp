#pragma once

#include <array>
#include <fstream>
#include <map>
#include <set>

#include "echokit/common.hpp"
#include "echokit/features.hpp"
#include "echokit/gmm.hpp"
#include "echokit/session.hpp"

namespace echokit {

inline constexpr const char *kChild = "child";
inline constexpr const char *kTherapist = "therapist";
inline constexpr const char *kSilence = "silence";
inline constexpr const char *kNoise = "noise";
inline constexpr const char *kSpeech = "speech";

// ---------------------------------------------------------------------------
// Energy VAD and the rule-based VAD+activity fusion.
// ---------------------------------------------------------------------------

namespace detail {

// turns a per-frame label sequence into time segments, merging runs
inline SegmentLabeling frames_to_segments(const std::vector<std::string> &labels,
                                          double frame_shift_s, double start_offset_s) {
  SegmentLabeling out;
  std::size_t i = 0;
  while (i < labels.size()) {
    std::size_t j = i;
    while (j + 1 < labels.size() && labels[j + 1] == labels[i]) ++j;
    Segment s;
    s.start_s = start_offset_s + static_cast<double>(i) * frame_shift_s;
    s.end_s = start_offset_s + static_cast<double>(j + 1) * frame_shift_s;
    s.label = labels[i];
    out.segments.push_back(s);
    i = j + 1;
  }
  out.validate();
  return out;
}

}  // namespace detail

// Frames at or above the energy threshold are speech; runs become segments.
inline SegmentLabeling vad_segments(const std::vector<double> &log_energy, double threshold,
                                    double frame_shift_s = 0.010, double start_offset_s = 0.0) {
  if (log_energy.empty()) throw InsufficientDataError("vad_segments: no energy frames");
  std::vector<std::string> labels(log_energy.size());
  for (std::size_t i = 0; i < log_energy.size(); ++i)
    labels[i] = log_energy[i] >= threshold ? kSpeech : kSilence;
  return detail::frames_to_segments(labels, frame_shift_s, start_offset_s);
}

// Fusion rule per frame: below the VAD threshold -> silence; otherwise the
// activity value decides child (>= activity threshold) vs therapist.
inline SegmentLabeling vad_eta_diarize(const std::vector<double> &log_energy,
                                       const std::vector<double> &activity,
                                       double vad_threshold, double activity_threshold,
                                       double frame_shift_s = 0.010,
                                       double start_offset_s = 0.0) {
  if (log_energy.size() != activity.size())
    throw DimensionError("vad_eta_diarize: " + std::to_string(log_energy.size()) +
                         " energy frames vs " + std::to_string(activity.size()) +
                         " activity frames");
  if (log_energy.empty()) throw InsufficientDataError("vad_eta_diarize: no frames");
  if (!(activity_threshold >= 0.0 && activity_threshold <= 1.0))
    throw RangeError("vad_eta_diarize: activity threshold " +
                     std::to_string(activity_threshold) + " outside [0, 1]");
  std::vector<std::string> labels(log_energy.size());
  for (std::size_t i = 0; i < log_energy.size(); ++i) {
    if (log_energy[i] < vad_threshold)
      labels[i] = kSilence;
    else
      labels[i] = activity[i] >= activity_threshold ? kChild : kTherapist;
  }
  return detail::frames_to_segments(labels, frame_shift_s, start_offset_s);
}

// ---------------------------------------------------------------------------
// Ergodic HMM over speaker tokens, each token a fixed-length left-to-right
// chain of diagonal-GMM states.
// ---------------------------------------------------------------------------

struct ErgodicHmm {
  std::vector<std::string> tokens;
  int states_per_token = 5;
  int dim = 0;
  std::vector<DiagGmm> states;     // tokens.size() * states_per_token
  std::vector<double> self_loop;   // per state
  std::vector<double> token_trans; // tokens x tokens, row stochastic
  std::vector<double> priors;      // per token

  int num_states() const { return static_cast<int>(states.size()); }
  int num_tokens() const { return static_cast<int>(tokens.size()); }
  int state_index(int token, int s) const { return token * states_per_token + s; }
  int token_of_state(int s) const { return s / states_per_token; }

  int token_id(const std::string &name) const {
    for (int i = 0; i < num_tokens(); ++i)
      if (tokens[i] == name) return i;
    return -1;
  }

  void validate() const {
    if (tokens.empty()) throw ValidationError("ErgodicHmm: no tokens");
    if (states_per_token <= 0) throw ValidationError("ErgodicHmm: states_per_token must be positive");
    std::set<std::string> uniq(tokens.begin(), tokens.end());
    if (uniq.size() != tokens.size()) throw ValidationError("ErgodicHmm: duplicate token names");
    if (static_cast<int>(states.size()) != num_tokens() * states_per_token)
      throw DimensionError("ErgodicHmm: expected " +
                           std::to_string(num_tokens() * states_per_token) + " states, have " +
                           std::to_string(states.size()));
    if (self_loop.size() != states.size())
      throw DimensionError("ErgodicHmm: self_loop size mismatch");
    if (token_trans.size() != tokens.size() * tokens.size())
      throw DimensionError("ErgodicHmm: token_trans size mismatch");
    if (priors.size() != tokens.size()) throw DimensionError("ErgodicHmm: priors size mismatch");
    for (const auto &g : states) {
      g.validate();
      if (g.dim != dim) throw DimensionError("ErgodicHmm: state dim differs from model dim");
    }
    for (double p : self_loop)
      if (!(p > 0.0 && p < 1.0))
        throw ValidationError("ErgodicHmm: self-loop probability " + std::to_string(p) +
                              " outside (0, 1)");
    for (int i = 0; i < num_tokens(); ++i) {
      double row = 0.0;
      for (int j = 0; j < num_tokens(); ++j) row += token_trans[i * num_tokens() + j];
      if (std::abs(row - 1.0) > 1e-6)
        throw ValidationError("ErgodicHmm: transition row for '" + tokens[i] +
                              "' sums to " + std::to_string(row));
    }
    double psum = 0.0;
    for (double p : priors) psum += p;
    if (std::abs(psum - 1.0) > 1e-6)
      throw ValidationError("ErgodicHmm: priors sum to " + std::to_string(psum));
  }
};

struct ErgodicHmmConfig {
  std::vector<std::string> tokens = {kChild, kTherapist, kSilence, kNoise};
  int states_per_token = 5;
  int max_components = 4;
  int num_iterations = 10;
  int grow_interval = 2;     // double the mixture size every this many iterations
  double self_loop_init = 0.9;
  double var_floor_scale = 1e-3;
  double prob_floor = 1e-8;  // applied to transitions and priors after training
};

struct DiarizationUtterance {
  std::string id;
  FeatureMatrix features;
  std::vector<std::string> transcript;  // turn-level token sequence, no fillers
};

struct TrainStats {
  std::vector<double> corpus_log_likelihood;  // one entry per EM iteration
  std::vector<int> components_per_state;      // mixture size when each entry was taken
};

namespace detail {

struct GraphArc {
  int src = 0, dst = 0;
  bool cross = false;  // leaves a chain (token transition applies)
};

// Linear utterance graph: required token chains in transcript order with an
// optional filler chain available in every gap, before the first token and
// after the last.
struct TrainGraph {
  std::vector<int> node_state;  // graph node -> model state index
  std::vector<int> node_token;  // graph node -> token id
  std::vector<GraphArc> arcs;   // advance and cross arcs (self loops implicit)
  std::vector<int> entry_nodes;
  std::vector<int> exit_nodes;
};

inline TrainGraph build_train_graph(const ErgodicHmm &model,
                                    const std::vector<std::string> &transcript,
                                    const std::vector<int> &filler_ids) {
  TrainGraph g;
  const int S = model.states_per_token;

  std::vector<int> required;
  required.reserve(transcript.size());
  for (const auto &name : transcript) {
    int id = model.token_id(name);
    if (id < 0)
      throw ValidationError("transcript token '" + name + "' is not in the model");
    required.push_back(id);
  }
  if (required.empty()) throw ValidationError("empty transcript");

  auto add_chain = [&](int token) {
    int first = static_cast<int>(g.node_state.size());
    for (int s = 0; s < S; ++s) {
      g.node_state.push_back(model.state_index(token, s));
      g.node_token.push_back(token);
      if (s > 0) g.arcs.push_back({first + s - 1, first + s, false});
    }
    return first;  // last node is first + S - 1
  };

  // gap i sits before required token i; gap N trails the last token
  const int n = static_cast<int>(required.size());
  std::vector<std::vector<int>> gap_firsts(n + 1);
  std::vector<int> req_firsts(n);
  for (int i = 0; i <= n; ++i)
    for (int f : filler_ids) gap_firsts[i].push_back(add_chain(f));
  for (int i = 0; i < n; ++i) req_firsts[i] = add_chain(required[i]);

  auto last_of = [&](int first) { return first + S - 1; };

  for (int f : gap_firsts[0]) g.entry_nodes.push_back(f);
  g.entry_nodes.push_back(req_firsts[0]);
  for (int i = 0; i < n; ++i) {
    for (int f : gap_firsts[i]) g.arcs.push_back({last_of(f), req_firsts[i], true});
    int src = last_of(req_firsts[i]);
    if (i + 1 < n) {
      for (int f : gap_firsts[i + 1]) g.arcs.push_back({src, f, true});
      g.arcs.push_back({src, req_firsts[i + 1], true});
    } else {
      for (int f : gap_firsts[n]) g.arcs.push_back({src, f, true});
      g.exit_nodes.push_back(src);
      for (int f : gap_firsts[n]) g.exit_nodes.push_back(last_of(f));
    }
  }
  return g;
}

inline double arc_log_prob(const ErgodicHmm &m, const TrainGraph &g, const GraphArc &a) {
  int src_state = g.node_state[a.src];
  double leave = std::log1p(-m.self_loop[src_state]);
  if (!a.cross) return leave;
  int ti = g.node_token[a.src], tj = g.node_token[a.dst];
  double tr = m.token_trans[ti * m.num_tokens() + tj];
  return leave + (tr > 0 ? std::log(tr) : kLogZero);
}

}  // namespace detail

// Accumulators for one embedded EM pass over the whole corpus.
struct EmbeddedAccumulators {
  std::vector<GmmAccumulator> state_acc;
  std::vector<double> self_count, leave_count;      // per state
  std::vector<double> trans_count;                  // tokens x tokens
  std::vector<double> prior_count;                  // per token
  std::vector<double> token_occupancy;              // per token

  void reset(const ErgodicHmm &m) {
    state_acc.resize(m.num_states());
    for (int s = 0; s < m.num_states(); ++s) state_acc[s].reset(m.states[s]);
    self_count.assign(m.num_states(), 0.0);
    leave_count.assign(m.num_states(), 0.0);
    trans_count.assign(m.tokens.size() * m.tokens.size(), 0.0);
    prior_count.assign(m.tokens.size(), 0.0);
    token_occupancy.assign(m.tokens.size(), 0.0);
  }
};

namespace detail {

// Forward-backward over one utterance graph; accumulates sufficient
// statistics and returns the utterance log likelihood.
inline double accumulate_utterance(const ErgodicHmm &model, const TrainGraph &g,
                                   const FeatureMatrix &feats, EmbeddedAccumulators &acc) {
  const int T = feats.rows;
  const int N = static_cast<int>(g.node_state.size());
  if (T == 0) throw InsufficientDataError("utterance has no feature frames");

  // emission log likelihoods per model state, shared across graph nodes
  std::vector<int> used_states(g.node_state.begin(), g.node_state.end());
  std::sort(used_states.begin(), used_states.end());
  used_states.erase(std::unique(used_states.begin(), used_states.end()), used_states.end());
  std::vector<double> em(static_cast<std::size_t>(T) * model.num_states(), kLogZero);
  for (int t = 0; t < T; ++t)
    for (int s : used_states)
      em[static_cast<std::size_t>(t) * model.num_states() + s] =
          model.states[s].log_likelihood(feats.row(t));
  auto emit = [&](int t, int node) {
    return em[static_cast<std::size_t>(t) * model.num_states() + g.node_state[node]];
  };

  std::vector<double> arc_lp(g.arcs.size());
  for (std::size_t a = 0; a < g.arcs.size(); ++a) arc_lp[a] = arc_log_prob(model, g, g.arcs[a]);
  std::vector<double> self_lp(N), exit_lp(N, kLogZero);
  for (int n = 0; n < N; ++n) self_lp[n] = std::log(model.self_loop[g.node_state[n]]);
  for (int n : g.exit_nodes) exit_lp[n] = std::log1p(-model.self_loop[g.node_state[n]]);

  std::vector<double> alpha(static_cast<std::size_t>(T) * N, kLogZero);
  std::vector<double> beta(static_cast<std::size_t>(T) * N, kLogZero);
  auto A = [&](int t, int n) -> double & { return alpha[static_cast<std::size_t>(t) * N + n]; };
  auto B = [&](int t, int n) -> double & { return beta[static_cast<std::size_t>(t) * N + n]; };

  for (int n : g.entry_nodes) {
    double p = model.priors[g.node_token[n]];
    A(0, n) = (p > 0 ? std::log(p) : kLogZero) + emit(0, n);
  }
  for (int t = 1; t < T; ++t) {
    for (int n = 0; n < N; ++n)
      if (A(t - 1, n) > kLogZero) A(t, n) = A(t - 1, n) + self_lp[n];
    for (std::size_t a = 0; a < g.arcs.size(); ++a) {
      double v = A(t - 1, g.arcs[a].src);
      if (v > kLogZero)
        A(t, g.arcs[a].dst) = log_sum_exp(A(t, g.arcs[a].dst), v + arc_lp[a]);
    }
    for (int n = 0; n < N; ++n)
      if (A(t, n) > kLogZero) A(t, n) += emit(t, n);
  }

  double ll = kLogZero;
  for (int n : g.exit_nodes)
    if (A(T - 1, n) > kLogZero) ll = log_sum_exp(ll, A(T - 1, n) + exit_lp[n]);
  if (!(ll > kLogZero))
    throw TrainingError("utterance graph admits no path through " + std::to_string(T) +
                        " frames (transcript too long for the audio)");

  for (int n : g.exit_nodes) B(T - 1, n) = exit_lp[n];
  for (int t = T - 2; t >= 0; --t) {
    for (int n = 0; n < N; ++n)
      if (B(t + 1, n) > kLogZero) B(t, n) = self_lp[n] + emit(t + 1, n) + B(t + 1, n);
    for (std::size_t a = 0; a < g.arcs.size(); ++a) {
      double v = B(t + 1, g.arcs[a].dst);
      if (v > kLogZero) {
        double add = arc_lp[a] + emit(t + 1, g.arcs[a].dst) + v;
        B(t, g.arcs[a].src) = log_sum_exp(B(t, g.arcs[a].src), add);
      }
    }
  }

  // state occupancies
  for (int t = 0; t < T; ++t) {
    for (int n = 0; n < N; ++n) {
      double lg = A(t, n) + B(t, n) - ll;
      if (lg < -46.0) continue;
      double gamma = std::exp(lg);
      int s = g.node_state[n];
      acc.state_acc[s].accumulate(model.states[s], feats.row(t), gamma);
      acc.token_occupancy[g.node_token[n]] += gamma;
    }
  }
  // entry counts
  for (int n : g.entry_nodes) {
    double lg = A(0, n) + B(0, n) - ll;
    if (lg >= -46.0) acc.prior_count[g.node_token[n]] += std::exp(lg);
  }
  // transition counts: self loops, advances, crosses, exits
  for (int t = 0; t + 1 < T; ++t) {
    for (int n = 0; n < N; ++n) {
      double v = A(t, n);
      if (v <= kLogZero) continue;
      double lg = v + self_lp[n] + emit(t + 1, n) + B(t + 1, n) - ll;
      if (lg >= -46.0) acc.self_count[g.node_state[n]] += std::exp(lg);
    }
    for (std::size_t a = 0; a < g.arcs.size(); ++a) {
      double v = A(t, g.arcs[a].src);
      if (v <= kLogZero) continue;
      double lg = v + arc_lp[a] + emit(t + 1, g.arcs[a].dst) + B(t + 1, g.arcs[a].dst) - ll;
      if (lg < -46.0) continue;
      double xi = std::exp(lg);
      acc.leave_count[g.node_state[g.arcs[a].src]] += xi;
      if (g.arcs[a].cross) {
        int ti = g.node_token[g.arcs[a].src], tj = g.node_token[g.arcs[a].dst];
        acc.trans_count[ti * model.num_tokens() + tj] += xi;
      }
    }
  }
  for (int n : g.exit_nodes) {
    double lg = A(T - 1, n) + exit_lp[n] - ll;
    if (lg >= -46.0) acc.leave_count[g.node_state[n]] += std::exp(lg);
  }
  return ll;
}

}  // namespace detail

// Embedded Baum-Welch over turn transcripts. Starts flat (every state at the
// global data mean/variance) unless warm_start is given; mixture size doubles
// on the growth schedule up to max_components. Token transition and prior
// updates happen only for rows with observed counts, so each iteration is a
// true EM step and the corpus log likelihood is non-decreasing between
// architecture changes.
inline ErgodicHmm train_ergodic(const std::vector<DiarizationUtterance> &data,
                                const ErgodicHmmConfig &config, TrainStats *stats = nullptr,
                                const ErgodicHmm *warm_start = nullptr) {
  if (data.empty()) throw InsufficientDataError("train_ergodic: no training utterances");
  const int dim = data[0].features.cols;
  for (const auto &utt : data) {
    utt.features.validate();
    if (utt.features.cols != dim)
      throw DimensionError("train_ergodic: utterance '" + utt.id + "' has " +
                           std::to_string(utt.features.cols) + " feature columns, expected " +
                           std::to_string(dim));
  }

  // global statistics drive the flat start and the variance floor
  std::vector<double> gmean(dim, 0.0), gvar(dim, 0.0);
  std::size_t total_frames = 0;
  for (const auto &utt : data) {
    for (int t = 0; t < utt.features.rows; ++t) {
      const double *x = utt.features.row(t);
      for (int d = 0; d < dim; ++d) {
        gmean[d] += x[d];
        gvar[d] += x[d] * x[d];
      }
    }
    total_frames += static_cast<std::size_t>(utt.features.rows);
  }
  if (total_frames == 0) throw InsufficientDataError("train_ergodic: no feature frames");
  for (int d = 0; d < dim; ++d) {
    gmean[d] /= static_cast<double>(total_frames);
    gvar[d] = std::max(gvar[d] / static_cast<double>(total_frames) - gmean[d] * gmean[d], 1e-8);
  }
  std::vector<double> var_floor(dim);
  for (int d = 0; d < dim; ++d) var_floor[d] = config.var_floor_scale * gvar[d];

  ErgodicHmm model;
  if (warm_start) {
    model = *warm_start;
    model.validate();
    if (model.dim != dim)
      throw DimensionError("train_ergodic: warm start dim " + std::to_string(model.dim) +
                           " does not match data dim " + std::to_string(dim));
  } else {
    model.tokens = config.tokens;
    model.states_per_token = config.states_per_token;
    model.dim = dim;
    const int num_states = model.num_tokens() * model.states_per_token;
    model.states.assign(num_states, DiagGmm::single(gmean, gvar));
    model.self_loop.assign(num_states, config.self_loop_init);
    model.token_trans.assign(model.tokens.size() * model.tokens.size(),
                             1.0 / static_cast<double>(model.tokens.size()));
    model.priors.assign(model.tokens.size(), 1.0 / static_cast<double>(model.tokens.size()));
  }

  std::vector<int> filler_ids;
  for (const char *name : {kSilence, kNoise}) {
    int id = model.token_id(name);
    if (id >= 0) filler_ids.push_back(id);
  }

  std::set<std::string> transcribed;
  std::vector<detail::TrainGraph> graphs;
  graphs.reserve(data.size());
  for (const auto &utt : data) {
    graphs.push_back(detail::build_train_graph(model, utt.transcript, filler_ids));
    for (const auto &tok : utt.transcript) transcribed.insert(tok);
  }

  EmbeddedAccumulators acc;
  for (int iter = 0; iter < config.num_iterations; ++iter) {
    if (!warm_start && iter > 0 && config.grow_interval > 0 && iter % config.grow_interval == 0) {
      int current = model.states[0].num_components();
      int target = std::min(config.max_components, current * 2);
      if (target > current)
        for (auto &g : model.states) gmm_split(g, target);
    }

    acc.reset(model);
    double corpus_ll = 0.0;
    for (std::size_t u = 0; u < data.size(); ++u)
      corpus_ll += detail::accumulate_utterance(model, graphs[u], data[u].features, acc);
    if (stats) {
      stats->corpus_log_likelihood.push_back(corpus_ll);
      stats->components_per_state.push_back(model.states[0].num_components());
    }

    for (const auto &tok : transcribed) {
      int id = model.token_id(tok);
      if (acc.token_occupancy[id] < 1e-3)
        throw TrainingError("token '" + tok + "' received no frame occupancy during training");
    }

    for (int s = 0; s < model.num_states(); ++s) {
      gmm_mstep(model.states[s], acc.state_acc[s], var_floor);
      double stay = acc.self_count[s], leave = acc.leave_count[s];
      if (stay + leave > 1e-8)
        model.self_loop[s] = std::min(std::max(stay / (stay + leave), 1e-6), 1.0 - 1e-6);
    }
    const int nt = model.num_tokens();
    for (int i = 0; i < nt; ++i) {
      double row = 0.0;
      for (int j = 0; j < nt; ++j) row += acc.trans_count[i * nt + j];
      if (row > 1e-8)
        for (int j = 0; j < nt; ++j) model.token_trans[i * nt + j] = acc.trans_count[i * nt + j] / row;
    }
    double psum = std::accumulate(acc.prior_count.begin(), acc.prior_count.end(), 0.0);
    if (psum > 1e-8)
      for (int i = 0; i < nt; ++i) model.priors[i] = acc.prior_count[i] / psum;
  }

  // floor transitions and priors once so decoding can reach every token
  const int nt = model.num_tokens();
  for (int i = 0; i < nt; ++i) {
    double row = 0.0;
    for (int j = 0; j < nt; ++j) {
      double &v = model.token_trans[i * nt + j];
      v = std::max(v, config.prob_floor);
      row += v;
    }
    for (int j = 0; j < nt; ++j) model.token_trans[i * nt + j] /= row;
  }
  double psum = 0.0;
  for (double &p : model.priors) {
    p = std::max(p, config.prob_floor);
    psum += p;
  }
  for (double &p : model.priors) p /= psum;

  model.validate();
  return model;
}

// Viterbi decoding over the full ergodic topology; adjacent frames with the
// same token merge into one segment.
inline SegmentLabeling hmm_decode(const ErgodicHmm &model, const FeatureMatrix &feats,
                                  double start_offset_s = 0.0) {
  model.validate();
  if (feats.cols != model.dim)
    throw DimensionError("hmm_decode: " + std::to_string(feats.cols) +
                         " feature columns vs model dim " + std::to_string(model.dim));
  const int T = feats.rows;
  if (T == 0) throw InsufficientDataError("hmm_decode: no frames");
  const int N = model.num_states();
  const int S = model.states_per_token;
  const int nt = model.num_tokens();

  std::vector<double> em(N);
  std::vector<double> delta(N, kLogZero), next(N, kLogZero);
  std::vector<int> psi(static_cast<std::size_t>(T) * N, -1);

  std::vector<double> log_self(N), log_leave(N);
  for (int s = 0; s < N; ++s) {
    log_self[s] = std::log(model.self_loop[s]);
    log_leave[s] = std::log1p(-model.self_loop[s]);
  }
  std::vector<double> log_trans(nt * nt);
  for (int i = 0; i < nt * nt; ++i)
    log_trans[i] = model.token_trans[i] > 0 ? std::log(model.token_trans[i]) : kLogZero;

  for (int k = 0; k < nt; ++k) {
    int s0 = model.state_index(k, 0);
    delta[s0] = (model.priors[k] > 0 ? std::log(model.priors[k]) : kLogZero) +
                model.states[s0].log_likelihood(feats.row(0));
  }

  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < N; ++s) em[s] = model.states[s].log_likelihood(feats.row(t));
    // best token-final score feeding cross transitions
    for (int s = 0; s < N; ++s) {
      double best = delta[s] > kLogZero ? delta[s] + log_self[s] : kLogZero;
      int arg = best > kLogZero ? s : -1;
      int pos = s % S;
      if (pos > 0) {
        double v = delta[s - 1];
        if (v > kLogZero) {
          v += log_leave[s - 1];
          if (v > best) { best = v; arg = s - 1; }
        }
      } else {
        int tok = s / S;
        for (int j = 0; j < nt; ++j) {
          int src = model.state_index(j, S - 1);
          double v = delta[src];
          if (v <= kLogZero) continue;
          v += log_leave[src] + log_trans[j * nt + tok];
          if (v > best) { best = v; arg = src; }
        }
      }
      next[s] = best > kLogZero ? best + em[s] : kLogZero;
      psi[static_cast<std::size_t>(t) * N + s] = arg;
    }
    std::swap(delta, next);
  }

  int best_state = 0;
  for (int s = 1; s < N; ++s)
    if (delta[s] > delta[best_state]) best_state = s;
  if (!(delta[best_state] > kLogZero))
    throw TrainingError("hmm_decode: no admissible state sequence");

  std::vector<int> path(T);
  path[T - 1] = best_state;
  for (int t = T - 1; t > 0; --t) path[t - 1] = psi[static_cast<std::size_t>(t) * N + path[t]];

  std::vector<std::string> labels(T);
  for (int t = 0; t < T; ++t) labels[t] = model.tokens[model.token_of_state(path[t])];
  return detail::frames_to_segments(labels, feats.frame_shift_s, start_offset_s);
}

// ---------------------------------------------------------------------------
// Segment postprocessing: bridge short silences inside a speaker's turn, then
// discard speech fragments too short to be real. Iterates to a fixed point so
// applying it twice changes nothing.
// ---------------------------------------------------------------------------

inline SegmentLabeling postprocess_labeling(const SegmentLabeling &in, double merge_gap_s = 0.1,
                                            double min_speech_s = 0.05,
                                            const std::set<std::string> &non_speech = {kSilence,
                                                                                       kNoise}) {
  if (merge_gap_s < 0 || min_speech_s < 0)
    throw RangeError("postprocess_labeling: negative duration parameter");
  auto is_speech = [&](const std::string &label) { return non_speech.count(label) == 0; };

  std::vector<Segment> segs = in.segments;
  std::sort(segs.begin(), segs.end(),
            [](const Segment &a, const Segment &b) { return a.start_s < b.start_s; });

  auto coalesce = [&]() {
    std::vector<Segment> out;
    for (const auto &s : segs) {
      if (!out.empty() && out.back().label == s.label && s.start_s <= out.back().end_s + 1e-9)
        out.back().end_s = std::max(out.back().end_s, s.end_s);
      else
        out.push_back(s);
    }
    segs.swap(out);
  };

  bool changed = true;
  int guard = 0;
  while (changed && guard++ < 64) {
    changed = false;
    coalesce();

    // merge same-speaker segments separated only by silence shorter than the gap
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (!is_speech(segs[i].label)) continue;
      std::size_t j = i + 1;
      while (j < segs.size() && segs[j].label == kSilence) ++j;
      if (j >= segs.size() || segs[j].label != segs[i].label) continue;
      double gap = segs[j].start_s - segs[i].end_s;
      if (gap < merge_gap_s) {
        segs[i].end_s = segs[j].end_s;
        segs.erase(segs.begin() + static_cast<std::ptrdiff_t>(i) + 1,
                   segs.begin() + static_cast<std::ptrdiff_t>(j) + 1);
        changed = true;
      }
    }

    // short speech fragments become silence
    for (auto &s : segs) {
      if (is_speech(s.label) && s.end_s - s.start_s < min_speech_s) {
        s.label = kSilence;
        changed = true;
      }
    }
  }
  coalesce();

  SegmentLabeling out;
  out.segments = std::move(segs);
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Semi-supervised retraining: decode unlabeled sessions with the current
// model, turn the decoded speech runs into turn transcripts, then retrain
// warm-started from the same model on labeled plus hypothesized data.
// ---------------------------------------------------------------------------

inline std::vector<std::string> hypothesized_transcript(const ErgodicHmm &model,
                                                        const SegmentLabeling &decoded) {
  std::vector<std::string> transcript;
  for (const auto &seg : decoded.segments) {
    if (seg.label == kSilence || seg.label == kNoise) continue;
    if (model.token_id(seg.label) < 0) continue;
    transcript.push_back(seg.label);
  }
  return transcript;
}

inline ErgodicHmm semi_supervised_retrain(const ErgodicHmm &model,
                                          const std::vector<DiarizationUtterance> &labeled,
                                          const std::vector<FeatureMatrix> &unlabeled,
                                          const ErgodicHmmConfig &config,
                                          TrainStats *stats = nullptr) {
  std::vector<DiarizationUtterance> combined = labeled;
  int skipped = 0;
  for (std::size_t u = 0; u < unlabeled.size(); ++u) {
    SegmentLabeling decoded = hmm_decode(model, unlabeled[u]);
    auto transcript = hypothesized_transcript(model, decoded);
    if (transcript.empty()) {
      ++skipped;
      continue;
    }
    DiarizationUtterance utt;
    utt.id = "hypothesized_" + std::to_string(u);
    utt.features = unlabeled[u];
    utt.transcript = std::move(transcript);
    combined.push_back(std::move(utt));
  }
  if (combined.empty())
    throw InsufficientDataError("semi_supervised_retrain: no usable utterances (" +
                                std::to_string(skipped) + " decoded to pure non-speech)");
  return train_ergodic(combined, config, stats, &model);
}

// ---------------------------------------------------------------------------
// Model serialization (versioned binary, exact double round trip).
// ---------------------------------------------------------------------------

inline void save_diarizer(const ErgodicHmm &model, const std::string &path) {
  model.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write("EKHM", 4);
  detail::write_pod<std::uint32_t>(os, 1);  // version
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.tokens.size()));
  for (const auto &t : model.tokens) detail::write_string(os, t);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.states_per_token));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.dim));
  for (const auto &g : model.states) {
    detail::write_doubles(os, g.weights);
    detail::write_doubles(os, g.means);
    detail::write_doubles(os, g.vars);
  }
  detail::write_doubles(os, model.self_loop);
  detail::write_doubles(os, model.token_trans);
  detail::write_doubles(os, model.priors);
  if (!os) throw IoError("failed writing " + path);
}

inline ErgodicHmm load_diarizer(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "EKHM")
    throw FormatError(path + ": not a diarizer model file");
  std::uint32_t version = detail::read_pod<std::uint32_t>(is);
  if (version != 1)
    throw FormatError(path + ": unsupported diarizer model version " + std::to_string(version));
  ErgodicHmm m;
  std::uint32_t nt = detail::read_pod<std::uint32_t>(is);
  if (nt == 0 || nt > 1024) throw FormatError(path + ": implausible token count");
  for (std::uint32_t i = 0; i < nt; ++i) m.tokens.push_back(detail::read_string(is));
  m.states_per_token = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  m.dim = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  int num_states = static_cast<int>(nt) * m.states_per_token;
  m.states.resize(num_states);
  for (auto &g : m.states) {
    g.dim = m.dim;
    g.weights = detail::read_doubles(is);
    g.means = detail::read_doubles(is);
    g.vars = detail::read_doubles(is);
    g.prepare();
  }
  m.self_loop = detail::read_doubles(is);
  m.token_trans = detail::read_doubles(is);
  m.priors = detail::read_doubles(is);
  m.validate();
  return m;
}

}  // namespace echokit
