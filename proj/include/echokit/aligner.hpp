#pragma once

#include <fstream>
#include <map>
#include <sstream>

#include "echokit/common.hpp"
#include "echokit/diarizer.hpp"
#include "echokit/embedder.hpp"
#include "echokit/features.hpp"
#include "echokit/gmm.hpp"
#include "echokit/session.hpp"

namespace echokit {

// ---------------------------------------------------------------------------
// Lexicon: word -> phone sequence, plus the phone inventory.
// ---------------------------------------------------------------------------

struct Lexicon {
  std::map<std::string, std::vector<std::string>> entries;
  std::vector<std::string> phones;  // sorted inventory, silence included
  std::string silence_phone = "sil";

  int phone_id(const std::string &name) const {
    auto it = std::lower_bound(phones.begin(), phones.end(), name);
    if (it == phones.end() || *it != name) return -1;
    return static_cast<int>(it - phones.begin());
  }

  const std::vector<std::string> &pronunciation(const std::string &word) const {
    auto it = entries.find(word);
    if (it == entries.end()) throw OovError("word '" + word + "' is not in the lexicon");
    return it->second;
  }

  // rebuild the sorted inventory from the entries and the silence phone
  void rebuild_inventory() {
    std::set<std::string> inv;
    inv.insert(silence_phone);
    for (const auto &[word, pron] : entries) {
      (void)word;
      for (const auto &p : pron) inv.insert(p);
    }
    phones.assign(inv.begin(), inv.end());
  }

  void validate() const {
    if (phones.empty()) throw ValidationError("Lexicon: empty phone inventory");
    if (phone_id(silence_phone) < 0)
      throw ValidationError("Lexicon: silence phone '" + silence_phone +
                            "' missing from inventory");
    for (const auto &[word, pron] : entries) {
      if (pron.empty()) throw ValidationError("Lexicon: word '" + word + "' has no phones");
      for (const auto &p : pron)
        if (phone_id(p) < 0)
          throw ValidationError("Lexicon: word '" + word + "' uses unknown phone '" + p + "'");
    }
  }
};

// word<TAB>phone phone ... per line
inline Lexicon load_lexicon(const std::string &path, const std::string &silence_phone = "sil") {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  Lexicon lex;
  lex.silence_phone = silence_phone;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected word<TAB>phones");
    std::string word = line.substr(0, tab);
    std::istringstream rest(line.substr(tab + 1));
    std::vector<std::string> pron;
    std::string phone;
    while (rest >> phone) pron.push_back(phone);
    if (word.empty() || pron.empty())
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty word or pronunciation");
    lex.entries[word] = std::move(pron);
  }
  lex.rebuild_inventory();
  lex.validate();
  return lex;
}

inline void save_lexicon(const Lexicon &lex, const std::string &path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  for (const auto &[word, pron] : lex.entries) {
    os << word << '\t';
    for (std::size_t i = 0; i < pron.size(); ++i) os << (i ? " " : "") << pron[i];
    os << '\n';
  }
  if (!os) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Monophone acoustic model: 3-state left-to-right chain per phone. Emissions
// are per-state diagonal GMMs, or rows of a posterior matrix divided by state
// priors (scaled likelihoods).
// ---------------------------------------------------------------------------

struct MonophoneModel {
  std::vector<std::string> phones;  // sorted, silence included
  std::string silence_phone = "sil";
  int states_per_phone = 3;
  int dim = 0;
  bool posterior_mode = false;
  std::vector<DiagGmm> states;        // gmm mode: phones x states_per_phone
  std::vector<double> state_priors;   // posterior mode
  std::vector<double> self_loop;      // per state, both modes

  int num_states() const { return static_cast<int>(phones.size()) * states_per_phone; }

  int phone_id(const std::string &name) const {
    auto it = std::lower_bound(phones.begin(), phones.end(), name);
    if (it == phones.end() || *it != name) return -1;
    return static_cast<int>(it - phones.begin());
  }

  int state_index(int phone, int s) const { return phone * states_per_phone + s; }

  std::string state_name(int s) const {
    return phones[s / states_per_phone] + "_" + std::to_string(s % states_per_phone);
  }

  void validate() const {
    if (phones.empty()) throw ValidationError("MonophoneModel: no phones");
    if (!std::is_sorted(phones.begin(), phones.end()))
      throw ValidationError("MonophoneModel: phone inventory must be sorted");
    if (phone_id(silence_phone) < 0)
      throw ValidationError("MonophoneModel: silence phone '" + silence_phone + "' missing");
    if (states_per_phone <= 0)
      throw ValidationError("MonophoneModel: states_per_phone must be positive");
    if (self_loop.size() != static_cast<std::size_t>(num_states()))
      throw DimensionError("MonophoneModel: self_loop size mismatch");
    for (double p : self_loop)
      if (!(p > 0.0 && p < 1.0))
        throw ValidationError("MonophoneModel: self-loop probability outside (0, 1)");
    if (posterior_mode) {
      if (state_priors.size() != static_cast<std::size_t>(num_states()))
        throw DimensionError("MonophoneModel: state_priors size mismatch");
      double sum = 0.0;
      for (double p : state_priors) {
        if (!(p > 0.0)) throw ValidationError("MonophoneModel: non-positive state prior");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-6)
        throw ValidationError("MonophoneModel: state priors sum to " + std::to_string(sum));
    } else {
      if (states.size() != static_cast<std::size_t>(num_states()))
        throw DimensionError("MonophoneModel: expected " + std::to_string(num_states()) +
                             " emission states, have " + std::to_string(states.size()));
      for (const auto &g : states) {
        g.validate();
        if (g.dim != dim) throw DimensionError("MonophoneModel: state dim differs from model dim");
      }
    }
  }
};

namespace detail {

inline constexpr double kPosteriorFloor = 1e-30;

inline void check_emission_dims(const MonophoneModel &m, const FeatureMatrix &f) {
  int expected = m.posterior_mode ? m.num_states() : m.dim;
  if (f.cols != expected)
    throw DimensionError("alignment features have " + std::to_string(f.cols) +
                         " columns, model expects " + std::to_string(expected));
}

inline double emission_log_lik(const MonophoneModel &m, const FeatureMatrix &f, int t, int s) {
  if (m.posterior_mode)
    return std::log(std::max(f.at(t, s), kPosteriorFloor)) - std::log(m.state_priors[s]);
  return m.states[s].log_likelihood(f.row(t));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear alignment graph: optional silence, word 1, optional silence, ...,
// word N, optional silence. Phones expand to their state chains.
// ---------------------------------------------------------------------------

struct AlignGraph {
  struct Node {
    int emission_state = 0;  // index into the model's state table
    int word_index = -1;     // -1 for silence positions
    std::string label;       // word string, or the silence label
  };
  std::vector<Node> nodes;                 // topological order
  std::vector<std::pair<int, int>> arcs;   // advance arcs between nodes
  std::vector<int> entries, exits;
  std::vector<std::string> words;          // the prompt, in order
  int num_silence_positions = 0;
  int min_required_frames = 0;             // all word states, silences skipped
};

inline AlignGraph build_align_graph(const Prompt &prompt, const Lexicon &lexicon,
                                    const MonophoneModel &model) {
  lexicon.validate();
  if (prompt.target_words.empty()) throw ValidationError("build_align_graph: empty prompt");
  for (const auto &w : prompt.target_words) lexicon.pronunciation(w);  // throws OovError

  AlignGraph g;
  g.words = prompt.target_words;

  int sil_phone = model.phone_id(lexicon.silence_phone);
  if (sil_phone < 0)
    throw ValidationError("build_align_graph: model lacks silence phone '" +
                          lexicon.silence_phone + "'");

  auto add_phone_chain = [&](int phone, int word_index, const std::string &label) {
    int first = static_cast<int>(g.nodes.size());
    for (int s = 0; s < model.states_per_phone; ++s) {
      AlignGraph::Node n;
      n.emission_state = model.state_index(phone, s);
      n.word_index = word_index;
      n.label = label;
      g.nodes.push_back(n);
      if (s > 0) g.arcs.emplace_back(first + s - 1, first + s);
    }
    return std::pair<int, int>{first, first + model.states_per_phone - 1};
  };

  // frontier: node ids that feed the next chain; from_start marks whether the
  // virtual start still reaches it (only until the first word is placed, since
  // silences are optional but words are not)
  std::vector<int> frontier;
  bool from_start = true;
  auto connect = [&](int first) {
    if (from_start) g.entries.push_back(first);
    for (int src : frontier) g.arcs.emplace_back(src, first);
  };

  const int n = static_cast<int>(g.words.size());
  for (int i = 0; i <= n; ++i) {
    auto [sf, sl] = add_phone_chain(sil_phone, -1, kSilence);
    connect(sf);
    ++g.num_silence_positions;
    frontier.push_back(sl);  // the silence is optional: old frontier may skip it
    if (i < n) {
      const auto &pron = lexicon.pronunciation(g.words[i]);
      int word_last = -1;
      for (std::size_t pi = 0; pi < pron.size(); ++pi) {
        auto [pf, pl] = add_phone_chain(model.phone_id(pron[pi]), i, g.words[i]);
        if (pi == 0) {
          connect(pf);
          from_start = false;
        } else {
          g.arcs.emplace_back(word_last, pf);
        }
        word_last = pl;
      }
      g.min_required_frames += static_cast<int>(pron.size()) * model.states_per_phone;
      frontier = {word_last};
    } else {
      g.exits = frontier;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Viterbi over a linear graph.
// ---------------------------------------------------------------------------

namespace detail {

struct LinearViterbiResult {
  double score = kLogZero;
  std::vector<int> path;  // node per frame
};

template <typename EmitFn>
LinearViterbiResult viterbi_linear(const AlignGraph &g, const MonophoneModel &m, int num_frames,
                                   EmitFn emit) {
  const int N = static_cast<int>(g.nodes.size());
  LinearViterbiResult res;
  if (num_frames <= 0) return res;

  std::vector<double> log_self(N), log_leave(N);
  for (int n = 0; n < N; ++n) {
    double p = m.self_loop[g.nodes[n].emission_state];
    log_self[n] = std::log(p);
    log_leave[n] = std::log1p(-p);
  }

  std::vector<double> delta(N, kLogZero), next(N, kLogZero);
  std::vector<int> psi(static_cast<std::size_t>(num_frames) * N, -1);
  for (int n : g.entries) delta[n] = emit(0, g.nodes[n].emission_state);

  for (int t = 1; t < num_frames; ++t) {
    for (int n = 0; n < N; ++n)
      next[n] = delta[n] > kLogZero ? delta[n] + log_self[n] : kLogZero;
    for (int n = 0; n < N; ++n)
      psi[static_cast<std::size_t>(t) * N + n] = next[n] > kLogZero ? n : -1;
    for (const auto &[src, dst] : g.arcs) {
      if (delta[src] <= kLogZero) continue;
      double v = delta[src] + log_leave[src];
      if (v > next[dst]) {
        next[dst] = v;
        psi[static_cast<std::size_t>(t) * N + dst] = src;
      }
    }
    for (int n = 0; n < N; ++n)
      if (next[n] > kLogZero) next[n] += emit(t, g.nodes[n].emission_state);
    std::swap(delta, next);
  }

  int best = -1;
  for (int n : g.exits) {
    double v = delta[n] > kLogZero ? delta[n] + log_leave[n] : kLogZero;
    if (best < 0 || v > res.score) {
      if (v > res.score) {
        res.score = v;
        best = n;
      }
    }
  }
  if (best < 0 || !(res.score > kLogZero)) return res;

  res.path.resize(num_frames);
  res.path[num_frames - 1] = best;
  for (int t = num_frames - 1; t > 0; --t)
    res.path[t - 1] = psi[static_cast<std::size_t>(t) * N + res.path[t]];
  return res;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Therapist-frame masking.
// ---------------------------------------------------------------------------

struct MaskedFeatures {
  FeatureMatrix features;
  std::vector<int> kept;  // reduced frame index -> original frame index
  bool empty_result = false;
};

// Drops frames whose centers fall inside therapist segments. The diarization
// must span the feature time range.
inline MaskedFeatures mask_therapist(const FeatureMatrix &feats,
                                     const SegmentLabeling &diarization) {
  feats.validate();
  diarization.validate();
  if (feats.rows == 0) throw InsufficientDataError("mask_therapist: no feature frames");
  if (diarization.segments.empty())
    throw ValidationError("mask_therapist: empty diarization");
  double first_center = 0.5 * feats.frame_shift_s;
  double last_center = (feats.rows - 0.5) * feats.frame_shift_s;
  double cover_start = diarization.segments.front().start_s;
  double cover_end = diarization.segments.back().end_s;
  if (cover_start > first_center + 1e-9 || cover_end < last_center - 1e-9)
    throw ValidationError("mask_therapist: diarization covers [" + std::to_string(cover_start) +
                          ", " + std::to_string(cover_end) + "] but features span [" +
                          std::to_string(first_center) + ", " + std::to_string(last_center) + "]");

  MaskedFeatures out;
  out.features.rows = 0;
  out.features.cols = feats.cols;
  out.features.frame_shift_s = feats.frame_shift_s;
  out.features.frame_length_s = feats.frame_length_s;
  out.features.column_labels = feats.column_labels;

  std::size_t seg = 0;
  for (int t = 0; t < feats.rows; ++t) {
    double center = (t + 0.5) * feats.frame_shift_s;
    while (seg < diarization.segments.size() && diarization.segments[seg].end_s <= center) ++seg;
    bool therapist = seg < diarization.segments.size() &&
                     diarization.segments[seg].label == kTherapist &&
                     diarization.segments[seg].start_s <= center &&
                     center < diarization.segments[seg].end_s;
    if (!therapist) {
      out.kept.push_back(t);
      out.features.data.insert(out.features.data.end(), feats.row(t), feats.row(t) + feats.cols);
      ++out.features.rows;
    }
  }
  out.empty_result = out.kept.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Embedding-context augmentation.
// ---------------------------------------------------------------------------

enum class ContextMode { kSymmetric, kLeftOnly, kTotal };

// Concatenates the acoustic row with embeddings sampled at acoustic-frame
// offsets around it: symmetric -> {-c..+c}, left-only -> {-c..0}, total -> c
// consecutive frames ending at the current one. Each offset frame maps to the
// nearest ultrasound frame; edges replicate.
inline FeatureMatrix augment_with_embeddings(const FeatureMatrix &feats,
                                             const EmbeddingSequence &emb, int context = 4,
                                             ContextMode mode = ContextMode::kSymmetric) {
  feats.validate();
  emb.validate();
  if (emb.num_frames == 0)
    throw InsufficientDataError("augment_with_embeddings: empty embedding sequence");
  if (context < 0)
    throw RangeError("augment_with_embeddings: negative context " + std::to_string(context));
  if (!(emb.fps > 0)) throw ValidationError("augment_with_embeddings: embedding fps must be positive");

  std::vector<int> offsets;
  switch (mode) {
    case ContextMode::kSymmetric:
      for (int o = -context; o <= context; ++o) offsets.push_back(o);
      break;
    case ContextMode::kLeftOnly:
      for (int o = -context; o <= 0; ++o) offsets.push_back(o);
      break;
    case ContextMode::kTotal:
      for (int o = -(std::max(context, 1) - 1); o <= 0; ++o) offsets.push_back(o);
      break;
  }

  FeatureMatrix out;
  out.rows = feats.rows;
  out.cols = feats.cols + static_cast<int>(offsets.size()) * emb.dim;
  out.frame_shift_s = feats.frame_shift_s;
  out.frame_length_s = feats.frame_length_s;
  out.column_labels = feats.column_labels;
  for (int o : offsets) {
    std::string tag = o < 0 ? "m" + std::to_string(-o) : "p" + std::to_string(o);
    for (int d = 0; d < emb.dim; ++d)
      out.column_labels.push_back("emb_" + tag + "_" + std::to_string(d));
  }
  out.data.resize(static_cast<std::size_t>(out.rows) * out.cols);

  auto ultrasound_index = [&](int acoustic_frame) {
    double t = (acoustic_frame + 0.5) * feats.frame_shift_s;
    long idx = round_even((t - emb.sync_offset_s) * emb.fps);
    if (idx < 0) idx = 0;
    if (idx >= emb.num_frames) idx = emb.num_frames - 1;
    return static_cast<int>(idx);
  };

  for (int t = 0; t < feats.rows; ++t) {
    double *dst = &out.data[static_cast<std::size_t>(t) * out.cols];
    std::copy(feats.row(t), feats.row(t) + feats.cols, dst);
    double *cursor = dst + feats.cols;
    for (int o : offsets) {
      int frame = std::min(std::max(t + o, 0), feats.rows - 1);
      const double *e = emb.row(ultrasound_index(frame));
      std::copy(e, e + emb.dim, cursor);
      cursor += emb.dim;
    }
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Forced alignment.
// ---------------------------------------------------------------------------

// Viterbi over the linear graph; the frame path collapses to word and silence
// segments. With a kept-frame map, times are reported on the original clock
// and a word crossing removed frames splits at the gaps.
inline SegmentLabeling force_align(const FeatureMatrix &feats, const AlignGraph &graph,
                                   const MonophoneModel &model,
                                   const std::vector<int> *kept_map = nullptr,
                                   double start_offset_s = 0.0) {
  model.validate();
  feats.validate();
  detail::check_emission_dims(model, feats);
  if (kept_map && static_cast<int>(kept_map->size()) != feats.rows)
    throw DimensionError("force_align: kept-frame map has " + std::to_string(kept_map->size()) +
                         " entries for " + std::to_string(feats.rows) + " frames");
  if (feats.rows < graph.min_required_frames)
    throw AlignFailureError("force_align: " + std::to_string(feats.rows) +
                            " frames cannot realize a graph needing at least " +
                            std::to_string(graph.min_required_frames));

  auto res = detail::viterbi_linear(graph, model, feats.rows, [&](int t, int s) {
    return detail::emission_log_lik(model, feats, t, s);
  });
  if (res.path.empty())
    throw AlignFailureError("force_align: no complete path through the alignment graph");

  SegmentLabeling out;
  double shift = feats.frame_shift_s;
  auto orig = [&](int t) { return kept_map ? (*kept_map)[t] : t; };
  int t = 0;
  while (t < feats.rows) {
    const auto &node = graph.nodes[res.path[t]];
    std::string label = node.word_index < 0 ? std::string(kSilence) : node.label;
    int word_index = node.word_index;
    int j = t;
    // extend while same word instance (or silence run) and original frames stay contiguous
    while (j + 1 < feats.rows) {
      const auto &nn = graph.nodes[res.path[j + 1]];
      std::string nlabel = nn.word_index < 0 ? std::string(kSilence) : nn.label;
      if (nlabel != label || nn.word_index != word_index) break;
      if (orig(j + 1) != orig(j) + 1) break;
      ++j;
    }
    Segment s;
    s.start_s = start_offset_s + orig(t) * shift;
    s.end_s = start_offset_s + (orig(j) + 1) * shift;
    s.label = label;
    out.segments.push_back(s);
    t = j + 1;
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Posterior matrices and interpolation.
// ---------------------------------------------------------------------------

struct PosteriorMatrix {
  FeatureMatrix mat;  // rows of class posteriors, columns labeled by class

  void validate() const {
    mat.validate();
    for (int t = 0; t < mat.rows; ++t) {
      double sum = 0.0;
      for (int c = 0; c < mat.cols; ++c) {
        double p = mat.at(t, c);
        if (p < -1e-9 || p > 1.0 + 1e-9)
          throw ValidationError("PosteriorMatrix: entry " + std::to_string(p) +
                                " outside [0, 1] at row " + std::to_string(t));
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-6)
        throw ValidationError("PosteriorMatrix: row " + std::to_string(t) + " sums to " +
                              std::to_string(sum));
    }
  }
};

// Per-frame state posteriors from a GMM monophone model: softmax over states
// of log-likelihood plus log prior (uniform when priors are empty).
inline PosteriorMatrix compute_state_posteriors(const MonophoneModel &model,
                                                const FeatureMatrix &feats,
                                                const std::vector<double> &priors = {}) {
  model.validate();
  if (model.posterior_mode)
    throw ValidationError("compute_state_posteriors: model already posterior-based");
  detail::check_emission_dims(model, feats);
  const int S = model.num_states();
  if (!priors.empty() && static_cast<int>(priors.size()) != S)
    throw DimensionError("compute_state_posteriors: prior size mismatch");

  PosteriorMatrix out;
  out.mat.rows = feats.rows;
  out.mat.cols = S;
  out.mat.frame_shift_s = feats.frame_shift_s;
  out.mat.frame_length_s = feats.frame_length_s;
  for (int s = 0; s < S; ++s) out.mat.column_labels.push_back(model.state_name(s));
  out.mat.data.resize(static_cast<std::size_t>(feats.rows) * S);

  std::vector<double> lp(S);
  for (int t = 0; t < feats.rows; ++t) {
    double best = kLogZero;
    for (int s = 0; s < S; ++s) {
      lp[s] = model.states[s].log_likelihood(feats.row(t));
      if (!priors.empty()) lp[s] += std::log(priors[s]);
      best = std::max(best, lp[s]);
    }
    double z = 0.0;
    for (int s = 0; s < S; ++s) z += std::exp(lp[s] - best);
    for (int s = 0; s < S; ++s) out.mat.data[static_cast<std::size_t>(t) * S + s] =
        std::exp(lp[s] - best) / z;
  }
  out.validate();
  return out;
}

// alpha * pA + (1 - alpha) * pB; the endpoints return exact copies so that
// combined decoding at alpha = 0 or 1 is bit-identical to the single system.
inline PosteriorMatrix interpolate_posteriors(const PosteriorMatrix &pa, const PosteriorMatrix &pb,
                                              double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw RangeError("interpolate_posteriors: alpha " + std::to_string(alpha) +
                     " outside [0, 1]");
  if (pa.mat.rows != pb.mat.rows || pa.mat.cols != pb.mat.cols)
    throw DimensionError("interpolate_posteriors: shape mismatch (" +
                         std::to_string(pa.mat.rows) + "x" + std::to_string(pa.mat.cols) +
                         " vs " + std::to_string(pb.mat.rows) + "x" +
                         std::to_string(pb.mat.cols) + ")");
  if (pa.mat.column_labels != pb.mat.column_labels)
    throw ValidationError("interpolate_posteriors: class orderings differ");
  if (alpha == 1.0) return pa;
  if (alpha == 0.0) return pb;
  PosteriorMatrix out = pa;
  for (std::size_t i = 0; i < out.mat.data.size(); ++i)
    out.mat.data[i] = alpha * pa.mat.data[i] + (1.0 - alpha) * pb.mat.data[i];
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Oracle-boundary word decoding: score every vocabulary word's linear phone
// graph inside each reference word segment; uniform word prior, lexicographic
// tie-break.
// ---------------------------------------------------------------------------

struct OracleSegment {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string reference;
  std::string hypothesis;  // empty when failed
  bool failed = false;
  double score = kLogZero;
};

struct OracleDecodeResult {
  std::vector<OracleSegment> segments;

  std::vector<std::string> reference_words() const {
    std::vector<std::string> v;
    for (const auto &s : segments) v.push_back(s.reference);
    return v;
  }
  // failed segments contribute nothing, so they score as deletions
  std::vector<std::string> hypothesized_words() const {
    std::vector<std::string> v;
    for (const auto &s : segments)
      if (!s.failed) v.push_back(s.hypothesis);
    return v;
  }
};

inline OracleDecodeResult oracle_decode(const FeatureMatrix &feats,
                                        const SegmentLabeling &boundaries,
                                        const std::vector<std::string> &vocabulary,
                                        const Lexicon &lexicon, const MonophoneModel &model) {
  model.validate();
  feats.validate();
  boundaries.validate();
  detail::check_emission_dims(model, feats);
  if (vocabulary.empty()) throw ValidationError("oracle_decode: empty vocabulary");

  std::vector<std::string> vocab = vocabulary;
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());

  // one single-word graph per vocabulary entry, silences excluded: the
  // boundaries already delimit speech
  struct WordGraph {
    std::string word;
    AlignGraph graph;
  };
  std::vector<WordGraph> graphs;
  for (const auto &w : vocab) {
    const auto &pron = lexicon.pronunciation(w);
    WordGraph wg;
    wg.word = w;
    for (const auto &p : pron) {
      int pid = model.phone_id(p);
      if (pid < 0)
        throw ValidationError("oracle_decode: phone '" + p + "' of word '" + w +
                              "' missing from model");
      for (int s = 0; s < model.states_per_phone; ++s) {
        AlignGraph::Node n;
        n.emission_state = model.state_index(pid, s);
        n.word_index = 0;
        n.label = w;
        wg.graph.nodes.push_back(n);
        int id = static_cast<int>(wg.graph.nodes.size()) - 1;
        if (id > 0) wg.graph.arcs.emplace_back(id - 1, id);
      }
    }
    wg.graph.entries = {0};
    wg.graph.exits = {static_cast<int>(wg.graph.nodes.size()) - 1};
    wg.graph.min_required_frames = static_cast<int>(wg.graph.nodes.size());
    graphs.push_back(std::move(wg));
  }

  OracleDecodeResult result;
  const double shift = feats.frame_shift_s;
  for (const auto &seg : boundaries.segments) {
    if (seg.label == kSilence || seg.label == kNoise) continue;
    // frames whose centers land inside the segment
    int lo = std::max(0, static_cast<int>(std::floor(seg.start_s / shift)) - 2);
    int hi = std::min(feats.rows - 1, static_cast<int>(std::ceil(seg.end_s / shift)) + 2);
    int first = -1, last = -2;
    for (int t = lo; t <= hi; ++t) {
      double center = (t + 0.5) * shift;
      if (center >= seg.start_s && center < seg.end_s) {
        if (first < 0) first = t;
        last = t;
      }
    }
    OracleSegment out;
    out.start_s = seg.start_s;
    out.end_s = seg.end_s;
    out.reference = seg.label;
    int num_frames = last - first + 1;
    if (num_frames <= 0) {
      out.failed = true;
      result.segments.push_back(out);
      continue;
    }

    double best_score = kLogZero;
    std::string best_word;
    for (const auto &wg : graphs) {
      if (num_frames < wg.graph.min_required_frames) continue;
      auto res = detail::viterbi_linear(wg.graph, model, num_frames, [&](int t, int s) {
        return detail::emission_log_lik(model, feats, first + t, s);
      });
      if (!(res.score > kLogZero)) continue;
      // vocab is sorted, so strict improvement keeps the lexicographically
      // first word among ties
      if (res.score > best_score) {
        best_score = res.score;
        best_word = wg.word;
      }
    }
    if (best_word.empty()) {
      out.failed = true;
    } else {
      out.hypothesis = best_word;
      out.score = best_score;
    }
    result.segments.push_back(out);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Monophone model serialization.
// ---------------------------------------------------------------------------

inline void save_monophone(const MonophoneModel &model, const std::string &path) {
  model.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write("EKAM", 4);
  detail::write_pod<std::uint32_t>(os, 1);  // version
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.phones.size()));
  for (const auto &p : model.phones) detail::write_string(os, p);
  detail::write_string(os, model.silence_phone);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.states_per_phone));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.dim));
  detail::write_pod<std::uint8_t>(os, model.posterior_mode ? 1 : 0);
  detail::write_doubles(os, model.self_loop);
  if (model.posterior_mode) {
    detail::write_doubles(os, model.state_priors);
  } else {
    for (const auto &g : model.states) {
      detail::write_doubles(os, g.weights);
      detail::write_doubles(os, g.means);
      detail::write_doubles(os, g.vars);
    }
  }
  if (!os) throw IoError("failed writing " + path);
}

inline MonophoneModel load_monophone(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "EKAM")
    throw FormatError(path + ": not a monophone model file");
  std::uint32_t version = detail::read_pod<std::uint32_t>(is);
  if (version != 1)
    throw FormatError(path + ": unsupported monophone model version " + std::to_string(version));
  MonophoneModel m;
  std::uint32_t np = detail::read_pod<std::uint32_t>(is);
  if (np == 0 || np > 4096) throw FormatError(path + ": implausible phone count");
  for (std::uint32_t i = 0; i < np; ++i) m.phones.push_back(detail::read_string(is));
  m.silence_phone = detail::read_string(is);
  m.states_per_phone = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  m.dim = static_cast<int>(detail::read_pod<std::uint32_t>(is));
  m.posterior_mode = detail::read_pod<std::uint8_t>(is) != 0;
  m.self_loop = detail::read_doubles(is);
  if (m.posterior_mode) {
    m.state_priors = detail::read_doubles(is);
  } else {
    m.states.resize(m.num_states());
    for (auto &g : m.states) {
      g.dim = m.dim;
      g.weights = detail::read_doubles(is);
      g.means = detail::read_doubles(is);
      g.vars = detail::read_doubles(is);
      g.prepare();
    }
  }
  m.validate();
  return m;
}

}  // namespace echokit
