#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "echokit/aligner.hpp"
#include "echokit/common.hpp"
#include "echokit/diarizer.hpp"
#include "echokit/features.hpp"
#include "echokit/gmm.hpp"
#include "echokit/session.hpp"
#include "echokit/session_io.hpp"

namespace echokit {

struct SynthWord {
  std::string word;
  std::vector<std::string> phones;
};

// Generative contrast: child-turn ultrasound pixels evolve with standard
// deviation sigma_child (plus a slow sinusoidal band), everything else with
// sigma_therapist. Acoustic features are drawn per frame from the active
// token's Gaussian; audio rendering (tones + near-silence) is optional.
struct SynthConfig {
  std::uint64_t seed = 0;
  double duration_s = 8.0;
  std::vector<std::string> speakers = {kChild, kTherapist};  // turn rotation
  double mean_turn_s = 0.9;
  double min_turn_s = 0.4;
  double mean_gap_s = 0.35;
  double min_gap_s = 0.15;

  int num_scanlines = 63;
  int num_echoes = 412;
  double fps = 121.2;
  double sync_offset_s = 0.0;
  double sigma_child = 0.10;
  double sigma_therapist = 0.01;
  double band_amplitude = 0.25;
  double band_hz = 3.0;

  double frame_shift_s = 0.010;
  double frame_length_s = 0.025;
  int feature_dim = 3;
  double feature_separation = 3.0;  // scale of the class-mean layout
  double feature_sigma = 0.5;

  bool render_audio = false;
  int sample_rate = 16000;
  double child_tone_hz = 220.0;
  double therapist_tone_hz = 120.0;
  double speech_amplitude = 0.3;
  double silence_amplitude = 1e-6;

  std::vector<SynthWord> words;
  std::string silence_phone = "sil";
  std::map<std::string, std::vector<double>> phone_means;  // silence included
  std::vector<double> therapist_mean;

  static SynthConfig defaults();

  // sorted, silence excluded; ids index the articulation-class mapping
  std::vector<std::string> phone_inventory() const {
    std::set<std::string> inv;
    for (const auto &w : words)
      for (const auto &p : w.phones) inv.insert(p);
    inv.erase(silence_phone);
    return {inv.begin(), inv.end()};
  }

  // class 0 is rest (silence and therapist); child phones map to 1..10
  int articulation_classes() const { return 11; }

  void validate() const {
    if (!(duration_s > 0)) throw ValidationError("SynthConfig: duration_s must be > 0");
    if (!(sigma_child > sigma_therapist) || sigma_therapist < 0)
      throw ValidationError("SynthConfig: need sigma_child > sigma_therapist >= 0");
    if (speakers.empty()) throw ValidationError("SynthConfig: no speakers");
    for (const auto &s : speakers)
      if (s != kChild && s != kTherapist)
        throw ValidationError("SynthConfig: unknown speaker token '" + s + "'");
    if (min_turn_s < 0.01 || mean_turn_s < min_turn_s)
      throw ValidationError("SynthConfig: need mean_turn_s >= min_turn_s >= 0.01");
    if (min_gap_s < 0.01 || mean_gap_s < min_gap_s)
      throw ValidationError("SynthConfig: need mean_gap_s >= min_gap_s >= 0.01");
    if (min_turn_s + 2 * min_gap_s > duration_s)
      throw ValidationError("SynthConfig: duration_s " + std::to_string(duration_s) +
                            " cannot fit one turn of " + std::to_string(min_turn_s) +
                            " s plus gaps of " + std::to_string(min_gap_s) + " s");
    if (num_scanlines <= 0 || num_echoes <= 0)
      throw ValidationError("SynthConfig: non-positive ultrasound dimensions");
    if (!(fps > 0)) throw ValidationError("SynthConfig: fps must be > 0");
    if (sync_offset_s < 0 || sync_offset_s >= duration_s)
      throw ValidationError("SynthConfig: sync_offset_s outside [0, duration_s)");
    if (band_amplitude < 0 || band_amplitude > 1 || !(band_hz > 0))
      throw ValidationError("SynthConfig: band_amplitude in [0,1] and band_hz > 0 required");
    if (!(frame_shift_s > 0) || frame_length_s < frame_shift_s)
      throw ValidationError("SynthConfig: need frame_length_s >= frame_shift_s > 0");
    if (frame_length_s >= duration_s)
      throw ValidationError("SynthConfig: frame_length_s must be < duration_s");
    if (feature_dim <= 0 || !(feature_sigma > 0) || !(feature_separation > 0))
      throw ValidationError("SynthConfig: feature space parameters must be positive");
    if (words.empty()) throw ValidationError("SynthConfig: empty word inventory");
    for (const auto &w : words) {
      if (w.word.empty() || w.phones.empty())
        throw ValidationError("SynthConfig: word entry with empty word or pronunciation");
      for (const auto &p : w.phones) {
        if (p == silence_phone)
          throw ValidationError("SynthConfig: word '" + w.word + "' uses the silence phone");
        auto it = phone_means.find(p);
        if (it == phone_means.end())
          throw ValidationError("SynthConfig: phone '" + p + "' has no emission mean");
        if (static_cast<int>(it->second.size()) != feature_dim)
          throw DimensionError("SynthConfig: mean for phone '" + p + "' has dim " +
                               std::to_string(it->second.size()) + ", feature_dim is " +
                               std::to_string(feature_dim));
      }
    }
    auto sil = phone_means.find(silence_phone);
    if (sil == phone_means.end() ||
        static_cast<int>(sil->second.size()) != feature_dim)
      throw ValidationError("SynthConfig: silence phone needs an emission mean of feature_dim");
    if (static_cast<int>(therapist_mean.size()) != feature_dim)
      throw DimensionError("SynthConfig: therapist_mean has dim " +
                           std::to_string(therapist_mean.size()) + ", feature_dim is " +
                           std::to_string(feature_dim));
    if (phone_inventory().size() > 64)
      throw ValidationError("SynthConfig: phone inventory too large");
    if (render_audio) {
      if (sample_rate <= 0) throw ValidationError("SynthConfig: sample_rate must be > 0");
      if (!(speech_amplitude > 0) || speech_amplitude > 1 ||
          silence_amplitude < 0 || silence_amplitude >= speech_amplitude)
        throw ValidationError("SynthConfig: need 0 <= silence_amplitude < speech_amplitude <= 1");
      if (!(child_tone_hz > 0) || !(therapist_tone_hz > 0))
        throw ValidationError("SynthConfig: tone frequencies must be > 0");
    }
  }
};

inline SynthConfig SynthConfig::defaults() {
  SynthConfig c;
  c.words = {
      {"ball", {"b", "ao", "l"}},    {"cat", {"k", "ae", "t"}},
      {"dog", {"d", "ao", "g"}},     {"fish", {"f", "ih", "sh"}},
      {"key", {"k", "iy"}},          {"shoe", {"sh", "uw"}},
      {"sock", {"s", "aa", "k"}},    {"star", {"s", "t", "aa", "r"}},
  };
  // Class means on a fixed lattice scaled by feature_separation: 4x4 grid in
  // the first two dims, checkerboard +/- in the third. Worst-case pairwise
  // separation ~2.1 = 4.2 sigma at the default feature_sigma.
  const double u = c.feature_separation / 4.0;  // 0.75 at the default scale
  auto lattice = [&](int i) {
    std::vector<double> m(c.feature_dim, 0.0);
    int gx = i % 4, gy = (i / 4) % 4;
    m[0] = (2 * gx - 3) * u;
    if (c.feature_dim > 1) m[1] = (2 * gy - 3) * u;
    if (c.feature_dim > 2) m[2] = ((gx + gy) % 2 ? 2.0 : -2.0) * u;
    return m;
  };
  auto inv = c.phone_inventory();
  for (std::size_t i = 0; i < inv.size(); ++i) c.phone_means[inv[i]] = lattice(static_cast<int>(i));
  c.phone_means[c.silence_phone] = std::vector<double>(c.feature_dim, 0.0);
  c.therapist_mean = std::vector<double>(c.feature_dim, 0.0);
  c.therapist_mean[c.feature_dim > 2 ? 2 : 0] = -4.0 * u;
  return c;
}

struct SynthSession {
  std::string session_id;
  std::string speaker_id;
  std::string stage;
  UltrasoundSequence ultrasound;
  AudioTrack audio;  // samples empty unless the config rendered audio
  FeatureMatrix features;
  Prompt prompt;
  SegmentLabeling reference;  // child / therapist / silence tiling
  SegmentLabeling words;      // word labels inside child turns, silence elsewhere
  SegmentLabeling phones;     // phone-level tiling, therapist turns kept as a token
  std::vector<std::string> turns;   // spoken-turn tokens, gaps implicit
  std::vector<int> articulation;    // per ultrasound frame, 0 = rest
};

// Requires rendered audio; feature-space sessions have no Session equivalent.
inline Session assemble_session(const SynthSession &s) {
  Session out;
  out.ultrasound = s.ultrasound;
  out.audio = s.audio;
  out.prompt = s.prompt;
  out.reference = s.reference;
  out.validate();
  return out;
}

namespace detail {

inline double quantize_ms(double t) { return std::llround(t * 1000.0) / 1000.0; }

// label of the segment whose span contains t; segments tile, fallback is last
inline const std::string &label_at(const SegmentLabeling &tiling, double t, std::size_t &cursor) {
  while (cursor + 1 < tiling.segments.size() && t >= tiling.segments[cursor].end_s) ++cursor;
  return tiling.segments[cursor].label;
}

}  // namespace detail

inline SynthSession generate_session(const SynthConfig &config) {
  config.validate();
  Rng rng(config.seed);
  SynthSession out;

  auto exp_excess = [&](double mean_excess) {
    return mean_excess > 0 ? -mean_excess * std::log(1.0 - rng.uniform()) : 0.0;
  };

  // --- turn process ---------------------------------------------------------
  struct Turn {
    double start, end;
    std::string speaker;
    int word = -1;
  };
  std::vector<Turn> turn_list;
  // floor so quantization cannot push the first turn past feasibility
  double latest_start =
      std::floor((config.duration_s - config.min_turn_s - config.min_gap_s) * 1000.0) / 1000.0;
  double first_gap = config.min_gap_s + exp_excess(config.mean_gap_s - config.min_gap_s);
  double t = std::min(detail::quantize_ms(first_gap), latest_start);
  std::size_t turn_index = 0;
  while (true) {
    double len = config.min_turn_s + exp_excess(config.mean_turn_s - config.min_turn_s);
    len = std::min(len, std::max(0.5 * config.duration_s, config.min_turn_s));
    double end = detail::quantize_ms(t + len);
    if (end + config.min_gap_s > config.duration_s) {
      double avail = detail::quantize_ms(config.duration_s - config.min_gap_s);
      if (avail - t < config.min_turn_s - 1e-9) break;
      end = avail;
    }
    Turn turn;
    turn.start = t;
    turn.end = end;
    turn.speaker = config.speakers[turn_index % config.speakers.size()];
    if (turn.speaker == kChild) turn.word = static_cast<int>(rng.index(config.words.size()));
    turn_list.push_back(turn);
    ++turn_index;
    double gap = config.min_gap_s + exp_excess(config.mean_gap_s - config.min_gap_s);
    t = detail::quantize_ms(end + gap);
    if (t + config.min_turn_s + config.min_gap_s > config.duration_s) break;
  }

  // --- reference tilings ----------------------------------------------------
  double cursor = 0.0;
  auto push = [](SegmentLabeling &l, double a, double b, const std::string &label) {
    if (b > a) l.segments.push_back({a, b, label});
  };
  for (const auto &turn : turn_list) {
    push(out.reference, cursor, turn.start, kSilence);
    push(out.words, cursor, turn.start, kSilence);
    push(out.phones, cursor, turn.start, kSilence);
    push(out.reference, turn.start, turn.end, turn.speaker);
    out.turns.push_back(turn.speaker);
    if (turn.word >= 0) {
      const SynthWord &w = config.words[static_cast<std::size_t>(turn.word)];
      out.prompt.target_words.push_back(w.word);
      push(out.words, turn.start, turn.end, w.word);
      // jittered near-equal split of the turn across the phones
      std::vector<double> share(w.phones.size());
      double total = 0;
      for (auto &f : share) total += (f = 1.0 + 0.5 * (rng.uniform() - 0.5));
      double acc = turn.start, pos = 0;
      for (std::size_t i = 0; i < w.phones.size(); ++i) {
        pos += share[i] / total;
        double end = i + 1 == w.phones.size() ? turn.end
                                              : detail::quantize_ms(turn.start + pos * (turn.end - turn.start));
        push(out.phones, acc, end, w.phones[i]);
        acc = end;
      }
    } else {
      push(out.words, turn.start, turn.end, kSilence);
      push(out.phones, turn.start, turn.end, turn.speaker);
    }
    cursor = turn.end;
  }
  push(out.reference, cursor, config.duration_s, kSilence);
  push(out.words, cursor, config.duration_s, kSilence);
  push(out.phones, cursor, config.duration_s, kSilence);
  out.reference.validate();
  out.words.validate();
  out.phones.validate();

  // --- acoustic features ----------------------------------------------------
  const auto phone_list = config.phone_inventory();
  auto mean_of = [&](const std::string &label) -> const std::vector<double> & {
    if (label == kTherapist) return config.therapist_mean;
    auto it = config.phone_means.find(label == kSilence ? config.silence_phone : label);
    return it->second;
  };
  int rows = 1 + static_cast<int>(
                     std::floor((config.duration_s - config.frame_length_s) / config.frame_shift_s + 1e-9));
  FeatureMatrix &feats = out.features;
  feats.rows = rows;
  feats.cols = config.feature_dim;
  feats.frame_shift_s = config.frame_shift_s;
  feats.frame_length_s = config.frame_length_s;
  for (int d = 0; d < config.feature_dim; ++d)
    feats.column_labels.push_back("synth_" + std::to_string(d));
  feats.data.resize(static_cast<std::size_t>(rows) * config.feature_dim);
  std::size_t feat_cursor = 0;
  for (int i = 0; i < rows; ++i) {
    double center = i * config.frame_shift_s + 0.5 * config.frame_length_s;
    const auto &mean = mean_of(detail::label_at(out.phones, center, feat_cursor));
    for (int d = 0; d < config.feature_dim; ++d)
      feats.data[static_cast<std::size_t>(i) * config.feature_dim + d] =
          static_cast<float>(mean[d] + config.feature_sigma * rng.normal());
  }
  feats.validate();

  // --- ultrasound -----------------------------------------------------------
  UltrasoundSequence &us = out.ultrasound;
  us.num_scanlines = config.num_scanlines;
  us.num_echoes = config.num_echoes;
  us.fps = config.fps;
  us.sync_offset_s = config.sync_offset_s;
  us.num_frames = 1 + static_cast<int>(
                          std::floor((config.duration_s - config.sync_offset_s) * config.fps - 1e-9));
  us.data.resize(static_cast<std::size_t>(us.num_frames) * us.frame_size());
  const int rows_us = config.num_scanlines, cols_us = config.num_echoes;
  std::vector<float> base(static_cast<std::size_t>(rows_us) * cols_us);
  for (int r = 0; r < rows_us; ++r)
    for (int e = 0; e < cols_us; ++e)
      base[static_cast<std::size_t>(r) * cols_us + e] = static_cast<float>(
          0.35 + 0.15 * std::sin(2.0 * M_PI * r / rows_us) * std::cos(2.0 * M_PI * e / cols_us));
  std::size_t us_cursor = 0;
  out.articulation.resize(static_cast<std::size_t>(us.num_frames));
  const int num_bands = config.articulation_classes() - 1;
  for (int f = 0; f < us.num_frames; ++f) {
    double ft = config.sync_offset_s + f / config.fps;
    const std::string &label = detail::label_at(out.phones, ft, us_cursor);
    bool child_phone = label != kSilence && label != kTherapist;
    int art = 0;
    if (child_phone) {
      auto it = std::lower_bound(phone_list.begin(), phone_list.end(), label);
      art = 1 + static_cast<int>(it - phone_list.begin()) % 10;
    }
    out.articulation[static_cast<std::size_t>(f)] = art;
    double sigma = child_phone ? config.sigma_child : config.sigma_therapist;
    int r0 = 0, r1 = 0;
    double band = 0;
    if (art > 0) {
      r0 = (art - 1) * rows_us / num_bands;
      r1 = std::max(r0 + 1, art * rows_us / num_bands);
      band = config.band_amplitude * (0.6 + 0.4 * std::sin(2.0 * M_PI * config.band_hz * ft + art));
    }
    float *frame = us.frame(f);
    for (int r = 0; r < rows_us; ++r) {
      bool in_band = art > 0 && r >= r0 && r < r1;
      for (int e = 0; e < cols_us; ++e) {
        double v = base[static_cast<std::size_t>(r) * cols_us + e];
        if (in_band) v += band;
        if (sigma > 0) v += sigma * rng.normal();
        frame[static_cast<std::size_t>(r) * cols_us + e] =
            static_cast<float>(std::min(1.0, std::max(0.0, v)));
      }
    }
  }
  us.validate();

  // --- audio ----------------------------------------------------------------
  if (config.render_audio) {
    AudioTrack &audio = out.audio;
    audio.sample_rate = config.sample_rate;
    auto n = static_cast<std::size_t>(std::llround(config.duration_s * config.sample_rate));
    audio.samples.resize(n);
    std::size_t a_cursor = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double st = static_cast<double>(i) / config.sample_rate;
      const std::string &label = detail::label_at(out.reference, st, a_cursor);
      double v;
      if (label == kChild)
        v = config.speech_amplitude * std::sin(2.0 * M_PI * config.child_tone_hz * st);
      else if (label == kTherapist)
        v = config.speech_amplitude * std::sin(2.0 * M_PI * config.therapist_tone_hz * st);
      else
        v = config.silence_amplitude * rng.normal();
      audio.samples[i] = static_cast<float>(v);
    }
    audio.validate();
  }
  return out;
}

// ---------------------------------------------------------------------------
// corpus generation: one directory, session_io formats, CSV manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string session_id;
  std::string speaker_id;
  std::string stage;
  std::string ultrasound_path;  // relative to the manifest directory
  std::string audio_or_feature_path;
  std::string segments_path;
  std::string prompt_path;
};

struct SynthCorpus {
  std::string root;
  std::string manifest_path;
  std::string lexicon_path;
  std::string model_path;  // monophone model matching the generator
  std::vector<ManifestEntry> entries;
};

inline Lexicon synth_lexicon(const SynthConfig &config) {
  Lexicon lex;
  lex.silence_phone = config.silence_phone;
  for (const auto &w : config.words) lex.entries[w.word] = w.phones;
  lex.rebuild_inventory();
  lex.validate();
  return lex;
}

// Monophone model with the generator's own emission parameters: one Gaussian
// per state, shared across the three states of a phone.
inline MonophoneModel synth_monophone_model(const SynthConfig &config) {
  config.validate();
  MonophoneModel m;
  m.silence_phone = config.silence_phone;
  m.phones = config.phone_inventory();
  m.phones.push_back(config.silence_phone);
  std::sort(m.phones.begin(), m.phones.end());
  m.states_per_phone = 3;
  m.dim = config.feature_dim;
  double var = config.feature_sigma * config.feature_sigma;
  for (const auto &phone : m.phones) {
    const auto &mean = config.phone_means.at(phone);
    DiagGmm g;
    g.dim = config.feature_dim;
    g.weights = {1.0};
    g.means = mean;
    g.vars.assign(static_cast<std::size_t>(config.feature_dim), var);
    g.prepare();
    for (int s = 0; s < m.states_per_phone; ++s) {
      m.states.push_back(g);
      m.self_loop.push_back(phone == config.silence_phone ? 0.5 : 0.7);
    }
  }
  m.validate();
  return m;
}

inline void save_articulation(const std::vector<int> &labels, const std::string &path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "frame,articulation\n";
  for (std::size_t i = 0; i < labels.size(); ++i) os << i << ',' << labels[i] << '\n';
  if (!os) throw IoError("failed writing " + path);
}

inline std::vector<int> load_articulation(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(is, line) || line != "frame,articulation")
    throw FormatError(path + ": missing 'frame,articulation' header");
  std::vector<int> labels;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'frame,label'");
    long frame = std::strtol(line.c_str(), nullptr, 10);
    if (frame != static_cast<long>(labels.size()))
      throw FormatError(path + ":" + std::to_string(lineno) + ": frame index " +
                        std::to_string(frame) + " out of order");
    int label = static_cast<int>(std::strtol(line.c_str() + comma + 1, nullptr, 10));
    if (label < 0)
      throw ParseError(path + ":" + std::to_string(lineno) + ": negative class label");
    labels.push_back(label);
  }
  return labels;
}

inline void save_transcript(const std::vector<std::string> &turns, const std::string &path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  for (std::size_t i = 0; i < turns.size(); ++i) os << (i ? " " : "") << turns[i];
  os << '\n';
  if (!os) throw IoError("failed writing " + path);
}

inline std::vector<std::string> load_transcript(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  std::vector<std::string> turns;
  std::string tok;
  while (is >> tok) turns.push_back(tok);
  return turns;
}

inline void save_manifest(const SynthCorpus &corpus) {
  std::ofstream os(corpus.manifest_path);
  if (!os) throw IoError("cannot write " + corpus.manifest_path);
  os << "session_id,speaker_id,stage,ultrasound_path,audio_or_feature_path,"
        "segments_path,prompt_path\n";
  for (const auto &e : corpus.entries)
    os << e.session_id << ',' << e.speaker_id << ',' << e.stage << ',' << e.ultrasound_path
       << ',' << e.audio_or_feature_path << ',' << e.segments_path << ',' << e.prompt_path
       << '\n';
  if (!os) throw IoError("failed writing " + corpus.manifest_path);
}

inline std::vector<ManifestEntry> load_manifest(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(is, line))
    throw FormatError(path + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line !=
      "session_id,speaker_id,stage,ultrasound_path,audio_or_feature_path,segments_path,prompt_path")
    throw FormatError(path + ": unexpected manifest header '" + line + "'");
  std::vector<ManifestEntry> entries;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 7)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 7 fields, got " +
                       std::to_string(fields.size()));
    entries.push_back({fields[0], fields[1], fields[2], fields[3], fields[4], fields[5],
                       fields[6]});
  }
  return entries;
}

inline SynthCorpus generate_corpus(const SynthConfig &config, int n_sessions,
                                   const std::string &out_dir) {
  if (n_sessions < 1) throw ValidationError("generate_corpus: n_sessions must be >= 1");
  config.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());

  SynthCorpus corpus;
  corpus.root = out_dir;
  corpus.manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  corpus.lexicon_path = (fs::path(out_dir) / "lexicon.tsv").string();
  corpus.model_path = (fs::path(out_dir) / "model.ekam").string();
  save_lexicon(synth_lexicon(config), corpus.lexicon_path);
  save_monophone(synth_monophone_model(config), corpus.model_path);

  static const char *kStages[] = {"baseline", "mid", "post"};
  Rng seeder(config.seed);
  for (int i = 0; i < n_sessions; ++i) {
    SynthConfig session_cfg = config;
    session_cfg.seed = seeder.split(static_cast<std::uint64_t>(i)).next_u64();
    SynthSession s = generate_session(session_cfg);
    char sid[16];
    std::snprintf(sid, sizeof sid, "s%03d", i);
    s.session_id = sid;
    char spk[16];
    std::snprintf(spk, sizeof spk, "child_%02d", i % 5);
    s.speaker_id = spk;
    s.stage = kStages[i % 3];
    s.prompt.session_id = s.session_id;
    s.prompt.speaker_id = s.speaker_id;
    s.prompt.session_stage = s.stage;
    if (s.prompt.target_words.empty())
      throw ValidationError("generate_corpus: session " + s.session_id +
                            " has no child turns; increase duration_s");

    auto rel = [&](const std::string &suffix) { return s.session_id + suffix; };
    auto full = [&](const std::string &suffix) {
      return (fs::path(out_dir) / (s.session_id + suffix)).string();
    };
    save_ultrasound(s.ultrasound, full(".ult"), full(".param"));
    save_matrix(s.features, full(".feats"));
    if (config.render_audio) save_wav(s.audio, full(".wav"));
    save_prompt(s.prompt, full(".prompt.txt"));
    save_segments(s.reference, full(".ref.tsv"));
    save_segments(s.words, full(".words.tsv"));
    save_segments(s.phones, full(".phones.tsv"));
    save_transcript(s.turns, full(".turns.txt"));
    save_articulation(s.articulation, full(".art.csv"));

    ManifestEntry e;
    e.session_id = s.session_id;
    e.speaker_id = s.speaker_id;
    e.stage = s.stage;
    e.ultrasound_path = rel(".ult");
    e.audio_or_feature_path = rel(config.render_audio ? ".wav" : ".feats");
    e.segments_path = rel(".ref.tsv");
    e.prompt_path = rel(".prompt.txt");
    corpus.entries.push_back(e);
  }
  save_manifest(corpus);
  return corpus;
}

}  // namespace echokit
