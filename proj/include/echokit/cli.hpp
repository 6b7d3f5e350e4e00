#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "echokit/aligner.hpp"
#include "echokit/common.hpp"
#include "echokit/config.hpp"
#include "echokit/diarizer.hpp"
#include "echokit/embedder.hpp"
#include "echokit/eta.hpp"
#include "echokit/features.hpp"
#include "echokit/metrics.hpp"
#include "echokit/mfcc.hpp"
#include "echokit/pitch.hpp"
#include "echokit/session.hpp"
#include "echokit/session_io.hpp"
#include "echokit/synthgen.hpp"

namespace echokit::cli {

namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  int jobs = 1;  // interface knob; utterances are processed in order either way
};

inline void add_common(CLI::App *cmd, CommonOpts &c) {
  cmd->add_option("--config", c.config_path, "key=value config file");
  cmd->add_option("--set", c.overrides, "config override key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "rng seed")->capture_default_str();
  cmd->add_option("--jobs", c.jobs, "max concurrent utterances")->capture_default_str();
  cmd->footer(RunConfig::describe_keys());
}

inline RunConfig build_config(const CommonOpts &c) {
  RunConfig rc;
  if (!c.config_path.empty()) rc.apply_file(c.config_path);
  for (const auto &o : c.overrides) rc.apply_override(o);
  rc.validate();
  if (c.jobs < 1) throw ValidationError("--jobs must be >= 1");
  return rc;
}

struct Corpus {
  std::string dir;
  std::vector<ManifestEntry> entries;
};

// accepts either a manifest file or a directory containing manifest.csv
inline Corpus open_corpus(const std::string &ref) {
  fs::path p(ref);
  if (fs::is_directory(p)) p /= "manifest.csv";
  Corpus c;
  c.dir = p.parent_path().string();
  c.entries = load_manifest(p.string());
  if (c.entries.empty()) throw FormatError(p.string() + ": manifest lists no sessions");
  return c;
}

inline std::string join(const std::string &dir, const std::string &rel) {
  return (fs::path(dir) / rel).string();
}

inline std::string sidecar_path(const std::string &ultrasound_path) {
  fs::path p(ultrasound_path);
  p.replace_extension(".param");
  return p.string();
}

inline UltrasoundSequence load_entry_ultrasound(const Corpus &c, const ManifestEntry &e) {
  std::string raw = join(c.dir, e.ultrasound_path);
  return load_ultrasound(raw, load_params(sidecar_path(raw)));
}

inline FeatureMatrix features_for_entry(const Corpus &c, const ManifestEntry &e,
                                        const RunConfig &rc) {
  std::string path = join(c.dir, e.audio_or_feature_path);
  if (path.size() >= 6 && path.compare(path.size() - 6, 6, ".feats") == 0)
    return load_matrix(path);
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".wav") == 0) {
    AudioTrack audio = load_wav(path);
    MfccConfig mc;
    mc.frame_shift_s = rc.frame_shift_s;
    mc.frame_length_s = rc.frame_length_s;
    PitchConfig pc;  // keeps its longer window; assemble trims to common rows
    pc.frame_shift_s = rc.frame_shift_s;
    return assemble_features({compute_mfcc(audio, mc), compute_pitch(audio, pc)});
  }
  throw FormatError(path + ": expected a .feats matrix or a .wav audio file");
}

// report files are written atomically: temp file in place, then rename
inline void write_text_atomic(const std::string &path, const std::string &content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write " + tmp);
    os << content;
    if (!os) throw IoError("failed writing " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

inline void ensure_dir(const std::string &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

template <typename Fn>
inline void for_each_entry(const Corpus &c, Fn fn) {
  for (const auto &e : c.entries) {
    try {
      fn(e);
    } catch (const std::exception &ex) {
      throw IoError("session " + e.session_id + ": " + ex.what());
    }
  }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOpts {
  CommonOpts common;
  std::string out;
  int n = 1;
};

inline SynthConfig synth_config_from(const RunConfig &rc, std::uint64_t seed) {
  SynthConfig sc = SynthConfig::defaults();
  sc.seed = seed;
  sc.duration_s = rc.synth_duration_s;
  sc.num_scanlines = rc.synth_scanlines;
  sc.num_echoes = rc.synth_echoes;
  sc.fps = rc.synth_fps;
  sc.sigma_child = rc.synth_sigma_child;
  sc.sigma_therapist = rc.synth_sigma_therapist;
  sc.render_audio = rc.synth_render_audio;
  sc.min_turn_s = rc.synth_min_turn_s;
  sc.mean_turn_s = rc.synth_mean_turn_s;
  sc.min_gap_s = rc.synth_min_gap_s;
  sc.mean_gap_s = rc.synth_mean_gap_s;
  sc.frame_shift_s = rc.frame_shift_s;
  sc.frame_length_s = rc.frame_length_s;
  // the default class-mean lattice spans exactly three feature dimensions
  if (rc.synth_feature_dim != sc.feature_dim)
    throw ValidationError("synth_feature_dim other than 3 needs explicit phone means");
  return sc;
}

inline int run_synth(const SynthOpts &o) {
  RunConfig rc = build_config(o.common);
  SynthConfig sc = synth_config_from(rc, o.common.seed);
  SynthCorpus corpus = generate_corpus(sc, o.n, o.out);
  std::cout << "wrote " << corpus.entries.size() << " sessions to " << corpus.root << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eta
// ---------------------------------------------------------------------------

struct EtaOpts {
  CommonOpts common;
  std::string ultrasound;
  std::string params;
  std::string out;
  std::string segments;
  bool raw = false;
};

inline int run_eta(const EtaOpts &o) {
  RunConfig rc = build_config(o.common);
  std::string params = o.params.empty() ? sidecar_path(o.ultrasound) : o.params;
  UltrasoundSequence seq = load_ultrasound(o.ultrasound, load_params(params));
  EtaSignal sig = compute_eta(seq, rc.eta_window_s);
  EtaSignal norm = normalize_unity(sig);
  export_eta_csv(o.raw ? sig : norm, o.out);
  if (!o.segments.empty()) save_segments(eta_activity(norm, rc.eta_threshold), o.segments);
  return 0;
}

// ---------------------------------------------------------------------------
// diarize {vad | vad-eta | hmm}
// ---------------------------------------------------------------------------

struct DiarizeOpts {
  CommonOpts common;
  std::string manifest;
  std::string out;
  std::string model;  // hmm mode
  std::string mode;
};

inline AudioTrack audio_for_entry(const Corpus &c, const ManifestEntry &e) {
  std::string path = join(c.dir, e.audio_or_feature_path);
  if (path.size() < 4 || path.compare(path.size() - 4, 4, ".wav") != 0)
    throw FormatError(path + ": this mode needs rendered audio (.wav)");
  return load_wav(path);
}

inline int run_diarize(const DiarizeOpts &o) {
  RunConfig rc = build_config(o.common);
  Corpus corpus = open_corpus(o.manifest);
  ensure_dir(o.out);
  ErgodicHmm model;
  if (o.mode == "hmm") model = load_diarizer(o.model);
  for_each_entry(corpus, [&](const ManifestEntry &e) {
    SegmentLabeling hyp;
    if (o.mode == "vad") {
      AudioTrack audio = audio_for_entry(corpus, e);
      auto energy = frame_log_energy(audio, rc.frame_length_s, rc.frame_shift_s);
      hyp = vad_segments(energy, rc.vad_threshold, rc.frame_shift_s);
    } else if (o.mode == "vad-eta") {
      AudioTrack audio = audio_for_entry(corpus, e);
      auto energy = frame_log_energy(audio, rc.frame_length_s, rc.frame_shift_s);
      UltrasoundSequence seq = load_entry_ultrasound(corpus, e);
      EtaSignal eta = normalize_unity(compute_eta(seq, rc.eta_window_s));
      auto activity =
          eta_frame_feature(eta, rc.frame_shift_s, static_cast<int>(energy.size()));
      hyp = vad_eta_diarize(energy, activity, rc.vad_threshold, rc.eta_threshold,
                            rc.frame_shift_s);
    } else {
      FeatureMatrix feats = features_for_entry(corpus, e, rc);
      hyp = hmm_decode(model, feats);
    }
    hyp = postprocess_labeling(hyp, rc.merge_gap_s, rc.min_speech_s);
    save_segments(hyp, join(o.out, e.session_id + ".tsv"));
  });
  std::cout << "diarized " << corpus.entries.size() << " sessions into " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train-diarizer
// ---------------------------------------------------------------------------

struct TrainDiarizerOpts {
  CommonOpts common;
  std::string manifest;
  std::string unlabeled_manifest;
  std::string out;
};

inline ErgodicHmmConfig hmm_config_from(const RunConfig &rc) {
  ErgodicHmmConfig hc;
  hc.states_per_token = rc.states_per_token;
  hc.max_components = rc.max_components;
  hc.num_iterations = rc.em_iterations;
  hc.grow_interval = rc.grow_interval;
  hc.self_loop_init = rc.self_loop_init;
  hc.var_floor_scale = rc.var_floor_scale;
  hc.prob_floor = rc.prob_floor;
  return hc;
}

inline std::vector<DiarizationUtterance> load_labeled_corpus(const Corpus &corpus,
                                                             const RunConfig &rc) {
  std::vector<DiarizationUtterance> data;
  for_each_entry(corpus, [&](const ManifestEntry &e) {
    DiarizationUtterance u;
    u.id = e.session_id;
    u.features = features_for_entry(corpus, e, rc);
    u.transcript = load_transcript(join(corpus.dir, e.session_id + ".turns.txt"));
    if (u.transcript.empty())
      throw FormatError(e.session_id + ".turns.txt: empty turn transcript");
    data.push_back(std::move(u));
  });
  return data;
}

inline int run_train_diarizer(const TrainDiarizerOpts &o) {
  RunConfig rc = build_config(o.common);
  Corpus corpus = open_corpus(o.manifest);
  auto data = load_labeled_corpus(corpus, rc);
  ErgodicHmmConfig hc = hmm_config_from(rc);
  TrainStats stats;
  ErgodicHmm model = train_ergodic(data, hc, &stats);
  if (!o.unlabeled_manifest.empty()) {
    Corpus extra = open_corpus(o.unlabeled_manifest);
    std::vector<FeatureMatrix> unlabeled;
    for_each_entry(extra, [&](const ManifestEntry &e) {
      unlabeled.push_back(features_for_entry(extra, e, rc));
    });
    model = semi_supervised_retrain(model, data, unlabeled, hc, &stats);
  }
  save_diarizer(model, o.out);
  std::cout << "trained diarizer on " << data.size() << " sessions; final log-likelihood "
            << stats.corpus_log_likelihood.back() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train-embedder / embed
// ---------------------------------------------------------------------------

struct TrainEmbedderOpts {
  CommonOpts common;
  std::string manifest;
  std::string out;
};

inline std::map<std::string, std::vector<double>> speaker_means_by_id(
    const Corpus &corpus, const std::vector<UltrasoundSequence> &seqs) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < corpus.entries.size(); ++i)
    groups[corpus.entries[i].speaker_id].push_back(i);
  std::map<std::string, std::vector<double>> means;
  for (const auto &[speaker, idx] : groups) {
    std::vector<UltrasoundSequence> group;
    for (std::size_t i : idx) group.push_back(seqs[i]);
    means[speaker] = speaker_mean(group);
  }
  return means;
}

inline int run_train_embedder(const TrainEmbedderOpts &o) {
  RunConfig rc = build_config(o.common);
  Corpus corpus = open_corpus(o.manifest);
  std::vector<UltrasoundSequence> seqs;
  std::vector<std::vector<int>> labels;
  int max_label = 0;
  for_each_entry(corpus, [&](const ManifestEntry &e) {
    seqs.push_back(load_entry_ultrasound(corpus, e));
    labels.push_back(load_articulation(join(corpus.dir, e.session_id + ".art.csv")));
    if (labels.back().size() != static_cast<std::size_t>(seqs.back().num_frames))
      throw DimensionError(e.session_id + ": " + std::to_string(labels.back().size()) +
                           " articulation labels for " +
                           std::to_string(seqs.back().num_frames) + " ultrasound frames");
    for (int l : labels.back()) max_label = std::max(max_label, l);
  });
  for (std::size_t i = 1; i < seqs.size(); ++i)
    if (seqs[i].num_scanlines != seqs[0].num_scanlines ||
        seqs[i].num_echoes != seqs[0].num_echoes)
      throw DimensionError("train-embedder: mixed ultrasound dimensions in corpus");

  auto means = speaker_means_by_id(corpus, seqs);
  CnnConfig cfg = rc.cnn_preset == "small" ? CnnConfig::small_preset() : CnnConfig{};
  cfg.in_h = seqs[0].num_scanlines;
  cfg.in_w = seqs[0].num_echoes;
  cfg.num_classes = std::max(cfg.num_classes, max_label + 1);
  cfg.seed = o.common.seed;
  cfg.validate();
  CnnParams params = init_cnn(cfg);

  struct Sample {
    std::size_t session;
    int frame;
  };
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    for (int t = 0; t < seqs[i].num_frames; ++t) samples.push_back({i, t});

  Rng rng(o.common.seed);
  double loss = 0;
  for (int step = 0; step < rc.train_steps; ++step) {
    std::vector<LabeledInput> batch;
    for (int b = 0; b < rc.batch_size; ++b) {
      const Sample &s = samples[rng.index(samples.size())];
      const auto &mean = means.at(corpus.entries[s.session].speaker_id);
      batch.push_back({build_input_stack(seqs[s.session], s.frame, mean),
                       labels[s.session][static_cast<std::size_t>(s.frame)]});
    }
    loss = train_step(params, batch, rc.learning_rate);
  }
  save_embedder(params, o.out);
  std::cout << "trained embedder for " << rc.train_steps << " steps; last batch loss " << loss
            << "\n";
  return 0;
}

struct EmbedOpts {
  CommonOpts common;
  std::string manifest;
  std::string model;
  std::string out;
};

inline int run_embed(const EmbedOpts &o) {
  build_config(o.common);
  Corpus corpus = open_corpus(o.manifest);
  ensure_dir(o.out);
  CnnParams params = load_embedder(o.model);
  std::vector<UltrasoundSequence> seqs;
  for_each_entry(corpus, [&](const ManifestEntry &e) {
    seqs.push_back(load_entry_ultrasound(corpus, e));
  });
  auto means = speaker_means_by_id(corpus, seqs);
  for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
    const ManifestEntry &e = corpus.entries[i];
    try {
      EmbeddingSequence emb =
          extract_embeddings(params, seqs[i], means.at(e.speaker_id));
      save_embeddings(emb, join(o.out, e.session_id + ".emb"));
    } catch (const std::exception &ex) {
      throw IoError("session " + e.session_id + ": " + ex.what());
    }
  }
  std::cout << "embedded " << corpus.entries.size() << " sessions into " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// align
// ---------------------------------------------------------------------------

struct AlignOpts {
  CommonOpts common;
  std::string manifest;
  std::string lexicon;
  std::string model;
  std::string out;
  std::string mask = "ref";  // ref | none | directory of hypothesis labelings
  std::string posteriors_out;
};

inline SegmentLabeling mask_source(const Corpus &corpus, const ManifestEntry &e,
                                   const std::string &mask) {
  if (mask == "ref") return load_segments(join(corpus.dir, e.segments_path));
  return load_segments(join(mask, e.session_id + ".tsv"));
}

inline int run_align(const AlignOpts &o) {
  RunConfig rc = build_config(o.common);
  Corpus corpus = open_corpus(o.manifest);
  ensure_dir(o.out);
  if (!o.posteriors_out.empty()) ensure_dir(o.posteriors_out);
  std::string lex_path = o.lexicon.empty() ? join(corpus.dir, "lexicon.tsv") : o.lexicon;
  std::string model_path = o.model.empty() ? join(corpus.dir, "model.ekam") : o.model;
  Lexicon lexicon = load_lexicon(lex_path);
  MonophoneModel model = load_monophone(model_path);
  for_each_entry(corpus, [&](const ManifestEntry &e) {
    FeatureMatrix feats = features_for_entry(corpus, e, rc);
    Prompt prompt = load_prompt(join(corpus.dir, e.prompt_path));
    AlignGraph graph = build_align_graph(prompt, lexicon, model);
    SegmentLabeling hyp;
    if (o.mask == "none") {
      hyp = force_align(feats, graph, model);
    } else {
      MaskedFeatures masked = mask_therapist(feats, mask_source(corpus, e, o.mask));
      if (masked.empty_result)
        throw AlignFailureError("all frames masked as therapist; nothing to align");
      hyp = force_align(masked.features, graph, model, &masked.kept);
    }
    save_segments(hyp, join(o.out, e.session_id + ".words.tsv"));
    if (!o.posteriors_out.empty()) {
      PosteriorMatrix post = compute_state_posteriors(model, feats);
      save_matrix(post.mat, join(o.posteriors_out, e.session_id + ".post.ekfm"));
    }
  });
  std::cout << "aligned " << corpus.entries.size() << " sessions into " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// combine
// ---------------------------------------------------------------------------

struct CombineOpts {
  CommonOpts common;
  std::string a_dir;
  std::string b_dir;
  std::string manifest;
  std::string out;
  std::string sweep;  // CSV path; runs the alignment sweep over the alpha grid
  std::string model;
  std::string mask = "ref";
  double alpha = -1;  // default comes from the config
};

// posterior-emission twin of a GMM monophone model, uniform state priors
inline MonophoneModel posterior_twin(const MonophoneModel &m) {
  MonophoneModel p;
  p.phones = m.phones;
  p.silence_phone = m.silence_phone;
  p.states_per_phone = m.states_per_phone;
  p.dim = m.num_states();
  p.posterior_mode = true;
  p.state_priors.assign(static_cast<std::size_t>(m.num_states()),
                        1.0 / static_cast<double>(m.num_states()));
  p.self_loop = m.self_loop;
  p.validate();
  return p;
}

inline PosteriorMatrix load_posteriors(const std::string &dir, const std::string &sid) {
  PosteriorMatrix p;
  p.mat = load_matrix(join(dir, sid + ".post.ekfm"));
  p.validate();
  return p;
}

inline int run_combine(const CombineOpts &o) {
  RunConfig rc = build_config(o.common);
  double alpha = o.alpha >= 0 ? o.alpha : rc.alpha;
  if (alpha < 0 || alpha > 1)
    throw ValidationError("--alpha " + std::to_string(alpha) + " outside [0,1]");
  Corpus corpus = open_corpus(o.manifest);

  if (!o.out.empty()) {
    ensure_dir(o.out);
    for_each_entry(corpus, [&](const ManifestEntry &e) {
      PosteriorMatrix pa = load_posteriors(o.a_dir, e.session_id);
      PosteriorMatrix pb = load_posteriors(o.b_dir, e.session_id);
      PosteriorMatrix mixed = interpolate_posteriors(pa, pb, alpha);
      save_matrix(mixed.mat, join(o.out, e.session_id + ".post.ekfm"));
    });
    std::cout << "combined " << corpus.entries.size() << " sessions at alpha " << alpha
              << " into " << o.out << "\n";
  }

  if (!o.sweep.empty()) {
    std::string model_path = o.model.empty() ? join(corpus.dir, "model.ekam") : o.model;
    MonophoneModel gmm_model = load_monophone(model_path);
    MonophoneModel pmodel = posterior_twin(gmm_model);
    Lexicon lexicon = load_lexicon(join(corpus.dir, "lexicon.tsv"));
    std::ostringstream csv;
    csv << "alpha,precision,recall,f1\n";
    for (double a : rc.alpha_values()) {
      DetectionAccumulator acc;
      for_each_entry(corpus, [&](const ManifestEntry &e) {
        PosteriorMatrix pa = load_posteriors(o.a_dir, e.session_id);
        PosteriorMatrix pb = load_posteriors(o.b_dir, e.session_id);
        PosteriorMatrix mixed = interpolate_posteriors(pa, pb, a);
        Prompt prompt = load_prompt(join(corpus.dir, e.prompt_path));
        AlignGraph graph = build_align_graph(prompt, lexicon, pmodel);
        SegmentLabeling hyp;
        if (o.mask == "none") {
          hyp = force_align(mixed.mat, graph, pmodel);
        } else {
          MaskedFeatures masked = mask_therapist(mixed.mat, mask_source(corpus, e, o.mask));
          if (masked.empty_result)
            throw AlignFailureError("all frames masked as therapist; nothing to align");
          hyp = force_align(masked.features, graph, pmodel, &masked.kept);
        }
        SegmentLabeling ref_words =
            load_segments(join(corpus.dir, e.session_id + ".words.tsv"));
        accumulate_alignment(acc, ref_words, hyp, rc.collar_s);
      });
      DetectionScores s = acc.finalize("alignment_prf");
      csv << detail::format_double(a) << ',' << detail::fmt4(s.precision) << ','
          << detail::fmt4(s.recall) << ',' << detail::fmt4(s.f1) << "\n";
    }
    write_text_atomic(o.sweep, csv.str());
    std::cout << "wrote alpha sweep to " << o.sweep << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// decode-oracle
// ---------------------------------------------------------------------------

struct DecodeOracleOpts {
  CommonOpts common;
  std::string manifest;
  std::string lexicon;
  std::string model;
  std::string boundaries = "ref";  // ref | directory of word labelings
  std::string out;
};

inline int run_decode_oracle(const DecodeOracleOpts &o) {
  RunConfig rc = build_config(o.common);
  Corpus corpus = open_corpus(o.manifest);
  ensure_dir(o.out);
  std::string lex_path = o.lexicon.empty() ? join(corpus.dir, "lexicon.tsv") : o.lexicon;
  std::string model_path = o.model.empty() ? join(corpus.dir, "model.ekam") : o.model;
  Lexicon lexicon = load_lexicon(lex_path);
  MonophoneModel model = load_monophone(model_path);
  std::vector<std::string> vocab;
  for (const auto &[word, pron] : lexicon.entries) {
    (void)pron;
    vocab.push_back(word);
  }
  for_each_entry(corpus, [&](const ManifestEntry &e) {
    FeatureMatrix feats = features_for_entry(corpus, e, rc);
    std::string bpath = o.boundaries == "ref"
                            ? join(corpus.dir, e.session_id + ".words.tsv")
                            : join(o.boundaries, e.session_id + ".words.tsv");
    SegmentLabeling boundaries = load_segments(bpath);
    OracleDecodeResult res = oracle_decode(feats, boundaries, vocab, lexicon, model);
    std::ofstream os(join(o.out, e.session_id + ".oracle.tsv"));
    if (!os) throw IoError("cannot write " + join(o.out, e.session_id + ".oracle.tsv"));
    char buf[64];
    for (const auto &seg : res.segments) {
      std::snprintf(buf, sizeof buf, "%.3f\t%.3f\t", seg.start_s, seg.end_s);
      os << buf << seg.reference << '\t' << (seg.failed ? "-" : seg.hypothesis) << '\t'
         << (seg.failed ? "failed" : "ok") << '\n';
    }
    std::ofstream hyp(join(o.out, e.session_id + ".hyp.txt"));
    if (!hyp) throw IoError("cannot write " + join(o.out, e.session_id + ".hyp.txt"));
    auto words = res.hypothesized_words();
    for (std::size_t i = 0; i < words.size(); ++i) hyp << (i ? " " : "") << words[i];
    hyp << '\n';
  });
  std::cout << "decoded " << corpus.entries.size() << " sessions into " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval {diar | align | wer} and report
// ---------------------------------------------------------------------------

struct EvalOpts {
  CommonOpts common;
  std::string ref;
  std::string hyp;
  std::string out;  // empty -> stdout
  std::string group_by = "none";  // none | stage | speaker
  std::string target = kChild;
  std::string mode;
};

inline std::string group_of(const ManifestEntry &e, const std::string &group_by) {
  if (group_by == "stage") return e.stage;
  if (group_by == "speaker") return e.speaker_id;
  return "all";
}

inline int run_eval(const EvalOpts &o) {
  RunConfig rc = build_config(o.common);
  if (o.group_by != "none" && o.group_by != "stage" && o.group_by != "speaker")
    throw ValidationError("--group-by must be none, stage, or speaker");
  Corpus corpus = open_corpus(o.ref);
  std::vector<ReportEntry> entries;
  std::vector<DetectionAccumulator> det_acc;
  std::vector<DerAccumulator> der_acc;
  std::vector<WerScore> wer_scores;
  for_each_entry(corpus, [&](const ManifestEntry &e) {
    ReportEntry entry;
    entry.utt = e.session_id;
    entry.group = group_of(e, o.group_by);
    DetectionAccumulator det;
    DerAccumulator der_counts;
    WerScore ws;
    if (o.mode == "diar") {
      SegmentLabeling ref = load_segments(join(corpus.dir, e.segments_path));
      SegmentLabeling hyp = load_segments(join(o.hyp, e.session_id + ".tsv"));
      accumulate_detection(det, ref, hyp, o.target, rc.collar_s);
      accumulate_der(der_counts, ref, hyp, rc.collar_s, {kChild, kTherapist, kSpeech});
      entry.has_detection = true;
      entry.detection = det.finalize();
      entry.has_der = true;
      entry.diarization = der_counts.finalize();
    } else if (o.mode == "align") {
      SegmentLabeling ref = load_segments(join(corpus.dir, e.session_id + ".words.tsv"));
      SegmentLabeling hyp = load_segments(join(o.hyp, e.session_id + ".words.tsv"));
      accumulate_alignment(det, ref, hyp, rc.collar_s);
      entry.has_detection = true;
      entry.detection = det.finalize("alignment_prf");
    } else {
      Prompt prompt = load_prompt(join(corpus.dir, e.prompt_path));
      std::ifstream is(join(o.hyp, e.session_id + ".hyp.txt"));
      if (!is) throw IoError("cannot read " + join(o.hyp, e.session_id + ".hyp.txt"));
      std::vector<std::string> hyp_words;
      std::string w;
      while (is >> w) hyp_words.push_back(w);
      ws = wer(prompt.target_words, hyp_words);
      entry.has_wer = true;
      entry.word_errors = ws;
    }
    entries.push_back(entry);
    det_acc.push_back(det);
    der_acc.push_back(der_counts);
    wer_scores.push_back(ws);
  });
  std::ostringstream csv;
  write_report_csv(csv, entries, det_acc, der_acc, wer_scores);
  if (o.out.empty())
    std::cout << csv.str();
  else
    write_text_atomic(o.out, csv.str());
  return 0;
}

struct ReportOpts {
  CommonOpts common;
  std::vector<std::string> inputs;
  std::string out;
};

// merge eval CSVs into one table with a source column
inline int run_report(const ReportOpts &o) {
  std::ostringstream merged;
  merged << "source,utt,group,precision,recall,f1,der,conf,miss,fa,wer\n";
  for (const auto &path : o.inputs) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read " + path);
    std::string line;
    if (!std::getline(is, line))
      throw FormatError(path + ": empty report");
    if (line != "utt,group,precision,recall,f1,der,conf,miss,fa,wer")
      throw FormatError(path + ": unexpected report header '" + line + "'");
    std::string name = fs::path(path).stem().string();
    while (std::getline(is, line))
      if (!line.empty()) merged << name << ',' << line << '\n';
  }
  if (o.out.empty())
    std::cout << merged.str();
  else
    write_text_atomic(o.out, merged.str());
  return 0;
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

inline int dispatch(int argc, const char *const *argv) {
  CLI::App app{"ultrasound-assisted child speech session analysis"};
  app.require_subcommand(1);

  SynthOpts synth;
  auto *synth_cmd = app.add_subcommand("synth", "generate a synthetic ground-truthed corpus");
  synth_cmd->add_option("--out", synth.out, "output corpus directory")->required();
  synth_cmd->add_option("--n", synth.n, "number of sessions")->capture_default_str();
  add_common(synth_cmd, synth.common);

  EtaOpts eta;
  auto *eta_cmd = app.add_subcommand("eta", "estimated tongue activity trace from ultrasound");
  eta_cmd->add_option("--ultrasound", eta.ultrasound, "raw ultrasound file")->required();
  eta_cmd->add_option("--params", eta.params, "sidecar parameter file (default: .param)");
  eta_cmd->add_option("--out", eta.out, "trace CSV path")->required();
  eta_cmd->add_option("--segments", eta.segments, "also write activity segments here");
  eta_cmd->add_flag("--raw", eta.raw, "export unnormalized variance values");
  add_common(eta_cmd, eta.common);

  DiarizeOpts diarize;
  auto *diar_cmd = app.add_subcommand("diarize", "label child / therapist / silence");
  diar_cmd->require_subcommand(1);
  for (const char *mode : {"vad", "vad-eta", "hmm"}) {
    auto *m = diar_cmd->add_subcommand(
        mode, std::string("diarize via ") + (std::string(mode) == "hmm"
                                                 ? "an ergodic speaker model"
                                                 : std::string(mode) == "vad"
                                                       ? "energy thresholding only"
                                                       : "energy plus tongue activity"));
    m->add_option("--manifest", diarize.manifest, "corpus manifest or directory")->required();
    m->add_option("--out", diarize.out, "output directory for labelings")->required();
    if (std::string(mode) == "hmm")
      m->add_option("--model", diarize.model, "trained diarizer model")->required();
    add_common(m, diarize.common);
  }

  TrainDiarizerOpts train_diar;
  auto *td_cmd = app.add_subcommand("train-diarizer", "embedded-EM training from transcripts");
  td_cmd->add_option("--manifest", train_diar.manifest, "labeled corpus manifest")->required();
  td_cmd->add_option("--unlabeled", train_diar.unlabeled_manifest,
                     "manifest of unlabeled sessions for semi-supervised retraining");
  td_cmd->add_option("--out", train_diar.out, "output model path")->required();
  add_common(td_cmd, train_diar.common);

  TrainEmbedderOpts train_emb;
  auto *te_cmd = app.add_subcommand("train-embedder",
                                    "train the ultrasound frame classifier/embedder");
  te_cmd->add_option("--manifest", train_emb.manifest, "corpus manifest")->required();
  te_cmd->add_option("--out", train_emb.out, "output model path")->required();
  add_common(te_cmd, train_emb.common);

  EmbedOpts embed;
  auto *embed_cmd = app.add_subcommand("embed", "extract per-frame ultrasound embeddings");
  embed_cmd->add_option("--manifest", embed.manifest, "corpus manifest")->required();
  embed_cmd->add_option("--model", embed.model, "trained embedder model")->required();
  embed_cmd->add_option("--out", embed.out, "output directory")->required();
  add_common(embed_cmd, embed.common);

  AlignOpts align;
  auto *align_cmd = app.add_subcommand("align", "prompt-constrained word alignment");
  align_cmd->add_option("--manifest", align.manifest, "corpus manifest")->required();
  align_cmd->add_option("--lexicon", align.lexicon, "lexicon TSV (default: corpus lexicon.tsv)");
  align_cmd->add_option("--model", align.model,
                        "monophone model (default: corpus model.ekam)");
  align_cmd->add_option("--out", align.out, "output directory for word labelings")->required();
  align_cmd->add_option("--mask", align.mask,
                        "therapist masking: ref, none, or a diarization directory")
      ->capture_default_str();
  align_cmd->add_option("--posteriors", align.posteriors_out,
                        "also write per-frame state posteriors here");
  add_common(align_cmd, align.common);

  CombineOpts combine;
  auto *comb_cmd = app.add_subcommand("combine", "interpolate two systems' posteriors");
  comb_cmd->add_option("--a", combine.a_dir, "posterior directory, system A")->required();
  comb_cmd->add_option("--b", combine.b_dir, "posterior directory, system B")->required();
  comb_cmd->add_option("--manifest", combine.manifest, "corpus manifest")->required();
  comb_cmd->add_option("--alpha", combine.alpha, "weight on system A (default: config alpha)");
  comb_cmd->add_option("--out", combine.out, "directory for interpolated posteriors");
  comb_cmd->add_option("--sweep", combine.sweep,
                       "alignment-quality sweep CSV over the alpha_grid values");
  comb_cmd->add_option("--model", combine.model,
                       "monophone model for the sweep (default: corpus model.ekam)");
  comb_cmd->add_option("--mask", combine.mask,
                       "therapist masking for the sweep: ref, none, or a directory")
      ->capture_default_str();
  add_common(comb_cmd, combine.common);

  DecodeOracleOpts oracle;
  auto *oracle_cmd =
      app.add_subcommand("decode-oracle", "per-segment best word given true boundaries");
  oracle_cmd->add_option("--manifest", oracle.manifest, "corpus manifest")->required();
  oracle_cmd->add_option("--lexicon", oracle.lexicon, "lexicon TSV (default: corpus lexicon.tsv)");
  oracle_cmd->add_option("--model", oracle.model,
                         "monophone model (default: corpus model.ekam)");
  oracle_cmd->add_option("--boundaries", oracle.boundaries,
                         "word boundaries: ref or a directory of word labelings")
      ->capture_default_str();
  oracle_cmd->add_option("--out", oracle.out, "output directory")->required();
  add_common(oracle_cmd, oracle.common);

  EvalOpts eval;
  auto *eval_cmd = app.add_subcommand("eval", "score hypotheses against references");
  eval_cmd->require_subcommand(1);
  for (const char *mode : {"diar", "align", "wer"}) {
    auto *m = eval_cmd->add_subcommand(mode, std::string("score ") + mode + " outputs");
    m->add_option("--ref", eval.ref, "reference corpus manifest or directory")->required();
    m->add_option("--hyp", eval.hyp, "hypothesis directory")->required();
    m->add_option("--out", eval.out, "report CSV path (default: stdout)");
    m->add_option("--group-by", eval.group_by, "aggregate rows: none, stage, speaker")
        ->capture_default_str();
    if (std::string(mode) == "diar")
      m->add_option("--target", eval.target, "detection target label")->capture_default_str();
    add_common(m, eval.common);
  }

  ReportOpts report;
  auto *report_cmd = app.add_subcommand("report", "merge eval CSVs into one table");
  report_cmd->add_option("--in", report.inputs, "input eval CSV files")->required();
  report_cmd->add_option("--out", report.out, "merged CSV path (default: stdout)");
  add_common(report_cmd, report.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return 2;
  }

  std::string stage;
  try {
    if (synth_cmd->parsed()) {
      stage = "synth";
      return run_synth(synth);
    }
    if (eta_cmd->parsed()) {
      stage = "eta";
      return run_eta(eta);
    }
    if (diar_cmd->parsed()) {
      auto subs = diar_cmd->get_subcommands();
      diarize.mode = subs.at(0)->get_name();
      stage = "diarize " + diarize.mode;
      return run_diarize(diarize);
    }
    if (td_cmd->parsed()) {
      stage = "train-diarizer";
      return run_train_diarizer(train_diar);
    }
    if (te_cmd->parsed()) {
      stage = "train-embedder";
      return run_train_embedder(train_emb);
    }
    if (embed_cmd->parsed()) {
      stage = "embed";
      return run_embed(embed);
    }
    if (align_cmd->parsed()) {
      stage = "align";
      return run_align(align);
    }
    if (comb_cmd->parsed()) {
      stage = "combine";
      return run_combine(combine);
    }
    if (oracle_cmd->parsed()) {
      stage = "decode-oracle";
      return run_decode_oracle(oracle);
    }
    if (eval_cmd->parsed()) {
      auto subs = eval_cmd->get_subcommands();
      eval.mode = subs.at(0)->get_name();
      stage = "eval " + eval.mode;
      return run_eval(eval);
    }
    if (report_cmd->parsed()) {
      stage = "report";
      return run_report(report);
    }
  } catch (const std::exception &ex) {
    std::cerr << "echokit " << stage << ": error: " << ex.what() << "\n";
    return 1;
  }
  std::cerr << "echokit: no subcommand\n";
  return 2;
}

inline int dispatch(const std::vector<std::string> &args) {
  std::vector<const char *> argv;
  argv.push_back("echokit");
  for (const auto &a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace echokit::cli
