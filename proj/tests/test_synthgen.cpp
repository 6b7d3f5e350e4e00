#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "echokit/eta.hpp"
#include "echokit/session_io.hpp"
#include "echokit/synthgen.hpp"

using namespace echokit;

namespace {

// full-size ultrasound is expensive; a small grid keeps the physics identical
SynthConfig small_config(std::uint64_t seed) {
  SynthConfig c = SynthConfig::defaults();
  c.seed = seed;
  c.num_scanlines = 8;
  c.num_echoes = 10;
  c.fps = 50.0;
  return c;
}

const std::string &label_at(const SegmentLabeling &tiling, double t) {
  for (const auto &s : tiling.segments)
    if (s.start_s <= t && t < s.end_s) return s.label;
  return tiling.segments.back().label;
}

bool near_integer_ms(double t) { return std::abs(t * 1000.0 - std::llround(t * 1000.0)) < 1e-6; }

struct TmpDir {
  std::string path;
  TmpDir() {
    char buf[] = "/tmp/echokit_synth_XXXXXX";
    path = mkdtemp(buf);
  }
  ~TmpDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string &name) const { return path + "/" + name; }
};

}  // namespace

TEST_CASE("generation is a pure function of the config") {
  SynthConfig cfg = small_config(123);
  SynthSession a = generate_session(cfg);
  SynthSession b = generate_session(cfg);
  REQUIRE(a.features.data == b.features.data);
  REQUIRE(a.ultrasound.data == b.ultrasound.data);
  REQUIRE(a.reference.segments == b.reference.segments);
  REQUIRE(a.words.segments == b.words.segments);
  REQUIRE(a.phones.segments == b.phones.segments);
  REQUIRE(a.prompt.target_words == b.prompt.target_words);
  REQUIRE(a.articulation == b.articulation);

  SynthSession c = generate_session(small_config(124));
  REQUIRE(a.features.data != c.features.data);
}

TEST_CASE("reference tilings cover the session on the millisecond grid") {
  SynthSession s = generate_session(small_config(7));
  for (const SegmentLabeling *tiling : {&s.reference, &s.words, &s.phones}) {
    const auto &segs = tiling->segments;
    REQUIRE_FALSE(segs.empty());
    REQUIRE(segs.front().start_s == 0.0);
    REQUIRE(segs.back().end_s == Catch::Approx(8.0));
    for (std::size_t i = 0; i < segs.size(); ++i) {
      REQUIRE(near_integer_ms(segs[i].start_s));
      REQUIRE(near_integer_ms(segs[i].end_s));
      if (i > 0) REQUIRE(segs[i].start_s == segs[i - 1].end_s);
    }
  }
  // turn rotation starts with the child and alternates
  REQUIRE(s.turns.size() >= 2);
  for (std::size_t i = 0; i < s.turns.size(); ++i)
    REQUIRE(s.turns[i] == (i % 2 == 0 ? kChild : kTherapist));
}

TEST_CASE("word and phone tilings agree with the speaker tiling") {
  SynthConfig cfg = small_config(8);
  SynthSession s = generate_session(cfg);
  std::map<std::string, std::vector<std::string>> pron;
  for (const auto &w : cfg.words) pron[w.word] = w.phones;

  std::size_t child_turns = 0;
  for (const auto &seg : s.reference.segments) {
    if (seg.label != kChild) continue;
    REQUIRE(child_turns < s.prompt.target_words.size());
    const std::string &word = s.prompt.target_words[child_turns];
    ++child_turns;

    // the word tiling spans the child turn with exactly that word
    bool found = false;
    for (const auto &ws : s.words.segments)
      if (ws.start_s == seg.start_s && ws.end_s == seg.end_s && ws.label == word) found = true;
    REQUIRE(found);

    // the phones inside the turn spell the word in order
    std::vector<std::string> spelled;
    for (const auto &ps : s.phones.segments)
      if (ps.start_s >= seg.start_s - 1e-9 && ps.end_s <= seg.end_s + 1e-9)
        spelled.push_back(ps.label);
    REQUIRE(spelled == pron[word]);
  }
  REQUIRE(child_turns == s.prompt.target_words.size());

  // therapist turns carry no word labels
  for (const auto &seg : s.reference.segments) {
    if (seg.label != kTherapist) continue;
    REQUIRE(label_at(s.words, 0.5 * (seg.start_s + seg.end_s)) == kSilence);
    REQUIRE(label_at(s.phones, 0.5 * (seg.start_s + seg.end_s)) == kTherapist);
  }
}

TEST_CASE("articulation labels mirror the phone tiling on the frame clock") {
  SynthConfig cfg = small_config(9);
  SynthSession s = generate_session(cfg);
  auto inventory = cfg.phone_inventory();
  REQUIRE(static_cast<int>(s.articulation.size()) == s.ultrasound.num_frames);
  for (int f = 0; f < s.ultrasound.num_frames; ++f) {
    double ft = cfg.sync_offset_s + f / cfg.fps;
    const std::string &label = label_at(s.phones, ft);
    int want = 0;
    if (label != kSilence && label != kTherapist) {
      auto it = std::lower_bound(inventory.begin(), inventory.end(), label);
      want = 1 + static_cast<int>(it - inventory.begin()) % 10;
    }
    REQUIRE(s.articulation[static_cast<std::size_t>(f)] == want);
    REQUIRE(s.articulation[static_cast<std::size_t>(f)] >= 0);
    REQUIRE(s.articulation[static_cast<std::size_t>(f)] <= 10);
  }
}

TEST_CASE("features cluster around the active phone's mean") {
  SynthConfig cfg = small_config(10);
  SynthSession s = generate_session(cfg);
  std::map<std::string, std::vector<double>> sums;
  std::map<std::string, int> counts;
  for (int i = 0; i < s.features.rows; ++i) {
    double lo = i * cfg.frame_shift_s;
    double hi = lo + cfg.frame_length_s;
    // only frames whose whole window sits inside one phone segment
    const Segment *owner = nullptr;
    for (const auto &seg : s.phones.segments)
      if (seg.start_s <= lo && hi <= seg.end_s) owner = &seg;
    if (!owner) continue;
    std::string key = owner->label == kTherapist ? "__therapist" : owner->label;
    const auto &mean = owner->label == kTherapist
                           ? cfg.therapist_mean
                           : cfg.phone_means.at(owner->label == kSilence ? cfg.silence_phone
                                                                         : owner->label);
    auto &acc = sums[key];
    acc.resize(cfg.feature_dim, 0.0);
    for (int d = 0; d < cfg.feature_dim; ++d) {
      double x = s.features.at(i, d);
      REQUIRE(std::abs(x - mean[d]) < 5.0 * cfg.feature_sigma);
      acc[d] += x - mean[d];
    }
    counts[key] += 1;
  }
  // empirical means stay near the configured means where there is enough data
  for (const auto &[key, acc] : sums) {
    int n = counts[key];
    if (n < 10) continue;
    for (double residual : acc) REQUIRE(std::abs(residual / n) < 0.5);
  }
  REQUIRE(counts.size() >= 3);
}

TEST_CASE("child turns carry the movement energy") {
  SynthConfig cfg = small_config(11);
  SynthSession s = generate_session(cfg);
  EtaSignal eta = compute_eta(s.ultrasound);
  double child = 0.0, therapist = 0.0;
  int nc = 0, nt = 0;
  for (std::size_t i = 0; i < eta.values.size(); ++i) {
    const std::string &label = label_at(s.reference, eta.center_time(i));
    if (label == kChild) {
      child += eta.values[i];
      ++nc;
    } else if (label == kTherapist) {
      therapist += eta.values[i];
      ++nt;
    }
  }
  REQUIRE(nc > 0);
  REQUIRE(nt > 0);
  REQUIRE(child / nc > 5.0 * (therapist / nt));
}

TEST_CASE("rendered audio follows the speaker tiling") {
  SynthConfig cfg = small_config(12);
  cfg.render_audio = true;
  SynthSession s = generate_session(cfg);
  REQUIRE(s.audio.samples.size() ==
          static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate)));

  auto rms_between = [&](double a, double b) {
    std::size_t lo = static_cast<std::size_t>(a * cfg.sample_rate);
    std::size_t hi = static_cast<std::size_t>(b * cfg.sample_rate);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += s.audio.samples[i] * s.audio.samples[i];
    return std::sqrt(acc / static_cast<double>(hi - lo));
  };
  const Segment *child = nullptr, *silence = nullptr;
  for (const auto &seg : s.reference.segments) {
    if (!child && seg.label == kChild) child = &seg;
    if (!silence && seg.label == kSilence && seg.end_s - seg.start_s > 0.05) silence = &seg;
  }
  REQUIRE(child != nullptr);
  REQUIRE(silence != nullptr);
  REQUIRE(rms_between(child->start_s, child->end_s) > 0.1);
  REQUIRE(rms_between(silence->start_s, silence->end_s) < 0.01);

  Session assembled = assemble_session(s);
  assembled.validate();
  REQUIRE(assembled.reference.has_value());

  SynthSession feature_only = generate_session(small_config(12));
  REQUIRE(feature_only.audio.samples.empty());
  REQUIRE_THROWS_AS(assemble_session(feature_only), ValidationError);
}

TEST_CASE("generated corpora round trip through their manifest") {
  TmpDir tmp;
  SynthConfig cfg = small_config(31);
  SynthCorpus corpus = generate_corpus(cfg, 3, tmp.path);
  REQUIRE(corpus.entries.size() == 3);
  REQUIRE(corpus.entries[0].session_id == "s000");
  REQUIRE(corpus.entries[1].session_id == "s001");
  REQUIRE(corpus.entries[0].stage == "baseline");
  REQUIRE(corpus.entries[1].stage == "mid");
  REQUIRE(corpus.entries[2].stage == "post");
  REQUIRE(corpus.entries[0].speaker_id == "child_00");
  REQUIRE(corpus.entries[0].audio_or_feature_path == "s000.feats");

  std::vector<ManifestEntry> loaded = load_manifest(corpus.manifest_path);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(loaded[i].session_id == corpus.entries[i].session_id);
    REQUIRE(loaded[i].ultrasound_path == corpus.entries[i].ultrasound_path);
    REQUIRE(loaded[i].segments_path == corpus.entries[i].segments_path);
  }

  Lexicon lex = load_lexicon(corpus.lexicon_path);
  REQUIRE(lex.entries.size() == cfg.words.size());
  MonophoneModel model = load_monophone(corpus.model_path);
  REQUIRE(model.dim == cfg.feature_dim);
  REQUIRE(model.phones.size() == cfg.phone_inventory().size() + 1);

  // every referenced file exists alongside the sidecar outputs
  namespace fs = std::filesystem;
  for (const auto &e : corpus.entries) {
    for (const std::string &name :
         {e.ultrasound_path, e.audio_or_feature_path, e.segments_path, e.prompt_path,
          e.session_id + ".param", e.session_id + ".words.tsv", e.session_id + ".phones.tsv",
          e.session_id + ".turns.txt", e.session_id + ".art.csv"})
      REQUIRE(fs::exists(fs::path(tmp.path) / name));
  }

  // the first session reproduces from the recorded seeding scheme
  SynthConfig session_cfg = cfg;
  session_cfg.seed = Rng(cfg.seed).split(0).next_u64();
  SynthSession s0 = generate_session(session_cfg);
  FeatureMatrix feats = load_matrix(tmp.file("s000.feats"));
  REQUIRE(feats.rows == s0.features.rows);
  REQUIRE(feats.data == s0.features.data);
  SegmentLabeling ref = load_segments(tmp.file("s000.ref.tsv"));
  REQUIRE(ref.segments == s0.reference.segments);
  std::vector<std::string> turns = load_transcript(tmp.file("s000.turns.txt"));
  REQUIRE(turns == s0.turns);
  std::vector<int> art = load_articulation(tmp.file("s000.art.csv"));
  REQUIRE(art == s0.articulation);

  REQUIRE_THROWS_AS(generate_corpus(cfg, 0, tmp.path), ValidationError);
}

TEST_CASE("audio corpora reference wav files") {
  TmpDir tmp;
  SynthConfig cfg = small_config(32);
  cfg.render_audio = true;
  SynthCorpus corpus = generate_corpus(cfg, 1, tmp.path);
  REQUIRE(corpus.entries[0].audio_or_feature_path == "s000.wav");
  AudioTrack audio = load_wav(tmp.file("s000.wav"));
  REQUIRE(audio.sample_rate == cfg.sample_rate);
  REQUIRE(audio.samples.size() ==
          static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate)));
}

TEST_CASE("sessions without child turns cannot form a corpus") {
  TmpDir tmp;
  SynthConfig cfg = small_config(33);
  cfg.speakers = {kTherapist};
  REQUIRE_THROWS_AS(generate_corpus(cfg, 1, tmp.path), ValidationError);
}

TEST_CASE("the exported model mirrors the generator") {
  SynthConfig cfg = small_config(40);
  MonophoneModel m = synth_monophone_model(cfg);
  REQUIRE(std::is_sorted(m.phones.begin(), m.phones.end()));
  REQUIRE(m.states_per_phone == 3);
  REQUIRE(m.dim == cfg.feature_dim);
  REQUIRE(m.phone_id("sil") >= 0);
  double var = cfg.feature_sigma * cfg.feature_sigma;
  for (int p = 0; p < static_cast<int>(m.phones.size()); ++p) {
    const auto &mean = cfg.phone_means.at(m.phones[p]);
    for (int s = 0; s < 3; ++s) {
      const DiagGmm &g = m.states[m.state_index(p, s)];
      REQUIRE(g.means == mean);
      for (double v : g.vars) REQUIRE(v == var);
      REQUIRE(m.self_loop[m.state_index(p, s)] ==
              (m.phones[p] == cfg.silence_phone ? 0.5 : 0.7));
    }
  }

  Lexicon lex = synth_lexicon(cfg);
  for (const auto &w : cfg.words) REQUIRE(lex.pronunciation(w.word) == w.phones);
}

TEST_CASE("default class means keep their guaranteed separation") {
  SynthConfig cfg = SynthConfig::defaults();
  auto inventory = cfg.phone_inventory();
  REQUIRE(inventory.size() == 16);
  auto dist = [&](const std::vector<double> &a, const std::vector<double> &b) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(d2);
  };
  double worst_pair = 1e9;
  for (std::size_t i = 0; i < inventory.size(); ++i)
    for (std::size_t j = i + 1; j < inventory.size(); ++j)
      worst_pair = std::min(worst_pair,
                            dist(cfg.phone_means.at(inventory[i]), cfg.phone_means.at(inventory[j])));
  REQUIRE(worst_pair >= 2.0);

  // silence and the therapist cluster stay clear of every phone
  const auto &sil = cfg.phone_means.at(cfg.silence_phone);
  for (const auto &p : inventory) {
    REQUIRE(dist(sil, cfg.phone_means.at(p)) >= 1.5);
    REQUIRE(dist(cfg.therapist_mean, cfg.phone_means.at(p)) >= 1.5);
  }
  REQUIRE(dist(sil, cfg.therapist_mean) >= 1.5);
}

TEST_CASE("config validation rejects inconsistent settings") {
  SynthConfig cfg = small_config(50);
  cfg.sigma_child = 0.01;
  cfg.sigma_therapist = 0.10;
  REQUIRE_THROWS_AS(cfg.validate(), ValidationError);

  cfg = small_config(50);
  cfg.duration_s = 0.2;  // cannot fit one turn plus gaps
  REQUIRE_THROWS_AS(cfg.validate(), ValidationError);

  cfg = small_config(50);
  cfg.speakers = {"parent"};
  REQUIRE_THROWS_AS(cfg.validate(), ValidationError);

  cfg = small_config(50);
  cfg.words.push_back({"hiss", {"sil"}});
  REQUIRE_THROWS_AS(cfg.validate(), ValidationError);

  cfg = small_config(50);
  cfg.phone_means.erase("ao");
  REQUIRE_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("articulation and transcript sidecars parse strictly") {
  TmpDir tmp;
  std::vector<int> labels = {0, 3, 10, 0, 7};
  save_articulation(labels, tmp.file("a.csv"));
  REQUIRE(load_articulation(tmp.file("a.csv")) == labels);

  {
    std::ofstream os(tmp.file("bad_header.csv"));
    os << "frames,articulation\n0,1\n";
  }
  REQUIRE_THROWS_AS(load_articulation(tmp.file("bad_header.csv")), FormatError);
  {
    std::ofstream os(tmp.file("out_of_order.csv"));
    os << "frame,articulation\n1,0\n";
  }
  REQUIRE_THROWS_AS(load_articulation(tmp.file("out_of_order.csv")), FormatError);
  {
    std::ofstream os(tmp.file("negative.csv"));
    os << "frame,articulation\n0,-2\n";
  }
  REQUIRE_THROWS_AS(load_articulation(tmp.file("negative.csv")), ParseError);

  std::vector<std::string> turns = {kChild, kTherapist, kChild};
  save_transcript(turns, tmp.file("t.txt"));
  REQUIRE(load_transcript(tmp.file("t.txt")) == turns);

  std::string manifest = tmp.file("m.csv");
  {
    std::ofstream os(manifest);
    os << "who,what\n";
  }
  REQUIRE_THROWS_AS(load_manifest(manifest), FormatError);
  {
    std::ofstream os(manifest);
    os << "session_id,speaker_id,stage,ultrasound_path,audio_or_feature_path,"
          "segments_path,prompt_path\n"
          "s000,child_00,baseline,a.ult,a.feats,a.tsv\n";  // six fields
  }
  REQUIRE_THROWS_AS(load_manifest(manifest), ParseError);
}
