#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "echokit/cli.hpp"

using namespace echokit;

namespace {

struct TmpDir {
  std::string path;
  TmpDir() {
    char buf[] = "/tmp/echokit_cli_XXXXXX";
    path = mkdtemp(buf);
  }
  ~TmpDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string &name) const { return path + "/" + name; }
};

std::string slurp(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// tiny ultrasound keeps synthesis cheap; fps 50 still gives a valid eta window
std::vector<std::string> synth_args(const std::string &out, int n, int seed) {
  return {"synth",  "--out", out,
          "--n",    std::to_string(n),
          "--seed", std::to_string(seed),
          "--set",  "synth_scanlines=8",
          "--set",  "synth_echoes=10",
          "--set",  "synth_fps=50"};
}

}  // namespace

TEST_CASE("defaults validate and every key round trips through its formatter") {
  RunConfig rc;
  rc.validate();
  const auto &keys = RunConfig::keys();
  REQUIRE(keys.size() >= 30);
  std::string help = RunConfig::describe_keys();
  for (const auto &spec : keys) {
    REQUIRE(help.find(spec.name) != std::string::npos);
    std::string v = spec.get(rc);
    RunConfig other;
    other.apply(spec.name, v);
    REQUIRE(spec.get(other) == v);
  }
  REQUIRE(help.find("alpha_grid = 0.6,0.7") != std::string::npos);
}

TEST_CASE("apply parses each value kind and rejects garbage") {
  RunConfig rc;
  rc.apply("vad_threshold", "-3.5");
  REQUIRE(rc.vad_threshold == -3.5);
  rc.apply("context", "7");
  REQUIRE(rc.context == 7);
  rc.apply("context_mode", "left");
  REQUIRE(rc.context_mode == "left");
  rc.apply("synth_render_audio", "true");
  REQUIRE(rc.synth_render_audio);
  rc.apply("synth_render_audio", "0");
  REQUIRE_FALSE(rc.synth_render_audio);

  REQUIRE_THROWS_AS(rc.apply("no_such_key", "1"), ValidationError);
  REQUIRE_THROWS_AS(rc.apply("context", "seven"), ParseError);
  REQUIRE_THROWS_AS(rc.apply("context", "7x"), ParseError);
  REQUIRE_THROWS_AS(rc.apply("vad_threshold", "high"), ParseError);
  REQUIRE_THROWS_AS(rc.apply("synth_render_audio", "maybe"), ParseError);

  rc.apply_override("alpha=0.25");
  REQUIRE(rc.alpha == 0.25);
  REQUIRE_THROWS_AS(rc.apply_override("alpha"), ValidationError);
  REQUIRE_THROWS_AS(rc.apply_override("=0.25"), ValidationError);
}

TEST_CASE("config files layer under command-line overrides") {
  TmpDir tmp;
  {
    std::ofstream os(tmp.file("run.cfg"));
    os << "# pipeline tuning\n"
          "vad_threshold=3.5\n"
          "context=2\n"
          "alpha_grid=0,0.5,1\n";
  }
  cli::CommonOpts opts;
  opts.config_path = tmp.file("run.cfg");
  opts.overrides = {"context=9", "alpha=0.1"};
  RunConfig rc = cli::build_config(opts);
  REQUIRE(rc.vad_threshold == 3.5);       // file beats the default
  REQUIRE(rc.context == 9);               // override beats the file
  REQUIRE(rc.alpha == 0.1);               // override beats the default
  REQUIRE(rc.eta_threshold == 0.5);       // untouched default survives
  REQUIRE(rc.alpha_values() == std::vector<double>{0.0, 0.5, 1.0});

  cli::CommonOpts bad = opts;
  bad.overrides = {"alpha=1.5"};
  REQUIRE_THROWS_AS(cli::build_config(bad), ValidationError);
  bad = opts;
  bad.jobs = 0;
  REQUIRE_THROWS_AS(cli::build_config(bad), ValidationError);
}

TEST_CASE("alpha grids parse strictly") {
  RunConfig rc;
  rc.alpha_grid = "0,0.25,0.5,0.75,1";
  REQUIRE(rc.alpha_values() == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  rc.alpha_grid = "0.3";
  REQUIRE(rc.alpha_values() == std::vector<double>{0.3});
  rc.alpha_grid = "a,b";
  REQUIRE_THROWS_AS(rc.alpha_values(), ParseError);
  rc.alpha_grid = "0.5,";
  REQUIRE_THROWS_AS(rc.alpha_values(), ParseError);
  rc.alpha_grid = "";
  REQUIRE_THROWS_AS(rc.alpha_values(), ValidationError);
  rc.alpha_grid = "0.5,2.0";
  REQUIRE_THROWS_AS(rc.validate(), ValidationError);
}

TEST_CASE("validation rejects out-of-range settings") {
  auto broken = [](const char *key, const char *value) {
    RunConfig rc;
    rc.apply(key, value);
    REQUIRE_THROWS_AS(rc.validate(), ValidationError);
  };
  broken("eta_threshold", "1.5");
  broken("context_mode", "sideways");
  broken("alpha", "-0.1");
  broken("self_loop_init", "1");
  broken("frame_length_s", "0.001");  // below frame_shift_s
  broken("cnn_preset", "huge");
  broken("synth_sigma_therapist", "0.5");  // above sigma_child
  broken("train_steps", "0");
}

TEST_CASE("bad invocations exit 2, runtime failures exit 1, help exits 0") {
  TmpDir tmp;
  REQUIRE(cli::dispatch({"--help"}) == 0);
  REQUIRE(cli::dispatch({"synth", "--help"}) == 0);
  REQUIRE(cli::dispatch(std::vector<std::string>{}) == 2);
  REQUIRE(cli::dispatch({"frobnicate"}) == 2);
  REQUIRE(cli::dispatch({"synth"}) == 2);  // missing --out
  REQUIRE(cli::dispatch({"diarize", "hmm", "--manifest", "x", "--out", "y"}) == 2);

  // parse succeeds but the run fails: unknown key, bad value, missing file
  REQUIRE(cli::dispatch({"synth", "--out", tmp.file("c"), "--set", "no_such_key=1"}) == 1);
  REQUIRE(cli::dispatch({"synth", "--out", tmp.file("c"), "--set", "synth_fps=-1"}) == 1);
  REQUIRE(cli::dispatch({"synth", "--out", tmp.file("c"), "--config", tmp.file("none.cfg")}) == 1);
  REQUIRE(cli::dispatch({"eval", "diar", "--ref", tmp.file("nowhere"), "--hyp", "h"}) == 1);
}

TEST_CASE("the pipeline runs end to end from the command line") {
  TmpDir tmp;
  std::string corpus = tmp.file("corpus");
  REQUIRE(cli::dispatch(synth_args(corpus, 2, 5)) == 0);
  REQUIRE(load_manifest(corpus + "/manifest.csv").size() == 2);

  // same seed, same bytes
  std::string again = tmp.file("corpus2");
  REQUIRE(cli::dispatch(synth_args(again, 2, 5)) == 0);
  REQUIRE(slurp(corpus + "/s000.feats") == slurp(again + "/s000.feats"));
  REQUIRE(slurp(corpus + "/s001.ref.tsv") == slurp(again + "/s001.ref.tsv"));
  REQUIRE(slurp(corpus + "/manifest.csv") == slurp(again + "/manifest.csv"));

  // activity trace straight from one ultrasound file
  std::string trace = tmp.file("trace.csv");
  std::string activity = tmp.file("activity.tsv");
  REQUIRE(cli::dispatch({"eta", "--ultrasound", corpus + "/s000.ult", "--out", trace,
                         "--segments", activity}) == 0);
  REQUIRE(slurp(trace).rfind("t_center_s,value\n", 0) == 0);
  SegmentLabeling act = load_segments(activity);
  REQUIRE_FALSE(act.segments.empty());
  for (const auto &s : act.segments)
    REQUIRE((s.label == kEtaActive || s.label == kEtaInactive));

  // alignment with reference masking, plus state posteriors
  std::string align_a = tmp.file("align_a");
  std::string post_a = tmp.file("post_a");
  REQUIRE(cli::dispatch({"align", "--manifest", corpus, "--out", align_a, "--posteriors",
                         post_a}) == 0);
  Lexicon lexicon = load_lexicon(corpus + "/lexicon.tsv");
  SegmentLabeling words = load_segments(align_a + "/s000.words.tsv");
  REQUIRE_FALSE(words.segments.empty());
  bool saw_word = false;
  for (const auto &s : words.segments) {
    if (s.label == kSilence) continue;
    REQUIRE(lexicon.entries.count(s.label) == 1);
    saw_word = true;
  }
  REQUIRE(saw_word);

  // a second run reproduces the posteriors bit for bit
  std::string align_b = tmp.file("align_b");
  std::string post_b = tmp.file("post_b");
  REQUIRE(cli::dispatch({"align", "--manifest", corpus, "--out", align_b, "--posteriors",
                         post_b}) == 0);
  REQUIRE(slurp(post_a + "/s000.post.ekfm") == slurp(post_b + "/s000.post.ekfm"));

  // alignment against the reference word tiling scores near-perfectly
  std::string report = tmp.file("align_report.csv");
  REQUIRE(cli::dispatch({"eval", "align", "--ref", corpus, "--hyp", align_a, "--out",
                         report}) == 0);
  std::string rep = slurp(report);
  REQUIRE(rep.rfind("utt,group,precision,recall,f1,der,conf,miss,fa,wer\n", 0) == 0);
  REQUIRE(rep.find("s000,") != std::string::npos);
  REQUIRE(rep.find("s001,") != std::string::npos);
  REQUIRE(rep.find("ALL,") != std::string::npos);
  std::string report2 = tmp.file("align_report2.csv");
  REQUIRE(cli::dispatch({"eval", "align", "--ref", corpus, "--hyp", align_a, "--out",
                         report2}) == 0);
  REQUIRE(slurp(report2) == rep);

  // interpolation at alpha 1 returns system A exactly
  std::string mixed = tmp.file("mixed");
  REQUIRE(cli::dispatch({"combine", "--a", post_a, "--b", post_b, "--manifest", corpus,
                         "--alpha", "1", "--out", mixed}) == 0);
  REQUIRE(slurp(mixed + "/s001.post.ekfm") == slurp(post_a + "/s001.post.ekfm"));
  REQUIRE(cli::dispatch({"combine", "--a", post_a, "--b", post_b, "--manifest", corpus,
                         "--alpha", "2", "--out", mixed}) == 1);

  // sweep over an explicit grid writes one row per alpha
  std::string sweep = tmp.file("sweep.csv");
  REQUIRE(cli::dispatch({"combine", "--a", post_a, "--b", post_b, "--manifest", corpus,
                         "--sweep", sweep, "--set", "alpha_grid=0,0.5,1"}) == 0);
  std::istringstream sw(slurp(sweep));
  std::string line;
  REQUIRE(std::getline(sw, line));
  REQUIRE(line == "alpha,precision,recall,f1");
  std::vector<std::string> rows;
  while (std::getline(sw, line))
    if (!line.empty()) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0].rfind("0,", 0) == 0);
  REQUIRE(rows[1].rfind("0.5,", 0) == 0);
  REQUIRE(rows[2].rfind("1,", 0) == 0);

  // oracle decoding with true boundaries recovers each prompt
  std::string oracle = tmp.file("oracle");
  REQUIRE(cli::dispatch({"decode-oracle", "--manifest", corpus, "--out", oracle}) == 0);
  for (const std::string &sid : {"s000", "s001"}) {
    Prompt prompt = load_prompt(corpus + "/" + sid + ".prompt.txt");
    std::istringstream hyp(slurp(oracle + "/" + sid + ".hyp.txt"));
    std::vector<std::string> got;
    std::string w;
    while (hyp >> w) got.push_back(w);
    REQUIRE(got == prompt.target_words);
  }

  // word error rates of those decodes are zero
  std::string wer_csv = tmp.file("wer.csv");
  REQUIRE(cli::dispatch({"eval", "wer", "--ref", corpus, "--hyp", oracle, "--out",
                         wer_csv}) == 0);
  std::istringstream wr(slurp(wer_csv));
  REQUIRE(std::getline(wr, line));
  bool saw_utt = false;
  while (std::getline(wr, line)) {
    if (line.empty()) continue;
    REQUIRE(line.substr(line.rfind(',') + 1) == "0.0000");
    saw_utt = true;
  }
  REQUIRE(saw_utt);

  // merged reports carry the source file stem
  std::string merged = tmp.file("merged.csv");
  REQUIRE(cli::dispatch({"report", "--in", wer_csv, "--in", report, "--out", merged}) == 0);
  std::string m = slurp(merged);
  REQUIRE(m.rfind("source,utt,group,precision,recall,f1,der,conf,miss,fa,wer\n", 0) == 0);
  REQUIRE(m.find("\nwer,s000,") != std::string::npos);
  REQUIRE(m.find("align_report,s000,") != std::string::npos);
  REQUIRE(cli::dispatch({"report", "--in", sweep, "--out", merged}) == 1);  // wrong header
}

TEST_CASE("energy diarization needs rendered audio") {
  TmpDir tmp;
  std::string features_only = tmp.file("fc");
  REQUIRE(cli::dispatch(synth_args(features_only, 1, 6)) == 0);
  REQUIRE(cli::dispatch({"diarize", "vad", "--manifest", features_only, "--out",
                         tmp.file("d0")}) == 1);

  auto args = synth_args(tmp.file("ac"), 1, 6);
  args.push_back("--set");
  args.push_back("synth_render_audio=true");
  REQUIRE(cli::dispatch(args) == 0);
  std::string out = tmp.file("d1");
  REQUIRE(cli::dispatch({"diarize", "vad", "--manifest", tmp.file("ac"), "--out", out}) == 0);
  SegmentLabeling hyp = load_segments(out + "/s000.tsv");
  REQUIRE_FALSE(hyp.segments.empty());
  bool saw_speech = false;
  for (const auto &s : hyp.segments)
    if (s.label == kSpeech) saw_speech = true;
  REQUIRE(saw_speech);
}
