#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "echokit/diarizer.hpp"
#include "echokit/session_io.hpp"

using namespace echokit;

namespace {

struct TmpDir {
  std::string path;
  TmpDir() {
    path = "/tmp/echokit_io_XXXXXX";
    REQUIRE(mkdtemp(path.data()) != nullptr);
  }
  ~TmpDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string &name) const { return path + "/" + name; }
};

}  // namespace

TEST_CASE("parameter files keep keys and ignore comments") {
  TmpDir d;
  {
    std::ofstream out(d.file("p.param"));
    out << "# comment line\n"
        << "fps = 121.2\n"
        << "  num_scanlines=63  \n"
        << "\n"
        << "label = with spaces inside\n";
  }
  ParamMap p = load_params(d.file("p.param"));
  REQUIRE(p.at("fps") == "121.2");
  REQUIRE(p.at("num_scanlines") == "63");
  REQUIRE(p.at("label") == "with spaces inside");

  save_params(p, d.file("q.param"));
  REQUIRE(load_params(d.file("q.param")) == p);
}

TEST_CASE("ultrasound round trip preserves 8-bit rasters exactly") {
  UltrasoundSequence seq;
  seq.num_frames = 5;
  seq.num_scanlines = 4;
  seq.num_echoes = 6;
  seq.fps = 81.5;
  seq.sync_offset_s = 0.125;
  seq.data.resize(static_cast<std::size_t>(5) * 4 * 6);
  Rng rng(42);
  for (auto &v : seq.data) v = static_cast<float>(rng.index(256)) / 255.0f;

  TmpDir d;
  save_ultrasound(seq, d.file("u.ult"), d.file("u.param"));
  UltrasoundSequence back = load_ultrasound(d.file("u.ult"), load_params(d.file("u.param")));
  REQUIRE(back.num_frames == 5);
  REQUIRE(back.num_scanlines == 4);
  REQUIRE(back.num_echoes == 6);
  REQUIRE(back.fps == 81.5);
  REQUIRE(back.sync_offset_s == 0.125);
  REQUIRE(back.data == seq.data);
}

TEST_CASE("ultrasound loader rejects inconsistent byte counts") {
  TmpDir d;
  {
    std::ofstream out(d.file("u.ult"), std::ios::binary);
    out << "12345";  // not a multiple of 4 * 6
  }
  ParamMap params{{"num_scanlines", "4"}, {"num_echoes", "6"}, {"fps", "50"}};
  REQUIRE_THROWS_AS(load_ultrasound(d.file("u.ult"), params), DimensionError);
  params["fps"] = "0";
  REQUIRE_THROWS_AS(load_ultrasound(d.file("u.ult"), params), FormatError);
}

TEST_CASE("wav round trip is exact at 16-bit quantization") {
  AudioTrack a;
  a.sample_rate = 8000;
  a.samples.resize(800);
  Rng rng(7);
  for (auto &s : a.samples) {
    auto q = static_cast<std::int16_t>(rng.index(65536) - 32768);
    s = q / 32768.0f;
  }
  TmpDir d;
  save_wav(a, d.file("a.wav"));
  AudioTrack back = load_wav(d.file("a.wav"));
  REQUIRE(back.sample_rate == 8000);
  REQUIRE(back.samples.size() == a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    // writer rounds to the nearest 16-bit code with a 32767 gain
    auto code = static_cast<std::int16_t>(std::lround(a.samples[i] * 32767.0f));
    REQUIRE(back.samples[i] == code / 32768.0f);
  }
}

TEST_CASE("wav loader rejects non-wav bytes") {
  TmpDir d;
  {
    std::ofstream out(d.file("x.wav"), std::ios::binary);
    out << "definitely not RIFF data at all.....";
  }
  REQUIRE_THROWS_AS(load_wav(d.file("x.wav")), FormatError);
  REQUIRE_THROWS_AS(load_wav(d.file("missing.wav")), IoError);
}

TEST_CASE("segment files round trip at millisecond precision") {
  SegmentLabeling lab;
  lab.segments = {{0.0, 0.188, kSilence}, {0.188, 0.773, kChild}, {0.773, 1.5, kTherapist}};
  TmpDir d;
  save_segments(lab, d.file("s.tsv"));
  SegmentLabeling back = load_segments(d.file("s.tsv"));
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(back.segments[i].start_s == lab.segments[i].start_s);
    REQUIRE(back.segments[i].end_s == lab.segments[i].end_s);
    REQUIRE(back.segments[i].label == lab.segments[i].label);
  }
}

TEST_CASE("segment parser reports the offending line") {
  TmpDir d;
  {
    std::ofstream out(d.file("s.tsv"));
    out << "0.000\t1.000\tchild\n";
    out << "1.000\tnot-a-number\tchild\n";
  }
  try {
    load_segments(d.file("s.tsv"));
    FAIL("expected a parse error");
  } catch (const ParseError &e) {
    REQUIRE(std::string(e.what()).find(":2:") != std::string::npos);
  }

  {
    std::ofstream out(d.file("o.tsv"));
    out << "0.000\t1.000\tchild\n"
        << "0.500\t2.000\tchild\n";
  }
  REQUIRE_THROWS_AS(load_segments(d.file("o.tsv")), ValidationError);  // overlap
}

TEST_CASE("prompt files hold whitespace-separated words") {
  TmpDir d;
  Prompt p;
  p.target_words = {"ball", "cat", "star"};
  save_prompt(p, d.file("p.txt"));
  Prompt back = load_prompt(d.file("p.txt"));
  REQUIRE(back.target_words == p.target_words);

  { std::ofstream out(d.file("empty.txt")); }
  REQUIRE_THROWS_AS(load_prompt(d.file("empty.txt")), FormatError);
}

TEST_CASE("session loading composes the per-file loaders") {
  TmpDir d;
  UltrasoundSequence seq;
  seq.num_frames = 50;
  seq.num_scanlines = 4;
  seq.num_echoes = 6;
  seq.fps = 50.0;  // 1 s of ultrasound
  seq.data.assign(static_cast<std::size_t>(50) * 24, 0.5f);
  save_ultrasound(seq, d.file("s0.ult"), d.file("s0.param"));

  AudioTrack a;
  a.sample_rate = 8000;
  a.samples.assign(8000, 0.0f);  // 1 s of audio
  save_wav(a, d.file("s0.wav"));

  Prompt p;
  p.target_words = {"ball"};
  save_prompt(p, d.file("s0.txt"));

  SegmentLabeling ref;
  ref.segments = {{0.0, 1.0, kChild}};
  save_segments(ref, d.file("s0.tsv"));

  SessionPaths paths;
  paths.ultrasound = d.file("s0.ult");
  paths.params = d.file("s0.param");
  paths.audio = d.file("s0.wav");
  paths.prompt = d.file("s0.txt");
  paths.segments = d.file("s0.tsv");
  Session s = load_session(paths, {{"speaker_id", "child_03"}, {"session_stage", "post"}});
  s.validate();
  REQUIRE(s.prompt.target_words == std::vector<std::string>{"ball"});
  REQUIRE(s.prompt.speaker_id == "child_03");
  REQUIRE(s.prompt.session_stage == "post");
  REQUIRE(s.prompt.session_id == "s0");
  REQUIRE(s.reference.has_value());
  REQUIRE(s.reference->size() == 1);
}

TEST_CASE("session validation enforces the clock contract") {
  Session s;
  s.ultrasound.num_frames = 100;
  s.ultrasound.num_scanlines = 2;
  s.ultrasound.num_echoes = 2;
  s.ultrasound.fps = 50.0;  // 2 s of ultrasound
  s.ultrasound.data.assign(400, 0.0f);
  s.audio.sample_rate = 8000;
  s.audio.samples.assign(8000, 0.0f);  // 1 s of audio: exceeds slack
  s.prompt.target_words = {"x"};
  REQUIRE_THROWS_AS(s.validate(), ValidationError);

  s.audio.samples.assign(12400, 0.0f);  // 1.55 s: inside the 0.5 s slack
  s.validate();

  s.ultrasound.sync_offset_s = 2.0;  // more sync offset than audio
  REQUIRE_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("audio-clock times map to nearest ultrasound frames") {
  UltrasoundSequence seq;
  seq.num_frames = 20;
  seq.num_scanlines = 1;
  seq.num_echoes = 1;
  seq.fps = 100.0;
  seq.sync_offset_s = 0.0;
  seq.data.assign(20, 0.0f);

  REQUIRE(ultrasound_frame_at(seq, 0.105) == 10);  // 10.5 rounds half to even
  REQUIRE(ultrasound_frame_at(seq, 0.115) == 12);  // 11.5 rounds half to even
  REQUIRE(ultrasound_frame_at(seq, 0.042) == 4);
  REQUIRE(ultrasound_frame_at(seq, 5.0) == 19);    // clamps to the last frame
  REQUIRE_THROWS_AS(ultrasound_frame_at(seq, -0.2), RangeError);

  seq.sync_offset_s = 0.1;
  REQUIRE(ultrasound_frame_at(seq, 0.05) == 0);    // before the probe started
  REQUIRE(ultrasound_frame_at(seq, 0.205) == 10);
}
