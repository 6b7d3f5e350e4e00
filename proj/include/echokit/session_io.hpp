#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "echokit/session.hpp"

namespace echokit {

// ---------------------------------------------------------------------------
// sidecar parameter files: one `key=value` per line, '#' comments
// ---------------------------------------------------------------------------

using ParamMap = std::map<std::string, std::string>;

inline ParamMap load_params(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open parameter file: " + path);
  ParamMap params;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t h = line.find('#');
    if (h != std::string::npos) line.erase(h);
    bool blank = line.find_first_not_of(" \t") == std::string::npos;
    if (blank) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string &s) {
      std::size_t b = s.find_first_not_of(" \t");
      std::size_t e = s.find_last_not_of(" \t");
      s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(val);
    if (key.empty())
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty key");
    params[key] = val;
  }
  return params;
}

inline void save_params(const ParamMap &params, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write parameter file: " + path);
  for (const auto &[k, v] : params) out << k << "=" << v << "\n";
}

inline double param_double(const ParamMap &p, const std::string &key, double fallback,
                           bool required = false) {
  auto it = p.find(key);
  if (it == p.end()) {
    if (required) throw FormatError("missing required parameter '" + key + "'");
    return fallback;
  }
  char *end = nullptr;
  double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0')
    throw FormatError("parameter '" + key + "': not a number: '" + it->second + "'");
  return v;
}

// ---------------------------------------------------------------------------
// raw ultrasound: headerless u8 raster, scan-line-major, sidecar carries dims
// ---------------------------------------------------------------------------

inline UltrasoundSequence load_ultrasound(const std::string &raw_path, const ParamMap &params) {
  UltrasoundSequence seq;
  seq.num_scanlines = static_cast<int>(param_double(params, "num_scanlines", 63));
  seq.num_echoes = static_cast<int>(param_double(params, "num_echoes", 412));
  seq.fps = param_double(params, "fps", 121.2);
  seq.sync_offset_s = param_double(params, "sync_offset_s", 0.0);
  if (seq.num_scanlines <= 0 || seq.num_echoes <= 0)
    throw FormatError("ultrasound sidecar: non-positive frame dimensions");
  if (!(seq.fps > 0)) throw FormatError("ultrasound sidecar: fps must be > 0");
  if (seq.sync_offset_s < 0) throw FormatError("ultrasound sidecar: sync_offset_s must be >= 0");

  std::ifstream in(raw_path, std::ios::binary);
  if (!in) throw IoError("cannot open ultrasound file: " + raw_path);
  in.seekg(0, std::ios::end);
  std::size_t size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::size_t fsz = static_cast<std::size_t>(seq.frame_size());
  if (size == 0 || size % fsz != 0)
    throw DimensionError("ultrasound file " + raw_path + ": size " + std::to_string(size) +
                         " bytes is not a positive multiple of frame size " + std::to_string(fsz));
  seq.num_frames = static_cast<int>(size / fsz);
  std::vector<unsigned char> bytes(size);
  in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("short read on ultrasound file: " + raw_path);
  seq.data.resize(size);
  for (std::size_t i = 0; i < size; ++i) seq.data[i] = bytes[i] / 255.0f;
  seq.validate();
  return seq;
}

inline void save_ultrasound(const UltrasoundSequence &seq, const std::string &raw_path,
                            const std::string &param_path) {
  seq.validate();
  std::ofstream out(raw_path, std::ios::binary);
  if (!out) throw IoError("cannot write ultrasound file: " + raw_path);
  std::vector<unsigned char> bytes(seq.data.size());
  for (std::size_t i = 0; i < seq.data.size(); ++i) {
    float v = seq.data[i];
    v = std::min(1.0f, std::max(0.0f, v));
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));

  ParamMap params;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", seq.fps);
  params["fps"] = buf;
  std::snprintf(buf, sizeof buf, "%.10g", seq.sync_offset_s);
  params["sync_offset_s"] = buf;
  params["num_scanlines"] = std::to_string(seq.num_scanlines);
  params["num_echoes"] = std::to_string(seq.num_echoes);
  save_params(params, param_path);
}

// ---------------------------------------------------------------------------
// 16-bit PCM mono WAV
// ---------------------------------------------------------------------------

namespace detail {
inline std::uint32_t read_u32(std::istream &in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char *>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
}
inline std::uint16_t read_u16(std::istream &in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char *>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
inline void write_u32(std::ostream &out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char *>(b), 4);
}
inline void write_u16(std::ostream &out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<char *>(b), 2);
}
}  // namespace detail

inline AudioTrack load_wav(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav file: " + path);
  char tag[5] = {0};
  in.read(tag, 4);
  if (!in || std::strcmp(tag, "RIFF") != 0) throw FormatError(path + ": not a RIFF file");
  detail::read_u32(in);  // riff size
  in.read(tag, 4);
  if (!in || std::strcmp(tag, "WAVE") != 0) throw FormatError(path + ": not a WAVE file");

  AudioTrack track;
  int channels = 0, bits = 0;
  bool have_fmt = false, have_data = false;
  while (in.read(tag, 4)) {
    std::uint32_t chunk_size = detail::read_u32(in);
    if (std::strcmp(tag, "fmt ") == 0) {
      std::uint16_t fmt = detail::read_u16(in);
      channels = detail::read_u16(in);
      track.sample_rate = static_cast<int>(detail::read_u32(in));
      detail::read_u32(in);  // byte rate
      detail::read_u16(in);  // block align
      bits = detail::read_u16(in);
      if (chunk_size > 16) in.ignore(chunk_size - 16);
      if (fmt != 1) throw FormatError(path + ": field 'audio_format': only PCM supported");
      if (channels != 1) throw FormatError(path + ": field 'num_channels': expected mono, got " +
                                           std::to_string(channels));
      if (bits != 16) throw FormatError(path + ": field 'bits_per_sample': expected 16, got " +
                                        std::to_string(bits));
      have_fmt = true;
    } else if (std::strcmp(tag, "data") == 0) {
      if (!have_fmt) throw FormatError(path + ": data chunk before fmt chunk");
      std::size_t n = chunk_size / 2;
      track.samples.resize(n);
      std::vector<char> raw(chunk_size);
      in.read(raw.data(), chunk_size);
      if (!in) throw IoError("short read on wav data: " + path);
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t s = static_cast<std::int16_t>(
            static_cast<unsigned char>(raw[2 * i]) |
            (static_cast<unsigned char>(raw[2 * i + 1]) << 8));
        track.samples[i] = s / 32768.0f;
      }
      have_data = true;
    } else {
      in.ignore(chunk_size + (chunk_size & 1));
    }
  }
  if (!have_data) throw FormatError(path + ": missing data chunk");
  track.validate();
  return track;
}

inline void save_wav(const AudioTrack &track, const std::string &path) {
  track.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write wav file: " + path);
  std::uint32_t data_bytes = static_cast<std::uint32_t>(track.samples.size() * 2);
  out.write("RIFF", 4);
  detail::write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  detail::write_u32(out, 16);
  detail::write_u16(out, 1);  // PCM
  detail::write_u16(out, 1);  // mono
  detail::write_u32(out, static_cast<std::uint32_t>(track.sample_rate));
  detail::write_u32(out, static_cast<std::uint32_t>(track.sample_rate * 2));
  detail::write_u16(out, 2);
  detail::write_u16(out, 16);
  out.write("data", 4);
  detail::write_u32(out, data_bytes);
  for (float v : track.samples) {
    float c = std::min(1.0f, std::max(-1.0f, v));
    auto s = static_cast<std::int16_t>(std::lround(c * 32767.0f));
    detail::write_u16(out, static_cast<std::uint16_t>(s));
  }
}

// ---------------------------------------------------------------------------
// segment files: `start<TAB>end<TAB>label`, 3 decimals, sorted
// ---------------------------------------------------------------------------

inline void save_segments(const SegmentLabeling &labeling, const std::string &path) {
  labeling.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write segment file: " + path);
  char buf[64];
  for (const auto &s : labeling.segments) {
    std::snprintf(buf, sizeof buf, "%.3f\t%.3f\t", s.start_s, s.end_s);
    out << buf << s.label << "\n";
  }
}

inline SegmentLabeling load_segments(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open segment file: " + path);
  SegmentLabeling labeling;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected 'start<TAB>end<TAB>label', got '" + line + "'");
    Segment seg;
    char *end = nullptr;
    std::string f1 = line.substr(0, t1), f2 = line.substr(t1 + 1, t2 - t1 - 1);
    seg.start_s = std::strtod(f1.c_str(), &end);
    if (end == f1.c_str() || *end != '\0')
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad start time '" + f1 + "'");
    seg.end_s = std::strtod(f2.c_str(), &end);
    if (end == f2.c_str() || *end != '\0')
      throw ParseError(path + ":" + std::to_string(lineno) + ": bad end time '" + f2 + "'");
    seg.label = line.substr(t2 + 1);
    if (seg.label.empty())
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty label");
    labeling.segments.push_back(seg);
  }
  labeling.validate();  // overlap / ordering errors name the offending pair
  return labeling;
}

// ---------------------------------------------------------------------------
// prompts: whitespace-separated words; first line tokens are the prompt
// ---------------------------------------------------------------------------

inline Prompt load_prompt(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt file: " + path);
  Prompt prompt;
  std::string word;
  while (in >> word) prompt.target_words.push_back(word);
  if (prompt.target_words.empty()) throw FormatError(path + ": prompt has no words");
  return prompt;
}

inline void save_prompt(const Prompt &prompt, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write prompt file: " + path);
  for (std::size_t i = 0; i < prompt.target_words.size(); ++i)
    out << (i ? " " : "") << prompt.target_words[i];
  out << "\n";
}

// ---------------------------------------------------------------------------
// whole sessions
// ---------------------------------------------------------------------------

struct SessionPaths {
  std::string ultrasound;  // raw u8 raster
  std::string params;      // sidecar; optional if meta supplies everything
  std::string audio;       // wav
  std::string prompt;      // text, optional
  std::string segments;    // reference labeling, optional
};

// meta overrides / substitutes the sidecar (fps, sync_offset_s, dims).
inline Session load_session(const SessionPaths &paths, const ParamMap &meta = {}) {
  ParamMap params;
  if (!paths.params.empty()) params = load_params(paths.params);
  for (const auto &[k, v] : meta) params[k] = v;

  Session session;
  session.ultrasound = load_ultrasound(paths.ultrasound, params);
  session.audio = load_wav(paths.audio);
  if (!paths.prompt.empty()) {
    session.prompt = load_prompt(paths.prompt);
    session.prompt.session_id = std::filesystem::path(paths.ultrasound).stem().string();
  } else {
    session.prompt.target_words = {"<unk>"};
    session.prompt.session_id = std::filesystem::path(paths.ultrasound).stem().string();
  }
  auto it = params.find("speaker_id");
  if (it != params.end()) session.prompt.speaker_id = it->second;
  it = params.find("session_stage");
  if (it != params.end()) session.prompt.session_stage = it->second;
  if (!paths.segments.empty()) session.reference = load_segments(paths.segments);
  session.validate();
  return session;
}

}  // namespace echokit
