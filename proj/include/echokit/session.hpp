#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "echokit/common.hpp"

namespace echokit {

// One recorded B-mode sequence: frames of num_scanlines x num_echoes echo
// intensities. Loader output is scaled to [0,1] (disk stores u8), but the
// type itself places no range constraint so derived data (differences,
// synthetic values) can live in the same container.
struct UltrasoundSequence {
  std::vector<float> data;  // frame-major, then scan line, then echo
  int num_frames = 0;
  int num_scanlines = 63;
  int num_echoes = 412;
  double fps = 121.2;
  double sync_offset_s = 0.0;  // seconds of audio preceding frame 0

  int frame_size() const { return num_scanlines * num_echoes; }
  const float *frame(int t) const { return data.data() + static_cast<std::size_t>(t) * frame_size(); }
  float *frame(int t) { return data.data() + static_cast<std::size_t>(t) * frame_size(); }
  double duration_s() const { return num_frames / fps; }

  void validate() const {
    if (num_frames < 1)
      throw ValidationError("UltrasoundSequence: need at least one frame");
    if (num_scanlines <= 0 || num_echoes <= 0)
      throw ValidationError("UltrasoundSequence: non-positive frame dimensions");
    if (data.size() != static_cast<std::size_t>(num_frames) * frame_size())
      throw DimensionError("UltrasoundSequence: data holds " + std::to_string(data.size()) +
                           " values, expected " +
                           std::to_string(static_cast<std::size_t>(num_frames) * frame_size()));
    if (!(fps > 0)) throw ValidationError("UltrasoundSequence: fps must be > 0");
    if (sync_offset_s < 0) throw ValidationError("UltrasoundSequence: sync_offset_s must be >= 0");
  }
};

struct AudioTrack {
  std::vector<float> samples;  // mono, [-1,1]
  int sample_rate = 16000;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }

  void validate() const {
    if (sample_rate <= 0) throw ValidationError("AudioTrack: sample_rate must be > 0");
    if (samples.empty()) throw ValidationError("AudioTrack: no samples");
  }
};

struct Prompt {
  std::vector<std::string> target_words;
  std::string session_id;
  std::string speaker_id;
  std::string session_stage;  // optional tag: baseline / mid / post / maintenance

  void validate() const {
    if (target_words.empty()) throw ValidationError("Prompt: target_words is empty");
  }
};

struct Segment {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string label;

  bool operator==(const Segment &o) const {
    return start_s == o.start_s && end_s == o.end_s && label == o.label;
  }
};

// Non-overlapping timed segments, sorted by start. Labels are either
// speaker tokens (child / therapist / silence / noise) or word tokens.
struct SegmentLabeling {
  std::vector<Segment> segments;

  void validate() const {
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const Segment &s = segments[i];
      if (!(s.start_s < s.end_s))
        throw ValidationError("SegmentLabeling: segment " + std::to_string(i) + " [" +
                              std::to_string(s.start_s) + "," + std::to_string(s.end_s) +
                              "] has start >= end");
      if (i > 0) {
        const Segment &p = segments[i - 1];
        if (s.start_s < p.start_s)
          throw ValidationError("SegmentLabeling: segments not sorted at index " +
                                std::to_string(i));
        if (s.start_s < p.end_s - 1e-12)
          throw ValidationError("SegmentLabeling: segments overlap: [" +
                                std::to_string(p.start_s) + "," + std::to_string(p.end_s) + "," +
                                p.label + "] and [" + std::to_string(s.start_s) + "," +
                                std::to_string(s.end_s) + "," + s.label + "]");
      }
    }
  }

  double total_duration(const std::string &label) const {
    double d = 0;
    for (const auto &s : segments)
      if (s.label == label) d += s.end_s - s.start_s;
    return d;
  }

  bool empty() const { return segments.empty(); }
  std::size_t size() const { return segments.size(); }
};

struct Session {
  UltrasoundSequence ultrasound;
  AudioTrack audio;
  Prompt prompt;
  std::optional<SegmentLabeling> reference;

  void validate() const {
    ultrasound.validate();
    audio.validate();
    prompt.validate();
    if (reference) reference->validate();
    if (audio.duration_s() < ultrasound.sync_offset_s)
      throw ValidationError("Session: audio shorter than ultrasound sync offset");
    // 0.5 s slack: recordings commonly trail off after the probe stops
    if (ultrasound.duration_s() > audio.duration_s() + 0.5)
      throw ValidationError("Session: ultrasound span exceeds audio duration by more than 0.5 s");
  }
};

// Maps a time on the audio clock to the nearest ultrasound frame,
// round-half-to-even, clamped to [0, T-1]. Times before the sync offset
// clamp to frame 0.
inline int ultrasound_frame_at(const UltrasoundSequence &seq, double t_s) {
  if (t_s < 0) throw RangeError("ultrasound_frame_at: negative time " + std::to_string(t_s));
  long idx = round_even((t_s - seq.sync_offset_s) * seq.fps);
  if (idx < 0) return 0;
  if (idx >= seq.num_frames) return seq.num_frames - 1;
  return static_cast<int>(idx);
}

}  // namespace echokit
