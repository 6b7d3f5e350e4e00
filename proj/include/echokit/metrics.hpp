#pragma once

#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "echokit/common.hpp"
#include "echokit/diarizer.hpp"
#include "echokit/session.hpp"

namespace echokit {

// All scoring happens on an integer millisecond grid so boundary arithmetic
// is exact and the DER decomposition identity holds to the bit.

struct DetectionScores {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  double retrieved_s = 0.0, relevant_s = 0.0, correct_s = 0.0;
};

struct DiarizationScores {
  double der = 0.0, confusion = 0.0, missed = 0.0, false_alarm = 0.0;
  double scored_s = 0.0;
};

struct WerScore {
  double wer_percent = 0.0;
  int substitutions = 0, insertions = 0, deletions = 0;
  int ref_words = 0;
};

namespace detail {

using Ms = long long;

inline Ms to_ms(double seconds) { return std::llround(seconds * 1000.0); }

struct MsSpan {
  Ms a = 0, b = 0;  // [a, b)
  const std::string *label = nullptr;
};

inline std::vector<MsSpan> quantize(const SegmentLabeling &labeling) {
  std::vector<MsSpan> spans;
  for (const auto &seg : labeling.segments) {
    MsSpan s{to_ms(seg.start_s), to_ms(seg.end_s), &seg.label};
    if (s.b > s.a) spans.push_back(s);
  }
  return spans;
}

// merged exclusion zones of +/- half a collar around every reference boundary
inline std::vector<std::pair<Ms, Ms>> collar_zones(const std::vector<MsSpan> &ref,
                                                   double collar_s) {
  Ms half = std::llround(collar_s * 500.0);
  std::vector<std::pair<Ms, Ms>> zones;
  if (half <= 0) return zones;
  for (const auto &s : ref) {
    zones.emplace_back(s.a - half, s.a + half);
    zones.emplace_back(s.b - half, s.b + half);
  }
  std::sort(zones.begin(), zones.end());
  std::vector<std::pair<Ms, Ms>> merged;
  for (const auto &z : zones) {
    if (!merged.empty() && z.first <= merged.back().second)
      merged.back().second = std::max(merged.back().second, z.second);
    else
      merged.push_back(z);
  }
  return merged;
}

// Sweeps ref and hyp spans plus collar zones and calls
// fn(length_ms, ref_label_or_null, hyp_label_or_null) on every scored
// elementary interval.
template <typename Fn>
void sweep_scored(const std::vector<MsSpan> &ref, const std::vector<MsSpan> &hyp,
                  double collar_s, Fn fn) {
  auto zones = collar_zones(ref, collar_s);
  std::vector<Ms> points;
  for (const auto &s : ref) {
    points.push_back(s.a);
    points.push_back(s.b);
  }
  for (const auto &s : hyp) {
    points.push_back(s.a);
    points.push_back(s.b);
  }
  for (const auto &z : zones) {
    points.push_back(z.first);
    points.push_back(z.second);
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  std::size_t ri = 0, hi = 0, zi = 0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    Ms p = points[i], q = points[i + 1];
    while (ri < ref.size() && ref[ri].b <= p) ++ri;
    while (hi < hyp.size() && hyp[hi].b <= p) ++hi;
    while (zi < zones.size() && zones[zi].second <= p) ++zi;
    if (zi < zones.size() && zones[zi].first <= p && p < zones[zi].second) continue;
    const std::string *rl =
        (ri < ref.size() && ref[ri].a <= p && p < ref[ri].b) ? ref[ri].label : nullptr;
    const std::string *hl =
        (hi < hyp.size() && hyp[hi].a <= p && p < hyp[hi].b) ? hyp[hi].label : nullptr;
    if (rl || hl) fn(q - p, rl, hl);
  }
}

inline DetectionScores finalize_detection(Ms correct, Ms retrieved, Ms relevant,
                                          const char *what) {
  if (relevant == 0)
    throw UndefinedMetricError(std::string(what) +
                               ": no scored reference target time, recall undefined");
  DetectionScores s;
  s.correct_s = static_cast<double>(correct) / 1000.0;
  s.retrieved_s = static_cast<double>(retrieved) / 1000.0;
  s.relevant_s = static_cast<double>(relevant) / 1000.0;
  s.precision = retrieved > 0 ? static_cast<double>(correct) / static_cast<double>(retrieved) : 0.0;
  s.recall = static_cast<double>(correct) / static_cast<double>(relevant);
  s.f1 = (s.precision + s.recall) > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                      : 0.0;
  return s;
}

}  // namespace detail

// Raw millisecond accumulators so corpus-level scores micro-average exactly.
struct DetectionAccumulator {
  detail::Ms correct = 0, retrieved = 0, relevant = 0;

  DetectionScores finalize(const char *what = "detection_prf") const {
    return detail::finalize_detection(correct, retrieved, relevant, what);
  }
};

// Time within +/- collar/2 of any reference boundary is excluded; over the
// rest, precision and recall of the target label by duration.
inline void accumulate_detection(DetectionAccumulator &acc, const SegmentLabeling &ref,
                                 const SegmentLabeling &hyp, const std::string &target_label,
                                 double collar_s = 0.1) {
  ref.validate();
  hyp.validate();
  auto r = detail::quantize(ref), h = detail::quantize(hyp);
  detail::sweep_scored(r, h, collar_s,
                       [&](detail::Ms len, const std::string *rl, const std::string *hl) {
                         bool ref_t = rl && *rl == target_label;
                         bool hyp_t = hl && *hl == target_label;
                         if (ref_t) acc.relevant += len;
                         if (hyp_t) acc.retrieved += len;
                         if (ref_t && hyp_t) acc.correct += len;
                       });
}

inline DetectionScores detection_prf(const SegmentLabeling &ref, const SegmentLabeling &hyp,
                                     const std::string &target_label, double collar_s = 0.1) {
  DetectionAccumulator acc;
  accumulate_detection(acc, ref, hyp, target_label, collar_s);
  return acc.finalize("detection_prf");
}

struct DerAccumulator {
  detail::Ms missed = 0, false_alarm = 0, confusion = 0, scored_speech = 0;

  DiarizationScores finalize() const {
    if (scored_speech == 0)
      throw UndefinedMetricError("der: no scored reference speech");
    DiarizationScores s;
    double denom = static_cast<double>(scored_speech);
    s.missed = 100.0 * static_cast<double>(missed) / denom;
    s.false_alarm = 100.0 * static_cast<double>(false_alarm) / denom;
    s.confusion = 100.0 * static_cast<double>(confusion) / denom;
    s.der = s.missed + s.false_alarm + s.confusion;
    s.scored_s = denom / 1000.0;
    return s;
  }
};

inline void accumulate_der(DerAccumulator &acc, const SegmentLabeling &ref,
                           const SegmentLabeling &hyp, double collar_s = 0.1,
                           const std::set<std::string> &speech_labels = {kChild, kTherapist}) {
  ref.validate();
  hyp.validate();
  auto r = detail::quantize(ref), h = detail::quantize(hyp);
  detail::sweep_scored(r, h, collar_s,
                       [&](detail::Ms len, const std::string *rl, const std::string *hl) {
                         bool ref_speech = rl && speech_labels.count(*rl) > 0;
                         bool hyp_speech = hl && speech_labels.count(*hl) > 0;
                         if (ref_speech) {
                           acc.scored_speech += len;
                           if (!hyp_speech)
                             acc.missed += len;
                           else if (*rl != *hl)
                             acc.confusion += len;
                         } else if (hyp_speech) {
                           acc.false_alarm += len;
                         }
                       });
}

// DER = missed + false alarm + confusion, each as a percentage of scored
// reference speech; the identity holds exactly because it is computed as
// that sum.
inline DiarizationScores der(const SegmentLabeling &ref, const SegmentLabeling &hyp,
                             double collar_s = 0.1,
                             const std::set<std::string> &speech_labels = {kChild, kTherapist}) {
  DerAccumulator acc;
  accumulate_der(acc, ref, hyp, collar_s, speech_labels);
  return acc.finalize();
}

// Word-alignment scoring: correct time requires equal word labels; silence
// and noise spans are not words.
inline void accumulate_alignment(DetectionAccumulator &acc, const SegmentLabeling &ref_words,
                                 const SegmentLabeling &hyp_words, double collar_s = 0.1) {
  ref_words.validate();
  hyp_words.validate();
  auto is_word = [](const std::string *l) {
    return l && *l != kSilence && *l != kNoise;
  };
  auto r = detail::quantize(ref_words), h = detail::quantize(hyp_words);
  detail::sweep_scored(r, h, collar_s,
                       [&](detail::Ms len, const std::string *rl, const std::string *hl) {
                         bool rw = is_word(rl), hw = is_word(hl);
                         if (rw) acc.relevant += len;
                         if (hw) acc.retrieved += len;
                         if (rw && hw && *rl == *hl) acc.correct += len;
                       });
}

inline DetectionScores alignment_prf(const SegmentLabeling &ref_words,
                                     const SegmentLabeling &hyp_words, double collar_s = 0.1) {
  DetectionAccumulator acc;
  accumulate_alignment(acc, ref_words, hyp_words, collar_s);
  return acc.finalize("alignment_prf");
}

// Levenshtein alignment with unit costs. Ties resolve in a fixed order
// (match/substitution, then deletion, then insertion) so counts are
// deterministic even when the distance is ambiguous.
inline WerScore wer(const std::vector<std::string> &ref, const std::vector<std::string> &hyp) {
  if (ref.empty()) throw UndefinedMetricError("wer: empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<int> cost((n + 1) * (m + 1), 0);
  std::vector<std::uint8_t> back((n + 1) * (m + 1), 0);  // 1 diag, 2 del, 3 ins
  auto at = [&](std::size_t i, std::size_t j) -> int & { return cost[i * (m + 1) + j]; };
  auto bk = [&](std::size_t i, std::size_t j) -> std::uint8_t & { return back[i * (m + 1) + j]; };
  for (std::size_t i = 1; i <= n; ++i) {
    at(i, 0) = static_cast<int>(i);
    bk(i, 0) = 2;
  }
  for (std::size_t j = 1; j <= m; ++j) {
    at(0, j) = static_cast<int>(j);
    bk(0, j) = 3;
  }
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      int diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      int del = at(i - 1, j) + 1;
      int ins = at(i, j - 1) + 1;
      int best = diag;
      std::uint8_t dir = 1;
      if (del < best) {
        best = del;
        dir = 2;
      }
      if (ins < best) {
        best = ins;
        dir = 3;
      }
      at(i, j) = best;
      bk(i, j) = dir;
    }
  }
  WerScore s;
  s.ref_words = static_cast<int>(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    switch (bk(i, j)) {
      case 1:
        if (ref[i - 1] != hyp[j - 1]) ++s.substitutions;
        --i;
        --j;
        break;
      case 2:
        ++s.deletions;
        --i;
        break;
      default:
        ++s.insertions;
        --j;
        break;
    }
  }
  s.wer_percent =
      100.0 * static_cast<double>(s.substitutions + s.insertions + s.deletions) /
      static_cast<double>(n);
  return s;
}

// ---------------------------------------------------------------------------
// CSV report: one row per utterance plus aggregate rows per group and overall.
// ---------------------------------------------------------------------------

struct ReportEntry {
  std::string utt;
  std::string group;  // e.g. session stage
  bool has_detection = false;
  DetectionScores detection;
  bool has_der = false;
  DiarizationScores diarization;
  bool has_wer = false;
  WerScore word_errors;
};

namespace detail {

inline std::string fmt4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

inline void report_row(std::ostream &os, const std::string &utt, const std::string &group,
                       const ReportEntry &e) {
  os << utt << ',' << group << ',';
  if (e.has_detection)
    os << fmt4(e.detection.precision) << ',' << fmt4(e.detection.recall) << ','
       << fmt4(e.detection.f1) << ',';
  else
    os << ",,,";
  if (e.has_der)
    os << fmt4(e.diarization.der) << ',' << fmt4(e.diarization.confusion) << ','
       << fmt4(e.diarization.missed) << ',' << fmt4(e.diarization.false_alarm) << ',';
  else
    os << ",,,,";
  if (e.has_wer)
    os << fmt4(e.word_errors.wer_percent);
  os << '\n';
}

}  // namespace detail

// Aggregates by summing time and word-error accumulators, then recomputing
// rates (micro-averaging).
inline void write_report_csv(std::ostream &os, const std::vector<ReportEntry> &entries,
                             const std::vector<DetectionAccumulator> &det_acc,
                             const std::vector<DerAccumulator> &der_acc,
                             const std::vector<WerScore> &wer_scores) {
  if (entries.size() != det_acc.size() || entries.size() != der_acc.size() ||
      entries.size() != wer_scores.size())
    throw DimensionError("write_report_csv: accumulator lists must match entries");
  os << "utt,group,precision,recall,f1,der,conf,miss,fa,wer\n";
  for (const auto &e : entries) detail::report_row(os, e.utt, e.group, e);

  auto aggregate = [&](const std::vector<std::size_t> &idx, const std::string &name,
                       const std::string &group) {
    ReportEntry agg;
    DetectionAccumulator d;
    DerAccumulator dr;
    int errs = 0, refw = 0;
    for (std::size_t i : idx) {
      if (entries[i].has_detection) {
        d.correct += det_acc[i].correct;
        d.retrieved += det_acc[i].retrieved;
        d.relevant += det_acc[i].relevant;
        agg.has_detection = true;
      }
      if (entries[i].has_der) {
        dr.missed += der_acc[i].missed;
        dr.false_alarm += der_acc[i].false_alarm;
        dr.confusion += der_acc[i].confusion;
        dr.scored_speech += der_acc[i].scored_speech;
        agg.has_der = true;
      }
      if (entries[i].has_wer) {
        errs += wer_scores[i].substitutions + wer_scores[i].insertions + wer_scores[i].deletions;
        refw += wer_scores[i].ref_words;
        agg.has_wer = true;
      }
    }
    if (agg.has_detection && d.relevant > 0) agg.detection = d.finalize();
    else agg.has_detection = false;
    if (agg.has_der && dr.scored_speech > 0) agg.diarization = dr.finalize();
    else agg.has_der = false;
    if (agg.has_wer && refw > 0) {
      agg.word_errors.wer_percent = 100.0 * errs / static_cast<double>(refw);
      agg.has_wer = true;
    } else {
      agg.has_wer = false;
    }
    detail::report_row(os, name, group, agg);
  };

  std::map<std::string, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < entries.size(); ++i) by_group[entries[i].group].push_back(i);
  if (by_group.size() > 1)
    for (const auto &[group, idx] : by_group) aggregate(idx, "GROUP", group);
  std::vector<std::size_t> all(entries.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  aggregate(all, "ALL", "");
}

}  // namespace echokit
