#pragma once

#include <cstring>
#include <fstream>

#include "echokit/session.hpp"

namespace echokit {

// Frame-synchronous feature rows, row-major. Columns are named so that
// assembled multimodal matrices stay self-describing.
struct FeatureMatrix {
  std::vector<double> data;
  int rows = 0;
  int cols = 0;
  double frame_shift_s = 0.010;
  double frame_length_s = 0.025;
  std::vector<std::string> column_labels;

  double &at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  const double *row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  double *row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }

  void resize(int r, int c) {
    rows = r;
    cols = c;
    data.assign(static_cast<std::size_t>(r) * c, 0.0);
  }

  void validate() const {
    if (rows < 1) throw ValidationError("FeatureMatrix: no rows");
    if (cols < 1) throw ValidationError("FeatureMatrix: no columns");
    if (data.size() != static_cast<std::size_t>(rows) * cols)
      throw DimensionError("FeatureMatrix: storage does not match rows x cols");
    if (column_labels.size() != static_cast<std::size_t>(cols))
      throw ValidationError("FeatureMatrix: " + std::to_string(column_labels.size()) +
                            " column labels for " + std::to_string(cols) + " columns");
    for (double v : data)
      if (!std::isfinite(v)) throw ValidationError("FeatureMatrix: non-finite value");
  }
};

// frames of length L every S samples; last partial frame is dropped
inline int frame_count(std::size_t num_samples, int frame_len, int frame_shift) {
  if (num_samples < static_cast<std::size_t>(frame_len)) return 0;
  return static_cast<int>((num_samples - frame_len) / frame_shift) + 1;
}

// Per-frame log(sum of squared samples + floor), 25 ms / 10 ms clock.
// Samples are rescaled to the 16-bit integer range first so the classic
// threshold-style magnitudes apply: digital silence scores log(1e-10),
// about -23, and ordinary speech lands far above 7.
inline std::vector<double> frame_log_energy(const AudioTrack &audio,
                                            double frame_length_s = 0.025,
                                            double frame_shift_s = 0.010,
                                            double sample_scale = 32768.0,
                                            double floor = 1e-10) {
  audio.validate();
  const int len = static_cast<int>(std::lround(frame_length_s * audio.sample_rate));
  const int shift = static_cast<int>(std::lround(frame_shift_s * audio.sample_rate));
  const int t = frame_count(audio.samples.size(), len, shift);
  if (t == 0)
    throw InsufficientDataError("frame_log_energy: audio shorter than one frame");
  std::vector<double> out(t);
  for (int k = 0; k < t; ++k) {
    double acc = 0.0;
    const float *p = audio.samples.data() + static_cast<std::size_t>(k) * shift;
    for (int i = 0; i < len; ++i) {
      double s = p[i] * sample_scale;
      acc += s * s;
    }
    out[k] = std::log(acc + floor);
  }
  return out;
}

// Column-wise concatenation after truncating all parts to the minimum
// length. Rejects clock mismatches, length gaps over 2 frames, and
// duplicate column names.
inline FeatureMatrix assemble_features(const std::vector<FeatureMatrix> &parts) {
  if (parts.empty()) throw ValidationError("assemble_features: no parts");
  for (const auto &p : parts) p.validate();
  int min_rows = parts[0].rows, max_rows = parts[0].rows;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (std::abs(parts[i].frame_shift_s - parts[0].frame_shift_s) > 1e-12)
      throw ClockError("assemble_features: parts '" + parts[0].column_labels[0] + "' and '" +
                       parts[i].column_labels[0] + "' have different frame shifts (" +
                       std::to_string(parts[0].frame_shift_s) + " vs " +
                       std::to_string(parts[i].frame_shift_s) + ")");
    min_rows = std::min(min_rows, parts[i].rows);
    max_rows = std::max(max_rows, parts[i].rows);
  }
  if (max_rows - min_rows > 2)
    throw ClockError("assemble_features: part lengths differ by " +
                     std::to_string(max_rows - min_rows) + " frames (more than 2)");

  FeatureMatrix out;
  out.frame_shift_s = parts[0].frame_shift_s;
  out.frame_length_s = parts[0].frame_length_s;
  int total_cols = 0;
  for (const auto &p : parts) total_cols += p.cols;
  out.resize(min_rows, total_cols);
  int col0 = 0;
  for (const auto &p : parts) {
    for (const auto &label : p.column_labels) {
      for (const auto &existing : out.column_labels)
        if (existing == label)
          throw ValidationError("assemble_features: duplicate column label '" + label + "'");
      out.column_labels.push_back(label);
    }
    for (int r = 0; r < min_rows; ++r)
      std::memcpy(out.row(r) + col0, p.row(r), sizeof(double) * p.cols);
    col0 += p.cols;
  }
  return out;
}

// wraps a per-frame scalar sequence as a 1-column matrix
inline FeatureMatrix column_matrix(const std::vector<double> &values, const std::string &label,
                                   double frame_shift_s = 0.010, double frame_length_s = 0.025) {
  FeatureMatrix m;
  m.resize(static_cast<int>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m.data[i] = values[i];
  m.column_labels = {label};
  m.frame_shift_s = frame_shift_s;
  m.frame_length_s = frame_length_s;
  return m;
}

// ---------------------------------------------------------------------------
// on-disk matrix formats: headered CSV and a binary f32 container
// ---------------------------------------------------------------------------

inline void save_matrix_csv(const FeatureMatrix &m, const std::string &path) {
  m.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature CSV: " + path);
  for (int c = 0; c < m.cols; ++c) out << (c ? "," : "") << m.column_labels[c];
  out << "\n";
  char buf[48];
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", m.at(r, c));
      out << (c ? "," : "") << buf;
    }
    out << "\n";
  }
}

inline void save_matrix(const FeatureMatrix &m, const std::string &path) {
  m.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature matrix: " + path);
  out.write("EKFM", 4);
  std::uint32_t version = 1, rows = m.rows, cols = m.cols;
  out.write(reinterpret_cast<char *>(&version), 4);
  out.write(reinterpret_cast<char *>(&rows), 4);
  out.write(reinterpret_cast<char *>(&cols), 4);
  out.write(reinterpret_cast<const char *>(&m.frame_shift_s), 8);
  out.write(reinterpret_cast<const char *>(&m.frame_length_s), 8);
  for (const auto &label : m.column_labels) detail::write_string(out, label);
  std::vector<float> row(m.cols);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) row[c] = static_cast<float>(m.at(r, c));
    out.write(reinterpret_cast<const char *>(row.data()), sizeof(float) * m.cols);
  }
}

inline FeatureMatrix load_matrix(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature matrix: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "EKFM", 4) != 0)
    throw FormatError(path + ": field 'magic': not a feature matrix file");
  std::uint32_t version = 0, rows = 0, cols = 0;
  in.read(reinterpret_cast<char *>(&version), 4);
  if (version != 1)
    throw FormatError(path + ": field 'version': unsupported version " + std::to_string(version));
  in.read(reinterpret_cast<char *>(&rows), 4);
  in.read(reinterpret_cast<char *>(&cols), 4);
  FeatureMatrix m;
  in.read(reinterpret_cast<char *>(&m.frame_shift_s), 8);
  in.read(reinterpret_cast<char *>(&m.frame_length_s), 8);
  if (!in || rows == 0 || cols == 0 || rows > (1u << 28) || cols > (1u << 20))
    throw FormatError(path + ": field 'dims': implausible " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  for (std::uint32_t c = 0; c < cols; ++c) m.column_labels.push_back(detail::read_string(in));
  m.resize(static_cast<int>(rows), static_cast<int>(cols));
  std::vector<float> row(cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    in.read(reinterpret_cast<char *>(row.data()), sizeof(float) * cols);
    if (!in)
      throw DimensionError(path + ": expected " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " values, file truncated at row " +
                           std::to_string(r));
    for (std::uint32_t c = 0; c < cols; ++c) m.at(static_cast<int>(r), static_cast<int>(c)) = row[c];
  }
  m.validate();
  return m;
}

}  // namespace echokit
