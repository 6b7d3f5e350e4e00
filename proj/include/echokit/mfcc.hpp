#pragma once

#include <complex>

#include "echokit/features.hpp"

namespace echokit {

namespace dsp {

// in-place iterative radix-2 FFT; n must be a power of two
inline void fft(std::vector<std::complex<double>> &a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// |X_k|^2 for k = 0 .. nfft/2, frame zero-padded to nfft
inline std::vector<double> power_spectrum(const double *frame, int frame_len, std::size_t nfft) {
  std::vector<std::complex<double>> buf(nfft, {0.0, 0.0});
  for (int i = 0; i < frame_len; ++i) buf[i] = frame[i];
  fft(buf);
  std::vector<double> power(nfft / 2 + 1);
  for (std::size_t k = 0; k <= nfft / 2; ++k) power[k] = std::norm(buf[k]);
  return power;
}

inline std::vector<double> hamming_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (n - 1));
  return w;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters spaced evenly on the mel scale; weight matrix is
// num_filters x (nfft/2 + 1).
inline std::vector<std::vector<double>> mel_filterbank(int num_filters, std::size_t nfft,
                                                       int sample_rate, double low_hz,
                                                       double high_hz) {
  const double mel_lo = hz_to_mel(low_hz);
  const double mel_hi = hz_to_mel(high_hz);
  std::vector<double> centers(num_filters + 2);
  for (int m = 0; m < num_filters + 2; ++m)
    centers[m] = mel_lo + (mel_hi - mel_lo) * m / (num_filters + 1);

  const std::size_t bins = nfft / 2 + 1;
  std::vector<std::vector<double>> weights(num_filters, std::vector<double>(bins, 0.0));
  for (std::size_t k = 0; k < bins; ++k) {
    double mel = hz_to_mel(static_cast<double>(k) * sample_rate / static_cast<double>(nfft));
    for (int m = 0; m < num_filters; ++m) {
      double left = centers[m], center = centers[m + 1], right = centers[m + 2];
      if (mel > left && mel < right)
        weights[m][k] = (mel <= center) ? (mel - left) / (center - left)
                                        : (right - mel) / (right - center);
    }
  }
  return weights;
}

// center frequency of filter m in Hz, useful for test tones
inline double mel_filter_center_hz(int m, int num_filters, int sample_rate, double low_hz,
                                   double high_hz) {
  const double mel_lo = hz_to_mel(low_hz);
  const double mel_hi = hz_to_mel(high_hz);
  (void)sample_rate;
  return mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (num_filters + 1));
}

}  // namespace dsp

struct MfccConfig {
  int num_coeffs = 20;
  int num_filters = 23;
  double preemphasis = 0.97;
  double frame_length_s = 0.025;
  double frame_shift_s = 0.010;
  double low_freq_hz = 20.0;
  double log_floor = 1e-10;
};

// Conventional pipeline: pre-emphasis, Hamming window, FFT power spectrum,
// mel filterbank 20 Hz..Nyquist, log (floored), DCT-II. Coefficient 0 is the
// mean of the log filterbank energies, a frame log-energy proxy; for silence
// it equals the log floor.
inline FeatureMatrix compute_mfcc(const AudioTrack &audio, const MfccConfig &config = {}) {
  audio.validate();
  if (config.num_coeffs < 1 || config.num_coeffs > config.num_filters)
    throw RangeError("compute_mfcc: num_coeffs must be in [1, num_filters]");
  const int len = static_cast<int>(std::lround(config.frame_length_s * audio.sample_rate));
  const int shift = static_cast<int>(std::lround(config.frame_shift_s * audio.sample_rate));
  const int t = frame_count(audio.samples.size(), len, shift);
  if (t == 0) throw InsufficientDataError("compute_mfcc: audio shorter than one window");

  const std::size_t nfft = dsp::next_pow2(static_cast<std::size_t>(len));
  const auto window = dsp::hamming_window(len);
  const auto bank = dsp::mel_filterbank(config.num_filters, nfft, audio.sample_rate,
                                        config.low_freq_hz, audio.sample_rate / 2.0);
  const int m_total = config.num_filters;

  FeatureMatrix out;
  out.resize(t, config.num_coeffs);
  out.frame_shift_s = config.frame_shift_s;
  out.frame_length_s = config.frame_length_s;
  for (int c = 0; c < config.num_coeffs; ++c) out.column_labels.push_back("mfcc_" + std::to_string(c));

  std::vector<double> frame(len), log_mel(m_total);
  for (int k = 0; k < t; ++k) {
    const float *src = audio.samples.data() + static_cast<std::size_t>(k) * shift;
    frame[0] = (src[0] - config.preemphasis * src[0]) * window[0];
    for (int i = 1; i < len; ++i)
      frame[i] = (src[i] - config.preemphasis * src[i - 1]) * window[i];

    const auto power = dsp::power_spectrum(frame.data(), len, nfft);
    for (int m = 0; m < m_total; ++m) {
      double e = 0.0;
      const auto &w = bank[m];
      for (std::size_t b = 0; b < power.size(); ++b) e += w[b] * power[b];
      log_mel[m] = std::log(std::max(e, config.log_floor));
    }

    double mean = 0.0;
    for (int m = 0; m < m_total; ++m) mean += log_mel[m];
    out.at(k, 0) = mean / m_total;
    const double scale = std::sqrt(2.0 / m_total);
    for (int c = 1; c < config.num_coeffs; ++c) {
      double acc = 0.0;
      for (int m = 0; m < m_total; ++m)
        acc += log_mel[m] * std::cos(M_PI * c * (2 * m + 1) / (2.0 * m_total));
      out.at(k, c) = scale * acc;
    }
  }
  return out;
}

}  // namespace echokit
