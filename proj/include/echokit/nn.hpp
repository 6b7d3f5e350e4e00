#pragma once

#include "echokit/common.hpp"

namespace echokit::nn {

// Channel-major 3-D tensor (c, h, w row-major), doubles throughout.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

  double &at(int ci, int hi, int wi) {
    return v[(static_cast<std::size_t>(ci) * h + hi) * w + wi];
  }
  double at(int ci, int hi, int wi) const {
    return v[(static_cast<std::size_t>(ci) * h + hi) * w + wi];
  }
  std::size_t size() const { return v.size(); }
};

// Valid convolution, stride 1. Weights laid out [out_c][in_c][k][k].
inline Tensor conv_forward(const Tensor &in, const std::vector<double> &w,
                           const std::vector<double> &b, int out_c, int k,
                           const char *layer_name) {
  if (in.h < k || in.w < k)
    throw DimensionError(std::string(layer_name) + ": input " + std::to_string(in.h) + "x" +
                         std::to_string(in.w) + " smaller than kernel " + std::to_string(k));
  if (w.size() != static_cast<std::size_t>(out_c) * in.c * k * k ||
      b.size() != static_cast<std::size_t>(out_c))
    throw DimensionError(std::string(layer_name) + ": weight shape mismatch");
  Tensor out(out_c, in.h - k + 1, in.w - k + 1);
  for (int co = 0; co < out_c; ++co) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        double acc = b[co];
        for (int ci = 0; ci < in.c; ++ci) {
          const std::size_t wbase = ((static_cast<std::size_t>(co) * in.c + ci) * k) * k;
          for (int dy = 0; dy < k; ++dy) {
            const double *wrow = &w[wbase + static_cast<std::size_t>(dy) * k];
            const double *irow = &in.v[(static_cast<std::size_t>(ci) * in.h + y + dy) * in.w + x];
            for (int dx = 0; dx < k; ++dx) acc += wrow[dx] * irow[dx];
          }
        }
        out.at(co, y, x) = acc;
      }
    }
  }
  return out;
}

inline void conv_backward(const Tensor &in, const std::vector<double> &w, int out_c, int k,
                          const Tensor &gout, Tensor &gin, std::vector<double> &gw,
                          std::vector<double> &gb) {
  gin = Tensor(in.c, in.h, in.w);
  gw.assign(w.size(), 0.0);
  gb.assign(static_cast<std::size_t>(out_c), 0.0);
  for (int co = 0; co < out_c; ++co) {
    for (int y = 0; y < gout.h; ++y) {
      for (int x = 0; x < gout.w; ++x) {
        double g = gout.at(co, y, x);
        if (g == 0.0) continue;
        gb[co] += g;
        for (int ci = 0; ci < in.c; ++ci) {
          const std::size_t wbase = ((static_cast<std::size_t>(co) * in.c + ci) * k) * k;
          for (int dy = 0; dy < k; ++dy) {
            const double *irow = &in.v[(static_cast<std::size_t>(ci) * in.h + y + dy) * in.w + x];
            double *grow = &gin.v[(static_cast<std::size_t>(ci) * in.h + y + dy) * in.w + x];
            double *gwrow = &gw[wbase + static_cast<std::size_t>(dy) * k];
            const double *wrow = &w[wbase + static_cast<std::size_t>(dy) * k];
            for (int dx = 0; dx < k; ++dx) {
              gwrow[dx] += g * irow[dx];
              grow[dx] += g * wrow[dx];
            }
          }
        }
      }
    }
  }
}

// 2x2 max pooling, stride 2, trailing odd row/column dropped. Ties resolve
// to the first element in scan order so backward is deterministic.
inline Tensor maxpool2_forward(const Tensor &in, std::vector<std::size_t> &argmax) {
  Tensor out(in.c, in.h / 2, in.w / 2);
  if (out.h == 0 || out.w == 0)
    throw DimensionError("maxpool: input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                         " too small for 2x2 pooling");
  argmax.assign(out.size(), 0);
  for (int ci = 0; ci < in.c; ++ci) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            std::size_t idx =
                (static_cast<std::size_t>(ci) * in.h + 2 * y + dy) * in.w + 2 * x + dx;
            if (in.v[idx] > best) {
              best = in.v[idx];
              best_idx = idx;
            }
          }
        }
        std::size_t oidx = (static_cast<std::size_t>(ci) * out.h + y) * out.w + x;
        out.v[oidx] = best;
        argmax[oidx] = best_idx;
      }
    }
  }
  return out;
}

inline Tensor maxpool2_backward(const Tensor &gout, const std::vector<std::size_t> &argmax,
                                int in_c, int in_h, int in_w) {
  Tensor gin(in_c, in_h, in_w);
  for (std::size_t i = 0; i < gout.v.size(); ++i) gin.v[argmax[i]] += gout.v[i];
  return gin;
}

inline void relu_inplace(std::vector<double> &v) {
  for (double &x : v) x = std::max(x, 0.0);
}

// grad *= 1[pre > 0]; the cached pre-activation decides the mask
inline void relu_backward_inplace(const std::vector<double> &pre, std::vector<double> &grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (pre[i] <= 0.0) grad[i] = 0.0;
}

// Fully connected layer, weights row-major [out][in].
struct Dense {
  int in = 0, out = 0;
  std::vector<double> w, b;

  Dense() = default;
  Dense(int in_, int out_) : in(in_), out(out_), w(static_cast<std::size_t>(in_) * out_, 0.0), b(out_, 0.0) {}
};

inline std::vector<double> dense_forward(const Dense &d, const std::vector<double> &x,
                                         const char *layer_name) {
  if (static_cast<int>(x.size()) != d.in)
    throw DimensionError(std::string(layer_name) + ": input size " + std::to_string(x.size()) +
                         ", expected " + std::to_string(d.in));
  std::vector<double> y(d.out);
  for (int o = 0; o < d.out; ++o) {
    const double *row = &d.w[static_cast<std::size_t>(o) * d.in];
    double acc = d.b[o];
    for (int i = 0; i < d.in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

inline void dense_backward(const Dense &d, const std::vector<double> &x,
                           const std::vector<double> &gy, std::vector<double> &gx,
                           std::vector<double> &gw, std::vector<double> &gb) {
  gx.assign(d.in, 0.0);
  gw.assign(d.w.size(), 0.0);
  gb = gy;
  for (int o = 0; o < d.out; ++o) {
    const double *row = &d.w[static_cast<std::size_t>(o) * d.in];
    double *grow = &gw[static_cast<std::size_t>(o) * d.in];
    double g = gy[o];
    for (int i = 0; i < d.in; ++i) {
      gx[i] += g * row[i];
      grow[i] = g * x[i];
    }
  }
}

inline std::vector<double> softmax(const std::vector<double> &logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double &x : p) x /= z;
  return p;
}

// cross entropy computed from the log-sum-exp so it stays finite even when
// the correct class is far below the mode
inline double cross_entropy_from_logits(const std::vector<double> &logits, int label) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return mx + std::log(z) - logits[label];
}

}  // namespace echokit::nn
