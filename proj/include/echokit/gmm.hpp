#pragma once

#include <numeric>

#include "echokit/common.hpp"
#include "echokit/features.hpp"

namespace echokit {

// Diagonal-covariance Gaussian mixture. Parameters are flat row-major
// arrays (component-major) so accumulation stays cache friendly.
struct DiagGmm {
  int dim = 0;
  std::vector<double> weights;  // K
  std::vector<double> means;    // K x dim
  std::vector<double> vars;     // K x dim

  int num_components() const { return static_cast<int>(weights.size()); }

  static DiagGmm single(const std::vector<double> &mean, const std::vector<double> &var) {
    DiagGmm g;
    g.dim = static_cast<int>(mean.size());
    g.weights = {1.0};
    g.means = mean;
    g.vars = var;
    g.prepare();
    return g;
  }

  // refresh cached per-component log normalizers after any parameter edit
  void prepare() {
    const int k_total = num_components();
    log_norm_.resize(k_total);
    log_weight_.resize(k_total);
    inv_var_.resize(vars.size());
    for (int k = 0; k < k_total; ++k) {
      double acc = dim * std::log(2.0 * M_PI);
      for (int d = 0; d < dim; ++d) {
        acc += std::log(vars[static_cast<std::size_t>(k) * dim + d]);
        inv_var_[static_cast<std::size_t>(k) * dim + d] =
            1.0 / vars[static_cast<std::size_t>(k) * dim + d];
      }
      log_norm_[k] = -0.5 * acc;
      log_weight_[k] = weights[k] > 0 ? std::log(weights[k]) : kLogZero;
    }
  }

  double component_log_lik(int k, const double *x) const {
    const double *mu = &means[static_cast<std::size_t>(k) * dim];
    const double *iv = &inv_var_[static_cast<std::size_t>(k) * dim];
    double q = 0.0;
    for (int d = 0; d < dim; ++d) {
      double diff = x[d] - mu[d];
      q += diff * diff * iv[d];
    }
    return log_norm_[k] - 0.5 * q;
  }

  double log_likelihood(const double *x) const {
    double best = kLogZero;
    const int k_total = num_components();
    thread_local std::vector<double> lp;
    lp.resize(k_total);
    for (int k = 0; k < k_total; ++k) {
      lp[k] = log_weight_[k] + component_log_lik(k, x);
      best = std::max(best, lp[k]);
    }
    if (best == kLogZero) return kLogZero;
    double acc = 0.0;
    for (int k = 0; k < k_total; ++k) acc += std::exp(lp[k] - best);
    return best + std::log(acc);
  }

  // fills posts[k] = p(component k | x); returns log p(x)
  double component_posteriors(const double *x, double *posts) const {
    const int k_total = num_components();
    double best = kLogZero;
    for (int k = 0; k < k_total; ++k) {
      posts[k] = log_weight_[k] + component_log_lik(k, x);
      best = std::max(best, posts[k]);
    }
    double acc = 0.0;
    for (int k = 0; k < k_total; ++k) acc += std::exp(posts[k] - best);
    double ll = best + std::log(acc);
    for (int k = 0; k < k_total; ++k) posts[k] = std::exp(posts[k] - ll);
    return ll;
  }

  void validate() const {
    if (dim <= 0 || weights.empty()) throw ValidationError("DiagGmm: empty model");
    if (means.size() != weights.size() * dim || vars.size() != weights.size() * dim)
      throw DimensionError("DiagGmm: parameter shapes inconsistent with K and dim");
    double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-8)
      throw ValidationError("DiagGmm: weights sum to " + std::to_string(sum));
    for (double w : weights)
      if (w < 0) throw ValidationError("DiagGmm: negative weight");
    for (double v : vars)
      if (!(v > 0)) throw ValidationError("DiagGmm: non-positive variance");
  }

 private:
  std::vector<double> log_norm_;
  std::vector<double> log_weight_;
  std::vector<double> inv_var_;
};

// Zeroth/first/second-order statistics for one GMM's EM update.
struct GmmAccumulator {
  std::vector<double> gamma;     // K
  std::vector<double> mean_acc;  // K x dim
  std::vector<double> var_acc;   // K x dim, sum of gamma * x^2

  void reset(const DiagGmm &g) {
    gamma.assign(g.num_components(), 0.0);
    mean_acc.assign(g.means.size(), 0.0);
    var_acc.assign(g.vars.size(), 0.0);
  }

  void accumulate(const DiagGmm &g, const double *x, double frame_weight) {
    const int k_total = g.num_components();
    thread_local std::vector<double> posts;
    posts.resize(k_total);
    g.component_posteriors(x, posts.data());
    for (int k = 0; k < k_total; ++k) {
      double w = frame_weight * posts[k];
      if (w == 0.0) continue;
      gamma[k] += w;
      double *ma = &mean_acc[static_cast<std::size_t>(k) * g.dim];
      double *va = &var_acc[static_cast<std::size_t>(k) * g.dim];
      for (int d = 0; d < g.dim; ++d) {
        ma[d] += w * x[d];
        va[d] += w * x[d] * x[d];
      }
    }
  }

  double total() const { return std::accumulate(gamma.begin(), gamma.end(), 0.0); }
};

// Maximum-likelihood update with per-dimension variance flooring. Components
// with negligible occupancy keep their previous parameters.
inline void gmm_mstep(DiagGmm &g, const GmmAccumulator &acc, const std::vector<double> &var_floor,
                      double min_occupancy = 1e-8) {
  const int k_total = g.num_components();
  double total = acc.total();
  if (total <= min_occupancy) return;
  for (int k = 0; k < k_total; ++k) {
    if (acc.gamma[k] <= min_occupancy) {
      g.weights[k] = 1e-10;
      continue;
    }
    g.weights[k] = acc.gamma[k] / total;
    double *mu = &g.means[static_cast<std::size_t>(k) * g.dim];
    double *var = &g.vars[static_cast<std::size_t>(k) * g.dim];
    const double *ma = &acc.mean_acc[static_cast<std::size_t>(k) * g.dim];
    const double *va = &acc.var_acc[static_cast<std::size_t>(k) * g.dim];
    for (int d = 0; d < g.dim; ++d) {
      mu[d] = ma[d] / acc.gamma[k];
      double v = va[d] / acc.gamma[k] - mu[d] * mu[d];
      var[d] = std::max(v, var_floor[d]);
    }
  }
  // restore sum-to-one after any weight flooring
  double sum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
  for (double &w : g.weights) w /= sum;
  g.prepare();
}

// Binary split of the heaviest components until the mixture has
// `target` components. Means are perturbed by +/- 0.2 sigma.
inline void gmm_split(DiagGmm &g, int target, double perturb = 0.2) {
  while (g.num_components() < target) {
    int to_add = target - g.num_components();
    std::vector<int> order(g.num_components());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return g.weights[a] > g.weights[b]; });
    int split_now = std::min(to_add, g.num_components());
    for (int i = 0; i < split_now; ++i) {
      int k = order[i];
      int nk = g.num_components();
      g.weights[k] *= 0.5;
      g.weights.push_back(g.weights[k]);
      for (int d = 0; d < g.dim; ++d) {
        double sigma = std::sqrt(g.vars[static_cast<std::size_t>(k) * g.dim + d]);
        double delta = perturb * sigma;
        g.means.push_back(g.means[static_cast<std::size_t>(k) * g.dim + d] + delta);
        g.vars.push_back(g.vars[static_cast<std::size_t>(k) * g.dim + d]);
      }
      for (int d = 0; d < g.dim; ++d) {
        double sigma = std::sqrt(g.vars[static_cast<std::size_t>(k) * g.dim + d]);
        g.means[static_cast<std::size_t>(k) * g.dim + d] -= perturb * sigma;
      }
      (void)nk;
    }
  }
  g.prepare();
}

}  // namespace echokit
