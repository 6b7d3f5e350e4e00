#pragma once

#include <fstream>
#include <utility>

#include "echokit/common.hpp"
#include "echokit/nn.hpp"
#include "echokit/session.hpp"

namespace echokit {

// Architecture of the frame-classification network. The input stack is fixed
// at 8 channels (seven consecutive frames plus the speaker mean) and the
// embedding layer at 8 units; everything else is configurable.
struct CnnConfig {
  int in_channels = 8;
  int in_h = 63, in_w = 412;
  int conv1_channels = 16, conv1_kernel = 5;
  int conv2_channels = 32, conv2_kernel = 5;
  int fc1 = 256, fc2 = 64;
  int embedding_dim = 8;
  int num_classes = 11;
  std::uint64_t seed = 0;

  // geometry small enough for finite-difference verification
  static CnnConfig small_preset() {
    CnnConfig c;
    c.in_h = 12;
    c.in_w = 16;
    c.conv1_channels = 4;
    c.conv1_kernel = 3;
    c.conv2_channels = 6;
    c.conv2_kernel = 3;
    c.fc1 = 24;
    c.fc2 = 16;
    c.num_classes = 5;
    return c;
  }

  int conv1_out_h() const { return in_h - conv1_kernel + 1; }
  int conv1_out_w() const { return in_w - conv1_kernel + 1; }
  int pool1_h() const { return conv1_out_h() / 2; }
  int pool1_w() const { return conv1_out_w() / 2; }
  int conv2_out_h() const { return pool1_h() - conv2_kernel + 1; }
  int conv2_out_w() const { return pool1_w() - conv2_kernel + 1; }
  int pool2_h() const { return conv2_out_h() / 2; }
  int pool2_w() const { return conv2_out_w() / 2; }
  int flat_size() const { return conv2_channels * pool2_h() * pool2_w(); }

  void validate() const {
    if (in_channels != 8) throw ValidationError("CnnConfig: input stack is always 8 channels");
    if (embedding_dim != 8) throw ValidationError("CnnConfig: embedding layer is always 8 units");
    if (num_classes < 2) throw ValidationError("CnnConfig: num_classes must be at least 2");
    if (in_h <= 0 || in_w <= 0 || conv1_channels <= 0 || conv2_channels <= 0 || fc1 <= 0 ||
        fc2 <= 0 || conv1_kernel <= 0 || conv2_kernel <= 0)
      throw ValidationError("CnnConfig: all sizes must be positive");
    if (conv1_out_h() < 1 || conv1_out_w() < 1)
      throw DimensionError("CnnConfig: conv1 kernel larger than input");
    if (pool1_h() < 1 || pool1_w() < 1) throw DimensionError("CnnConfig: pool1 output empty");
    if (conv2_out_h() < 1 || conv2_out_w() < 1)
      throw DimensionError("CnnConfig: conv2 kernel larger than pool1 output");
    if (pool2_h() < 1 || pool2_w() < 1) throw DimensionError("CnnConfig: pool2 output empty");
  }
};

struct CnnParams {
  CnnConfig config;
  std::vector<double> conv1_w, conv1_b;
  std::vector<double> conv2_w, conv2_b;
  nn::Dense fc1, fc2, fc_embed, fc_out;

  std::size_t param_count() const {
    return conv1_w.size() + conv1_b.size() + conv2_w.size() + conv2_b.size() + fc1.w.size() +
           fc1.b.size() + fc2.w.size() + fc2.b.size() + fc_embed.w.size() + fc_embed.b.size() +
           fc_out.w.size() + fc_out.b.size();
  }
};

namespace detail {

// parameter arrays in one fixed order, for updates and finite differences
inline std::vector<std::vector<double> *> param_arrays(CnnParams &p) {
  return {&p.conv1_w, &p.conv1_b, &p.conv2_w,    &p.conv2_b,    &p.fc1.w,    &p.fc1.b,
          &p.fc2.w,   &p.fc2.b,   &p.fc_embed.w, &p.fc_embed.b, &p.fc_out.w, &p.fc_out.b};
}

}  // namespace detail

struct CnnGrads {
  std::vector<double> conv1_w, conv1_b, conv2_w, conv2_b;
  std::vector<double> fc1_w, fc1_b, fc2_w, fc2_b, fce_w, fce_b, fco_w, fco_b;

  std::vector<std::vector<double> *> arrays() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b,
            &fc2_w,   &fc2_b,   &fce_w,   &fce_b,   &fco_w, &fco_b};
  }
};

inline CnnParams init_cnn(const CnnConfig &config) {
  config.validate();
  CnnParams p;
  p.config = config;
  Rng rng(config.seed);
  auto he_fill = [&](std::vector<double> &w, int fan_in) {
    double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double &x : w) x = rng.normal() * scale;
  };
  p.conv1_w.resize(static_cast<std::size_t>(config.conv1_channels) * config.in_channels *
                   config.conv1_kernel * config.conv1_kernel);
  p.conv1_b.assign(config.conv1_channels, 0.0);
  he_fill(p.conv1_w, config.in_channels * config.conv1_kernel * config.conv1_kernel);
  p.conv2_w.resize(static_cast<std::size_t>(config.conv2_channels) * config.conv1_channels *
                   config.conv2_kernel * config.conv2_kernel);
  p.conv2_b.assign(config.conv2_channels, 0.0);
  he_fill(p.conv2_w, config.conv1_channels * config.conv2_kernel * config.conv2_kernel);
  p.fc1 = nn::Dense(config.flat_size(), config.fc1);
  he_fill(p.fc1.w, p.fc1.in);
  p.fc2 = nn::Dense(config.fc1, config.fc2);
  he_fill(p.fc2.w, p.fc2.in);
  p.fc_embed = nn::Dense(config.fc2, config.embedding_dim);
  he_fill(p.fc_embed.w, p.fc_embed.in);
  p.fc_out = nn::Dense(config.embedding_dim, config.num_classes);
  he_fill(p.fc_out.w, p.fc_out.in);
  return p;
}

struct CnnForward {
  nn::Tensor input, conv1_pre, pool1, conv2_pre, pool2;
  std::vector<std::size_t> argmax1, argmax2;
  std::vector<double> flat, fc1_pre, fc1_post, fc2_pre, fc2_post;
  std::vector<double> embedding, logits, posteriors;
};

// conv -> rectifier -> pool, twice; three dense layers with rectifiers after
// the first two; the 8-unit layer output is the embedding and feeds the
// classifier directly.
inline void cnn_forward(const CnnParams &p, const nn::Tensor &input, CnnForward &f) {
  const CnnConfig &c = p.config;
  if (input.c != c.in_channels || input.h != c.in_h || input.w != c.in_w)
    throw DimensionError("conv1 input: got " + std::to_string(input.c) + "x" +
                         std::to_string(input.h) + "x" + std::to_string(input.w) + ", expected " +
                         std::to_string(c.in_channels) + "x" + std::to_string(c.in_h) + "x" +
                         std::to_string(c.in_w));
  f.input = input;
  f.conv1_pre = nn::conv_forward(input, p.conv1_w, p.conv1_b, c.conv1_channels, c.conv1_kernel,
                                 "conv1");
  nn::Tensor a1 = f.conv1_pre;
  nn::relu_inplace(a1.v);
  f.pool1 = nn::maxpool2_forward(a1, f.argmax1);
  f.conv2_pre = nn::conv_forward(f.pool1, p.conv2_w, p.conv2_b, c.conv2_channels, c.conv2_kernel,
                                 "conv2");
  nn::Tensor a2 = f.conv2_pre;
  nn::relu_inplace(a2.v);
  f.pool2 = nn::maxpool2_forward(a2, f.argmax2);
  f.flat = f.pool2.v;
  f.fc1_pre = nn::dense_forward(p.fc1, f.flat, "fc1");
  f.fc1_post = f.fc1_pre;
  nn::relu_inplace(f.fc1_post);
  f.fc2_pre = nn::dense_forward(p.fc2, f.fc1_post, "fc2");
  f.fc2_post = f.fc2_pre;
  nn::relu_inplace(f.fc2_post);
  f.embedding = nn::dense_forward(p.fc_embed, f.fc2_post, "embedding");
  f.logits = nn::dense_forward(p.fc_out, f.embedding, "classifier");
  f.posteriors = nn::softmax(f.logits);
}

// backprop of the cross entropy at `label`; grads are accumulated scaled by
// `weight` so batch averaging happens at the call site
inline void cnn_backward(const CnnParams &p, const CnnForward &f, int label, double weight,
                         CnnGrads &g) {
  const CnnConfig &c = p.config;
  std::vector<double> dlogits = f.posteriors;
  dlogits[label] -= 1.0;
  for (double &x : dlogits) x *= weight;

  std::vector<double> d_embed, gw, gb, tmp;
  nn::dense_backward(p.fc_out, f.embedding, dlogits, d_embed, gw, gb);
  for (std::size_t i = 0; i < gw.size(); ++i) g.fco_w[i] += gw[i];
  for (std::size_t i = 0; i < gb.size(); ++i) g.fco_b[i] += gb[i];

  std::vector<double> d_fc2post;
  nn::dense_backward(p.fc_embed, f.fc2_post, d_embed, d_fc2post, gw, gb);
  for (std::size_t i = 0; i < gw.size(); ++i) g.fce_w[i] += gw[i];
  for (std::size_t i = 0; i < gb.size(); ++i) g.fce_b[i] += gb[i];

  nn::relu_backward_inplace(f.fc2_pre, d_fc2post);
  std::vector<double> d_fc1post;
  nn::dense_backward(p.fc2, f.fc1_post, d_fc2post, d_fc1post, gw, gb);
  for (std::size_t i = 0; i < gw.size(); ++i) g.fc2_w[i] += gw[i];
  for (std::size_t i = 0; i < gb.size(); ++i) g.fc2_b[i] += gb[i];

  nn::relu_backward_inplace(f.fc1_pre, d_fc1post);
  std::vector<double> d_flat;
  nn::dense_backward(p.fc1, f.flat, d_fc1post, d_flat, gw, gb);
  for (std::size_t i = 0; i < gw.size(); ++i) g.fc1_w[i] += gw[i];
  for (std::size_t i = 0; i < gb.size(); ++i) g.fc1_b[i] += gb[i];

  nn::Tensor d_pool2(c.conv2_channels, c.pool2_h(), c.pool2_w());
  d_pool2.v = d_flat;
  nn::Tensor d_conv2post =
      nn::maxpool2_backward(d_pool2, f.argmax2, c.conv2_channels, c.conv2_out_h(), c.conv2_out_w());
  nn::relu_backward_inplace(f.conv2_pre.v, d_conv2post.v);
  nn::Tensor d_pool1;
  std::vector<double> gcw, gcb;
  nn::conv_backward(f.pool1, p.conv2_w, c.conv2_channels, c.conv2_kernel, d_conv2post, d_pool1,
                    gcw, gcb);
  for (std::size_t i = 0; i < gcw.size(); ++i) g.conv2_w[i] += gcw[i];
  for (std::size_t i = 0; i < gcb.size(); ++i) g.conv2_b[i] += gcb[i];

  nn::Tensor d_conv1post =
      nn::maxpool2_backward(d_pool1, f.argmax1, c.conv1_channels, c.conv1_out_h(), c.conv1_out_w());
  nn::relu_backward_inplace(f.conv1_pre.v, d_conv1post.v);
  nn::Tensor d_input;
  nn::conv_backward(f.input, p.conv1_w, c.conv1_channels, c.conv1_kernel, d_conv1post, d_input,
                    gcw, gcb);
  for (std::size_t i = 0; i < gcw.size(); ++i) g.conv1_w[i] += gcw[i];
  for (std::size_t i = 0; i < gcb.size(); ++i) g.conv1_b[i] += gcb[i];
}

inline CnnGrads zero_grads(const CnnParams &p) {
  CnnGrads g;
  g.conv1_w.assign(p.conv1_w.size(), 0.0);
  g.conv1_b.assign(p.conv1_b.size(), 0.0);
  g.conv2_w.assign(p.conv2_w.size(), 0.0);
  g.conv2_b.assign(p.conv2_b.size(), 0.0);
  g.fc1_w.assign(p.fc1.w.size(), 0.0);
  g.fc1_b.assign(p.fc1.b.size(), 0.0);
  g.fc2_w.assign(p.fc2.w.size(), 0.0);
  g.fc2_b.assign(p.fc2.b.size(), 0.0);
  g.fce_w.assign(p.fc_embed.w.size(), 0.0);
  g.fce_b.assign(p.fc_embed.b.size(), 0.0);
  g.fco_w.assign(p.fc_out.w.size(), 0.0);
  g.fco_b.assign(p.fc_out.b.size(), 0.0);
  return g;
}

struct LabeledInput {
  nn::Tensor input;
  int label = 0;
};

// One SGD step on the mean cross entropy of the batch. Returns the loss
// measured before the update.
inline double train_step(CnnParams &params, const std::vector<LabeledInput> &batch,
                         double learning_rate) {
  if (batch.empty()) throw InsufficientDataError("train_step: empty batch");
  for (const auto &ex : batch)
    if (ex.label < 0 || ex.label >= params.config.num_classes)
      throw RangeError("train_step: label " + std::to_string(ex.label) + " outside [0, " +
                       std::to_string(params.config.num_classes) + ")");
  CnnGrads grads = zero_grads(params);
  CnnForward cache;
  double loss = 0.0;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto &ex : batch) {
    cnn_forward(params, ex.input, cache);
    loss += w * nn::cross_entropy_from_logits(cache.logits, ex.label);
    cnn_backward(params, cache, ex.label, w, grads);
  }
  if (!std::isfinite(loss))
    throw TrainingError("train_step: loss diverged (non-finite); reduce the learning rate");
  auto ps = detail::param_arrays(params);
  auto gs = grads.arrays();
  for (std::size_t a = 0; a < ps.size(); ++a)
    for (std::size_t i = 0; i < ps[a]->size(); ++i) (*ps[a])[i] -= learning_rate * (*gs[a])[i];
  return loss;
}

// Central finite differences on a random parameter subsample against the
// backprop gradient. Returns max |g_fd - g_bp| / max(|g_fd|, |g_bp|, 1e-8).
inline double gradient_check(CnnParams &params, const nn::Tensor &input, int label,
                             double epsilon = 1e-4, int min_samples = 200,
                             std::uint64_t seed = 0) {
  if (params.param_count() > 50000)
    throw RangeError("gradient_check: network has " + std::to_string(params.param_count()) +
                     " parameters; use a configuration with at most 50000");
  CnnForward cache;
  CnnGrads grads = zero_grads(params);
  cnn_forward(params, input, cache);
  cnn_backward(params, cache, label, 1.0, grads);

  auto ps = detail::param_arrays(params);
  auto gs = grads.arrays();
  std::vector<std::pair<std::size_t, std::size_t>> index;  // (array, offset)
  for (std::size_t a = 0; a < ps.size(); ++a)
    for (std::size_t i = 0; i < ps[a]->size(); ++i) index.emplace_back(a, i);

  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::size_t sample = std::min<std::size_t>(index.size(), static_cast<std::size_t>(min_samples));
  for (std::size_t i = 0; i < sample; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (index.size() - i));
    std::swap(index[i], index[j]);
  }

  double worst = 0.0;
  for (std::size_t s = 0; s < sample; ++s) {
    double &theta = (*ps[index[s].first])[index[s].second];
    double g_bp = (*gs[index[s].first])[index[s].second];
    double saved = theta;
    theta = saved + epsilon;
    cnn_forward(params, input, cache);
    double lp = nn::cross_entropy_from_logits(cache.logits, label);
    theta = saved - epsilon;
    cnn_forward(params, input, cache);
    double lm = nn::cross_entropy_from_logits(cache.logits, label);
    theta = saved;
    double g_fd = (lp - lm) / (2.0 * epsilon);
    double rel = std::abs(g_fd - g_bp) / std::max({std::abs(g_fd), std::abs(g_bp), 1e-8});
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Input assembly and embedding extraction.
// ---------------------------------------------------------------------------

inline std::vector<double> speaker_mean(const std::vector<UltrasoundSequence> &sequences) {
  if (sequences.empty()) throw InsufficientDataError("speaker_mean: no sequences");
  const int h = sequences[0].num_scanlines, w = sequences[0].num_echoes;
  std::vector<double> acc(static_cast<std::size_t>(h) * w, 0.0);
  std::size_t frames = 0;
  for (const auto &seq : sequences) {
    if (seq.num_scanlines != h || seq.num_echoes != w)
      throw DimensionError("speaker_mean: sequence dims " + std::to_string(seq.num_scanlines) +
                           "x" + std::to_string(seq.num_echoes) + " differ from " +
                           std::to_string(h) + "x" + std::to_string(w));
    for (int t = 0; t < seq.num_frames; ++t) {
      const float *fr = seq.frame(t);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += fr[i];
      ++frames;
    }
  }
  if (frames == 0) throw InsufficientDataError("speaker_mean: sequences contain no frames");
  for (double &x : acc) x /= static_cast<double>(frames);
  return acc;
}

// Channels [t-3 .. t+3, mean]; neighbors beyond either end replicate the
// edge frame.
inline nn::Tensor build_input_stack(const UltrasoundSequence &seq, int t,
                                    const std::vector<double> &mean_frame) {
  if (t < 0 || t >= seq.num_frames)
    throw RangeError("build_input_stack: frame " + std::to_string(t) + " outside [0, " +
                     std::to_string(seq.num_frames) + ")");
  const int h = seq.num_scanlines, w = seq.num_echoes;
  if (mean_frame.size() != static_cast<std::size_t>(h) * w)
    throw DimensionError("build_input_stack: mean frame has " +
                         std::to_string(mean_frame.size()) + " values, expected " +
                         std::to_string(static_cast<std::size_t>(h) * w));
  nn::Tensor x(8, h, w);
  for (int c = 0; c < 7; ++c) {
    int src = std::min(std::max(t - 3 + c, 0), seq.num_frames - 1);
    const float *fr = seq.frame(src);
    double *dst = &x.v[static_cast<std::size_t>(c) * h * w];
    for (int i = 0; i < h * w; ++i) dst[i] = fr[i];
  }
  double *dst = &x.v[static_cast<std::size_t>(7) * h * w];
  for (std::size_t i = 0; i < mean_frame.size(); ++i) dst[i] = mean_frame[i];
  return x;
}

// Per-frame 8-dim representations on the ultrasound frame clock.
struct EmbeddingSequence {
  int num_frames = 0;
  int dim = 8;
  std::vector<double> data;  // num_frames x dim
  double fps = 0.0;
  double sync_offset_s = 0.0;

  const double *row(int t) const { return &data[static_cast<std::size_t>(t) * dim]; }

  void validate() const {
    if (dim != 8) throw ValidationError("EmbeddingSequence: width must be 8");
    if (data.size() != static_cast<std::size_t>(num_frames) * dim)
      throw DimensionError("EmbeddingSequence: data size mismatch");
    for (double x : data)
      if (!std::isfinite(x)) throw ValidationError("EmbeddingSequence: non-finite value");
  }
};

inline EmbeddingSequence extract_embeddings(const CnnParams &params, const UltrasoundSequence &seq,
                                            const std::vector<double> &mean_frame) {
  EmbeddingSequence out;
  out.num_frames = seq.num_frames;
  out.dim = params.config.embedding_dim;
  out.fps = seq.fps;
  out.sync_offset_s = seq.sync_offset_s;
  out.data.resize(static_cast<std::size_t>(seq.num_frames) * out.dim);
  CnnForward cache;
  for (int t = 0; t < seq.num_frames; ++t) {
    nn::Tensor x = build_input_stack(seq, t, mean_frame);
    cnn_forward(params, x, cache);
    std::copy(cache.embedding.begin(), cache.embedding.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(t) * out.dim);
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Serialization (versioned binary, exact double round trip).
// ---------------------------------------------------------------------------

inline void save_embedder(const CnnParams &params, const std::string &path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write("EKCN", 4);
  auto wu32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char *>(&v), 4); };
  wu32(1);  // version
  const CnnConfig &c = params.config;
  for (int v : {c.in_channels, c.in_h, c.in_w, c.conv1_channels, c.conv1_kernel, c.conv2_channels,
                c.conv2_kernel, c.fc1, c.fc2, c.embedding_dim, c.num_classes})
    wu32(static_cast<std::uint32_t>(v));
  os.write(reinterpret_cast<const char *>(&c.seed), sizeof c.seed);
  auto ps = detail::param_arrays(const_cast<CnnParams &>(params));
  for (auto *arr : ps) {
    std::uint64_t n = arr->size();
    os.write(reinterpret_cast<const char *>(&n), sizeof n);
    os.write(reinterpret_cast<const char *>(arr->data()),
             static_cast<std::streamsize>(arr->size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing " + path);
}

inline CnnParams load_embedder(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "EKCN")
    throw FormatError(path + ": not an embedder model file");
  auto ru32 = [&]() {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char *>(&v), 4);
    if (!is) throw FormatError(path + ": truncated embedder model");
    return v;
  };
  std::uint32_t version = ru32();
  if (version != 1)
    throw FormatError(path + ": unsupported embedder model version " + std::to_string(version));
  CnnConfig c;
  c.in_channels = static_cast<int>(ru32());
  c.in_h = static_cast<int>(ru32());
  c.in_w = static_cast<int>(ru32());
  c.conv1_channels = static_cast<int>(ru32());
  c.conv1_kernel = static_cast<int>(ru32());
  c.conv2_channels = static_cast<int>(ru32());
  c.conv2_kernel = static_cast<int>(ru32());
  c.fc1 = static_cast<int>(ru32());
  c.fc2 = static_cast<int>(ru32());
  c.embedding_dim = static_cast<int>(ru32());
  c.num_classes = static_cast<int>(ru32());
  is.read(reinterpret_cast<char *>(&c.seed), sizeof c.seed);
  CnnParams p = init_cnn(c);
  auto ps = detail::param_arrays(p);
  for (auto *arr : ps) {
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char *>(&n), sizeof n);
    if (!is || n != arr->size())
      throw FormatError(path + ": parameter array size mismatch (file " + std::to_string(n) +
                        ", expected " + std::to_string(arr->size()) + ")");
    is.read(reinterpret_cast<char *>(arr->data()),
            static_cast<std::streamsize>(arr->size() * sizeof(double)));
    if (!is) throw FormatError(path + ": truncated parameter array");
  }
  return p;
}

inline void save_embeddings(const EmbeddingSequence &emb, const std::string &path) {
  emb.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write("EKEM", 4);
  std::uint32_t version = 1, frames = static_cast<std::uint32_t>(emb.num_frames),
                dim = static_cast<std::uint32_t>(emb.dim);
  os.write(reinterpret_cast<const char *>(&version), 4);
  os.write(reinterpret_cast<const char *>(&frames), 4);
  os.write(reinterpret_cast<const char *>(&dim), 4);
  os.write(reinterpret_cast<const char *>(&emb.fps), sizeof emb.fps);
  os.write(reinterpret_cast<const char *>(&emb.sync_offset_s), sizeof emb.sync_offset_s);
  os.write(reinterpret_cast<const char *>(emb.data.data()),
           static_cast<std::streamsize>(emb.data.size() * sizeof(double)));
  if (!os) throw IoError("failed writing " + path);
}

inline EmbeddingSequence load_embeddings(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "EKEM")
    throw FormatError(path + ": not an embedding file (bad magic)");
  auto ru32 = [&] {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char *>(&v), 4);
    return v;
  };
  std::uint32_t version = ru32();
  if (version != 1)
    throw FormatError(path + ": unsupported embedding file version " + std::to_string(version));
  EmbeddingSequence emb;
  emb.num_frames = static_cast<int>(ru32());
  emb.dim = static_cast<int>(ru32());
  is.read(reinterpret_cast<char *>(&emb.fps), sizeof emb.fps);
  is.read(reinterpret_cast<char *>(&emb.sync_offset_s), sizeof emb.sync_offset_s);
  emb.data.resize(static_cast<std::size_t>(emb.num_frames) * emb.dim);
  is.read(reinterpret_cast<char *>(emb.data.data()),
          static_cast<std::streamsize>(emb.data.size() * sizeof(double)));
  if (!is) throw FormatError(path + ": truncated embedding data");
  emb.validate();
  return emb;
}

}  // namespace echokit
