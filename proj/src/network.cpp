#include "last/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace last {
namespace {

constexpr double kLayerNormEps = 1e-6;

template <typename S>
using ConstMap = Eigen::Map<const Matrix<S>>;
template <typename S>
using MutMap = Eigen::Map<Matrix<S>>;

template <typename S>
ConstMap<S> view(const Tensor<S>& t, int rows, int cols) {
  return ConstMap<S>(t.data.data(), rows, cols);
}
template <typename S>
MutMap<S> view(Tensor<S>& t, int rows, int cols) {
  return MutMap<S>(t.data.data(), rows, cols);
}
template <typename S>
Eigen::Map<const RowVector<S>> row_view(const Tensor<S>& t) {
  return Eigen::Map<const RowVector<S>>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}
template <typename S>
Eigen::Map<RowVector<S>> row_view(Tensor<S>& t) {
  return Eigen::Map<RowVector<S>>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

// 3x3 convolution with padding 1 as a matrix product. Input rows are pixels
// (y * w + x), columns are channels; column layout of the result is
// (ky * 3 + kx) * c + channel.
template <typename S>
Matrix<S> im2col(const Matrix<S>& x, int h, int w, int stride) {
  const int c = static_cast<int>(x.cols());
  const int ho = stride == 2 ? strided_size(h) : h;
  const int wo = stride == 2 ? strided_size(w) : w;
  Matrix<S> col = Matrix<S>::Zero(static_cast<Eigen::Index>(ho) * wo, 9 * c);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      S* dst = col.data() + (static_cast<Eigen::Index>(oy) * wo + ox) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride - 1 + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride - 1 + kx;
          if (ix < 0 || ix >= w) continue;
          const S* src = x.data() + (static_cast<Eigen::Index>(iy) * w + ix) * c;
          std::copy(src, src + c, dst + (ky * 3 + kx) * c);
        }
      }
    }
  }
  return col;
}

template <typename S>
Matrix<S> col2im(const Matrix<S>& col, int h, int w, int c, int stride) {
  const int ho = stride == 2 ? strided_size(h) : h;
  const int wo = stride == 2 ? strided_size(w) : w;
  Matrix<S> x = Matrix<S>::Zero(static_cast<Eigen::Index>(h) * w, c);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const S* src = col.data() + (static_cast<Eigen::Index>(oy) * wo + ox) * 9 * c;
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride - 1 + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride - 1 + kx;
          if (ix < 0 || ix >= w) continue;
          S* dst = x.data() + (static_cast<Eigen::Index>(iy) * w + ix) * c;
          const S* s = src + (ky * 3 + kx) * c;
          for (int k = 0; k < c; ++k) dst[k] += s[k];
        }
      }
    }
  }
  return x;
}

struct Bin {
  int begin, end;
};

// Adaptive average pooling bins: [floor(i*in/out), ceil((i+1)*in/out)).
std::vector<Bin> pool_bins(int in, int out) {
  std::vector<Bin> bins(out);
  for (int i = 0; i < out; ++i) {
    bins[i].begin = (i * in) / out;
    bins[i].end = ((i + 1) * in + out - 1) / out;
  }
  return bins;
}

template <typename S>
void layer_norm(const Matrix<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, Matrix<S>& hat,
                RowVector<S>& rstd, Matrix<S>& out) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  hat.resize(rows, cols);
  out.resize(rows, cols);
  rstd.resize(rows);
  auto g = row_view(gamma);
  auto b = row_view(beta);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().mean();
    const S inv = S(1) / std::sqrt(var + S(kLayerNormEps));
    rstd(r) = inv;
    hat.row(r) = (x.row(r).array() - mean) * inv;
    out.row(r) = hat.row(r).cwiseProduct(g) + b;
  }
}

template <typename S>
Matrix<S> layer_norm_backward(const Matrix<S>& d_out, const Matrix<S>& hat, const RowVector<S>& rstd,
                              const Tensor<S>& gamma, Tensor<S>& d_gamma, Tensor<S>& d_beta) {
  auto g = row_view(gamma);
  row_view(d_gamma) += d_out.cwiseProduct(hat).colwise().sum();
  row_view(d_beta) += d_out.colwise().sum();
  Matrix<S> d_x(d_out.rows(), d_out.cols());
  for (Eigen::Index r = 0; r < d_out.rows(); ++r) {
    RowVector<S> d_hat = d_out.row(r).cwiseProduct(g);
    const S m1 = d_hat.mean();
    const S m2 = d_hat.cwiseProduct(hat.row(r)).mean();
    d_x.row(r) = rstd(r) * (d_hat.array() - m1 - hat.row(r).array() * m2);
  }
  return d_x;
}

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2))));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * S(M_PI));
  return cdf + x * pdf;
}

template <typename S>
void softmax_rows(Matrix<S>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const S mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

template <typename S>
void fill_normal(Tensor<S>& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = static_cast<S>(dist(rng));
}

template <typename S>
void fill_xavier(Tensor<S>& t, std::mt19937_64& rng, int fan_in, int fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.data) v = static_cast<S>(dist(rng));
}

}  // namespace

template <typename S>
ParameterStore<S> Network<S>::make_store(const ModelConfig& c) {
  c.validate();
  ParameterStore<S> p;
  const int d = c.token_dim;
  int in_ch = 3;
  for (int l = 0; l < 3; ++l) {
    const std::string base = "conv" + std::to_string(l);
    p.add(Group::encoder, base + ".weight", {9 * in_ch, c.encoder_channels[l]});
    p.add(Group::encoder, base + ".bias", {c.encoder_channels[l]});
    in_ch = c.encoder_channels[l];
  }
  p.add(Group::projection, "weight", {c.feature_dim(), d});
  p.add(Group::projection, "pos_embed", {c.token_count(), d});
  for (int k = 0; k < c.blocks; ++k) {
    const std::string b = "block" + std::to_string(k) + ".";
    p.add(Group::transformer, b + "ln1.gamma", {d});
    p.add(Group::transformer, b + "ln1.beta", {d});
    p.add(Group::transformer, b + "qkv.weight", {d, 3 * d});
    p.add(Group::transformer, b + "qkv.bias", {3 * d});
    p.add(Group::transformer, b + "proj.weight", {d, d});
    p.add(Group::transformer, b + "proj.bias", {d});
    p.add(Group::transformer, b + "ln2.gamma", {d});
    p.add(Group::transformer, b + "ln2.beta", {d});
    p.add(Group::transformer, b + "fc1.weight", {d, c.mlp_ratio * d});
    p.add(Group::transformer, b + "fc1.bias", {c.mlp_ratio * d});
    p.add(Group::transformer, b + "fc2.weight", {c.mlp_ratio * d, d});
    p.add(Group::transformer, b + "fc2.bias", {d});
  }
  p.add(Group::reconstructor, "pos_embed", {c.token_count(), d});
  p.add(Group::reconstructor, "conv.weight", {9 * d, c.feature_dim()});
  p.add(Group::reconstructor, "conv.bias", {c.feature_dim()});
  p.add(Group::adaptive, "weight", {d, d});
  p.add(Group::adaptive, "bias", {d});
  p.add(Group::classifier, "weight", {d, c.n_classes});
  p.add(Group::classifier, "bias", {c.n_classes});
  return p;
}

template <typename S>
Network<S>::Network(ModelConfig config) : config_(config), params_(make_store(config)) {
  index_parameters();
}

template <typename S>
Network<S>::Network(ModelConfig config, ParameterStore<S> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const ParameterStore<S> expected = make_store(config_);
  if (expected.size() != params_.size())
    throw std::invalid_argument("parameter store does not match model config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].group != params_[i].group || expected[i].name != params_[i].name ||
        expected[i].shape != params_[i].shape)
      throw std::invalid_argument("parameter " + expected[i].qualified_name() +
                                  " does not match model config");
  }
  index_parameters();
}

template <typename S>
void Network<S>::index_parameters() {
  auto at = [&](Group g, const std::string& name) {
    auto i = params_.find(g, name);
    if (!i) throw std::logic_error("missing parameter " + name);
    return *i;
  };
  for (int l = 0; l < 3; ++l) {
    conv_w_[l] = at(Group::encoder, "conv" + std::to_string(l) + ".weight");
    conv_b_[l] = at(Group::encoder, "conv" + std::to_string(l) + ".bias");
  }
  proj_w_ = at(Group::projection, "weight");
  pos_ = at(Group::projection, "pos_embed");
  blocks_.clear();
  for (int k = 0; k < config_.blocks; ++k) {
    const std::string b = "block" + std::to_string(k) + ".";
    auto t = [&](const char* n) { return at(Group::transformer, b + n); };
    blocks_.push_back({t("ln1.gamma"), t("ln1.beta"), t("qkv.weight"), t("qkv.bias"), t("proj.weight"),
                       t("proj.bias"), t("ln2.gamma"), t("ln2.beta"), t("fc1.weight"), t("fc1.bias"),
                       t("fc2.weight"), t("fc2.bias")});
  }
  rec_pos_ = at(Group::reconstructor, "pos_embed");
  rec_w_ = at(Group::reconstructor, "conv.weight");
  rec_b_ = at(Group::reconstructor, "conv.bias");
  ad_w_ = at(Group::adaptive, "weight");
  ad_b_ = at(Group::adaptive, "bias");
  cls_w_ = at(Group::classifier, "weight");
  cls_b_ = at(Group::classifier, "bias");
}

template <typename S>
void Network<S>::initialize(std::uint64_t seed, InitOptions options) {
  std::mt19937_64 rng(seed);
  params_.set_zero();
  const int d = config_.token_dim;
  int in_ch = 3;
  for (int l = 0; l < 3; ++l) {
    fill_normal(params_[conv_w_[l]], rng, std::sqrt(2.0 / (9 * in_ch)));
    in_ch = config_.encoder_channels[l];
  }
  fill_xavier(params_[proj_w_], rng, config_.feature_dim(), d);
  fill_normal(params_[pos_], rng, 0.02);
  for (const auto& b : blocks_) {
    std::fill(params_[b.ln1_g].data.begin(), params_[b.ln1_g].data.end(), S(1));
    std::fill(params_[b.ln2_g].data.begin(), params_[b.ln2_g].data.end(), S(1));
    fill_xavier(params_[b.qkv_w], rng, d, d);
    fill_xavier(params_[b.proj_w], rng, d, d);
    fill_xavier(params_[b.fc1_w], rng, d, config_.mlp_ratio * d);
    fill_xavier(params_[b.fc2_w], rng, config_.mlp_ratio * d, d);
  }
  fill_normal(params_[rec_pos_], rng, 0.02);
  fill_xavier(params_[rec_w_], rng, 9 * d, config_.feature_dim());
  if (options.identity_adaptive) {
    auto w = view(params_[ad_w_], d, d);
    w.setIdentity();
  } else {
    fill_xavier(params_[ad_w_], rng, d, d);
  }
  // The classifier starts at zero, so the first updates are not spent undoing
  // a random decision offset.
}

// ---------------------------------------------------------------- encoder

template <typename S>
SpatialFeatureSequence<S> Network<S>::encode_frames(const FrameClip& clip, EncoderTrace* trace) const {
  const ModelConfig& c = config_;
  if (clip.length != c.clip_length || clip.height != c.image_size || clip.width != c.image_size)
    throw std::invalid_argument("clip shape " + std::to_string(clip.length) + "x" +
                                std::to_string(clip.height) + "x" + std::to_string(clip.width) +
                                " does not match model input " + std::to_string(c.clip_length) + "x" +
                                std::to_string(c.image_size) + "x" + std::to_string(c.image_size));
  const int g = c.feature_grid;
  const int s_out = c.conv_output_size();
  const auto bins = pool_bins(s_out, g);

  SpatialFeatureSequence<S> out;
  out.frames = c.clip_length;
  out.grid = g;
  out.values.resize(static_cast<Eigen::Index>(c.clip_length) * g * g, c.feature_dim());
  if (trace) {
    trace->inputs.assign(c.clip_length, {});
    trace->outputs.assign(c.clip_length, {});
  }

  for (int f = 0; f < c.clip_length; ++f) {
    Matrix<S> x(static_cast<Eigen::Index>(c.image_size) * c.image_size, 3);
    const float* px = clip.frame(f);
    // Pixels enter the network centred: [0, 1] -> [-1, 1].
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<S>(2 * px[i] - 1);
    int side = c.image_size;
    for (int l = 0; l < 3; ++l) {
      const int cin = static_cast<int>(x.cols());
      const int cout = c.encoder_channels[l];
      Matrix<S> col = im2col(x, side, side, 2);
      Matrix<S> y(col.rows(), cout);
      y.noalias() = col * view(params_[conv_w_[l]], 9 * cin, cout);
      y.rowwise() += row_view(params_[conv_b_[l]]);
      y = y.cwiseMax(S(0));
      if (trace) {
        trace->inputs[f].push_back(std::move(x));
        trace->outputs[f].push_back(y);
      }
      x = std::move(y);
      side = strided_size(side);
    }
    const int ch = c.feature_dim();
    for (int gy = 0; gy < g; ++gy) {
      for (int gx = 0; gx < g; ++gx) {
        RowVector<S> acc = RowVector<S>::Zero(ch);
        for (int y = bins[gy].begin; y < bins[gy].end; ++y)
          for (int xx = bins[gx].begin; xx < bins[gx].end; ++xx) acc += x.row(y * side + xx);
        const S area = static_cast<S>((bins[gy].end - bins[gy].begin) * (bins[gx].end - bins[gx].begin));
        out.values.row((static_cast<Eigen::Index>(f) * g + gy) * g + gx) = acc / area;
      }
    }
  }
  return out;
}

template <typename S>
void Network<S>::encoder_backward(const EncoderTrace& trace, const Matrix<S>& d_features,
                                  ParameterStore<S>& grads) const {
  const ModelConfig& c = config_;
  const int g = c.feature_grid;
  const int s_out = c.conv_output_size();
  const auto bins = pool_bins(s_out, g);
  const int ch = c.feature_dim();

  for (int f = 0; f < c.clip_length; ++f) {
    Matrix<S> d_x = Matrix<S>::Zero(static_cast<Eigen::Index>(s_out) * s_out, ch);
    for (int gy = 0; gy < g; ++gy) {
      for (int gx = 0; gx < g; ++gx) {
        const S area = static_cast<S>((bins[gy].end - bins[gy].begin) * (bins[gx].end - bins[gx].begin));
        RowVector<S> d = d_features.row((static_cast<Eigen::Index>(f) * g + gy) * g + gx) / area;
        for (int y = bins[gy].begin; y < bins[gy].end; ++y)
          for (int xx = bins[gx].begin; xx < bins[gx].end; ++xx) d_x.row(y * s_out + xx) += d;
      }
    }
    int sides[4];
    sides[0] = c.image_size;
    for (int l = 0; l < 3; ++l) sides[l + 1] = strided_size(sides[l]);
    for (int l = 2; l >= 0; --l) {
      const Matrix<S>& input = trace.inputs[f][l];
      const Matrix<S>& output = trace.outputs[f][l];
      const int cin = static_cast<int>(input.cols());
      const int cout = c.encoder_channels[l];
      Matrix<S> d_y = d_x.cwiseProduct((output.array() > S(0)).template cast<S>().matrix());
      Matrix<S> col = im2col(input, sides[l], sides[l], 2);
      view(grads[conv_w_[l]], 9 * cin, cout).noalias() += col.transpose() * d_y;
      row_view(grads[conv_b_[l]]) += d_y.colwise().sum();
      if (l > 0) {
        Matrix<S> d_col(col.rows(), col.cols());
        d_col.noalias() = d_y * view(params_[conv_w_[l]], 9 * cin, cout).transpose();
        d_x = col2im(d_col, sides[l], sides[l], cin, 2);
      }
    }
  }
}

// --------------------------------------------------------------- tokenizer

template <typename S>
Matrix<S> Network<S>::tokenize(const SpatialFeatureSequence<S>& features) const {
  const ModelConfig& c = config_;
  if (features.values.rows() != c.token_count() || features.values.cols() != c.feature_dim())
    throw std::invalid_argument("feature sequence shape does not match model config");
  Matrix<S> tokens(features.values.rows(), c.token_dim);
  tokens.noalias() = features.values * view(params_[proj_w_], c.feature_dim(), c.token_dim);
  tokens += view(params_[pos_], c.token_count(), c.token_dim);
  return tokens;
}

template <typename S>
Matrix<S> Network<S>::tokenize_backward(const SpatialFeatureSequence<S>& features, const Matrix<S>& d_tokens,
                                        ParameterStore<S>& grads) const {
  const ModelConfig& c = config_;
  view(grads[proj_w_], c.feature_dim(), c.token_dim).noalias() += features.values.transpose() * d_tokens;
  view(grads[pos_], c.token_count(), c.token_dim) += d_tokens;
  Matrix<S> d_features(features.values.rows(), c.feature_dim());
  d_features.noalias() = d_tokens * view(params_[proj_w_], c.feature_dim(), c.token_dim).transpose();
  return d_features;
}

// ------------------------------------------------------------- transformer

template <typename S>
RowVector<S> Network<S>::transform(const Matrix<S>& tokens, TransformerTrace* trace) const {
  const ModelConfig& c = config_;
  const int d = c.token_dim;
  const int dh = d / c.heads;
  const int hidden = c.mlp_ratio * d;
  const Eigen::Index L = tokens.rows();
  if (L < 1 || tokens.cols() != d) throw std::invalid_argument("token sequence shape mismatch");
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  if (trace) {
    trace->blocks.clear();
    trace->token_count = static_cast<int>(L);
  }

  Matrix<S> x = tokens;
  for (const auto& bi : blocks_) {
    BlockTrace bt;
    layer_norm(x, params_[bi.ln1_g], params_[bi.ln1_b], bt.ln1_hat, bt.ln1_rstd, bt.ln1_out);
    bt.qkv.resize(L, 3 * d);
    bt.qkv.noalias() = bt.ln1_out * view(params_[bi.qkv_w], d, 3 * d);
    bt.qkv.rowwise() += row_view(params_[bi.qkv_b]);
    bt.attn_out.resize(L, d);
    for (int h = 0; h < c.heads; ++h) {
      Matrix<S> scores(L, L);
      scores.noalias() = bt.qkv.block(0, h * dh, L, dh) * bt.qkv.block(0, d + h * dh, L, dh).transpose();
      scores *= scale;
      softmax_rows(scores);
      bt.attn_out.block(0, h * dh, L, dh).noalias() = scores * bt.qkv.block(0, 2 * d + h * dh, L, dh);
      if (trace) bt.probs.push_back(std::move(scores));
    }
    Matrix<S> x_mid = x;
    x_mid.noalias() += bt.attn_out * view(params_[bi.proj_w], d, d);
    x_mid.rowwise() += row_view(params_[bi.proj_b]);

    layer_norm(x_mid, params_[bi.ln2_g], params_[bi.ln2_b], bt.ln2_hat, bt.ln2_rstd, bt.ln2_out);
    bt.fc1_pre.resize(L, hidden);
    bt.fc1_pre.noalias() = bt.ln2_out * view(params_[bi.fc1_w], d, hidden);
    bt.fc1_pre.rowwise() += row_view(params_[bi.fc1_b]);
    bt.fc1_act = bt.fc1_pre.unaryExpr([](S v) { return gelu(v); });
    Matrix<S> x_out = x_mid;
    x_out.noalias() += bt.fc1_act * view(params_[bi.fc2_w], hidden, d);
    x_out.rowwise() += row_view(params_[bi.fc2_b]);

    if (trace) {
      bt.x = std::move(x);
      bt.x_mid = std::move(x_mid);
      trace->blocks.push_back(std::move(bt));
    }
    x = std::move(x_out);
  }
  return x.colwise().mean();
}

template <typename S>
Matrix<S> Network<S>::transform_backward(const TransformerTrace& trace, const RowVector<S>& d_z,
                                         ParameterStore<S>& grads) const {
  const ModelConfig& c = config_;
  const int d = c.token_dim;
  const int dh = d / c.heads;
  const int hidden = c.mlp_ratio * d;
  const Eigen::Index L = trace.token_count;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  Matrix<S> d_x = (d_z / static_cast<S>(L)).replicate(L, 1);
  for (int k = static_cast<int>(blocks_.size()) - 1; k >= 0; --k) {
    const BlockIndex& bi = blocks_[k];
    const BlockTrace& bt = trace.blocks[k];

    // MLP residual.
    view(grads[bi.fc2_w], hidden, d).noalias() += bt.fc1_act.transpose() * d_x;
    row_view(grads[bi.fc2_b]) += d_x.colwise().sum();
    Matrix<S> d_act(L, hidden);
    d_act.noalias() = d_x * view(params_[bi.fc2_w], hidden, d).transpose();
    Matrix<S> d_pre = d_act.cwiseProduct(bt.fc1_pre.unaryExpr([](S v) { return gelu_grad(v); }));
    view(grads[bi.fc1_w], d, hidden).noalias() += bt.ln2_out.transpose() * d_pre;
    row_view(grads[bi.fc1_b]) += d_pre.colwise().sum();
    Matrix<S> d_ln2(L, d);
    d_ln2.noalias() = d_pre * view(params_[bi.fc1_w], d, hidden).transpose();
    d_x += layer_norm_backward(d_ln2, bt.ln2_hat, bt.ln2_rstd, params_[bi.ln2_g], grads[bi.ln2_g],
                               grads[bi.ln2_b]);

    // Attention residual.
    view(grads[bi.proj_w], d, d).noalias() += bt.attn_out.transpose() * d_x;
    row_view(grads[bi.proj_b]) += d_x.colwise().sum();
    Matrix<S> d_attn(L, d);
    d_attn.noalias() = d_x * view(params_[bi.proj_w], d, d).transpose();
    Matrix<S> d_qkv(L, 3 * d);
    for (int h = 0; h < c.heads; ++h) {
      const Matrix<S>& p = bt.probs[h];
      auto q = bt.qkv.block(0, h * dh, L, dh);
      auto kk = bt.qkv.block(0, d + h * dh, L, dh);
      auto v = bt.qkv.block(0, 2 * d + h * dh, L, dh);
      auto d_o = d_attn.block(0, h * dh, L, dh);
      Matrix<S> d_p(L, L);
      d_p.noalias() = d_o * v.transpose();
      d_qkv.block(0, 2 * d + h * dh, L, dh).noalias() = p.transpose() * d_o;
      RowVector<S> unused;
      Eigen::Matrix<S, Eigen::Dynamic, 1> dot = d_p.cwiseProduct(p).rowwise().sum();
      Matrix<S> d_s = p.cwiseProduct((d_p.colwise() - dot));
      d_s *= scale;
      d_qkv.block(0, h * dh, L, dh).noalias() = d_s * kk;
      d_qkv.block(0, d + h * dh, L, dh).noalias() = d_s.transpose() * q;
    }
    view(grads[bi.qkv_w], d, 3 * d).noalias() += bt.ln1_out.transpose() * d_qkv;
    row_view(grads[bi.qkv_b]) += d_qkv.colwise().sum();
    Matrix<S> d_ln1(L, d);
    d_ln1.noalias() = d_qkv * view(params_[bi.qkv_w], d, 3 * d).transpose();
    d_x += layer_norm_backward(d_ln1, bt.ln1_hat, bt.ln1_rstd, params_[bi.ln1_g], grads[bi.ln1_g],
                               grads[bi.ln1_b]);
  }
  return d_x;
}

// ------------------------------------------------------------------- heads

template <typename S>
RowVector<S> Network<S>::adapt_project(const RowVector<S>& z) const {
  const int d = config_.token_dim;
  if (z.size() != d) throw std::invalid_argument("representation dimension mismatch");
  RowVector<S> h = z * view(params_[ad_w_], d, d);
  h += row_view(params_[ad_b_]);
  return h;
}

template <typename S>
RowVector<S> Network<S>::adapt_backward(const RowVector<S>& z, const RowVector<S>& d_h,
                                        ParameterStore<S>& grads) const {
  const int d = config_.token_dim;
  view(grads[ad_w_], d, d).noalias() += z.transpose() * d_h;
  row_view(grads[ad_b_]) += d_h;
  return d_h * view(params_[ad_w_], d, d).transpose();
}

template <typename S>
RowVector<S> Network<S>::classify(const RowVector<S>& h) const {
  const int d = config_.token_dim;
  if (h.size() != d) throw std::invalid_argument("latent dimension mismatch");
  RowVector<S> logits = h * view(params_[cls_w_], d, config_.n_classes);
  logits += row_view(params_[cls_b_]);
  return logits;
}

template <typename S>
RowVector<S> Network<S>::classify_backward(const RowVector<S>& h, const RowVector<S>& d_logits,
                                           ParameterStore<S>& grads) const {
  const int d = config_.token_dim;
  view(grads[cls_w_], d, config_.n_classes).noalias() += h.transpose() * d_logits;
  row_view(grads[cls_b_]) += d_logits;
  return d_logits * view(params_[cls_w_], d, config_.n_classes).transpose();
}

template <typename S>
SpatialFeatureSequence<S> Network<S>::reconstruct(const RowVector<S>& h, ReconstructorTrace* trace) const {
  const ModelConfig& c = config_;
  const int d = c.token_dim;
  const int g = c.feature_grid;
  const int per_frame = c.tokens_per_frame();
  if (h.size() != d) throw std::invalid_argument("latent dimension mismatch");
  auto pos = view(params_[rec_pos_], c.token_count(), d);
  auto w = view(params_[rec_w_], 9 * d, c.feature_dim());

  SpatialFeatureSequence<S> out;
  out.frames = c.clip_length;
  out.grid = g;
  out.values.resize(c.token_count(), c.feature_dim());
  if (trace) trace->columns.clear();
  for (int f = 0; f < c.clip_length; ++f) {
    Matrix<S> tiled = pos.block(static_cast<Eigen::Index>(f) * per_frame, 0, per_frame, d);
    tiled.rowwise() += h;
    Matrix<S> col = im2col(tiled, g, g, 1);
    auto block = out.values.block(static_cast<Eigen::Index>(f) * per_frame, 0, per_frame, c.feature_dim());
    block.noalias() = col * w;
    block.rowwise() += row_view(params_[rec_b_]);
    if (trace) trace->columns.push_back(std::move(col));
  }
  return out;
}

template <typename S>
RowVector<S> Network<S>::reconstruct_backward(const ReconstructorTrace& trace, const Matrix<S>& d_output,
                                              ParameterStore<S>& grads) const {
  const ModelConfig& c = config_;
  const int d = c.token_dim;
  const int g = c.feature_grid;
  const int per_frame = c.tokens_per_frame();
  auto w = view(params_[rec_w_], 9 * d, c.feature_dim());
  auto d_w = view(grads[rec_w_], 9 * d, c.feature_dim());
  auto d_pos = view(grads[rec_pos_], c.token_count(), d);
  RowVector<S> d_h = RowVector<S>::Zero(d);
  for (int f = 0; f < c.clip_length; ++f) {
    auto d_block = d_output.block(static_cast<Eigen::Index>(f) * per_frame, 0, per_frame, c.feature_dim());
    d_w.noalias() += trace.columns[f].transpose() * d_block;
    row_view(grads[rec_b_]) += d_block.colwise().sum();
    Matrix<S> d_col(per_frame, 9 * d);
    d_col.noalias() = d_block * w.transpose();
    Matrix<S> d_tiled = col2im(d_col, g, g, d, 1);
    d_pos.block(static_cast<Eigen::Index>(f) * per_frame, 0, per_frame, d) += d_tiled;
    d_h += d_tiled.colwise().sum();
  }
  return d_h;
}

// ---------------------------------------------------------------- backbone

template <typename S>
typename Network<S>::BackboneTrace Network<S>::backbone(const FrameClip& clip, bool keep_trace) const {
  BackboneTrace t;
  t.features = encode_frames(clip, keep_trace ? &t.encoder : nullptr);
  t.z = transform(tokenize(t.features), keep_trace ? &t.transformer : nullptr);
  return t;
}

template <typename S>
Matrix<S> Network<S>::backbone_backward(const BackboneTrace& trace, const RowVector<S>& d_z,
                                        const Matrix<S>* d_features, ParameterStore<S>& grads,
                                        bool through_encoder) const {
  Matrix<S> d_tokens = transform_backward(trace.transformer, d_z, grads);
  Matrix<S> d_t = tokenize_backward(trace.features, d_tokens, grads);
  if (d_features) d_t += *d_features;
  if (through_encoder) encoder_backward(trace.encoder, d_t, grads);
  return d_t;
}

template class Network<float>;
template class Network<double>;

}  // namespace last
