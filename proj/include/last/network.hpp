#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "last/clip.hpp"
#include "last/model_config.hpp"
#include "last/parameters.hpp"

namespace last {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Per-frame local features T: rows are grid cells in (frame, y, x) order,
/// columns are the d_t feature channels.
template <typename S>
struct SpatialFeatureSequence {
  int frames = 0;
  int grid = 0;
  Matrix<S> values;

  int dim() const { return static_cast<int>(values.cols()); }
};

struct InitOptions {
  /// Start L_d as the identity map (h == z) instead of a random affine map.
  bool identity_adaptive = true;
};

/// The detector: CNN encoder, token projection, transformer, adaptive layer,
/// classifier and reconstructor. Parameters live in a ParameterStore so they
/// can be partitioned, frozen, serialized and cast to double for gradient checks.
///
/// Every differentiable stage has a forward that can record a trace and a
/// backward that accumulates parameter gradients into a store with the same
/// layout as `params()`.
template <typename S>
class Network {
 public:
  explicit Network(ModelConfig config);
  Network(ModelConfig config, ParameterStore<S> params);

  /// Tensor layout for `config`, all zeros.
  static ParameterStore<S> make_store(const ModelConfig& config);

  void initialize(std::uint64_t seed, InitOptions options = {});

  const ModelConfig& config() const { return config_; }
  ParameterStore<S>& params() { return params_; }
  const ParameterStore<S>& params() const { return params_; }

  // ---- traces -------------------------------------------------------------

  struct EncoderTrace {
    // [frame][layer] conv input activations (layer 0 is the image) and ReLU outputs.
    std::vector<std::vector<Matrix<S>>> inputs;
    std::vector<std::vector<Matrix<S>>> outputs;
  };

  struct BlockTrace {
    Matrix<S> x, ln1_hat, ln1_out, qkv, attn_out, x_mid, ln2_hat, ln2_out, fc1_pre, fc1_act;
    RowVector<S> ln1_rstd, ln2_rstd;  // stored as column-like row vectors of length L
    std::vector<Matrix<S>> probs;     // one L x L matrix per head
  };

  struct TransformerTrace {
    std::vector<BlockTrace> blocks;
    int token_count = 0;
  };

  /// Backbone pass of one clip: T, tokens and z, plus the traces needed to
  /// differentiate through them.
  struct BackboneTrace {
    EncoderTrace encoder;
    SpatialFeatureSequence<S> features;
    TransformerTrace transformer;
    RowVector<S> z;
  };

  struct ReconstructorTrace {
    std::vector<Matrix<S>> columns;  // im2col of the tiled latent per frame
  };

  // ---- forward ------------------------------------------------------------

  SpatialFeatureSequence<S> encode_frames(const FrameClip& clip, EncoderTrace* trace = nullptr) const;
  Matrix<S> tokenize(const SpatialFeatureSequence<S>& features) const;
  RowVector<S> transform(const Matrix<S>& tokens, TransformerTrace* trace = nullptr) const;
  RowVector<S> adapt_project(const RowVector<S>& z) const;
  RowVector<S> classify(const RowVector<S>& h) const;
  SpatialFeatureSequence<S> reconstruct(const RowVector<S>& h, ReconstructorTrace* trace = nullptr) const;

  /// encode_frames -> tokenize -> transform.
  BackboneTrace backbone(const FrameClip& clip, bool keep_trace) const;

  // ---- backward (accumulate into `grads`, return input gradient) ---------

  void encoder_backward(const EncoderTrace& trace, const Matrix<S>& d_features,
                        ParameterStore<S>& grads) const;
  Matrix<S> tokenize_backward(const SpatialFeatureSequence<S>& features, const Matrix<S>& d_tokens,
                              ParameterStore<S>& grads) const;
  Matrix<S> transform_backward(const TransformerTrace& trace, const RowVector<S>& d_z,
                               ParameterStore<S>& grads) const;
  RowVector<S> adapt_backward(const RowVector<S>& z, const RowVector<S>& d_h, ParameterStore<S>& grads) const;
  RowVector<S> classify_backward(const RowVector<S>& h, const RowVector<S>& d_logits,
                                 ParameterStore<S>& grads) const;
  RowVector<S> reconstruct_backward(const ReconstructorTrace& trace, const Matrix<S>& d_output,
                                    ParameterStore<S>& grads) const;

  /// Backbone backward from dL/dz plus an optional direct gradient on T.
  /// Returns dL/dT (the total gradient reaching the encoder output).
  Matrix<S> backbone_backward(const BackboneTrace& trace, const RowVector<S>& d_z,
                              const Matrix<S>* d_features, ParameterStore<S>& grads,
                              bool through_encoder = true) const;

 private:
  void index_parameters();

  ModelConfig config_;
  ParameterStore<S> params_;

  struct BlockIndex {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  std::size_t conv_w_[3]{}, conv_b_[3]{};
  std::size_t proj_w_{}, pos_{};
  std::vector<BlockIndex> blocks_;
  std::size_t rec_pos_{}, rec_w_{}, rec_b_{};
  std::size_t ad_w_{}, ad_b_{}, cls_w_{}, cls_b_{};
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace last
