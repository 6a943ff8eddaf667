#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fslt/arch.hpp"
#include "fslt/tensor.hpp"

namespace fslt {

enum class Mode { train, eval };

/// Running statistics of one non-affine batchnorm layer.
struct BatchNormStats {
  std::vector<float> mean;
  std::vector<float> var;

  friend bool operator==(const BatchNormStats&, const BatchNormStats&) = default;
};

/// Running statistics for every batchnorm layer of an architecture, in layer order.
struct NormState {
  std::vector<BatchNormStats> layers;
  float momentum = 0.9f;  // weight kept on the old running value
  float eps = 1e-5f;

  /// mean 0 / var 1 for every batchnorm layer of `arch`.
  static NormState init(const ArchSpec& arch);
  std::size_t statistic_count() const;

  friend bool operator==(const NormState&, const NormState&) = default;
};

struct LayerCache {
  Shape input_shape;
  Tensor input;                     // dense, conv, relu
  Tensor effective_weight;          // parameterized layers
  std::vector<float> inv_std;       // batchnorm
  Tensor normalized;                // batchnorm
  std::vector<std::uint32_t> argmax;  // maxpool
};

/// Everything backward() needs from a forward pass.
struct ForwardCache {
  std::vector<LayerSpec> layers;
  Mode mode = Mode::eval;
  Shape output_shape;
  std::vector<LayerCache> entries;
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

struct BackwardResult {
  /// d loss / d (w * m) per parameterized layer, every position.
  TensorList grad_weights;
  Tensor grad_input;
};

/// Runs the network on a batch (leading axis is the batch). The effective weight of each
/// parameterized layer is weights[l] * masks[l]; an empty `masks` means all-ones. In train mode
/// batchnorm normalizes with batch statistics and updates `norm`; in eval mode `norm` is only read.
ForwardResult forward(const ArchSpec& arch, std::span<const Tensor> weights, std::span<const Tensor> masks,
                      const Tensor& input, Mode mode, NormState& norm);

/// Eval-mode forward without keeping a cache.
Tensor infer(const ArchSpec& arch, std::span<const Tensor> weights, std::span<const Tensor> masks,
             const Tensor& input, const NormState& norm);

BackwardResult backward(const ForwardCache& cache, const Tensor& grad_logits, bool need_input_grad = true);

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
LossResult cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

/// Allocates one zero tensor per parameterized layer with the layer's weight shape.
TensorList zeros_like_params(const ArchSpec& arch, float fill = 0.0f);

}  // namespace fslt
