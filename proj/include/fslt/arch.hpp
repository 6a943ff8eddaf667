#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fslt/tensor.hpp"

namespace fslt {

enum class LayerKind : std::uint8_t {
  dense = 0,
  conv2d = 1,
  relu = 2,
  maxpool2x2 = 3,
  avgpool_global = 4,
  batchnorm_nonaffine = 5,
};

std::string to_string(LayerKind kind);

/// One layer of a feed-forward network. Parameterized kinds (dense, conv2d)
/// carry no bias. Conv layers use stride 1 and "same" zero padding.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_features = 0;   // input channels (conv) or features (dense); channels for batchnorm
  std::size_t out_features = 0;  // output channels (conv) or features (dense)
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;

  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw);
  static LayerSpec relu();
  static LayerSpec maxpool();
  static LayerSpec avgpool();
  static LayerSpec batchnorm(std::size_t channels);

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
  /// C_in * k_h * k_w for conv, input features for dense.
  std::size_t fan_in() const;
  std::size_t fan_out() const;
  std::size_t param_count() const;
  /// (out, in) for dense; (out, in, kh, kw) for conv.
  Shape weight_shape() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  Shape input_shape;  // per sample: (C, H, W) or (F)
  std::size_t num_classes = 0;

  /// Throws ShapeError unless every layer composes and the output is (num_classes).
  void validate() const;
  /// Per-sample output shape of every layer.
  std::vector<Shape> output_shapes() const;
  /// Indices into `layers` of the parameterized layers, in order.
  std::vector<std::size_t> param_layers() const;
  std::vector<std::size_t> param_counts() const;
  std::size_t total_params() const;
  std::size_t batchnorm_count() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Dense ReLU network; batchnorm inserts a non-affine normalization before each hidden ReLU.
ArchSpec make_mlp(std::size_t input_features, const std::vector<std::size_t>& hidden, std::size_t num_classes,
                  bool batchnorm = false);

/// VGG-like ConvN (N in {2, 4, 6}): blocks of two 3x3 convs followed by 2x2 max pooling, then
/// dense 256, 256, num_classes. Channel widths 64, 128, 256 per block; all hidden widths are
/// scaled by width_multiplier (at least 1).
ArchSpec make_convnet(int conv_layers, const Shape& input_shape, std::size_t num_classes,
                      double width_multiplier = 1.0, bool batchnorm = false);

/// Builds an architecture by name: mlp, conv2, conv4, conv6.
ArchSpec make_arch(const std::string& name, const Shape& input_shape, std::size_t num_classes,
                   double width_multiplier = 1.0, bool batchnorm = false,
                   const std::vector<std::size_t>& mlp_hidden = {64, 64});

}  // namespace fslt
