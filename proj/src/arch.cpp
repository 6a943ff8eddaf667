#include "fslt/arch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fslt {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::avgpool_global: return "avgpool_global";
    case LayerKind::batchnorm_nonaffine: return "batchnorm_nonaffine";
  }
  return "unknown";
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0, 0}; }
LayerSpec LayerSpec::conv(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw) {
  return {LayerKind::conv2d, in, out, kh, kw};
}
LayerSpec LayerSpec::relu() { return {LayerKind::relu, 0, 0, 0, 0}; }
LayerSpec LayerSpec::maxpool() { return {LayerKind::maxpool2x2, 0, 0, 0, 0}; }
LayerSpec LayerSpec::avgpool() { return {LayerKind::avgpool_global, 0, 0, 0, 0}; }
LayerSpec LayerSpec::batchnorm(std::size_t channels) {
  return {LayerKind::batchnorm_nonaffine, channels, channels, 0, 0};
}

std::size_t LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::dense: return in_features;
    case LayerKind::conv2d: return in_features * kernel_h * kernel_w;
    default: return 0;
  }
}

std::size_t LayerSpec::fan_out() const {
  switch (kind) {
    case LayerKind::dense: return out_features;
    case LayerKind::conv2d: return out_features * kernel_h * kernel_w;
    default: return 0;
  }
}

std::size_t LayerSpec::param_count() const { return has_params() ? fan_in() * out_features : 0; }

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::dense) return {out_features, in_features};
  if (kind == LayerKind::conv2d) return {out_features, in_features, kernel_h, kernel_w};
  throw ShapeError(to_string(kind) + " layer has no weights");
}

std::vector<Shape> ArchSpec::output_shapes() const {
  if (input_shape.empty()) throw ShapeError(name + ": empty input shape");
  std::vector<Shape> out;
  Shape cur = input_shape;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& spec = layers[l];
    auto fail = [&](const std::string& what) {
      throw ShapeError(name + ": layer " + std::to_string(l) + " (" + to_string(spec.kind) + ") " + what +
                       ", input " + shape_str(cur));
    };
    switch (spec.kind) {
      case LayerKind::dense:
        if (shape_numel(cur) != spec.in_features) fail("expects " + std::to_string(spec.in_features) + " inputs");
        if (spec.out_features == 0) fail("has zero outputs");
        cur = {spec.out_features};
        break;
      case LayerKind::conv2d:
        if (cur.size() != 3 || cur[0] != spec.in_features) fail("expects (" + std::to_string(spec.in_features) + ", H, W)");
        if (spec.kernel_h < 1 || spec.kernel_w < 1) fail("kernel extents must be >= 1");
        if (spec.out_features == 0) fail("has zero outputs");
        {
          // "same" padding of (k - 1) / 2; even kernels shrink the plane by one.
          const std::size_t ph = (spec.kernel_h - 1) / 2, pw = (spec.kernel_w - 1) / 2;
          if (cur[1] + 2 * ph < spec.kernel_h || cur[2] + 2 * pw < spec.kernel_w) fail("kernel larger than input");
          cur = {spec.out_features, cur[1] + 2 * ph - spec.kernel_h + 1, cur[2] + 2 * pw - spec.kernel_w + 1};
        }
        break;
      case LayerKind::relu:
        break;
      case LayerKind::maxpool2x2:
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) fail("needs a (C, H, W) input with H, W >= 2");
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::avgpool_global:
        if (cur.size() != 3) fail("needs a (C, H, W) input");
        cur = {cur[0]};
        break;
      case LayerKind::batchnorm_nonaffine:
        if (cur[0] != spec.in_features) fail("channel count mismatch");
        break;
    }
    out.push_back(cur);
  }
  return out;
}

void ArchSpec::validate() const {
  auto shapes = output_shapes();
  if (param_layers().empty()) throw ShapeError(name + ": no parameterized layers");
  const Shape& last = shapes.empty() ? input_shape : shapes.back();
  if (last.size() != 1 || last[0] != num_classes)
    throw ShapeError(name + ": output shape " + shape_str(last) + " != (" + std::to_string(num_classes) + ")");
}

std::vector<std::size_t> ArchSpec::param_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].has_params()) idx.push_back(l);
  return idx;
}

std::vector<std::size_t> ArchSpec::param_counts() const {
  std::vector<std::size_t> counts;
  for (const auto& spec : layers)
    if (spec.has_params()) counts.push_back(spec.param_count());
  return counts;
}

std::size_t ArchSpec::total_params() const {
  auto counts = param_counts();
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t ArchSpec::batchnorm_count() const {
  return static_cast<std::size_t>(std::count_if(layers.begin(), layers.end(), [](const LayerSpec& s) {
    return s.kind == LayerKind::batchnorm_nonaffine;
  }));
}

ArchSpec make_mlp(std::size_t input_features, const std::vector<std::size_t>& hidden, std::size_t num_classes,
                  bool batchnorm) {
  ArchSpec arch;
  arch.name = "mlp";
  arch.input_shape = {input_features};
  arch.num_classes = num_classes;
  std::size_t prev = input_features;
  for (auto width : hidden) {
    arch.layers.push_back(LayerSpec::dense(prev, width));
    if (batchnorm) arch.layers.push_back(LayerSpec::batchnorm(width));
    arch.layers.push_back(LayerSpec::relu());
    prev = width;
  }
  arch.layers.push_back(LayerSpec::dense(prev, num_classes));
  arch.validate();
  return arch;
}

namespace {

std::size_t scaled(std::size_t width, double multiplier) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(width) * multiplier)));
}

}  // namespace

ArchSpec make_convnet(int conv_layers, const Shape& input_shape, std::size_t num_classes, double width_multiplier,
                      bool batchnorm) {
  if (conv_layers != 2 && conv_layers != 4 && conv_layers != 6)
    throw ShapeError("convnet depth must be 2, 4 or 6, got " + std::to_string(conv_layers));
  if (input_shape.size() != 3) throw ShapeError("convnet needs a (C, H, W) input shape");
  if (!(width_multiplier > 0.0)) throw ShapeError("width multiplier must be positive");

  ArchSpec arch;
  arch.name = "conv" + std::to_string(conv_layers);
  arch.input_shape = input_shape;
  arch.num_classes = num_classes;

  const std::size_t block_widths[] = {64, 128, 256};
  std::size_t channels = input_shape[0];
  std::size_t h = input_shape[1], w = input_shape[2];
  for (int block = 0; block < conv_layers / 2; ++block) {
    const std::size_t width = scaled(block_widths[block], width_multiplier);
    for (int i = 0; i < 2; ++i) {
      arch.layers.push_back(LayerSpec::conv(channels, width, 3, 3));
      if (batchnorm) arch.layers.push_back(LayerSpec::batchnorm(width));
      arch.layers.push_back(LayerSpec::relu());
      channels = width;
    }
    arch.layers.push_back(LayerSpec::maxpool());
    h /= 2;
    w /= 2;
  }
  std::size_t features = channels * h * w;
  for (int i = 0; i < 2; ++i) {
    const std::size_t width = scaled(256, width_multiplier);
    arch.layers.push_back(LayerSpec::dense(features, width));
    if (batchnorm) arch.layers.push_back(LayerSpec::batchnorm(width));
    arch.layers.push_back(LayerSpec::relu());
    features = width;
  }
  arch.layers.push_back(LayerSpec::dense(features, num_classes));
  arch.validate();
  return arch;
}

ArchSpec make_arch(const std::string& name, const Shape& input_shape, std::size_t num_classes,
                   double width_multiplier, bool batchnorm, const std::vector<std::size_t>& mlp_hidden) {
  if (name == "mlp") {
    std::vector<std::size_t> hidden;
    for (auto h : mlp_hidden) hidden.push_back(scaled(h, width_multiplier));
    auto arch = make_mlp(shape_numel(input_shape), hidden, num_classes, batchnorm);
    arch.input_shape = input_shape;
    arch.validate();
    return arch;
  }
  if (name == "conv2") return make_convnet(2, input_shape, num_classes, width_multiplier, batchnorm);
  if (name == "conv4") return make_convnet(4, input_shape, num_classes, width_multiplier, batchnorm);
  if (name == "conv6") return make_convnet(6, input_shape, num_classes, width_multiplier, batchnorm);
  throw ShapeError("unknown architecture '" + name + "'");
}

}  // namespace fslt
