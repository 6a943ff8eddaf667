#include "fslt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fslt {

namespace {

// Fixed-order dot product with eight partial sums; the order never depends on input values, so
// results are bit-stable across runs.
float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct ConvGeometry {
  std::size_t cin, cout, h, w, kh, kw, ph, pw, ho, wo;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t p() const { return ho * wo; }
};

ConvGeometry conv_geometry(const LayerSpec& spec, const Shape& in) {
  ConvGeometry g{};
  g.cin = spec.in_features;
  g.cout = spec.out_features;
  g.h = in[2];
  g.w = in[3];
  g.kh = spec.kernel_h;
  g.kw = spec.kernel_w;
  g.ph = (g.kh - 1) / 2;
  g.pw = (g.kw - 1) / 2;
  g.ho = g.h + 2 * g.ph - g.kh + 1;
  g.wo = g.w + 2 * g.pw - g.kw + 1;
  return g;
}

// col[k, p] with k = (c, i, j) and p = (y, x)
void im2col(const ConvGeometry& g, const float* image, float* col) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j, ++row) {
        float* dst = col + row * g.p();
        for (std::size_t y = 0; y < g.ho; ++y) {
          const long sy = static_cast<long>(y + i) - static_cast<long>(g.ph);
          for (std::size_t x = 0; x < g.wo; ++x) {
            const long sx = static_cast<long>(x + j) - static_cast<long>(g.pw);
            const bool inside = sy >= 0 && sy < static_cast<long>(g.h) && sx >= 0 && sx < static_cast<long>(g.w);
            dst[y * g.wo + x] = inside ? image[(c * g.h + sy) * g.w + sx] : 0.0f;
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const float* col, float* image) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j, ++row) {
        const float* src = col + row * g.p();
        for (std::size_t y = 0; y < g.ho; ++y) {
          const long sy = static_cast<long>(y + i) - static_cast<long>(g.ph);
          if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
          for (std::size_t x = 0; x < g.wo; ++x) {
            const long sx = static_cast<long>(x + j) - static_cast<long>(g.pw);
            if (sx < 0 || sx >= static_cast<long>(g.w)) continue;
            image[(c * g.h + sy) * g.w + sx] += src[y * g.wo + x];
          }
        }
      }
}

Shape batch_shape(std::size_t n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

// Spatial extent per channel: 1 for (N, C), H*W for (N, C, H, W).
std::size_t spatial(const Shape& s) {
  std::size_t v = 1;
  for (std::size_t i = 2; i < s.size(); ++i) v *= s[i];
  return v;
}

Tensor dense_forward(const LayerSpec& spec, const Tensor& x, const Tensor& w) {
  const std::size_t n = x.dim(0), in = spec.in_features, out = spec.out_features;
  Tensor y({n, out});
  for (std::size_t b = 0; b < n; ++b) {
    const float* xr = x.data.data() + b * in;
    for (std::size_t o = 0; o < out; ++o) y.data[b * out + o] = dot(xr, w.data.data() + o * in, in);
  }
  return y;
}

Tensor conv_forward(const LayerSpec& spec, const Tensor& x, const Tensor& w) {
  const auto g = conv_geometry(spec, x.shape);
  const std::size_t n = x.dim(0);
  Tensor y({n, g.cout, g.ho, g.wo});
  std::vector<float> col(g.k() * g.p());
  for (std::size_t b = 0; b < n; ++b) {
    im2col(g, x.data.data() + b * g.cin * g.h * g.w, col.data());
    float* yb = y.data.data() + b * g.cout * g.p();
    for (std::size_t co = 0; co < g.cout; ++co) {
      float* yr = yb + co * g.p();
      const float* wr = w.data.data() + co * g.k();
      for (std::size_t k = 0; k < g.k(); ++k)
        if (wr[k] != 0.0f) axpy(wr[k], col.data() + k * g.p(), yr, g.p());
    }
  }
  return y;
}

Tensor maxpool_forward(const Tensor& x, std::vector<std::uint32_t>* argmax) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor y({n, c, ho, wo});
  if (argmax) argmax->resize(y.numel());
  std::size_t out = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const float* src = x.data.data() + plane * h * w;
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j, ++out) {
        std::size_t best = (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (2 * i + di) * w + 2 * j + dj;
            if (src[idx] > src[best]) best = idx;
          }
        y.data[out] = src[best];
        if (argmax) (*argmax)[out] = static_cast<std::uint32_t>(plane * h * w + best);
      }
  }
  return y;
}

Tensor avgpool_forward(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    float s = 0.0f;
    const float* src = x.data.data() + plane * hw;
    for (std::size_t i = 0; i < hw; ++i) s += src[i];
    y.data[plane] = s / static_cast<float>(hw);
  }
  return y;
}

Tensor batchnorm_forward(const Tensor& x, Mode mode, std::size_t bn_index, const NormState& read, NormState* update,
                         LayerCache* cache) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = spatial(x.shape);
  const std::size_t count = n * hw;
  const auto& stats = read.layers.at(bn_index);
  if (stats.mean.size() != c) throw ShapeError("batchnorm " + std::to_string(bn_index) + " statistics size mismatch");
  Tensor y(x.shape);
  std::vector<float> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    float mean = stats.mean[ch], var = stats.var[ch];
    if (mode == Mode::train) {
      float s = 0.0f;
      for (std::size_t b = 0; b < n; ++b) {
        const float* src = x.data.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
      }
      mean = s / static_cast<float>(count);
      float sq = 0.0f;
      for (std::size_t b = 0; b < n; ++b) {
        const float* src = x.data.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (src[i] - mean) * (src[i] - mean);
      }
      var = sq / static_cast<float>(count);
      if (update) {
        auto& run = update->layers[bn_index];
        const float unbiased = count > 1 ? sq / static_cast<float>(count - 1) : var;
        run.mean[ch] = read.momentum * run.mean[ch] + (1.0f - read.momentum) * mean;
        run.var[ch] = read.momentum * run.var[ch] + (1.0f - read.momentum) * unbiased;
      }
    }
    inv_std[ch] = 1.0f / std::sqrt(var + read.eps);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) y.data[off + i] = (x.data[off + i] - mean) * inv_std[ch];
    }
  }
  if (cache) {
    cache->inv_std = std::move(inv_std);
    cache->normalized = y;
  }
  return y;
}

Tensor forward_impl(const ArchSpec& arch, std::span<const Tensor> weights, std::span<const Tensor> masks,
                    const Tensor& input, Mode mode, const NormState& read, NormState* update, ForwardCache* cache) {
  const auto params = arch.param_layers();
  if (weights.size() != params.size())
    throw ShapeError("expected " + std::to_string(params.size()) + " weight tensors, got " +
                     std::to_string(weights.size()));
  if (!masks.empty() && masks.size() != params.size())
    throw ShapeError("expected " + std::to_string(params.size()) + " mask tensors, got " + std::to_string(masks.size()));
  if (read.layers.size() != arch.batchnorm_count())
    throw ShapeError("norm state has " + std::to_string(read.layers.size()) + " layers, architecture has " +
                     std::to_string(arch.batchnorm_count()));
  if (input.rank() < 2 || Shape(input.shape.begin() + 1, input.shape.end()) != arch.input_shape)
    throw ShapeError("input shape " + shape_str(input.shape) + " does not match (N, " +
                     shape_str(arch.input_shape).substr(1));

  const std::size_t n = input.dim(0);
  const auto out_shapes = arch.output_shapes();
  if (cache) {
    cache->layers = arch.layers;
    cache->mode = mode;
    cache->entries.assign(arch.layers.size(), {});
  }

  Tensor cur = input;
  std::size_t param_idx = 0, bn_idx = 0;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const auto& spec = arch.layers[l];
    LayerCache* entry = cache ? &cache->entries[l] : nullptr;
    if (entry) entry->input_shape = cur.shape;
    Tensor next;
    switch (spec.kind) {
      case LayerKind::dense:
      case LayerKind::conv2d: {
        const Tensor& w = weights[param_idx];
        if (w.shape != spec.weight_shape())
          throw ShapeError("layer " + std::to_string(l) + ": weight shape " + shape_str(w.shape) + " expected " +
                           shape_str(spec.weight_shape()));
        Tensor eff = w;
        if (!masks.empty()) {
          const Tensor& m = masks[param_idx];
          if (m.shape != w.shape)
            throw ShapeError("layer " + std::to_string(l) + ": mask shape " + shape_str(m.shape) +
                             " does not match weight shape " + shape_str(w.shape));
          for (std::size_t i = 0; i < eff.numel(); ++i) eff.data[i] *= m.data[i];
        }
        if (spec.kind == LayerKind::dense) {
          Tensor flat({n, spec.in_features}, std::move(cur.data));
          next = dense_forward(spec, flat, eff);
          if (entry) entry->input = std::move(flat);
        } else {
          next = conv_forward(spec, cur, eff);
          if (entry) entry->input = std::move(cur);
        }
        if (entry) entry->effective_weight = std::move(eff);
        ++param_idx;
        break;
      }
      case LayerKind::relu:
        next = cur;
        for (auto& v : next.data) v = v > 0.0f ? v : 0.0f;
        if (entry) entry->input = std::move(cur);
        break;
      case LayerKind::maxpool2x2:
        next = maxpool_forward(cur, entry ? &entry->argmax : nullptr);
        break;
      case LayerKind::avgpool_global:
        next = avgpool_forward(cur);
        break;
      case LayerKind::batchnorm_nonaffine:
        next = batchnorm_forward(cur, mode, bn_idx, read, update, entry);
        ++bn_idx;
        break;
    }
    if (next.shape != batch_shape(n, out_shapes[l]))
      throw ShapeError("layer " + std::to_string(l) + " produced " + shape_str(next.shape));
    if (!next.all_finite())
      throw NumericError("non-finite activation at layer " + std::to_string(l) + " (" + to_string(spec.kind) + ")");
    cur = std::move(next);
  }
  if (cache) cache->output_shape = cur.shape;
  return cur;
}

}  // namespace

NormState NormState::init(const ArchSpec& arch) {
  NormState state;
  for (const auto& spec : arch.layers)
    if (spec.kind == LayerKind::batchnorm_nonaffine)
      state.layers.push_back({std::vector<float>(spec.in_features, 0.0f), std::vector<float>(spec.in_features, 1.0f)});
  return state;
}

std::size_t NormState::statistic_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.mean.size() + l.var.size();
  return n;
}

ForwardResult forward(const ArchSpec& arch, std::span<const Tensor> weights, std::span<const Tensor> masks,
                      const Tensor& input, Mode mode, NormState& norm) {
  ForwardResult result;
  result.logits = forward_impl(arch, weights, masks, input, mode, norm, mode == Mode::train ? &norm : nullptr,
                               &result.cache);
  return result;
}

Tensor infer(const ArchSpec& arch, std::span<const Tensor> weights, std::span<const Tensor> masks,
             const Tensor& input, const NormState& norm) {
  return forward_impl(arch, weights, masks, input, Mode::eval, norm, nullptr, nullptr);
}

BackwardResult backward(const ForwardCache& cache, const Tensor& grad_logits, bool need_input_grad) {
  if (cache.entries.size() != cache.layers.size() || cache.layers.empty())
    throw ShapeError("backward: cache does not come from a forward pass");
  if (grad_logits.shape != cache.output_shape)
    throw ShapeError("backward: gradient shape " + shape_str(grad_logits.shape) + " does not match output " +
                     shape_str(cache.output_shape));

  std::size_t param_count = 0;
  for (const auto& spec : cache.layers) param_count += spec.has_params() ? 1 : 0;
  BackwardResult result;
  result.grad_weights.resize(param_count);

  Tensor grad = grad_logits;
  std::size_t param_idx = param_count;
  for (std::size_t li = cache.layers.size(); li-- > 0;) {
    const auto& spec = cache.layers[li];
    const auto& entry = cache.entries[li];
    const bool need_grad = need_input_grad || li > 0;
    const std::size_t n = grad.dim(0);
    Tensor next;
    switch (spec.kind) {
      case LayerKind::dense: {
        --param_idx;
        const std::size_t in = spec.in_features, out = spec.out_features;
        const Tensor& x = entry.input;
        const Tensor& w = entry.effective_weight;
        Tensor gw(spec.weight_shape());
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t o = 0; o < out; ++o) {
            const float g = grad.data[b * out + o];
            if (g != 0.0f) axpy(g, x.data.data() + b * in, gw.data.data() + o * in, in);
          }
        if (need_grad) {
          next = Tensor(entry.input_shape);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t o = 0; o < out; ++o) {
              const float g = grad.data[b * out + o];
              if (g != 0.0f) axpy(g, w.data.data() + o * in, next.data.data() + b * in, in);
            }
        }
        result.grad_weights[param_idx] = std::move(gw);
        break;
      }
      case LayerKind::conv2d: {
        --param_idx;
        const Tensor& x = entry.input;
        const Tensor& w = entry.effective_weight;
        const auto g = conv_geometry(spec, x.shape);
        Tensor gw(spec.weight_shape());
        if (need_grad) next = Tensor(x.shape);
        std::vector<float> col(g.k() * g.p()), gcol;
        if (need_grad) gcol.resize(g.k() * g.p());
        for (std::size_t b = 0; b < n; ++b) {
          im2col(g, x.data.data() + b * g.cin * g.h * g.w, col.data());
          const float* gb = grad.data.data() + b * g.cout * g.p();
          for (std::size_t co = 0; co < g.cout; ++co) {
            const float* gr = gb + co * g.p();
            float* gwr = gw.data.data() + co * g.k();
            for (std::size_t k = 0; k < g.k(); ++k) gwr[k] += dot(gr, col.data() + k * g.p(), g.p());
          }
          if (need_grad) {
            std::fill(gcol.begin(), gcol.end(), 0.0f);
            for (std::size_t co = 0; co < g.cout; ++co) {
              const float* gr = gb + co * g.p();
              const float* wr = w.data.data() + co * g.k();
              for (std::size_t k = 0; k < g.k(); ++k)
                if (wr[k] != 0.0f) axpy(wr[k], gr, gcol.data() + k * g.p(), g.p());
            }
            col2im_add(g, gcol.data(), next.data.data() + b * g.cin * g.h * g.w);
          }
        }
        result.grad_weights[param_idx] = std::move(gw);
        break;
      }
      case LayerKind::relu:
        if (need_grad) {
          next = std::move(grad);
          for (std::size_t i = 0; i < next.numel(); ++i)
            if (!(entry.input.data[i] > 0.0f)) next.data[i] = 0.0f;
        }
        break;
      case LayerKind::maxpool2x2:
        if (need_grad) {
          next = Tensor(entry.input_shape);
          for (std::size_t i = 0; i < grad.numel(); ++i) next.data[entry.argmax[i]] += grad.data[i];
        }
        break;
      case LayerKind::avgpool_global:
        if (need_grad) {
          next = Tensor(entry.input_shape);
          const std::size_t hw = entry.input_shape[2] * entry.input_shape[3];
          for (std::size_t plane = 0; plane < grad.numel(); ++plane) {
            const float g = grad.data[plane] / static_cast<float>(hw);
            std::fill_n(next.data.data() + plane * hw, hw, g);
          }
        }
        break;
      case LayerKind::batchnorm_nonaffine:
        if (need_grad) {
          const std::size_t c = grad.dim(1), hw = spatial(grad.shape);
          const float count = static_cast<float>(n * hw);
          next = Tensor(grad.shape);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const float inv_std = entry.inv_std[ch];
            if (cache.mode == Mode::eval) {
              for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) next.data[off + i] = grad.data[off + i] * inv_std;
              }
              continue;
            }
            float sum_g = 0.0f, sum_gx = 0.0f;
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) {
                sum_g += grad.data[off + i];
                sum_gx += grad.data[off + i] * entry.normalized.data[off + i];
              }
            }
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i)
                next.data[off + i] = inv_std / count *
                                     (count * grad.data[off + i] - sum_g - entry.normalized.data[off + i] * sum_gx);
            }
          }
        }
        break;
    }
    if (need_grad) {
      if (!next.all_finite()) throw NumericError("non-finite gradient at layer " + std::to_string(li));
      grad = std::move(next);
    }
  }
  if (need_input_grad) result.grad_input = std::move(grad);
  return result;
}

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects (N, C) logits, got " + shape_str(logits.shape));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(n));
  LossResult result;
  result.grad_logits = Tensor(logits.shape);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= c)
      throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    const float* row = logits.data.data() + b * c;
    const float mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double log_z = std::log(z) + mx;
    total += log_z - row[label];
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(static_cast<double>(row[j]) - log_z);
      result.grad_logits.data[b * c + j] =
          static_cast<float>((p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  result.loss = total / static_cast<double>(n);
  return result;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (n == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const float* row = logits.data.data() + b * c;
    const auto pred = static_cast<int>(std::max_element(row, row + c) - row);
    correct += pred == labels[b] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

TensorList zeros_like_params(const ArchSpec& arch, float fill) {
  TensorList out;
  for (const auto& spec : arch.layers)
    if (spec.has_params()) out.emplace_back(spec.weight_shape(), fill);
  return out;
}

}  // namespace fslt
