#include "fslt/search.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

namespace fslt {

std::size_t TicketModel::required_active() const {
  return static_cast<std::size_t>(std::llround((1.0 - target_sparsity) * static_cast<double>(total_params())));
}

namespace {

double effective_scaling(double layer_sparsity) { return layer_sparsity < 1.0 ? layer_sparsity : 0.0; }

// Monotone map from float to uint32: a < b  <=>  key(a) < key(b).
std::uint32_t ordered_bits(float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  return (u & 0x80000000u) ? ~u : (u | 0x80000000u);
}

}  // namespace

TensorList regenerate_weights(const ArchSpec& arch, InitKind init, std::span<const double> scaling_sparsity,
                              std::uint64_t seed) {
  const auto params = arch.param_layers();
  if (scaling_sparsity.size() != params.size()) throw ShapeError("scaling sparsity needs one value per layer");
  TensorList weights;
  for (std::size_t l = 0; l < params.size(); ++l)
    weights.push_back(init_weights(arch.layers[params[l]], InitSpec{init, effective_scaling(scaling_sparsity[l])},
                                   StreamKey{seed, l, Purpose::weights}));
  return weights;
}

TicketModel make_ticket_model(const ArchSpec& arch, const FreezePlan& plan, double slt_sparsity, InitKind init,
                              std::uint64_t seed) {
  arch.validate();
  const auto counts = arch.param_counts();
  if (plan.layers.size() != counts.size()) throw PlanError("freeze plan does not match the architecture");
  for (std::size_t l = 0; l < counts.size(); ++l)
    if (plan.layers[l].size != counts[l]) throw PlanError("freeze plan layer " + std::to_string(l) + " size mismatch");
  if (!(slt_sparsity >= 0.0 && slt_sparsity < 1.0))
    throw WindowError("SLT sparsity must lie in [0, 1), got " + std::to_string(slt_sparsity));

  TicketModel model;
  model.arch = arch;
  model.seed = seed;
  model.init = init;
  model.target_sparsity = slt_sparsity;
  model.plan = plan;
  model.freeze = materialize_mask(plan, seed);
  model.scaling_sparsity.assign(counts.size(), slt_sparsity);
  model.weights = regenerate_weights(arch, init, model.scaling_sparsity, seed);
  const auto params = arch.param_layers();
  for (std::size_t l = 0; l < params.size(); ++l)
    model.scores.push_back(init_scores(arch.layers[params[l]], StreamKey{seed, l, Purpose::scores}));
  model.norm = NormState::init(arch);
  return model;
}

TensorList effective_mask(std::span<const Tensor> scores, const FreezeMask& freeze, double slt_sparsity) {
  if (scores.size() != freeze.layers.size()) throw ShapeError("scores and freeze mask disagree on layer count");
  std::size_t total = 0, locked = 0, free = 0;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    if (scores[l].numel() != freeze.layers[l].size()) throw ShapeError("scores and freeze mask disagree in layer " + std::to_string(l));
    total += scores[l].numel();
    for (auto s : freeze.layers[l]) {
      locked += s == FreezeState::locked ? 1 : 0;
      free += s == FreezeState::free ? 1 : 0;
    }
  }
  if (total >= (std::size_t{1} << 32)) throw ShapeError("global top-k supports fewer than 2^32 parameters");
  const auto active = static_cast<std::size_t>(std::llround((1.0 - slt_sparsity) * static_cast<double>(total)));
  if (active < locked || active - locked > free) {
    const double lo = static_cast<double>(total - free - locked) / static_cast<double>(total);
    const double hi = 1.0 - static_cast<double>(locked) / static_cast<double>(total);
    throw WindowError("SLT sparsity " + std::to_string(slt_sparsity) + " outside the searchable window [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  const std::size_t pick = active - locked;

  // key = (descending score, ascending global position)
  std::vector<std::uint64_t> keys;
  keys.reserve(free);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    const auto& states = freeze.layers[l];
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i] != FreezeState::free) continue;
      const float s = scores[l].data[i];
      if (!std::isfinite(s)) throw NumericError("non-finite score in layer " + std::to_string(l));
      keys.push_back((static_cast<std::uint64_t>(~ordered_bits(s)) << 32) | (offset + i));
    }
    offset += states.size();
  }
  if (pick < keys.size()) std::nth_element(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(pick), keys.end());

  TensorList mask;
  std::vector<std::size_t> starts;
  offset = 0;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    mask.emplace_back(scores[l].shape, 0.0f);
    starts.push_back(offset);
    for (std::size_t i = 0; i < freeze.layers[l].size(); ++i)
      if (freeze.layers[l][i] == FreezeState::locked) mask[l].data[i] = 1.0f;
    offset += freeze.layers[l].size();
  }
  for (std::size_t j = 0; j < pick; ++j) {
    const std::size_t pos = keys[j] & 0xFFFFFFFFu;
    const auto layer = static_cast<std::size_t>(std::upper_bound(starts.begin(), starts.end(), pos) - starts.begin()) - 1;
    mask[layer].data[pos - starts[layer]] = 1.0f;
  }
  return mask;
}

TensorList effective_mask(const TicketModel& model) {
  return effective_mask(model.scores, model.freeze, model.target_sparsity);
}

TensorList inference_mask(const TicketModel& model) {
  if (!model.supermask.empty()) return model.supermask;
  return effective_mask(model);
}

TensorList score_gradient(const TicketModel& model, std::span<const Tensor> grad_effective) {
  if (grad_effective.size() != model.weights.size()) throw ShapeError("score_gradient: layer count mismatch");
  TensorList out;
  for (std::size_t l = 0; l < grad_effective.size(); ++l) {
    const auto& g = grad_effective[l];
    const auto& w = model.weights[l];
    if (g.shape != w.shape) throw ShapeError("score_gradient: shape mismatch in layer " + std::to_string(l));
    Tensor gs(w.shape);
    const auto& states = model.freeze.layers[l];
    for (std::size_t i = 0; i < gs.numel(); ++i)
      if (states[i] == FreezeState::free) gs.data[i] = g.data[i] * w.data[i];
    out.push_back(std::move(gs));
  }
  return out;
}

void finalize_scaling(TicketModel& model) {
  const auto mask = inference_mask(model);
  std::vector<double> realized;
  for (const auto& m : mask) {
    std::size_t active = 0;
    for (float v : m.data) active += v != 0.0f ? 1 : 0;
    realized.push_back(1.0 - static_cast<double>(active) / static_cast<double>(m.numel()));
  }
  model.scaling_sparsity = realized;
  if (model.init == InitKind::signed_kaiming_constant)
    model.weights = regenerate_weights(model.arch, model.init, model.scaling_sparsity, model.seed);
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adamw"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd_momentum" || name == "sgd") return OptimizerKind::sgd_momentum;
  if (name == "adamw") return OptimizerKind::adamw;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

void SearchConfig::validate() const {
  if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (topk_interval < 1) throw std::invalid_argument("topk_interval must be at least 1");
  if (momentum < 0.0 || weight_decay < 0.0) throw std::invalid_argument("momentum and weight decay must be >= 0");
}

double cosine_lr(double lr0, std::size_t t, std::size_t total) {
  if (total == 0) return lr0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
}

ScoreOptimizer::ScoreOptimizer(const SearchConfig& config, std::span<const Tensor> scores) : config_(config) {
  for (const auto& s : scores) {
    first_.emplace_back(s.shape, 0.0f);
    if (config.optimizer == OptimizerKind::adamw) second_.emplace_back(s.shape, 0.0f);
  }
}

double ScoreOptimizer::step(TensorList& scores, std::span<const Tensor> grads, const FreezeMask& freeze, std::size_t t,
                            std::size_t total) {
  if (grads.size() != scores.size() || freeze.layers.size() != scores.size())
    throw ShapeError("optimizer step: layer count mismatch");
  const double lr = cosine_lr(config_.lr0, t, total);
  const auto lr_f = static_cast<float>(lr);
  const auto wd = static_cast<float>(config_.weight_decay);
  ++updates_;
  if (config_.optimizer == OptimizerKind::sgd_momentum) {
    const auto m = static_cast<float>(config_.momentum);
    for (std::size_t l = 0; l < scores.size(); ++l) {
      auto& s = scores[l].data;
      auto& v = first_[l].data;
      const auto& g = grads[l].data;
      const auto& states = freeze.layers[l];
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (states[i] != FreezeState::free) continue;
        v[i] = m * v[i] + g[i] + wd * s[i];
        s[i] -= lr_f * v[i];
      }
    }
    return lr;
  }
  const auto b1 = static_cast<float>(config_.beta1), b2 = static_cast<float>(config_.beta2);
  const auto eps = static_cast<float>(config_.adam_eps);
  const auto c1 = static_cast<float>(1.0 - std::pow(config_.beta1, static_cast<double>(updates_)));
  const auto c2 = static_cast<float>(1.0 - std::pow(config_.beta2, static_cast<double>(updates_)));
  for (std::size_t l = 0; l < scores.size(); ++l) {
    auto& s = scores[l].data;
    auto& m1 = first_[l].data;
    auto& m2 = second_[l].data;
    const auto& g = grads[l].data;
    const auto& states = freeze.layers[l];
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (states[i] != FreezeState::free) continue;
      m1[i] = b1 * m1[i] + (1.0f - b1) * g[i];
      m2[i] = b2 * m2[i] + (1.0f - b2) * g[i] * g[i];
      const float mhat = m1[i] / c1, vhat = m2[i] / c2;
      s[i] = s[i] - lr_f * (mhat / (std::sqrt(vhat) + eps)) - lr_f * wd * s[i];
    }
  }
  return lr;
}

double evaluate(const ArchSpec& arch, std::span<const Tensor> weights, std::span<const Tensor> mask,
                const NormState& norm, const LabeledSet& data, std::size_t batch_size) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    const auto batch = data.slice(begin, end);
    const auto logits = infer(arch, weights, mask, batch.inputs, norm);
    correct += static_cast<std::size_t>(std::llround(accuracy(logits, batch.labels) * static_cast<double>(end - begin)));
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double evaluate(const TicketModel& model, const LabeledSet& data, std::size_t batch_size) {
  return evaluate(model.arch, model.weights, inference_mask(model), model.norm, data, batch_size);
}

SearchResult search(TicketModel model, const SearchConfig& config, const LabeledSet& train, const LabeledSet& val,
                    const StepObserver& observer) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("search: training set is empty");
  if (val.empty()) throw std::invalid_argument("search: validation set is empty");
  if (model.scores.empty()) throw std::invalid_argument("search: model has no scores (inference-only ticket?)");

  const std::size_t n = train.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  ScoreOptimizer optimizer(config, model.scores);

  SearchResult result;
  result.best_val_acc = -1.0;
  TensorList best_scores;
  NormState best_norm;

  TensorList mask = effective_mask(model);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = partial_permutation(n, n, StreamKey{model.seed, epoch + 1, Purpose::data_split});
    double loss_sum = 0.0;
    double lr = config.lr0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
      if (step % config.topk_interval == 0) mask = effective_mask(model);
      const std::size_t begin = b * config.batch_size, end = std::min(n, begin + config.batch_size);
      const auto batch = train.gather(std::span(order).subspan(begin, end - begin));
      auto fwd = forward(model.arch, model.weights, mask, batch.inputs, Mode::train, model.norm);
      const auto loss = cross_entropy(fwd.logits, batch.labels);
      const auto grads = backward(fwd.cache, loss.grad_logits, false);
      const auto score_grads = score_gradient(model, grads.grad_weights);
      lr = optimizer.step(model.scores, score_grads, model.freeze, step, total_steps);
      loss_sum += loss.loss;
      if (observer) observer(StepInfo{epoch, step, &model, &mask});
    }
    const double val_acc = evaluate(model.arch, model.weights, effective_mask(model), model.norm, val);
    result.metrics.push_back({epoch, loss_sum / static_cast<double>(steps_per_epoch), val_acc, lr});
    if (val_acc > result.best_val_acc) {
      result.best_val_acc = val_acc;
      result.best_epoch = epoch;
      best_scores = model.scores;
      best_norm = model.norm;
    }
  }
  model.scores = std::move(best_scores);
  model.norm = std::move(best_norm);
  result.model = std::move(model);
  return result;
}

}  // namespace fslt
