#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fslt/arch.hpp"
#include "fslt/data.hpp"
#include "fslt/freezing.hpp"
#include "fslt/nn.hpp"
#include "fslt/rng.hpp"

namespace fslt {

/// The requested sparsity is outside the window [P_r, 1 - L_r] the freeze mask allows.
class WindowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A randomly weighted, partially frozen network plus the edge-popup search state.
struct TicketModel {
  ArchSpec arch;
  std::uint64_t seed = 0;
  InitKind init = InitKind::kaiming_uniform;
  double target_sparsity = 0.5;
  FreezePlan plan;
  FreezeMask freeze;
  /// Per-layer sparsity k_l the SKC magnitude was scaled with (unused for other inits).
  std::vector<double> scaling_sparsity;
  TensorList weights;
  TensorList scores;
  NormState norm;
  /// Fixed binary mask for inference-only models (set by unpack; scores are then empty).
  TensorList supermask;

  std::size_t total_params() const { return plan.total_params(); }
  /// round((1 - k) N)
  std::size_t required_active() const;
};

/// Seeds everything from `seed`: weights from Purpose::weights, scores from Purpose::scores,
/// freeze mask from Purpose::prune_mask. SKC weights use the global target k for every layer
/// until finalize_scaling() is called.
TicketModel make_ticket_model(const ArchSpec& arch, const FreezePlan& plan, double slt_sparsity, InitKind init,
                              std::uint64_t seed);

/// Weights of every layer regenerated from (seed, init, per-layer scaling sparsity).
TensorList regenerate_weights(const ArchSpec& arch, InitKind init, std::span<const double> scaling_sparsity,
                              std::uint64_t seed);

/// Global top-k supermask: every LOCKED position plus the highest-scored FREE positions across
/// all layers, so that exactly round((1 - k) N) positions are active. Ties go to the lower layer,
/// then the lower flat index. Throws WindowError when the FREE region cannot supply the count.
TensorList effective_mask(std::span<const Tensor> scores, const FreezeMask& freeze, double slt_sparsity);
TensorList effective_mask(const TicketModel& model);

/// The stored supermask for unpacked models, otherwise effective_mask(model).
TensorList inference_mask(const TicketModel& model);

/// Straight-through score gradient: grad_effective * w at FREE positions, 0 elsewhere.
TensorList score_gradient(const TicketModel& model, std::span<const Tensor> grad_effective);

/// Rescales SKC weights with the realized per-layer sparsity of the current mask. Predictions are
/// unchanged for ReLU networks without biases; call once after search, before packing.
void finalize_scaling(TicketModel& model);

enum class OptimizerKind : std::uint8_t { sgd_momentum = 0, adamw = 1 };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct SearchConfig {
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::size_t topk_interval = 1;  // recompute the global top-k every this many steps
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

/// lr0 * (1 + cos(pi t / T)) / 2
double cosine_lr(double lr0, std::size_t t, std::size_t total);

/// Score optimizer. Updates only FREE positions; weight decay acts on the scores.
///   sgd_momentum: v = m v + g + wd s;  s -= lr v
///   adamw:        Adam moments with bias correction;  s -= lr (m_hat / (sqrt(v_hat) + eps)) + lr wd s
class ScoreOptimizer {
 public:
  ScoreOptimizer(const SearchConfig& config, std::span<const Tensor> scores);

  /// One update at schedule position t of total steps T (cosine decay); returns the lr used.
  double step(TensorList& scores, std::span<const Tensor> grads, const FreezeMask& freeze, std::size_t t,
              std::size_t total);

 private:
  SearchConfig config_;
  TensorList first_;
  TensorList second_;
  std::size_t updates_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step index
  const TicketModel* model = nullptr;
  const TensorList* mask = nullptr;  // mask used for this step's forward pass
};

using StepObserver = std::function<void(const StepInfo&)>;

struct SearchResult {
  TicketModel model;  // state with the best validation accuracy
  std::vector<EpochMetrics> metrics;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
};

/// Minibatch edge-popup search. Epoch e shuffles with StreamKey{seed, e + 1, data_split}.
/// Returns the model whose scores and norm statistics achieved the best validation accuracy
/// (earliest epoch on ties).
SearchResult search(TicketModel model, const SearchConfig& config, const LabeledSet& train, const LabeledSet& val,
                    const StepObserver& observer = {});

/// Eval-mode accuracy of weights * mask, in batches.
double evaluate(const ArchSpec& arch, std::span<const Tensor> weights, std::span<const Tensor> mask,
                const NormState& norm, const LabeledSet& data, std::size_t batch_size = 500);

/// Accuracy of a ticket with its inference mask.
double evaluate(const TicketModel& model, const LabeledSet& data, std::size_t batch_size = 500);

}  // namespace fslt
