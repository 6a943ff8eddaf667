#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fslt/compression.hpp"
#include "fslt/data.hpp"
#include "fslt/search.hpp"

namespace fslt {

/// Missing or malformed dataset file; the message names the file and byte offset.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Dataset {
  std::string name;
  Shape input_shape;  // per sample
  std::size_t num_classes = 0;
  LabeledSet train, val, test;
  std::vector<float> channel_mean;  // from the training split
  std::vector<float> channel_std;
};

/// Raw IDX pair, pixel values scaled to [0, 1]. Inputs are (N, 1, rows, cols).
LabeledSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
/// CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record), scaled to [0, 1].
LabeledSet load_cifar_batches(const std::vector<std::filesystem::path>& files);
/// Isotropic Gaussian clusters in `features` dimensions, unit variance, class means on a sphere of radius 2.
LabeledSet make_toy_gaussians(std::size_t samples, std::size_t features, std::size_t classes, std::uint64_t seed,
                              std::uint64_t stream = 0);

struct DatasetOptions {
  std::size_t max_train = 0;  // 0 = every training image (truncates before the split)
  std::size_t max_test = 0;
};

/// mnist: <root>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
/// cifar10: <root>/cifar10/{data_batch_1..5,test_batch}.bin
/// toy_gaussians: generated from the seed, no files.
/// The training file is split 4:1 into train/val with StreamKey{seed, 0, data_split}; every split is
/// normalized per channel with the train-split mean and standard deviation.
Dataset load_dataset(const std::string& name, const std::filesystem::path& root, std::uint64_t seed,
                     const DatasetOptions& options = {});

/// $FSLT_DATA_ROOT, or "data".
std::filesystem::path default_data_root();

enum class RunMode : std::uint8_t { slt_dense, slt_pruned, slt_frozen, weight_training };
std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& name);

struct ExperimentConfig {
  std::string arch = "conv2";
  std::string dataset = "mnist";
  std::string data_root;  // empty = default_data_root()
  std::uint64_t seed = 0;
  RunMode mode = RunMode::slt_frozen;
  double freeze_ratio = 0.5;
  double slt_sparsity = 0.5;
  Strategy strategy = Strategy::epl;
  std::optional<double> prune_ratio;
  std::optional<double> lock_ratio;
  bool exempt_boundary_layers = false;
  double width_multiplier = 1.0;
  bool batchnorm = false;
  InitKind init = InitKind::kaiming_uniform;
  SearchConfig search;
  std::size_t repetitions = 3;
  std::size_t max_train = 0;
  std::size_t max_test = 0;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// Sets one `key` from its text form; throws ConfigError on unknown keys or bad values.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
/// `key = value` lines; `#` starts a comment. Later keys win.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
/// Every key set_config_value accepts, with its current value.
std::map<std::string, std::string> config_values(const ExperimentConfig& config);

/// Global ratios a config runs with.
struct ResolvedRatios {
  double freeze = 0.0;
  double prune = 0.0;
  double lock = 0.0;
};
ResolvedRatios resolve_ratios(const ExperimentConfig& config);

ArchSpec build_arch(const ExperimentConfig& config, const Dataset& data);
FreezePlan build_plan(const ExperimentConfig& config, const ArchSpec& arch);

struct RunOutcome {
  double test_acc = 0.0;
  double best_val_acc = 0.0;
  std::size_t best_epoch = 0;
  SizeReport size;
  std::vector<EpochMetrics> metrics;
  TicketModel model;  // searched and finalized; empty weights for weight_training
};

/// One repetition with `seed`.
RunOutcome run_once(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed);

struct ResultRow {
  std::size_t index = 0;
  ExperimentConfig config;
  ResolvedRatios ratios;
  std::size_t total_params = 0;
  std::vector<double> test_acc;
  double mean_acc = 0.0;
  std::optional<double> std_acc;  // sample std, only with more than one repetition
  SizeReport size;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

/// Repetition r uses seed + r. Failures are recorded in the row.
ResultRow run_config(const ExperimentConfig& config, const Dataset& data, std::size_t index = 0);

/// Rows in config order; datasets are loaded once per (name, root, seed, limits).
std::vector<ResultRow> run_comparison(const std::vector<ExperimentConfig>& configs);

enum class SweepAxis : std::uint8_t { freeze_ratio, slt_sparsity, width_multiplier, prune_ratio };
std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& name);

/// One config per value. prune_ratio sweeps fix the base freeze ratio and set lock = F - P.
std::vector<ExperimentConfig> sweep_configs(SweepAxis axis, const std::vector<double>& values,
                                            const ExperimentConfig& base);
std::vector<ResultRow> sweep(SweepAxis axis, const std::vector<double>& values, const ExperimentConfig& base);

std::string csv_header();
std::string csv_row(const ResultRow& row);
std::string to_csv(const std::vector<ResultRow>& rows);

}  // namespace fslt
