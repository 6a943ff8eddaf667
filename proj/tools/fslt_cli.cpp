// fslt: strong-lottery-ticket search in frozen random networks.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fslt/compression.hpp"
#include "fslt/harness.hpp"
#include "fslt/ssa.hpp"

using namespace fslt;

namespace {

struct ConfigArgs {
  std::vector<std::string> files;
  std::vector<std::string> sets;
};

void add_config_args(CLI::App* cmd, ConfigArgs& args, bool many = false) {
  if (many)
    cmd->add_option("-c,--config", args.files, "config file(s) of key = value lines");
  else
    cmd->add_option("-c,--config", args.files, "config file of key = value lines")->expected(0, 1);
  cmd->add_option("-s,--set", args.sets, "override: key=value (repeatable, wins over the file)");
}

ExperimentConfig apply_sets(ExperimentConfig c, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.validate();
  return c;
}

std::vector<ExperimentConfig> resolve_configs(const ConfigArgs& args) {
  std::vector<ExperimentConfig> out;
  if (args.files.empty()) out.push_back(apply_sets({}, args.sets));
  for (const auto& f : args.files) out.push_back(apply_sets(load_config(f), args.sets));
  return out;
}

Dataset load_for(const ExperimentConfig& c) {
  const std::string root = c.data_root.empty() ? default_data_root().string() : c.data_root;
  return load_dataset(c.dataset, root, c.seed, {c.max_train, c.max_test});
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw ConfigError("bad list entry '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

int rows_status(const std::vector<ResultRow>& rows) {
  for (const auto& r : rows)
    if (!r.ok()) {
      std::cerr << "row " << r.index << " failed: " << r.error << "\n";
      return 1;
    }
  return 0;
}

void print_size(const SizeReport& s) {
  std::printf("supermask_bits  %llu\nbn_param_bits   %llu\ntotal_bytes     %llu\nmegabytes       %.6f\nmebibytes       %.6f\n",
              static_cast<unsigned long long>(s.supermask_bits), static_cast<unsigned long long>(s.bn_param_bits),
              static_cast<unsigned long long>(s.total_bytes()), s.megabytes(), s.mebibytes());
}

RunOutcome run_and_report(const ExperimentConfig& c, bool verbose) {
  const auto data = load_for(c);
  std::fprintf(stderr, "dataset %s: %zu train / %zu val / %zu test\n", c.dataset.c_str(), data.train.size(),
               data.val.size(), data.test.size());
  auto out = run_once(c, data, c.seed);
  if (verbose)
    for (const auto& m : out.metrics)
      std::fprintf(stderr, "epoch %3zu  loss %.4f  val_acc %.4f  lr %.5f\n", m.epoch, m.train_loss, m.val_acc, m.lr);
  std::printf("test_acc        %.6f\nbest_epoch      %zu\n", out.test_acc, out.best_epoch);
  print_size(out.size);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Strong lottery tickets in partially frozen random networks"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  std::string train_out;
  auto* train = app.add_subcommand("train", "search one ticket with a config and report test accuracy");
  add_config_args(train, train_args);
  train->add_option("-o,--out", train_out, "also write the packed ticket (.ftkt)");

  ConfigArgs pack_args;
  std::string pack_out;
  auto* pack_cmd = app.add_subcommand("pack", "search one ticket and write it as .ftkt");
  add_config_args(pack_cmd, pack_args);
  pack_cmd->add_option("-o,--out", pack_out, "output file")->required();

  std::string unpack_in;
  ConfigArgs unpack_args;
  bool unpack_eval = false;
  auto* unpack_cmd = app.add_subcommand("unpack", "verify a .ftkt file and optionally evaluate it");
  unpack_cmd->add_option("-i,--in", unpack_in, "ticket file")->required();
  unpack_cmd->add_flag("--eval", unpack_eval, "evaluate test accuracy on the config's dataset");
  add_config_args(unpack_cmd, unpack_args);

  std::string size_in;
  ConfigArgs size_args;
  auto* size_cmd = app.add_subcommand("size", "model size of a .ftkt file or of a config's plan");
  size_cmd->add_option("-i,--in", size_in, "ticket file (otherwise the config is sized without training)");
  add_config_args(size_cmd, size_args);
  std::string size_input_shape = "3,32,32";
  std::size_t size_classes = 10;
  size_cmd->add_option("--input-shape", size_input_shape, "per-sample input shape for config sizing");
  size_cmd->add_option("--classes", size_classes, "class count for config sizing");

  ConfigArgs sweep_args;
  std::string sweep_axis, sweep_values, sweep_csv;
  auto* sweep_cmd = app.add_subcommand("sweep", "one result row per value of an axis");
  add_config_args(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--axis", sweep_axis, "freeze_ratio | slt_sparsity | width_multiplier | prune_ratio")->required();
  sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();
  sweep_cmd->add_option("--csv", sweep_csv, "output CSV (default stdout)");

  ConfigArgs compare_args;
  std::string compare_modes, compare_csv;
  auto* compare_cmd = app.add_subcommand("compare", "run several configs or modes and emit one CSV");
  add_config_args(compare_cmd, compare_args, true);
  compare_cmd->add_option("--modes", compare_modes, "expand every config over these modes (comma-separated)");
  compare_cmd->add_option("--csv", compare_csv, "output CSV (default stdout)");

  std::string ssa_grid = "8,16,24,32", ssa_csv;
  double ssa_p = 1.0, ssa_q = 0.0, ssa_eps = 0.05;
  std::size_t ssa_trials = 200, ssa_points = 21;
  std::uint64_t ssa_seed = 0;
  auto* ssa_cmd = app.add_subcommand("ssa-verify", "Monte-Carlo success curve of subset-sum approximation");
  ssa_cmd->add_option("--n-grid", ssa_grid, "comma-separated variable counts");
  ssa_cmd->add_option("--p", ssa_p, "availability probability (1 - pruning)");
  ssa_cmd->add_option("--q", ssa_q, "locking probability");
  ssa_cmd->add_option("--eps", ssa_eps, "tolerance");
  ssa_cmd->add_option("--trials", ssa_trials, "trials per n");
  ssa_cmd->add_option("--z-points", ssa_points, "evenly spaced targets in [-1, 1]");
  ssa_cmd->add_option("--seed", ssa_seed, "seed");
  ssa_cmd->add_option("--csv", ssa_csv, "output CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed() || pack_cmd->parsed()) {
      const bool is_pack = pack_cmd->parsed();
      const auto c = resolve_configs(is_pack ? pack_args : train_args).front();
      if (c.mode == RunMode::weight_training && (is_pack || !train_out.empty()))
        throw ConfigError("weight_training models have no supermask to pack");
      const auto out = run_and_report(c, true);
      const std::string path = is_pack ? pack_out : train_out;
      if (!path.empty()) {
        const auto bytes = fslt::pack(out.model);
        write_bytes(path, bytes);
        std::printf("wrote %s (%zu bytes)\n", path.c_str(), bytes.size());
      }
      return 0;
    }
    if (unpack_cmd->parsed()) {
      const auto model = unpack(read_bytes(unpack_in));
      std::printf("arch            %s\nseed            %llu\ninit            %s\nslt_sparsity    %.6f\nfreeze_ratio    %.6f\n"
                  "prune_ratio     %.6f\nlock_ratio      %.6f\nparams          %zu\nactive          %zu\n",
                  model.arch.name.c_str(), static_cast<unsigned long long>(model.seed), to_string(model.init).c_str(),
                  model.target_sparsity, model.plan.freeze_ratio, model.plan.prune_ratio, model.plan.lock_ratio,
                  model.total_params(), model.required_active());
      print_size(account_size(model));
      if (unpack_eval) {
        const auto c = resolve_configs(unpack_args).front();
        const auto data = load_for(c);
        std::printf("test_acc        %.6f\n", evaluate(model, data.test));
      }
      return 0;
    }
    if (size_cmd->parsed()) {
      if (!size_in.empty()) {
        print_size(account_size(unpack(read_bytes(size_in))));
        return 0;
      }
      const auto c = resolve_configs(size_args).front();
      Shape shape;
      for (double d : parse_list(size_input_shape)) shape.push_back(static_cast<std::size_t>(d));
      const auto arch = make_arch(c.arch, shape, size_classes, c.width_multiplier, c.batchnorm);
      std::printf("params          %zu\n", arch.total_params());
      const std::size_t stats = NormState::init(arch).statistic_count();
      print_size(c.mode == RunMode::weight_training ? weight_training_size(arch.total_params(), stats)
                                                    : account_size(build_plan(c, arch), stats));
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const auto base = resolve_configs(sweep_args).front();
      const auto configs = sweep_configs(sweep_axis_from_string(sweep_axis), parse_list(sweep_values), base);
      const auto rows = run_comparison(configs);
      emit(to_csv(rows), sweep_csv);
      return rows_status(rows);
    }
    if (compare_cmd->parsed()) {
      auto configs = resolve_configs(compare_args);
      if (!compare_modes.empty()) {
        std::vector<ExperimentConfig> expanded;
        std::stringstream ss(compare_modes);
        std::vector<RunMode> modes;
        for (std::string m; std::getline(ss, m, ',');)
          if (!m.empty()) modes.push_back(run_mode_from_string(m));
        for (const auto& c : configs)
          for (auto m : modes) {
            auto e = c;
            e.mode = m;
            expanded.push_back(e);
          }
        configs = std::move(expanded);
      }
      const auto rows = run_comparison(configs);
      emit(to_csv(rows), compare_csv);
      return rows_status(rows);
    }
    if (ssa_cmd->parsed()) {
      std::vector<std::size_t> grid;
      for (double v : parse_list(ssa_grid)) grid.push_back(static_cast<std::size_t>(v));
      const auto curve = estimate_success(grid, ssa_p, ssa_q, ssa_eps, target_grid(ssa_points), ssa_trials, ssa_seed);
      std::string csv = "n,solver,success_rate,trials\n";
      for (const auto& pt : curve.points) {
        char line[128];
        std::snprintf(line, sizeof line, "%zu,%s,%.6f,%zu\n", pt.n, to_string(pt.solver).c_str(), pt.success_rate(), pt.trials);
        csv += line;
      }
      emit(csv, ssa_csv);
      if (curve.tail_fit)
        std::fprintf(stderr, "empirical tail fit: log(1 - success) = %.4f + %.4f n  (R^2 %.3f over %zu points)\n",
                     curve.tail_fit->intercept, curve.tail_fit->slope, curve.tail_fit->r_squared, curve.tail_fit->points);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
