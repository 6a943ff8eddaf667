#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "fslt/harness.hpp"

namespace fslt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
    throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + value + "'");
}

std::optional<double> parse_optional(const std::string& key, const std::string& value) {
  if (value.empty() || value == "auto" || value == "none") return std::nullopt;
  return parse_double(key, value);
}

template <class F>
auto wrap(const std::string& key, F&& parse) {
  try {
    return parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("'" + key + "': " + e.what());
  }
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::slt_dense: return "slt_dense";
    case RunMode::slt_pruned: return "slt_pruned";
    case RunMode::slt_frozen: return "slt_frozen";
    case RunMode::weight_training: return "weight_training";
  }
  return "unknown";
}

RunMode run_mode_from_string(const std::string& name) {
  if (name == "slt_dense") return RunMode::slt_dense;
  if (name == "slt_pruned") return RunMode::slt_pruned;
  if (name == "slt_frozen") return RunMode::slt_frozen;
  if (name == "weight_training") return RunMode::weight_training;
  throw ConfigError("unknown mode '" + name + "' (expected slt_dense, slt_pruned, slt_frozen or weight_training)");
}

void ExperimentConfig::validate() const {
  if (repetitions < 1) throw ConfigError("repetitions must be at least 1");
  if (!(width_multiplier > 0.0)) throw ConfigError("width_multiplier must be positive");
  if (!(slt_sparsity >= 0.0 && slt_sparsity < 1.0)) throw ConfigError("slt_sparsity must lie in [0, 1)");
  if (!(freeze_ratio >= 0.0 && freeze_ratio < 1.0)) throw ConfigError("freeze_ratio must lie in [0, 1)");
  if (prune_ratio && !(*prune_ratio >= 0.0 && *prune_ratio < 1.0)) throw ConfigError("prune_ratio must lie in [0, 1)");
  if (lock_ratio && !(*lock_ratio >= 0.0 && *lock_ratio < 1.0)) throw ConfigError("lock_ratio must lie in [0, 1)");
  if (mode == RunMode::slt_pruned && lock_ratio && *lock_ratio != 0.0)
    throw ConfigError("slt_pruned mode cannot lock weights (lock_ratio must be 0)");
  try {
    search.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "arch") c.arch = value;
  else if (key == "dataset") c.dataset = value;
  else if (key == "data_root") c.data_root = value;
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "mode") c.mode = run_mode_from_string(value);
  else if (key == "freeze_ratio") c.freeze_ratio = parse_double(key, value);
  else if (key == "slt_sparsity") c.slt_sparsity = parse_double(key, value);
  else if (key == "strategy") c.strategy = wrap(key, [&] { return strategy_from_string(value); });
  else if (key == "prune_ratio") c.prune_ratio = parse_optional(key, value);
  else if (key == "lock_ratio") c.lock_ratio = parse_optional(key, value);
  else if (key == "exempt_boundary_layers") c.exempt_boundary_layers = parse_bool(key, value);
  else if (key == "width_multiplier") c.width_multiplier = parse_double(key, value);
  else if (key == "batchnorm") c.batchnorm = parse_bool(key, value);
  else if (key == "init") c.init = wrap(key, [&] { return init_kind_from_string(value); });
  else if (key == "optimizer") c.search.optimizer = wrap(key, [&] { return optimizer_from_string(value); });
  else if (key == "lr") c.search.lr0 = parse_double(key, value);
  else if (key == "momentum") c.search.momentum = parse_double(key, value);
  else if (key == "weight_decay") c.search.weight_decay = parse_double(key, value);
  else if (key == "batch_size") c.search.batch_size = parse_uint(key, value);
  else if (key == "epochs") c.search.epochs = parse_uint(key, value);
  else if (key == "topk_interval") c.search.topk_interval = parse_uint(key, value);
  else if (key == "repetitions") c.repetitions = parse_uint(key, value);
  else if (key == "max_train") c.max_train = parse_uint(key, value);
  else if (key == "max_test") c.max_test = parse_uint(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> config_values(const ExperimentConfig& c) {
  return {
      {"arch", c.arch},
      {"dataset", c.dataset},
      {"data_root", c.data_root},
      {"seed", std::to_string(c.seed)},
      {"mode", to_string(c.mode)},
      {"freeze_ratio", num(c.freeze_ratio)},
      {"slt_sparsity", num(c.slt_sparsity)},
      {"strategy", to_string(c.strategy)},
      {"prune_ratio", c.prune_ratio ? num(*c.prune_ratio) : "auto"},
      {"lock_ratio", c.lock_ratio ? num(*c.lock_ratio) : "auto"},
      {"exempt_boundary_layers", c.exempt_boundary_layers ? "true" : "false"},
      {"width_multiplier", num(c.width_multiplier)},
      {"batchnorm", c.batchnorm ? "true" : "false"},
      {"init", to_string(c.init)},
      {"optimizer", to_string(c.search.optimizer)},
      {"lr", num(c.search.lr0)},
      {"momentum", num(c.search.momentum)},
      {"weight_decay", num(c.search.weight_decay)},
      {"batch_size", std::to_string(c.search.batch_size)},
      {"epochs", std::to_string(c.search.epochs)},
      {"topk_interval", std::to_string(c.search.topk_interval)},
      {"repetitions", std::to_string(c.repetitions)},
      {"max_train", std::to_string(c.max_train)},
      {"max_test", std::to_string(c.max_test)},
  };
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

ResolvedRatios resolve_ratios(const ExperimentConfig& c) {
  switch (c.mode) {
    case RunMode::slt_dense:
    case RunMode::weight_training:
      return {};
    case RunMode::slt_pruned: {
      const double p = c.prune_ratio.value_or(c.slt_sparsity - 0.05);
      if (p < 0.0) throw ConfigError("pruned-only ratio k - 0.05 is negative for k = " + num(c.slt_sparsity));
      return {p, p, 0.0};
    }
    case RunMode::slt_frozen: {
      if (c.prune_ratio || c.lock_ratio) {
        const double p = c.prune_ratio.value_or(c.freeze_ratio - c.lock_ratio.value_or(0.0));
        const double l = c.lock_ratio.value_or(c.freeze_ratio - p);
        if (p < 0.0 || l < 0.0) throw ConfigError("prune/lock overrides exceed freeze_ratio");
        return {p + l, p, l};
      }
      if (c.freeze_ratio == 0.0) return {};
      const auto prop = plan_proportion(c.freeze_ratio, c.slt_sparsity);
      return {c.freeze_ratio, prop.prune, prop.lock};
    }
  }
  return {};
}

ArchSpec build_arch(const ExperimentConfig& c, const Dataset& data) {
  return make_arch(c.arch, data.input_shape, data.num_classes, c.width_multiplier, c.batchnorm);
}

FreezePlan build_plan(const ExperimentConfig& c, const ArchSpec& arch) {
  const auto r = resolve_ratios(c);
  PlanOptions opts;
  opts.strategy = c.strategy;
  opts.exempt_boundary_layers = c.exempt_boundary_layers;
  auto plan = build_freeze_plan_from_ratios(arch, r.prune, r.lock, opts);
  plan.freeze_ratio = r.freeze;
  return plan;
}

namespace {

RunOutcome train_weights(const ExperimentConfig& c, const Dataset& data, std::uint64_t seed) {
  const auto arch = build_arch(c, data);
  TicketModel m = make_ticket_model(arch, build_plan(c, arch), 0.0, c.init, seed);
  m.scores.clear();
  FreezeMask all_free = m.freeze;
  ScoreOptimizer opt(c.search, m.weights);
  const auto& train = data.train;
  const std::size_t steps = (train.size() + c.search.batch_size - 1) / c.search.batch_size;
  const std::size_t total = steps * c.search.epochs;

  RunOutcome out;
  out.best_val_acc = -1.0;
  TensorList best_weights;
  NormState best_norm;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < c.search.epochs; ++epoch) {
    const auto order = partial_permutation(train.size(), train.size(), StreamKey{seed, epoch + 1, Purpose::data_split});
    double loss_sum = 0.0, lr = c.search.lr0;
    for (std::size_t b = 0; b < steps; ++b, ++step) {
      const std::size_t begin = b * c.search.batch_size, end = std::min(train.size(), begin + c.search.batch_size);
      const auto batch = train.gather(std::span(order).subspan(begin, end - begin));
      auto fwd = forward(arch, m.weights, {}, batch.inputs, Mode::train, m.norm);
      const auto loss = cross_entropy(fwd.logits, batch.labels);
      const auto grads = backward(fwd.cache, loss.grad_logits, false);
      lr = opt.step(m.weights, grads.grad_weights, all_free, step, total);
      loss_sum += loss.loss;
    }
    const double val = evaluate(arch, m.weights, {}, m.norm, data.val);
    out.metrics.push_back({epoch, loss_sum / static_cast<double>(steps), val, lr});
    if (val > out.best_val_acc) {
      out.best_val_acc = val;
      out.best_epoch = epoch;
      best_weights = m.weights;
      best_norm = m.norm;
    }
  }
  out.test_acc = evaluate(arch, best_weights, {}, best_norm, data.test);
  out.size = weight_training_size(arch.total_params(), best_norm.statistic_count());
  m.weights = std::move(best_weights);
  m.norm = std::move(best_norm);
  out.model = std::move(m);
  return out;
}

}  // namespace

RunOutcome run_once(const ExperimentConfig& c, const Dataset& data, std::uint64_t seed) {
  c.validate();
  if (c.mode == RunMode::weight_training) return train_weights(c, data, seed);
  const auto arch = build_arch(c, data);
  auto model = make_ticket_model(arch, build_plan(c, arch), c.slt_sparsity, c.init, seed);
  auto result = search(std::move(model), c.search, data.train, data.val);
  finalize_scaling(result.model);
  RunOutcome out;
  out.best_val_acc = result.best_val_acc;
  out.best_epoch = result.best_epoch;
  out.metrics = std::move(result.metrics);
  out.test_acc = evaluate(result.model, data.test);
  out.size = account_size(result.model);
  out.model = std::move(result.model);
  return out;
}

ResultRow run_config(const ExperimentConfig& c, const Dataset& data, std::size_t index) {
  ResultRow row;
  row.index = index;
  row.config = c;
  try {
    c.validate();
    row.ratios = resolve_ratios(c);
    row.total_params = build_arch(c, data).total_params();
    for (std::size_t r = 0; r < c.repetitions; ++r) {
      const auto out = run_once(c, data, c.seed + r);
      row.test_acc.push_back(out.test_acc);
      row.size = out.size;
    }
    row.mean_acc = mean_of(row.test_acc);
    if (row.test_acc.size() > 1) {
      double ss = 0.0;
      for (double a : row.test_acc) ss += (a - row.mean_acc) * (a - row.mean_acc);
      row.std_acc = std::sqrt(ss / static_cast<double>(row.test_acc.size() - 1));
    }
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

std::vector<ResultRow> run_comparison(const std::vector<ExperimentConfig>& configs) {
  using Key = std::tuple<std::string, std::string, std::uint64_t, std::size_t, std::size_t>;
  std::map<Key, Dataset> cache;
  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    const std::string root = c.data_root.empty() ? default_data_root().string() : c.data_root;
    const Key key{c.dataset, root, c.seed, c.max_train, c.max_test};
    auto it = cache.find(key);
    if (it == cache.end()) {
      try {
        it = cache.emplace(key, load_dataset(c.dataset, root, c.seed, {c.max_train, c.max_test})).first;
      } catch (const std::exception& e) {
        ResultRow row;
        row.index = i;
        row.config = c;
        row.error = e.what();
        rows.push_back(std::move(row));
        continue;
      }
    }
    rows.push_back(run_config(c, it->second, i));
  }
  return rows;
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::freeze_ratio: return "freeze_ratio";
    case SweepAxis::slt_sparsity: return "slt_sparsity";
    case SweepAxis::width_multiplier: return "width_multiplier";
    case SweepAxis::prune_ratio: return "prune_ratio";
  }
  return "unknown";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "freeze_ratio") return SweepAxis::freeze_ratio;
  if (name == "slt_sparsity") return SweepAxis::slt_sparsity;
  if (name == "width_multiplier") return SweepAxis::width_multiplier;
  if (name == "prune_ratio") return SweepAxis::prune_ratio;
  throw ConfigError("unknown sweep axis '" + name + "'");
}

std::vector<ExperimentConfig> sweep_configs(SweepAxis axis, const std::vector<double>& values,
                                            const ExperimentConfig& base) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<ExperimentConfig> configs;
  for (double v : values) {
    ExperimentConfig c = base;
    switch (axis) {
      case SweepAxis::freeze_ratio: c.freeze_ratio = v; break;
      case SweepAxis::slt_sparsity: c.slt_sparsity = v; break;
      case SweepAxis::width_multiplier: c.width_multiplier = v; break;
      case SweepAxis::prune_ratio:
        if (v > base.freeze_ratio) throw ConfigError("prune ratio " + num(v) + " exceeds freeze_ratio " + num(base.freeze_ratio));
        c.mode = RunMode::slt_frozen;
        c.prune_ratio = v;
        c.lock_ratio = base.freeze_ratio - v;
        break;
    }
    c.validate();
    configs.push_back(std::move(c));
  }
  return configs;
}

std::vector<ResultRow> sweep(SweepAxis axis, const std::vector<double>& values, const ExperimentConfig& base) {
  return run_comparison(sweep_configs(axis, values, base));
}

std::string csv_header() {
  return "index,arch,dataset,mode,seed,width_multiplier,strategy,init,freeze_ratio,prune_ratio,lock_ratio,"
         "slt_sparsity,epochs,repetitions,total_params,test_acc_mean,test_acc_std,test_accs,supermask_bits,"
         "bn_param_bits,total_bytes,megabytes,status,error";
}

std::string csv_row(const ResultRow& row) {
  const auto& c = row.config;
  std::string accs;
  for (std::size_t i = 0; i < row.test_acc.size(); ++i) accs += (i ? ";" : "") + fixed(row.test_acc[i]);
  std::string error = row.error;
  for (char& ch : error)
    if (ch == '"' || ch == '\n' || ch == '\r') ch = '\'';
  std::ostringstream out;
  out << row.index << ',' << c.arch << ',' << c.dataset << ',' << to_string(c.mode) << ',' << c.seed << ','
      << fixed(c.width_multiplier, 4) << ',' << to_string(c.strategy) << ',' << to_string(c.init) << ','
      << fixed(row.ratios.freeze, 4) << ',' << fixed(row.ratios.prune, 4) << ',' << fixed(row.ratios.lock, 4) << ','
      << fixed(c.slt_sparsity, 4) << ',' << c.search.epochs << ',' << c.repetitions << ',' << row.total_params << ','
      << (row.ok() ? fixed(row.mean_acc) : "") << ',' << (row.std_acc ? fixed(*row.std_acc) : "") << ',' << accs << ','
      << (row.ok() ? std::to_string(row.size.supermask_bits) : "") << ','
      << (row.ok() ? std::to_string(row.size.bn_param_bits) : "") << ','
      << (row.ok() ? std::to_string(row.size.total_bytes()) : "") << ','
      << (row.ok() ? fixed(row.size.megabytes()) : "") << ',' << (row.ok() ? "ok" : "error") << ",\"" << error << '"';
  return out.str();
}

std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string out = csv_header() + "\n";
  for (const auto& r : rows) out += csv_row(r) + "\n";
  return out;
}

}  // namespace fslt
