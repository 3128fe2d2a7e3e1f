#include "bayesmdp/experiment.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <initializer_list>
#include <map>

#include "bayesmdp/io.hpp"
#include "bayesmdp/parallel.hpp"
#include "bayesmdp/rng.hpp"
#include "bayesmdp/stats.hpp"
#include "json.hpp"

namespace bayesmdp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kTruthTag = 0x7a7e;
constexpr std::uint64_t kDataTag = 0xda7a;
constexpr std::uint64_t kEvalTag = 0xe7a1;
constexpr std::uint64_t kOptTag = 0x96ad;
constexpr std::uint64_t kRolloutTag = 0x9011;
constexpr std::uint64_t kMsbiTag = 0x3581;

std::uint64_t bits_of(double x) { return std::bit_cast<std::uint64_t>(x); }

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ParameterError(where + " must be a JSON object");
  for (const auto& item : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
    if (!known) throw ParameterError("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
  if (obj.contains(key) && !obj[key].is_null()) out = obj[key].get<T>();
}

Cell parse_cell(const json& j) {
  const auto v = j.get<std::vector<Index>>();
  if (v.size() != 2) throw ParameterError("cells are [x, y] pairs");
  return {v[0], v[1]};
}

Vector<double> parse_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector<double>>(v.data(), static_cast<Index>(v.size()));
}

EnvironmentKind parse_environment_kind(const std::string& s) {
  if (s == "gridworld") return EnvironmentKind::gridworld;
  if (s == "synthetic") return EnvironmentKind::synthetic;
  if (s == "casino") return EnvironmentKind::casino;
  if (s == "dataset") return EnvironmentKind::dataset;
  throw ParameterError("unknown environment type '" + s + "'");
}

Method parse_method(const std::string& s) {
  if (s == "gradient") return Method::gradient;
  if (s == "mle") return Method::mle;
  if (s == "nominal") return Method::nominal;
  if (s == "msbi") return Method::msbi;
  throw ParameterError("unknown method '" + s + "'");
}

void parse_environment(const json& env, ExperimentConfig& cfg, const fs::path& base_dir) {
  check_keys(env, {"type", "gridworld", "synthetic", "casino", "dataset"}, "environment");
  if (env.contains("type")) cfg.environment = parse_environment_kind(env["type"].get<std::string>());
  if (env.contains("gridworld")) {
    const json& g = env["gridworld"];
    check_keys(g,
               {"width", "height", "cliff_cells", "goal_cell", "star_cell", "p_rand", "discount", "goal_reward",
                "cliff_reward", "step_reward"},
               "environment.gridworld");
    auto& spec = cfg.gridworld;
    read_opt(g, "width", spec.width);
    read_opt(g, "height", spec.height);
    if (g.contains("cliff_cells")) {
      spec.cliff_cells.clear();
      for (const auto& c : g["cliff_cells"]) spec.cliff_cells.push_back(parse_cell(c));
    }
    if (g.contains("goal_cell")) spec.goal_cell = parse_cell(g["goal_cell"]);
    if (g.contains("star_cell")) spec.star_cell = parse_cell(g["star_cell"]);
    read_opt(g, "p_rand", spec.p_rand);
    read_opt(g, "discount", spec.discount);
    read_opt(g, "goal_reward", spec.goal_reward);
    read_opt(g, "cliff_reward", spec.cliff_reward);
    read_opt(g, "step_reward", spec.step_reward);
  }
  if (env.contains("synthetic")) {
    const json& s = env["synthetic"];
    check_keys(s, {"n_states", "n_actions", "reward", "reward_seed", "discount"}, "environment.synthetic");
    read_opt(s, "n_states", cfg.synthetic.n_states);
    read_opt(s, "n_actions", cfg.synthetic.n_actions);
    if (s.contains("reward") && !s["reward"].is_null()) cfg.synthetic.reward = parse_vector(s["reward"]);
    read_opt(s, "reward_seed", cfg.synthetic.reward_seed);
    read_opt(s, "discount", cfg.synthetic.discount);
  }
  if (env.contains("casino")) {
    const json& c = env["casino"];
    check_keys(c, {"payout", "discount", "sweep_points"}, "environment.casino");
    read_opt(c, "payout", cfg.casino_payout);
    read_opt(c, "discount", cfg.casino_discount);
    read_opt(c, "sweep_points", cfg.casino_sweep_points);
  }
  if (env.contains("dataset")) {
    const json& d = env["dataset"];
    check_keys(d, {"path", "n_states", "n_actions", "reward", "discount", "initial_dist", "terminal_states", "sink"},
               "environment.dataset");
    auto& src = cfg.dataset;
    if (d.contains("path")) {
      src.path = d["path"].get<std::string>();
      if (src.path.is_relative() && !base_dir.empty()) src.path = base_dir / src.path;
    }
    read_opt(d, "n_states", src.n_states);
    read_opt(d, "n_actions", src.n_actions);
    if (d.contains("reward") && !d["reward"].is_null()) src.reward = parse_vector(d["reward"]);
    read_opt(d, "discount", src.discount);
    if (d.contains("initial_dist") && !d["initial_dist"].is_null()) src.initial_dist = parse_vector(d["initial_dist"]);
    read_opt(d, "terminal_states", src.terminal_states);
    if (d.contains("sink") && !d["sink"].is_null()) src.sink = d["sink"].get<Index>();
  }
}

void parse_optimizer(const json& o, OptimizerConfig& opt) {
  check_keys(o,
             {"batch_size", "learning_rate", "max_steps", "resample_period", "init_softness", "convergence_window",
              "convergence_tol", "smoothing", "lr_decay", "lr_decay_scale", "eval_samples"},
             "optimizer");
  read_opt(o, "batch_size", opt.batch_size);
  read_opt(o, "learning_rate", opt.learning_rate);
  read_opt(o, "max_steps", opt.max_steps);
  if (o.contains("resample_period")) {
    const json& r = o["resample_period"];
    if (r.is_string()) {
      if (r.get<std::string>() != "never") throw ParameterError("resample_period must be an integer or \"never\"");
      opt.resample_period = OptimizerConfig::kNeverResample;
    } else {
      opt.resample_period = r.get<long>();
    }
  }
  read_opt(o, "init_softness", opt.init_softness);
  read_opt(o, "convergence_window", opt.convergence_window);
  read_opt(o, "convergence_tol", opt.convergence_tol);
  read_opt(o, "smoothing", opt.smoothing);
  read_opt(o, "lr_decay", opt.lr_decay);
  read_opt(o, "lr_decay_scale", opt.lr_decay_scale);
  read_opt(o, "eval_samples", opt.eval_samples);
}

ExperimentConfig parse_json(json j, const fs::path& base_dir, bool full_scale) {
  if (!j.is_object()) throw ParameterError("configuration must be a JSON object");
  if (j.contains("full_scale")) {
    json patch = j["full_scale"];
    j.erase("full_scale");
    if (full_scale) j.merge_patch(patch);
  }
  check_keys(j,
             {"name", "environment", "prior", "dataset_sizes", "p_rand_values", "methods", "optimizer", "evaluation",
              "alpha", "bench", "seed", "jobs", "output_dir"},
             "configuration");

  ExperimentConfig cfg;
  read_opt(j, "name", cfg.name);
  if (j.contains("environment")) parse_environment(j["environment"], cfg, base_dir);
  if (j.contains("prior")) {
    const json& p = j["prior"];
    check_keys(p, {"kind", "alpha", "sink_state", "min_visits"}, "prior");
    if (p.contains("kind")) {
      const auto kind = p["kind"].get<std::string>();
      if (kind == "symmetric")
        cfg.prior.kind = PriorKind::symmetric;
      else if (kind == "sparse_conservative")
        cfg.prior.kind = PriorKind::sparse_conservative;
      else
        throw ParameterError("unknown prior kind '" + kind + "'");
    }
    read_opt(p, "alpha", cfg.prior.alpha);
    if (p.contains("sink_state") && !p["sink_state"].is_null()) cfg.prior.sink_state = p["sink_state"].get<Index>();
    read_opt(p, "min_visits", cfg.min_visits);
  }
  read_opt(j, "dataset_sizes", cfg.dataset_sizes);
  read_opt(j, "p_rand_values", cfg.p_rand_values);
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : j["methods"]) cfg.methods.push_back(parse_method(m.get<std::string>()));
  }
  if (j.contains("optimizer")) parse_optimizer(j["optimizer"], cfg.optimizer);
  if (j.contains("evaluation")) {
    const json& e = j["evaluation"];
    check_keys(e, {"n_samples", "n_seeds", "horizon", "episodes", "msbi_samples", "msbi_max_iters"}, "evaluation");
    read_opt(e, "n_samples", cfg.evaluation.n_samples);
    read_opt(e, "n_seeds", cfg.evaluation.n_seeds);
    read_opt(e, "horizon", cfg.evaluation.horizon);
    read_opt(e, "episodes", cfg.evaluation.episodes);
    read_opt(e, "msbi_samples", cfg.evaluation.msbi_samples);
    read_opt(e, "msbi_max_iters", cfg.evaluation.msbi_max_iters);
  }
  if (j.contains("alpha")) {
    const json& a = j["alpha"];
    check_keys(a, {"lo", "hi", "grid_points"}, "alpha");
    read_opt(a, "lo", cfg.alpha.lo);
    read_opt(a, "hi", cfg.alpha.hi);
    read_opt(a, "grid_points", cfg.alpha.grid_points);
  }
  if (j.contains("bench")) {
    const json& b = j["bench"];
    check_keys(b, {"state_sizes", "batch_sizes", "n_actions", "steps"}, "bench");
    read_opt(b, "state_sizes", cfg.bench.state_sizes);
    read_opt(b, "batch_sizes", cfg.bench.batch_sizes);
    read_opt(b, "n_actions", cfg.bench.n_actions);
    read_opt(b, "steps", cfg.bench.steps);
  }
  read_opt(j, "seed", cfg.seed);
  read_opt(j, "jobs", cfg.jobs);
  if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
  cfg.validate();
  return cfg;
}

MdpSkeleton dataset_skeleton(const DatasetSource& src, Index S) {
  MdpSkeleton sk;
  sk.reward = src.reward.size() == 0 ? Vector<double>::Zero(S) : src.reward;
  if (sk.reward.size() != S) throw DimensionError("dataset reward length differs from n_states");
  sk.discount = src.discount;
  sk.terminal = StateMask::Constant(S, false);
  for (Index s : src.terminal_states) {
    if (s < 0 || s >= S) throw ValidationError("terminal state out of range");
    sk.terminal(s) = true;
  }
  sk.sink = src.sink.value_or(-1);
  if (src.initial_dist.size() == 0) {
    sk.initial_dist = Vector<double>::Zero(S);
    const Index free = S - sk.terminal.count();
    if (free == 0) throw ValidationError("dataset environment has no non-terminal state");
    for (Index s = 0; s < S; ++s)
      if (!sk.terminal(s)) sk.initial_dist(s) = 1.0 / static_cast<double>(free);
  } else {
    sk.initial_dist = src.initial_dist;
    if (sk.initial_dist.size() != S) throw DimensionError("dataset initial_dist length differs from n_states");
  }
  return sk;
}

/// Sparse priors need a sink; default to the model's own.
PriorSpec resolve_prior(const PriorSpec& prior, const MdpSkeleton& skeleton) {
  PriorSpec out = prior;
  if (out.kind == PriorKind::sparse_conservative && !out.sink_state) {
    if (skeleton.sink < 0) throw ParameterError("sparse_conservative prior needs prior.sink_state");
    out.sink_state = skeleton.sink;
  }
  return out;
}

std::uint64_t truth_seed(const ExperimentConfig& cfg, long seed_index) {
  return derive_seed(cfg.seed, {kTruthTag, static_cast<std::uint64_t>(seed_index)});
}

std::uint64_t data_seed(const ExperimentConfig& cfg, long seed_index) {
  return derive_seed(cfg.seed, {kDataTag, static_cast<std::uint64_t>(seed_index)});
}

/// Dataset for one (seed, size) cell. Gridworld sizes are record counts (prefixes
/// of one stream); synthetic sizes are visits per state-action.
TransitionDataset make_dataset(const ExperimentConfig& cfg, const MdpModel& truth, long size, long seed_index) {
  if (cfg.environment == EnvironmentKind::synthetic)
    return sample_dataset_per_sa(truth, size, data_seed(cfg, seed_index));
  return sample_dataset_uniform(truth, static_cast<std::size_t>(size), data_seed(cfg, seed_index));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string optional_field(const std::optional<double>& x) { return x ? format_double(*x) : std::string(); }

void write_json(const fs::path& path, const json& j) { write_atomic(path, j.dump(2) + "\n"); }

}  // namespace

std::string to_string(EnvironmentKind kind) {
  switch (kind) {
    case EnvironmentKind::gridworld: return "gridworld";
    case EnvironmentKind::synthetic: return "synthetic";
    case EnvironmentKind::casino: return "casino";
    case EnvironmentKind::dataset: return "dataset";
  }
  return "unknown";
}

std::string to_string(Method method) {
  switch (method) {
    case Method::gradient: return "gradient";
    case Method::mle: return "mle";
    case Method::nominal: return "nominal";
    case Method::msbi: return "msbi";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ParameterError("at least one method is required");
  if (dataset_sizes.empty()) throw ParameterError("dataset_sizes must not be empty");
  for (long n : dataset_sizes)
    if (n < 0) throw ParameterError("dataset sizes must be nonnegative");
  if (p_rand_values.empty()) throw ParameterError("p_rand_values must not be empty");
  for (double p : p_rand_values)
    if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("p_rand values must lie in [0, 1]");
  if (!(prior.alpha > 0.0)) throw ParameterError("prior alpha must be positive");
  if (min_visits < 0) throw ParameterError("min_visits must be nonnegative");
  optimizer.validate();
  if (evaluation.n_samples < 2) throw ParameterError("evaluation.n_samples must be at least 2");
  if (evaluation.n_seeds < 1) throw ParameterError("evaluation.n_seeds must be at least 1");
  if (evaluation.horizon < 1) throw ParameterError("evaluation.horizon must be at least 1");
  if (evaluation.episodes < 1) throw ParameterError("evaluation.episodes must be at least 1");
  if (evaluation.msbi_samples < 1) throw ParameterError("evaluation.msbi_samples must be at least 1");
  if (!(alpha.lo > 0.0 && alpha.lo < alpha.hi)) throw ParameterError("alpha range needs 0 < lo < hi");
  if (alpha.grid_points < 2) throw ParameterError("alpha.grid_points must be at least 2");
  if (bench.steps < 1 || bench.n_actions < 1) throw ParameterError("bench needs positive steps and n_actions");
  if (casino_sweep_points < 2) throw ParameterError("casino sweep needs at least 2 points");
  if (jobs < 1) throw ParameterError("jobs must be at least 1");
  if (environment == EnvironmentKind::gridworld) gridworld.validate();
  if (environment == EnvironmentKind::dataset) {
    if (dataset.path.empty()) throw ParameterError("dataset environment needs environment.dataset.path");
    if (!fs::exists(dataset.path)) throw IoError("dataset file not found: " + dataset.path.string());
  }
}

ExperimentConfig parse_config(const std::string& json_text, const fs::path& base_dir, bool full_scale) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("configuration is not valid JSON: ") + e.what());
  }
  try {
    return parse_json(std::move(j), base_dir, full_scale);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("malformed configuration: ") + e.what());
  }
}

ExperimentConfig load_config(const fs::path& path, bool full_scale) {
  return parse_config(read_text(path), path.parent_path(), full_scale);
}

MdpModel ground_truth(const ExperimentConfig& config, double p_rand, std::uint64_t seed) {
  switch (config.environment) {
    case EnvironmentKind::gridworld: {
      GridworldSpec spec = config.gridworld;
      spec.p_rand = p_rand;
      return build_gridworld(spec);
    }
    case EnvironmentKind::synthetic: {
      SyntheticSpec spec = config.synthetic;
      spec.seed = seed;
      return build_synthetic_mdp(spec);
    }
    default:
      throw ParameterError("environment '" + to_string(config.environment) + "' has no single ground-truth MDP");
  }
}

// ---- gen

GenSummary cmd_gen(const ExperimentConfig& config) {
  config.validate();
  GenSummary out;
  const fs::path& dir = config.output_dir;
  auto emit_model = [&](const fs::path& p, const MdpModel& m) {
    write_model(p, m);
    out.files.push_back(p);
  };
  auto emit_dataset = [&](const fs::path& p, const TransitionDataset& d) {
    write_dataset(p, d);
    out.files.push_back(p);
  };

  switch (config.environment) {
    case EnvironmentKind::gridworld:
      for (double p : config.p_rand_values) {
        const MdpModel truth = ground_truth(config, p, 0);
        const std::string tag = "p" + format_double(p);
        emit_model(dir / ("model_" + tag + ".json"), truth);
        for (long i = 0; i < config.evaluation.n_seeds; ++i)
          for (long n : config.dataset_sizes)
            emit_dataset(dir / ("dataset_" + tag + "_seed" + std::to_string(i) + "_n" + std::to_string(n) + ".csv"),
                         make_dataset(config, truth, n, i));
      }
      break;
    case EnvironmentKind::synthetic:
      for (long i = 0; i < config.evaluation.n_seeds; ++i) {
        const MdpModel truth = ground_truth(config, 0.0, truth_seed(config, i));
        const std::string tag = "seed" + std::to_string(i);
        emit_model(dir / ("model_" + tag + ".json"), truth);
        for (long k : config.dataset_sizes)
          emit_dataset(dir / ("dataset_" + tag + "_k" + std::to_string(k) + ".csv"), make_dataset(config, truth, k, i));
      }
      break;
    case EnvironmentKind::casino: {
      const Casino casino = build_casino(config.casino_payout, config.casino_discount);
      for (std::size_t k = 0; k < casino.posterior.atoms().size(); ++k)
        emit_model(dir / ("model_casino_theta" + std::to_string(k) + ".json"),
                   assemble_model(casino.skeleton, casino.posterior.atoms()[k], casino.allowed));
      break;
    }
    case EnvironmentKind::dataset: {
      const auto data = read_dataset(config.dataset.path, config.dataset.n_states, config.dataset.n_actions);
      emit_dataset(dir / "dataset.csv", data);
      break;
    }
  }
  return out;
}

// ---- uncertainty

UncertaintySummary cmd_uncertainty(const ExperimentConfig& config) {
  config.validate();
  if (config.environment != EnvironmentKind::gridworld)
    throw ParameterError("the uncertainty command runs on the gridworld environment");
  std::vector<long> sizes = config.dataset_sizes;
  std::sort(sizes.begin(), sizes.end());

  UncertaintySummary out;
  for (double p : config.p_rand_values) {
    const MdpModel truth = ground_truth(config, p, 0);
    const TerminalStructure terminals = TerminalStructure::from(truth.skeleton);
    const PriorSpec prior = resolve_prior(config.prior, truth.skeleton);
    const Index star = config.gridworld.state_of(config.gridworld.star_cell);
    for (long n : sizes) {
      const auto counts = count_transitions(make_dataset(config, truth, n, 0));
      const auto posterior = build_posterior(counts, prior, config.min_visits, terminals);
      const auto policy = StochasticPolicy::deterministic(
          mle_optimal_policy(counts, truth.skeleton, config.min_visits), posterior.allowed_actions());
      const auto report =
          evaluate_uncertainty(posterior, truth.skeleton, policy, config.evaluation.n_samples,
                               derive_seed(config.seed, {kEvalTag, bits_of(p), static_cast<std::uint64_t>(n)}),
                               config.jobs);
      const Vector<double> ale = report.aleatoric_std(), epi = report.epistemic_std();
      for (Index s = 0; s < truth.n_states(); ++s) {
        UncertaintyRow row{n, p, s, report.bayes_value(s), ale(s), epi(s)};
        out.rows.push_back(row);
        if (s == star) out.star_rows.push_back(row);
      }
    }
  }

  auto to_csv = [](const std::vector<UncertaintyRow>& rows) {
    std::string csv = "dataset_size,p_rand,state,bayes_value,aleatoric_std,epistemic_std\n";
    for (const auto& r : rows)
      csv += std::to_string(r.dataset_size) + "," + format_double(r.p_rand) + "," + std::to_string(r.state) + "," +
             format_double(r.bayes_value) + "," + format_double(r.aleatoric_std) + "," +
             format_double(r.epistemic_std) + "\n";
    return csv;
  };
  write_atomic(config.output_dir / "uncertainty.csv", to_csv(out.rows));
  write_atomic(config.output_dir / "star.csv", to_csv(out.star_rows));
  return out;
}

// ---- compare

std::vector<PairedSummary> paired_differences(const std::vector<ResultRow>& rows, Method reference) {
  // (size, seed) -> reference row
  std::map<std::pair<long, std::uint64_t>, const ResultRow*> ref;
  std::vector<long> sizes;
  std::vector<Method> methods;
  for (const auto& r : rows) {
    if (r.method == reference) ref[{r.dataset_size, r.seed}] = &r;
    if (std::find(sizes.begin(), sizes.end(), r.dataset_size) == sizes.end()) sizes.push_back(r.dataset_size);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  std::vector<PairedSummary> out;
  for (long size : sizes)
    for (Method m : methods) {
      if (m == reference) continue;
      std::vector<double> diffs, normalized, rollout_diffs;
      bool have_rollouts = true;
      PairedSummary ps;
      ps.dataset_size = size;
      ps.reference = reference;
      ps.method = m;
      for (const auto& r : rows) {
        if (r.method != m || r.dataset_size != size) continue;
        const auto it = ref.find({size, r.seed});
        if (it == ref.end()) continue;
        const ResultRow& base = *it->second;
        const double d = base.posterior_mean - r.posterior_mean;
        diffs.push_back(d);
        normalized.push_back(base.posterior_mean != 0.0 ? d / std::abs(base.posterior_mean) : 0.0);
        ps.wins += d > 0.0;
        if (base.rollout_mean && r.rollout_mean)
          rollout_diffs.push_back(*base.rollout_mean - *r.rollout_mean);
        else
          have_rollouts = false;
      }
      ps.n = static_cast<long>(diffs.size());
      if (ps.n == 0) continue;
      const auto [mean, sem] = mean_and_std_error(diffs);
      ps.mean_diff = mean;
      ps.sem_diff = sem;
      ps.sd_diff = sem * std::sqrt(static_cast<double>(ps.n));
      ps.normalized_mean_diff = mean_and_std_error(normalized).first;
      if (have_rollouts && !rollout_diffs.empty()) {
        const auto [rm, rs] = mean_and_std_error(rollout_diffs);
        ps.rollout_mean_diff = rm;
        ps.rollout_sem_diff = rs;
      }
      out.push_back(ps);
    }
  return out;
}

CompareSummary cmd_compare(const ExperimentConfig& config) {
  config.validate();
  if (config.environment == EnvironmentKind::casino)
    throw ParameterError("use the casino command for the casino environment");

  struct CellSpec {
    long seed_index;
    long size;
  };
  std::vector<CellSpec> cells;
  const bool from_file = config.environment == EnvironmentKind::dataset;
  const long n_seeds = from_file ? 1 : config.evaluation.n_seeds;
  for (long i = 0; i < n_seeds; ++i)
    for (long n : from_file ? std::vector<long>{0} : config.dataset_sizes) cells.push_back({i, n});

  std::optional<TransitionDataset> file_data;
  if (from_file) file_data = read_dataset(config.dataset.path, config.dataset.n_states, config.dataset.n_actions);

  std::vector<std::vector<ResultRow>> cell_rows(cells.size());
  parallel_for(cells.size(), config.jobs, [&](std::size_t c) {
    const CellSpec cell = cells[c];
    const auto key = [&](std::uint64_t tag) {
      return derive_seed(config.seed,
                         {tag, static_cast<std::uint64_t>(cell.seed_index), static_cast<std::uint64_t>(cell.size)});
    };

    std::optional<MdpModel> truth;
    MdpSkeleton skeleton;
    TransitionCounts counts;
    long size = cell.size;
    if (from_file) {
      skeleton = dataset_skeleton(config.dataset, file_data->n_states);
      counts = count_transitions(*file_data);
      size = static_cast<long>(file_data->records.size());
    } else {
      truth = ground_truth(config, config.p_rand_values.front(), truth_seed(config, cell.seed_index));
      skeleton = truth->skeleton;
      counts = count_transitions(make_dataset(config, *truth, cell.size, cell.seed_index));
    }
    const TerminalStructure terminals = TerminalStructure::from(skeleton);
    const auto posterior = build_posterior(counts, resolve_prior(config.prior, skeleton), config.min_visits, terminals);
    const auto shared = sample_models(posterior, config.evaluation.n_samples, key(kEvalTag));

    DeterministicPolicy nominal;
    auto nominal_init = [&]() -> const DeterministicPolicy& {
      if (nominal.empty()) nominal = nominal_policy(posterior, skeleton);
      return nominal;
    };

    for (Method m : config.methods) {
      const auto t0 = std::chrono::steady_clock::now();
      StochasticPolicy policy;
      switch (m) {
        case Method::gradient: {
          OptimizerConfig opt = config.optimizer;
          opt.seed = key(kOptTag);
          opt.jobs = 1;
          policy = optimize_policy(posterior, skeleton, nominal_init(), opt).policy;
          break;
        }
        case Method::mle:
          policy = StochasticPolicy::deterministic(mle_optimal_policy(counts, skeleton, config.min_visits),
                                                   posterior.allowed_actions());
          break;
        case Method::nominal:
          policy = StochasticPolicy::deterministic(nominal_init(), posterior.allowed_actions());
          break;
        case Method::msbi:
          policy = StochasticPolicy::deterministic(
              msbi_policy(posterior, skeleton, config.evaluation.msbi_samples, config.evaluation.msbi_max_iters,
                          nominal_init(), key(kMsbiTag)),
              posterior.allowed_actions());
          break;
      }
      ResultRow row;
      row.seconds = seconds_since(t0);
      row.experiment = config.name;
      row.seed = static_cast<std::uint64_t>(cell.seed_index);
      row.dataset_size = size;
      row.method = m;
      const auto est = posterior_objective(shared, skeleton, policy);
      row.posterior_mean = est.mean;
      row.posterior_se = est.std_error;
      if (truth) {
        const auto roll =
            rollout_return(*truth, policy, config.evaluation.horizon, config.evaluation.episodes, key(kRolloutTag));
        row.rollout_mean = roll.mean;
        row.rollout_se = roll.std_error;
      }
      cell_rows[c].push_back(std::move(row));
    }
  });

  CompareSummary out;
  for (auto& rows : cell_rows)
    for (auto& r : rows) out.rows.push_back(std::move(r));
  const Method reference =
      std::find(config.methods.begin(), config.methods.end(), Method::gradient) != config.methods.end()
          ? Method::gradient
          : config.methods.front();
  out.paired = paired_differences(out.rows, reference);

  std::string results = "experiment,seed,dataset_size,method,posterior_mean,posterior_se,rollout_mean,rollout_se,seconds\n";
  for (const auto& r : out.rows)
    results += r.experiment + "," + std::to_string(r.seed) + "," + std::to_string(r.dataset_size) + "," +
               to_string(r.method) + "," + format_double(r.posterior_mean) + "," + format_double(r.posterior_se) +
               "," + optional_field(r.rollout_mean) + "," + optional_field(r.rollout_se) + "," +
               format_double(r.seconds) + "\n";
  write_atomic(config.output_dir / "results.csv", results);

  std::string summary =
      "dataset_size,reference,method,n,mean_diff,sd_diff,sem_diff,normalized_mean_diff,wins,rollout_mean_diff,"
      "rollout_sem_diff\n";
  for (const auto& p : out.paired)
    summary += std::to_string(p.dataset_size) + "," + to_string(p.reference) + "," + to_string(p.method) + "," +
               std::to_string(p.n) + "," + format_double(p.mean_diff) + "," + format_double(p.sd_diff) + "," +
               format_double(p.sem_diff) + "," + format_double(p.normalized_mean_diff) + "," +
               std::to_string(p.wins) + "," + optional_field(p.rollout_mean_diff) + "," +
               optional_field(p.rollout_sem_diff) + "\n";
  write_atomic(config.output_dir / "summary.csv", summary);
  return out;
}

// ---- casino

CasinoSummary cmd_casino(const ExperimentConfig& config) {
  config.validate();
  const double R = config.casino_payout;
  const double g = config.casino_discount;
  const Casino casino = build_casino(R, g);

  CasinoSummary out;
  const std::size_t n = config.casino_sweep_points;
  std::string curve = "play_probability,value\n";
  out.sweep_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = static_cast<double>(i) / static_cast<double>(n - 1);
    const double v = casino_mixture_value(pi, R, g);
    out.sweep_pi.push_back(pi);
    out.sweep_value.push_back(v);
    if (v > out.sweep_max) out.sweep_max = v, out.sweep_argmax = pi;
    curve += format_double(pi) + "," + format_double(v) + "\n";
  }
  out.value_at_zero = out.sweep_value.front();
  out.value_at_one = out.sweep_value.back();

  OptimizerConfig opt = config.optimizer;
  opt.seed = config.seed;
  opt.jobs = config.jobs;
  const auto trace = optimize_policy(casino.posterior, casino.skeleton, nominal_policy(casino.posterior, casino.skeleton), opt);
  out.optimizer_pi = trace.policy.probabilities()(Casino::kCasino, Casino::kPlay);
  out.optimizer_value = posterior_objective(casino.posterior.atoms(), casino.skeleton, trace.policy).mean;
  out.optimizer_estimate = trace.final_objective;
  out.steps = trace.steps;

  write_atomic(config.output_dir / "casino_curve.csv", curve);
  write_atomic(config.output_dir / "casino_policy.csv", policy_to_csv(trace.policy));
  write_atomic(config.output_dir / "casino_trace.csv", trace_to_csv(trace));
  write_json(config.output_dir / "casino_summary.json",
             {{"payout", R},
              {"discount", g},
              {"sweep_points", n},
              {"sweep_argmax", out.sweep_argmax},
              {"sweep_max", out.sweep_max},
              {"value_at_zero", out.value_at_zero},
              {"value_at_one", out.value_at_one},
              {"optimizer_play_probability", out.optimizer_pi},
              {"optimizer_value", out.optimizer_value},
              {"optimizer_estimate", out.optimizer_estimate.mean},
              {"optimizer_estimate_se", out.optimizer_estimate.std_error},
              {"steps", out.steps},
              {"converged", trace.converged}});
  return out;
}

// ---- alpha

AlphaSummary alpha_curve(const TransitionCounts& counts, const ActionMask& allowed, const AlphaConfig& config) {
  AlphaSummary out;
  out.grid = log_grid(config.lo, config.hi, config.grid_points);
  for (double a : out.grid) out.nll.push_back(evidence_nll(counts, a, allowed));
  out.selection = select_alpha(counts, allowed, config.lo, config.hi);
  out.n_records = static_cast<std::size_t>(counts.total());
  return out;
}

AlphaSummary cmd_alpha(const ExperimentConfig& config) {
  config.validate();
  TransitionCounts counts;
  StateMask terminal;
  if (config.environment == EnvironmentKind::dataset) {
    const auto data = read_dataset(config.dataset.path, config.dataset.n_states, config.dataset.n_actions);
    counts = count_transitions(data);
    terminal = dataset_skeleton(config.dataset, data.n_states).terminal;
  } else {
    const MdpModel truth = ground_truth(config, config.p_rand_values.front(), truth_seed(config, 0));
    counts = count_transitions(make_dataset(config, truth, config.dataset_sizes.front(), 0));
    terminal = truth.skeleton.terminal;
  }
  // The evidence only covers state-actions that pass the visit filter; unlike
  // posterior construction, no state needs an allowed action here.
  ActionMask allowed(counts.n_states(), counts.n_actions());
  for (Index s = 0; s < counts.n_states(); ++s)
    for (Index a = 0; a < counts.n_actions(); ++a)
      allowed(s, a) = !(terminal.size() > 0 && terminal(s)) && counts.visits(s, a) >= config.min_visits;

  AlphaSummary out = alpha_curve(counts, allowed, config.alpha);
  std::string csv = "alpha,nll\n";
  for (std::size_t i = 0; i < out.grid.size(); ++i) csv += format_double(out.grid[i]) + "," + format_double(out.nll[i]) + "\n";
  write_atomic(config.output_dir / "alpha_curve.csv", csv);
  write_json(config.output_dir / "alpha_summary.json", {{"alpha", out.selection.alpha},
                                                        {"nll", out.selection.nll},
                                                        {"grid_fallback", out.selection.grid_fallback},
                                                        {"n_records", out.n_records},
                                                        {"lo", config.alpha.lo},
                                                        {"hi", config.alpha.hi}});
  return out;
}

// ---- bench

std::vector<BenchRow> cmd_bench(const ExperimentConfig& config) {
  config.validate();
  std::vector<BenchRow> rows;
  for (Index S : config.bench.state_sizes) {
    SyntheticSpec spec;
    spec.n_states = S;
    spec.n_actions = config.bench.n_actions;
    spec.seed = derive_seed(config.seed, {kTruthTag, static_cast<std::uint64_t>(S)});
    spec.reward_seed = config.synthetic.reward_seed;
    const MdpModel truth = build_synthetic_mdp(spec);
    const auto counts = count_transitions(sample_dataset_per_sa(truth, 1, derive_seed(config.seed, {kDataTag})));
    const auto posterior = build_posterior(counts, {PriorKind::symmetric, config.prior.alpha, {}}, 0);
    for (std::size_t batch : config.bench.batch_sizes)
      for (bool resample : {true, false}) {
        OptimizerConfig opt = config.optimizer;
        opt.batch_size = batch;
        opt.max_steps = config.bench.steps;
        opt.resample_period = resample ? 1 : OptimizerConfig::kNeverResample;
        opt.convergence_tol = 0.0;  // run every step
        opt.eval_samples = 2;
        opt.seed = config.seed;
        opt.jobs = config.jobs;
        const auto t0 = std::chrono::steady_clock::now();
        optimize_policy(posterior, truth.skeleton, DeterministicPolicy(static_cast<std::size_t>(S), 0), opt);
        rows.push_back({S, batch, resample, seconds_since(t0)});
      }
  }
  std::string csv = "n_states,batch,resample,seconds\n";
  for (const auto& r : rows)
    csv += std::to_string(r.n_states) + "," + std::to_string(r.batch) + "," + (r.resample ? "1" : "0") + "," +
           format_double(r.seconds) + "\n";
  write_atomic(config.output_dir / "bench.csv", csv);
  return rows;
}

}  // namespace bayesmdp
