#pragma once

// Experiment configuration and the command implementations behind the CLI. Each
// command reads an ExperimentConfig, writes its CSV/JSON outputs under
// `output_dir`, and returns the in-memory results.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bayesmdp/envs.hpp"
#include "bayesmdp/policy_opt.hpp"
#include "bayesmdp/uncertainty.hpp"

namespace bayesmdp {

enum class EnvironmentKind { gridworld, synthetic, casino, dataset };
enum class Method { gradient, mle, nominal, msbi };

std::string to_string(EnvironmentKind kind);
std::string to_string(Method method);

/// Offline corpus without a known ground truth.
struct DatasetSource {
  std::filesystem::path path;
  Index n_states = 0;  ///< 0 infers from the file
  Index n_actions = 0;
  Vector<double> reward;        ///< empty means all zeros
  double discount = 0.999;
  Vector<double> initial_dist;  ///< empty means uniform over non-terminal states
  std::vector<Index> terminal_states;
  std::optional<Index> sink;
};

struct EvaluationConfig {
  std::size_t n_samples = 1000;  ///< posterior samples N_M
  long n_seeds = 50;
  long horizon = 1000;           ///< rollout length on the ground truth
  std::size_t episodes = 1000;
  std::size_t msbi_samples = 100;
  long msbi_max_iters = 100000;
};

struct AlphaConfig {
  double lo = 1e-4;
  double hi = 10.0;
  std::size_t grid_points = 200;
};

struct BenchConfig {
  std::vector<Index> state_sizes{10, 50, 200};
  std::vector<std::size_t> batch_sizes{8};
  Index n_actions = 5;
  long steps = 200;
};

struct ExperimentConfig {
  std::string name = "experiment";
  EnvironmentKind environment = EnvironmentKind::gridworld;
  GridworldSpec gridworld;
  SyntheticSpec synthetic;
  double casino_payout = 10.0;
  double casino_discount = 0.99;
  std::size_t casino_sweep_points = 1001;
  DatasetSource dataset;

  PriorSpec prior;
  long min_visits = 5;
  /// Uniform-sampling dataset sizes (gridworld) or visits per state-action (synthetic).
  std::vector<long> dataset_sizes{100, 1000, 10000};
  std::vector<double> p_rand_values{0.0};
  std::vector<Method> methods{Method::gradient, Method::mle, Method::nominal};

  OptimizerConfig optimizer;
  EvaluationConfig evaluation;
  AlphaConfig alpha;
  BenchConfig bench;

  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::filesystem::path output_dir = "results";

  void validate() const;
};

/// Parses a JSON configuration. Relative paths resolve against `base_dir`. With
/// `full_scale`, the optional "full_scale" object is merged over the top level first.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {},
                              bool full_scale = false);
ExperimentConfig load_config(const std::filesystem::path& path, bool full_scale = false);

/// Ground-truth model of the configured environment. `p_rand` applies to the
/// gridworld, `seed` to synthetic MDPs.
MdpModel ground_truth(const ExperimentConfig& config, double p_rand, std::uint64_t seed);

// ---- gen

struct GenSummary {
  std::vector<std::filesystem::path> files;
};

/// Writes ground-truth models and nested datasets for every seed (synthetic) or
/// p_rand (gridworld) to output_dir.
GenSummary cmd_gen(const ExperimentConfig& config);

// ---- uncertainty

struct UncertaintyRow {
  long dataset_size = 0;
  double p_rand = 0.0;
  Index state = 0;
  double bayes_value = 0.0;
  double aleatoric_std = 0.0;
  double epistemic_std = 0.0;
};

struct UncertaintySummary {
  std::vector<UncertaintyRow> rows;       ///< every state
  std::vector<UncertaintyRow> star_rows;  ///< the gridworld's exemplar state only
};

/// For each p_rand and nested dataset size, evaluates the MLE-optimal policy's
/// Bayesian value and variance split. Writes uncertainty.csv and star.csv.
UncertaintySummary cmd_uncertainty(const ExperimentConfig& config);

// ---- compare

struct ResultRow {
  std::string experiment;
  std::uint64_t seed = 0;
  long dataset_size = 0;
  Method method = Method::gradient;
  double posterior_mean = 0.0;
  double posterior_se = 0.0;
  std::optional<double> rollout_mean;
  std::optional<double> rollout_se;
  double seconds = 0.0;
};

/// Paired difference reference - method across seeds for one dataset size.
struct PairedSummary {
  long dataset_size = 0;
  Method reference = Method::gradient;
  Method method = Method::mle;
  long n = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  double sem_diff = 0.0;
  double normalized_mean_diff = 0.0;  ///< mean of diff / |reference value|
  long wins = 0;                      ///< seeds where the reference is strictly better
  std::optional<double> rollout_mean_diff;
  std::optional<double> rollout_sem_diff;
};

struct CompareSummary {
  std::vector<ResultRow> rows;
  std::vector<PairedSummary> paired;
};

/// Trains every configured method per (seed, dataset size), scores them on one
/// shared set of posterior samples and, when the ground truth is known, by
/// rollouts. Writes results.csv and summary.csv.
CompareSummary cmd_compare(const ExperimentConfig& config);

/// Paired differences of `rows` against `reference`.
std::vector<PairedSummary> paired_differences(const std::vector<ResultRow>& rows, Method reference);

// ---- casino

struct CasinoSummary {
  std::vector<double> sweep_pi;
  std::vector<double> sweep_value;
  double sweep_argmax = 0.0;
  double sweep_max = 0.0;
  double value_at_zero = 0.0;
  double value_at_one = 0.0;
  double optimizer_pi = 0.0;
  double optimizer_value = 0.0;  ///< exact two-atom average at the optimizer's policy
  ObjectiveEstimate optimizer_estimate;
  long steps = 0;
};

/// Closed-form value sweep over the play probability plus an optimizer run. Writes
/// casino_curve.csv, casino_summary.json, casino_policy.csv and casino_trace.csv.
CasinoSummary cmd_casino(const ExperimentConfig& config);

// ---- alpha

struct AlphaSummary {
  std::vector<double> grid;
  std::vector<double> nll;
  AlphaSelection selection;
  std::size_t n_records = 0;
};

/// Evidence curve over a log grid and the selected prior concentration. Uses the
/// dataset file when the environment is `dataset`, otherwise a generated dataset of
/// the first configured size. Writes alpha_curve.csv and alpha_summary.json.
AlphaSummary cmd_alpha(const ExperimentConfig& config);

/// Same on an explicit dataset with the given action mask.
AlphaSummary alpha_curve(const TransitionCounts& counts, const ActionMask& allowed, const AlphaConfig& config);

// ---- bench

struct BenchRow {
  Index n_states = 0;
  std::size_t batch = 0;
  bool resample = true;
  double seconds = 0.0;
};

/// Wall-clock of optimize_policy for bench.steps steps on synthetic posteriors.
/// Writes bench.csv.
std::vector<BenchRow> cmd_bench(const ExperimentConfig& config);

}  // namespace bayesmdp
