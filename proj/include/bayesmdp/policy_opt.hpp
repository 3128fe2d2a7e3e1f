#pragma once

// Stochastic-gradient maximisation of the posterior expected value
//   J(pi) = sum_s rho(s) E_{M ~ p(M|D)} V_M^pi(s)
// over softmax policies, plus the MLE-optimal, Nominal and MSBI baselines.

#include <cstdint>
#include <limits>
#include <vector>

#include "bayesmdp/bayes_model.hpp"

namespace bayesmdp {

struct ObjectiveEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

struct OptimizerConfig {
  /// Value of resample_period that draws one batch up front and never again.
  static constexpr long kNeverResample = std::numeric_limits<long>::max();

  std::size_t batch_size = 8;
  double learning_rate = 0.1;
  long max_steps = 5000;
  long resample_period = 1;
  double init_softness = 0.1;
  long convergence_window = 200;
  double convergence_tol = 1e-5;
  double smoothing = 0.99;
  /// When set, step t uses learning_rate / (1 + t / lr_decay_scale).
  bool lr_decay = false;
  double lr_decay_scale = 100.0;
  /// Posterior samples for the final objective estimate.
  std::size_t eval_samples = 1000;
  std::uint64_t seed = 0;
  unsigned jobs = 1;

  void validate() const;
};

struct OptimizationTrace {
  std::vector<double> minibatch_objective;
  std::vector<double> smoothed_objective;
  StochasticPolicy policy;
  ObjectiveEstimate final_objective;
  long steps = 0;
  bool converged = false;
};

/// Chosen action gets 1 - eta, the other allowed actions share eta equally. A state
/// with a single allowed action gives it probability 1.
StochasticPolicy soften_policy(const DeterministicPolicy& policy, const ActionMask& allowed, double eta);

/// Mean and standard error of rho . v_i over the given samples.
ObjectiveEstimate posterior_objective(const std::vector<TransitionTensor>& samples, const MdpSkeleton& skeleton,
                                      const StochasticPolicy& policy, unsigned jobs = 1);

ObjectiveEstimate posterior_objective(const ModelPosterior& posterior, const MdpSkeleton& skeleton,
                                      const StochasticPolicy& policy, std::size_t n_samples, std::uint64_t seed,
                                      unsigned jobs = 1);

struct LossAndGradient {
  double objective = 0.0;  ///< minibatch mean of rho . v_i
  Matrix<double> gradient; ///< dL/dz for L = -objective; zero on disallowed actions
};

/// Analytic gradient through the adjoint u = (I - g T_i)^{-T} rho:
///   dJ_i/dpi(a|s) = g u_s sum_s' theta_i(s'|s,a) v_i(s'),
/// chained through the masked softmax.
LossAndGradient objective_gradient(const std::vector<TransitionTensor>& samples, const MdpSkeleton& skeleton,
                                   const StochasticPolicy& policy, unsigned jobs = 1);

OptimizationTrace optimize_policy(const ModelPosterior& posterior, const MdpSkeleton& skeleton,
                                  const DeterministicPolicy& init, const OptimizerConfig& config);

/// Value iteration on the empirical-frequency MDP.
DeterministicPolicy mle_optimal_policy(const TransitionCounts& counts, const MdpSkeleton& skeleton, long min_visits);

/// Value iteration on the posterior-mean MDP.
DeterministicPolicy nominal_policy(const ModelPosterior& posterior, const MdpSkeleton& skeleton);

/// One sample-averaged optimality backup: max_a r(s) + g mean_i sum_s' theta_i(s'|s,a) v(s').
Vector<double> msbi_backup(const std::vector<TransitionTensor>& samples, const ActionMask& allowed,
                           const MdpSkeleton& skeleton, const Vector<double>& value);

struct MsbiResult {
  DeterministicPolicy policy;
  Vector<double> value;
  long iterations = 0;
};

/// Multi-sample backward induction over a fixed set of posterior samples, started
/// from the value of `init` and stopped at sup-norm change < tol or max_iters.
MsbiResult msbi(const std::vector<TransitionTensor>& samples, const ActionMask& allowed, const MdpSkeleton& skeleton,
                const DeterministicPolicy& init, long max_iters, double tol = 1e-10);

DeterministicPolicy msbi_policy(const ModelPosterior& posterior, const MdpSkeleton& skeleton, std::size_t n_samples,
                                long max_iters, const DeterministicPolicy& init, std::uint64_t seed);

}  // namespace bayesmdp
