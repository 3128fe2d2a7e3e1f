#pragma once

// Posterior-mean value and the split of return variance into epistemic and
// aleatoric parts, plus Hoeffding sample-size planners.

#include <cstdint>
#include <optional>

#include "bayesmdp/bayes_model.hpp"

namespace bayesmdp {

/// Per-state Bayesian value and variance decomposition from N posterior samples.
struct UncertaintyReport {
  Vector<double> bayes_value;    ///< sample mean of V_M(s)
  Vector<double> aleatoric_var;  ///< sample mean of Var G_M(s)
  Vector<double> epistemic_var;  ///< unbiased sample variance of V_M(s)

  // Monte Carlo standard errors of the three estimates.
  Vector<double> bayes_value_se;
  Vector<double> aleatoric_var_se;
  Vector<double> epistemic_var_se;

  std::size_t n_samples = 0;
  std::uint64_t seed = 0;

  Vector<double> aleatoric_std() const { return aleatoric_var.cwiseSqrt(); }
  Vector<double> epistemic_std() const { return epistemic_var.cwiseSqrt(); }
};

/// Exact value and return variance for each of n_samples posterior draws, reduced
/// per state. Reduction runs in sample order, so the report is identical for any
/// `jobs`.
UncertaintyReport evaluate_uncertainty(const ModelPosterior& posterior, const MdpSkeleton& skeleton,
                                       const StochasticPolicy& policy, std::size_t n_samples, std::uint64_t seed,
                                       unsigned jobs = 1);

/// Same reduction over an explicit set of transition tensors.
UncertaintyReport evaluate_uncertainty(const std::vector<TransitionTensor>& samples, const MdpSkeleton& skeleton,
                                       const StochasticPolicy& policy, unsigned jobs = 1);

struct SamplePlan {
  double epsilon = 0;
  double delta = 0;
  double v_max = 0;
  std::int64_t n_samples_exact = 0;
  std::optional<std::int64_t> n_samples_mc;  ///< empty when the horizon is too short
  std::int64_t min_horizon = 0;
};

/// r_max / (1 - gamma).
double value_bound(double r_max, double gamma);

/// log(2/delta) * 2 V_max^2 / eps^2, before rounding up.
double samples_bound_exact(double epsilon, double delta, double r_max, double gamma);
std::int64_t plan_samples_exact(double epsilon, double delta, double r_max, double gamma);

/// log(2/delta) * 2 V_max^2 / (eps - gamma^T V_max)^2, or nothing when
/// gamma^T V_max >= eps.
std::optional<double> samples_bound_mc(double epsilon, double delta, double r_max, double gamma, long horizon);
std::optional<std::int64_t> plan_samples_mc(double epsilon, double delta, double r_max, double gamma, long horizon);

/// Smallest integer T >= 1 with T > log(eps / V_max) / log(gamma).
std::int64_t min_horizon(double epsilon, double r_max, double gamma);

SamplePlan make_sample_plan(double epsilon, double delta, double r_max, double gamma, long horizon);

}  // namespace bayesmdp
