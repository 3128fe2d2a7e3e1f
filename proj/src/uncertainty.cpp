#include "bayesmdp/uncertainty.hpp"

#include <cmath>
#include <limits>

#include "bayesmdp/parallel.hpp"

namespace bayesmdp {

namespace {

void check_shapes(const MdpSkeleton& skeleton, const StochasticPolicy& policy, Index n_states, Index n_actions) {
  if (skeleton.n_states() != n_states || skeleton.initial_dist.size() != n_states)
    throw DimensionError("skeleton size differs from posterior");
  if (policy.n_states() != n_states || policy.n_actions() != n_actions)
    throw DimensionError("policy shape differs from posterior");
  if (!(skeleton.discount >= 0.0 && skeleton.discount < 1.0)) throw ValidationError("discount must lie in [0, 1)");
}

}  // namespace

UncertaintyReport evaluate_uncertainty(const std::vector<TransitionTensor>& samples, const MdpSkeleton& skeleton,
                                       const StochasticPolicy& policy, unsigned jobs) {
  const std::size_t n = samples.size();
  if (n < 2) throw ParameterError("uncertainty evaluation needs at least 2 posterior samples");
  const Index S = samples.front().n_states();
  check_shapes(skeleton, policy, S, samples.front().n_actions());

  const Matrix<double> probs = policy.probabilities();
  std::vector<MomentSolution> moments(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const Matrix<double> T = policy_transition_matrix(samples[i], probs);
    moments[i] = solve_moments<double>(T, skeleton.reward, skeleton.discount);
  });

  const double dn = static_cast<double>(n);
  UncertaintyReport report;
  report.n_samples = n;
  // Sums are shifted by the first sample so identical samples reduce exactly.
  const MomentSolution& first = moments.front();
  report.bayes_value = Vector<double>::Zero(S);
  report.aleatoric_var = Vector<double>::Zero(S);
  for (const auto& m : moments) {
    report.bayes_value += m.value - first.value;
    report.aleatoric_var += m.variance - first.variance;
  }
  report.bayes_value = first.value + report.bayes_value / dn;
  report.aleatoric_var = first.variance + report.aleatoric_var / dn;

  Vector<double> m2 = Vector<double>::Zero(S);
  Vector<double> m4 = Vector<double>::Zero(S);
  Vector<double> var_of_var = Vector<double>::Zero(S);
  for (const auto& m : moments) {
    const Vector<double> d = m.value - report.bayes_value;
    const Vector<double> d2 = d.cwiseProduct(d);
    m2 += d2;
    m4 += d2.cwiseProduct(d2);
    const Vector<double> e = m.variance - report.aleatoric_var;
    var_of_var += e.cwiseProduct(e);
  }
  report.epistemic_var = m2 / (dn - 1.0);
  m4 /= dn;

  report.bayes_value_se = (report.epistemic_var / dn).cwiseSqrt();
  report.aleatoric_var_se = (var_of_var / (dn - 1.0) / dn).cwiseSqrt();
  // Var(s^2) ~ (mu4 - (n-3)/(n-1) s^4) / n
  const Vector<double> s4 = report.epistemic_var.cwiseProduct(report.epistemic_var);
  report.epistemic_var_se = ((m4 - (dn - 3.0) / (dn - 1.0) * s4) / dn).cwiseMax(0.0).cwiseSqrt();
  return report;
}

UncertaintyReport evaluate_uncertainty(const ModelPosterior& posterior, const MdpSkeleton& skeleton,
                                       const StochasticPolicy& policy, std::size_t n_samples, std::uint64_t seed,
                                       unsigned jobs) {
  if (n_samples < 2) throw ParameterError("uncertainty evaluation needs at least 2 posterior samples");
  check_shapes(skeleton, policy, posterior.n_states(), posterior.n_actions());
  std::vector<TransitionTensor> samples(n_samples);
  parallel_for(n_samples, jobs, [&](std::size_t i) { samples[i] = posterior.sample(seed, i); });
  UncertaintyReport report = evaluate_uncertainty(samples, skeleton, policy, jobs);
  report.seed = seed;
  return report;
}

double value_bound(double r_max, double gamma) {
  if (!(r_max > 0.0)) throw ParameterError("r_max must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ParameterError("gamma must lie in [0, 1)");
  return r_max / (1.0 - gamma);
}

namespace {

void check_eps_delta(double epsilon, double delta) {
  if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("delta must lie in (0, 1)");
}

// Rounds up, absorbing last-ulp noise so an exact integer bound is not bumped.
std::int64_t ceil_count(double x) {
  return static_cast<std::int64_t>(std::ceil(x * (1.0 - 1e-12)));
}

}  // namespace

double samples_bound_exact(double epsilon, double delta, double r_max, double gamma) {
  check_eps_delta(epsilon, delta);
  const double v = value_bound(r_max, gamma);
  return std::log(2.0 / delta) * 2.0 * v * v / (epsilon * epsilon);
}

std::int64_t plan_samples_exact(double epsilon, double delta, double r_max, double gamma) {
  return std::max<std::int64_t>(1, ceil_count(samples_bound_exact(epsilon, delta, r_max, gamma)));
}

std::optional<double> samples_bound_mc(double epsilon, double delta, double r_max, double gamma, long horizon) {
  check_eps_delta(epsilon, delta);
  if (horizon < 1) throw ParameterError("horizon must be at least 1");
  const double v = value_bound(r_max, gamma);
  const double truncation = std::pow(gamma, static_cast<double>(horizon)) * v;
  if (truncation >= epsilon) return std::nullopt;
  const double margin = epsilon - truncation;
  return std::log(2.0 / delta) * 2.0 * v * v / (margin * margin);
}

std::optional<std::int64_t> plan_samples_mc(double epsilon, double delta, double r_max, double gamma, long horizon) {
  const auto bound = samples_bound_mc(epsilon, delta, r_max, gamma, horizon);
  if (!bound) return std::nullopt;
  return std::max<std::int64_t>(1, ceil_count(*bound));
}

std::int64_t min_horizon(double epsilon, double r_max, double gamma) {
  if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
  const double v = value_bound(r_max, gamma);
  if (gamma == 0.0 || epsilon > v) return 1;
  const double threshold = std::log(epsilon / v) / std::log(gamma);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(threshold)) + 1);
}

SamplePlan make_sample_plan(double epsilon, double delta, double r_max, double gamma, long horizon) {
  SamplePlan plan;
  plan.epsilon = epsilon;
  plan.delta = delta;
  plan.v_max = value_bound(r_max, gamma);
  plan.n_samples_exact = plan_samples_exact(epsilon, delta, r_max, gamma);
  plan.n_samples_mc = plan_samples_mc(epsilon, delta, r_max, gamma, horizon);
  plan.min_horizon = min_horizon(epsilon, r_max, gamma);
  return plan;
}

}  // namespace bayesmdp
