#include "bayesmdp/policy_opt.hpp"

#include <cmath>
#include <string>

#include "bayesmdp/parallel.hpp"
#include "bayesmdp/rng.hpp"
#include "bayesmdp/stats.hpp"

namespace bayesmdp {

void OptimizerConfig::validate() const {
  if (batch_size < 1) throw ParameterError("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (max_steps < 1) throw ParameterError("max_steps must be at least 1");
  if (resample_period < 1) throw ParameterError("resample_period must be at least 1");
  if (!(init_softness > 0.0 && init_softness < 1.0)) throw ParameterError("init_softness must lie in (0, 1)");
  if (convergence_window < 1) throw ParameterError("convergence_window must be at least 1");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ParameterError("smoothing must lie in [0, 1)");
  if (lr_decay && !(lr_decay_scale > 0.0)) throw ParameterError("lr_decay_scale must be positive");
  if (eval_samples < 2) throw ParameterError("eval_samples must be at least 2");
}

StochasticPolicy soften_policy(const DeterministicPolicy& policy, const ActionMask& allowed, double eta) {
  if (!(eta > 0.0 && eta < 1.0)) throw ParameterError("softness eta must lie in (0, 1)");
  const Index S = allowed.rows();
  const Index A = allowed.cols();
  if (static_cast<Index>(policy.size()) != S) throw DimensionError("policy length differs from mask");
  Matrix<double> logits = Matrix<double>::Zero(S, A);
  for (Index s = 0; s < S; ++s) {
    const Index chosen = policy[s];
    if (chosen < 0 || chosen >= A || !allowed(s, chosen))
      throw ValidationError("policy picks a disallowed action at state " + std::to_string(s));
    const Index n_allowed = allowed.row(s).count();
    if (n_allowed == 1) continue;
    const double off = std::log(eta / static_cast<double>(n_allowed - 1));
    for (Index a = 0; a < A; ++a) logits(s, a) = off;
    logits(s, chosen) = std::log(1.0 - eta);
  }
  return StochasticPolicy(std::move(logits), allowed);
}

namespace {

void check_inputs(const std::vector<TransitionTensor>& samples, const MdpSkeleton& skeleton,
                  const StochasticPolicy& policy) {
  if (samples.empty()) throw ParameterError("need at least one posterior sample");
  const Index S = samples.front().n_states();
  if (skeleton.n_states() != S || skeleton.initial_dist.size() != S)
    throw DimensionError("skeleton size differs from samples");
  if (policy.n_states() != S || policy.n_actions() != samples.front().n_actions())
    throw DimensionError("policy shape differs from samples");
}

double initial_value(const TransitionTensor& sample, const Matrix<double>& probs, const MdpSkeleton& skeleton) {
  const Matrix<double> T = policy_transition_matrix(sample, probs);
  const Index S = T.rows();
  Eigen::PartialPivLU<Matrix<double>> lu(Matrix<double>::Identity(S, S) - skeleton.discount * T);
  return skeleton.initial_dist.dot(lu.solve(skeleton.reward));
}

}  // namespace

ObjectiveEstimate posterior_objective(const std::vector<TransitionTensor>& samples, const MdpSkeleton& skeleton,
                                      const StochasticPolicy& policy, unsigned jobs) {
  check_inputs(samples, skeleton, policy);
  const std::size_t n = samples.size();
  if (n < 2) throw ParameterError("posterior objective needs at least 2 samples");
  const Matrix<double> probs = policy.probabilities();
  std::vector<double> values(n);
  parallel_for(n, jobs, [&](std::size_t i) { values[i] = initial_value(samples[i], probs, skeleton); });
  const auto [mean, se] = mean_and_std_error(values);
  return {mean, se};
}

ObjectiveEstimate posterior_objective(const ModelPosterior& posterior, const MdpSkeleton& skeleton,
                                      const StochasticPolicy& policy, std::size_t n_samples, std::uint64_t seed,
                                      unsigned jobs) {
  if (n_samples < 2) throw ParameterError("posterior objective needs at least 2 samples");
  std::vector<TransitionTensor> samples(n_samples);
  parallel_for(n_samples, jobs, [&](std::size_t i) { samples[i] = posterior.sample(seed, i); });
  return posterior_objective(samples, skeleton, policy, jobs);
}

LossAndGradient objective_gradient(const std::vector<TransitionTensor>& samples, const MdpSkeleton& skeleton,
                                   const StochasticPolicy& policy, unsigned jobs) {
  check_inputs(samples, skeleton, policy);
  const Index S = policy.n_states();
  const Index A = policy.n_actions();
  const double g = skeleton.discount;
  const Matrix<double> probs = policy.probabilities();

  const std::size_t n = samples.size();
  std::vector<double> objective(n);
  std::vector<Matrix<double>> policy_grad(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const TransitionTensor& P = samples[i];
    const Matrix<double> T = policy_transition_matrix(P, probs);
    Eigen::PartialPivLU<Matrix<double>> lu(Matrix<double>::Identity(S, S) - g * T);
    const Vector<double> v = lu.solve(skeleton.reward);
    const Vector<double> u = lu.transpose().solve(skeleton.initial_dist);
    const Vector<double> q = P.rows() * v;
    Matrix<double> grad(S, A);
    for (Index s = 0; s < S; ++s)
      for (Index a = 0; a < A; ++a) grad(s, a) = g * u(s) * q(s * A + a);
    objective[i] = skeleton.initial_dist.dot(v);
    policy_grad[i] = std::move(grad);
  });

  LossAndGradient out;
  Matrix<double> dj_dpi = Matrix<double>::Zero(S, A);
  for (std::size_t i = 0; i < n; ++i) {
    out.objective += objective[i];
    dj_dpi += policy_grad[i];
  }
  out.objective /= static_cast<double>(n);
  dj_dpi /= static_cast<double>(n);

  // Masked softmax Jacobian: dJ/dz_sa = pi_sa (dJ/dpi_sa - sum_b pi_sb dJ/dpi_sb).
  out.gradient = Matrix<double>::Zero(S, A);
  const auto& allowed = policy.allowed();
  for (Index s = 0; s < S; ++s) {
    double baseline = 0.0;
    for (Index a = 0; a < A; ++a)
      if (allowed(s, a)) baseline += probs(s, a) * dj_dpi(s, a);
    for (Index a = 0; a < A; ++a)
      if (allowed(s, a)) out.gradient(s, a) = -probs(s, a) * (dj_dpi(s, a) - baseline);
  }
  return out;
}

OptimizationTrace optimize_policy(const ModelPosterior& posterior, const MdpSkeleton& skeleton,
                                  const DeterministicPolicy& init, const OptimizerConfig& config) {
  config.validate();
  if (skeleton.n_states() != posterior.n_states()) throw DimensionError("skeleton size differs from posterior");

  OptimizationTrace trace;
  StochasticPolicy policy = soften_policy(init, posterior.allowed_actions(), config.init_softness);
  std::vector<TransitionTensor> batch;
  double smoothed = 0.0;

  for (long t = 0; t < config.max_steps; ++t) {
    if (t % config.resample_period == 0) {
      const auto round = static_cast<std::uint64_t>(t / config.resample_period);
      batch = sample_models(posterior, round * config.batch_size, config.batch_size, config.seed);
    }
    const LossAndGradient step = objective_gradient(batch, skeleton, policy, config.jobs);
    if (!std::isfinite(step.objective) || !step.gradient.allFinite())
      throw NumericalError("non-finite loss or gradient at optimizer step " + std::to_string(t) +
                           " (objective = " + std::to_string(step.objective) + ")");

    trace.minibatch_objective.push_back(step.objective);
    smoothed = t == 0 ? step.objective : config.smoothing * smoothed + (1.0 - config.smoothing) * step.objective;
    trace.smoothed_objective.push_back(smoothed);

    const double rate =
        config.lr_decay ? config.learning_rate / (1.0 + static_cast<double>(t) / config.lr_decay_scale)
                        : config.learning_rate;
    policy.logits() -= rate * step.gradient;
    trace.steps = t + 1;

    if (t >= config.convergence_window) {
      const double before = trace.smoothed_objective[static_cast<std::size_t>(t - config.convergence_window)];
      const double change = std::abs(smoothed - before) / std::max(std::abs(before), 1e-8);
      if (change < config.convergence_tol) {
        trace.converged = true;
        break;
      }
    }
  }

  trace.policy = policy;
  trace.final_objective = posterior_objective(posterior, skeleton, policy, config.eval_samples,
                                              splitmix64(config.seed ^ 0x5eed0f0b1ec71beULL), config.jobs);
  return trace;
}

DeterministicPolicy mle_optimal_policy(const TransitionCounts& counts, const MdpSkeleton& skeleton, long min_visits) {
  const TerminalStructure terminals = TerminalStructure::from(skeleton);
  ActionMask allowed = visited_actions(counts, min_visits, terminals);
  TransitionTensor mle = mle_model(counts, allowed, terminals);
  return value_iteration(assemble_model(skeleton, std::move(mle), std::move(allowed))).policy;
}

DeterministicPolicy nominal_policy(const ModelPosterior& posterior, const MdpSkeleton& skeleton) {
  return value_iteration(assemble_model(skeleton, posterior.mean(), posterior.allowed_actions())).policy;
}

namespace {

TransitionTensor sample_mean(const std::vector<TransitionTensor>& samples) {
  TransitionTensor::Rows sum = samples.front().rows();
  for (std::size_t i = 1; i < samples.size(); ++i) sum = sum + samples[i].rows();
  sum /= static_cast<double>(samples.size());
  return TransitionTensor(samples.front().n_states(), samples.front().n_actions(), std::move(sum));
}

}  // namespace

Vector<double> msbi_backup(const std::vector<TransitionTensor>& samples, const ActionMask& allowed,
                           const MdpSkeleton& skeleton, const Vector<double>& value) {
  if (samples.empty()) throw ParameterError("MSBI needs at least one sample");
  // mean_i theta_i . v == (mean_i theta_i) . v
  return bellman_optimality_backup(sample_mean(samples), allowed, skeleton.reward, skeleton.discount, value);
}

MsbiResult msbi(const std::vector<TransitionTensor>& samples, const ActionMask& allowed, const MdpSkeleton& skeleton,
                const DeterministicPolicy& init, long max_iters, double tol) {
  if (samples.empty()) throw ParameterError("MSBI needs at least one sample");
  if (max_iters < 0) throw ParameterError("max_iters must be nonnegative");
  const TransitionTensor averaged = sample_mean(samples);
  const MdpModel averaged_model = assemble_model(skeleton, averaged, allowed);

  MsbiResult out;
  Vector<double> v = solve_value(averaged_model, init);
  for (out.iterations = 0; out.iterations < max_iters;) {
    Vector<double> next = bellman_optimality_backup(averaged, allowed, skeleton.reward, skeleton.discount, v);
    ++out.iterations;
    const double diff = (next - v).lpNorm<Eigen::Infinity>();
    v = std::move(next);
    if (diff < tol) break;
  }
  out.policy = greedy_policy(averaged, allowed, v);
  out.value = std::move(v);
  return out;
}

DeterministicPolicy msbi_policy(const ModelPosterior& posterior, const MdpSkeleton& skeleton, std::size_t n_samples,
                                long max_iters, const DeterministicPolicy& init, std::uint64_t seed) {
  if (n_samples < 1) throw ParameterError("MSBI needs at least one sample");
  const auto samples = sample_models(posterior, n_samples, seed);
  return msbi(samples, posterior.allowed_actions(), skeleton, init, max_iters).policy;
}

}  // namespace bayesmdp
