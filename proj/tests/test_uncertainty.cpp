#include "doctest.h"

#include <cmath>

#include "bayesmdp/uncertainty.hpp"
#include "posterior_oracle.hpp"

using namespace bayesmdp;

namespace {

/// Dirichlet posterior whose concentrations are `scale` times the model's rows.
DirichletPosterior concentrated_on(const MdpModel& m, double scale) {
  std::vector<Eigen::Triplet<double>> trip;
  const Eigen::MatrixXd rows(m.transitions.rows());
  for (Index i = 0; i < rows.rows(); ++i)
    for (Index j = 0; j < rows.cols(); ++j) trip.emplace_back(i, j, scale * rows(i, j) + 1.0);
  DirichletPosterior::Concentrations c(rows.rows(), rows.cols());
  c.setFromTriplets(trip.begin(), trip.end());
  return {m.n_states(), m.n_actions(), PriorKind::symmetric, c, m.allowed_actions};
}

}  // namespace

TEST_CASE("evaluate_uncertainty: collapsed posteriors") {
  SUBCASE("deterministic MDP with huge counts") {
    std::vector<TransitionEntry<double>> e;
    for (Index s = 0; s < 3; ++s)
      for (Index a = 0; a < 2; ++a) e.push_back({s, a, (s + a) % 3, 1.0});
    MdpModel m = oracle::random_mdp(3, 2, 0.9, 1);
    m.transitions = TransitionTensor::from_entries(3, 2, e);
    const auto rep = evaluate_uncertainty(concentrated_on(m, 1e9), m.skeleton,
                                          StochasticPolicy::deterministic({0, 1, 0}, m.allowed_actions), 200, 4);
    CHECK(rep.epistemic_var.maxCoeff() < 1e-4);
    CHECK(rep.aleatoric_var.maxCoeff() < 1e-6);
  }
  SUBCASE("single-atom mixture equals the exact solvers") {
    const auto m = oracle::random_mdp(4, 3, 0.95, 2);
    const auto pi = oracle::random_policy(4, 3, 3);
    const MixturePosterior post({m.transitions}, m.allowed_actions);
    const auto rep = evaluate_uncertainty(post, m.skeleton, pi, 10, 0);
    const auto mom = solve_moments(m, pi);
    CHECK((rep.bayes_value - mom.value).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((rep.aleatoric_var - mom.variance).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(rep.epistemic_var.cwiseAbs().maxCoeff() < 1e-20);
    CHECK(rep.n_samples == 10);
  }
  SUBCASE("stochastic MDP with huge counts") {
    const auto m = oracle::random_mdp(3, 2, 0.9, 5);
    const auto pi = oracle::random_policy(3, 2, 5);
    const auto rep = evaluate_uncertainty(concentrated_on(m, 1e8), m.skeleton, pi, 500, 6);
    const auto mom = solve_moments(m, pi);
    CHECK((rep.bayes_value - mom.value).cwiseAbs().maxCoeff() < 1e-3);
    CHECK((rep.aleatoric_var - mom.variance).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(rep.epistemic_var.maxCoeff() < 1e-5);
  }
}

TEST_CASE("evaluate_uncertainty: two explicit samples") {
  const auto a = oracle::random_mdp(3, 2, 0.9, 10);
  auto b = oracle::random_mdp(3, 2, 0.9, 11);
  b.skeleton = a.skeleton;
  const auto pi = oracle::random_policy(3, 2, 12);
  const auto rep = evaluate_uncertainty({a.transitions, b.transitions}, a.skeleton, pi);
  const auto ma = solve_moments(a, pi), mb = solve_moments(b, pi);
  for (Index s = 0; s < 3; ++s) {
    CHECK(rep.bayes_value(s) == doctest::Approx(0.5 * (ma.value(s) + mb.value(s))).epsilon(1e-12));
    CHECK(rep.aleatoric_var(s) == doctest::Approx(0.5 * (ma.variance(s) + mb.variance(s))).epsilon(1e-10));
    const double d = ma.value(s) - mb.value(s);
    CHECK(rep.epistemic_var(s) == doctest::Approx(0.5 * d * d).epsilon(1e-10));
  }
}

TEST_CASE("evaluate_uncertainty: nested Monte Carlo oracle") {
  const auto truth = oracle::random_mdp(3, 2, 0.9, 21);
  const auto counts = count_transitions(oracle::dataset_from(truth, 12, 21));
  const auto post = build_posterior(counts, {PriorKind::symmetric, 1.0, {}}, 0);
  const auto pi = oracle::random_policy(3, 2, 22);
  const auto rep = evaluate_uncertainty(post, truth.skeleton, pi, 10000, 23);
  const auto nested = oracle::nested_moments(post, truth.skeleton, pi, 0, 200, 3000, 100, 24);
  auto within = [](double a, double b, double se_a, double se_b) {
    return std::abs(a - b) < 3 * std::sqrt(se_a * se_a + se_b * se_b);
  };
  CHECK(within(rep.bayes_value(0), nested.value, rep.bayes_value_se(0), nested.value_se));
  CHECK(within(rep.aleatoric_var(0), nested.aleatoric, rep.aleatoric_var_se(0), nested.aleatoric_se));
  CHECK(within(rep.epistemic_var(0), nested.epistemic, rep.epistemic_var_se(0), nested.epistemic_se));
}

TEST_CASE("evaluate_uncertainty: properties") {
  const auto truth = oracle::random_mdp(4, 2, 0.9, 31);
  const auto post = build_posterior(count_transitions(oracle::dataset_from(truth, 20, 31)), {}, 0);
  const auto pi = oracle::random_policy(4, 2, 32);
  SUBCASE("non-negative components") {
    const auto rep = evaluate_uncertainty(post, truth.skeleton, pi, 100, 1);
    CHECK(rep.aleatoric_var.minCoeff() >= 0.0);
    CHECK(rep.epistemic_var.minCoeff() >= 0.0);
    CHECK(rep.epistemic_var_se.minCoeff() >= 0.0);
  }
  SUBCASE("identical for any worker count") {
    const auto serial = evaluate_uncertainty(post, truth.skeleton, pi, 64, 7, 1);
    const auto parallel = evaluate_uncertainty(post, truth.skeleton, pi, 64, 7, 3);
    CHECK((serial.bayes_value.array() == parallel.bayes_value.array()).all());
    CHECK((serial.epistemic_var.array() == parallel.epistemic_var.array()).all());
    CHECK((serial.aleatoric_var.array() == parallel.aleatoric_var.array()).all());
  }
  SUBCASE("seed determinism") {
    const auto a = evaluate_uncertainty(post, truth.skeleton, pi, 20, 9);
    const auto b = evaluate_uncertainty(post, truth.skeleton, pi, 20, 9);
    CHECK((a.bayes_value.array() == b.bayes_value.array()).all());
    CHECK(a.seed == 9);
  }
  SUBCASE("epistemic variance shrinks with data") {
    double prev = 1e300;
    for (std::size_t n : {20, 200, 2000, 20000}) {
      const auto p = build_posterior(count_transitions(oracle::dataset_from(truth, n, 31)), {}, 0);
      const double mean_epi = evaluate_uncertainty(p, truth.skeleton, pi, 400, 3).epistemic_std().mean();
      CHECK(mean_epi < prev);
      prev = mean_epi;
    }
  }
  SUBCASE("too few samples") {
    CHECK_THROWS_AS(evaluate_uncertainty(post, truth.skeleton, pi, 1, 0), ParameterError);
  }
}

TEST_CASE("sample-size planners") {
  SUBCASE("exact-value bound") {
    CHECK(plan_samples_exact(0.1, 0.05, 1.0, 0.0) == 738);
    CHECK(samples_bound_exact(0.1, 0.05, 1.0, 0.0) == doctest::Approx(std::log(40.0) * 200.0));
    CHECK(samples_bound_exact(0.2, 0.05, 1.0, 0.5) ==
          doctest::Approx(samples_bound_exact(0.1, 0.05, 1.0, 0.5) / 4).epsilon(1e-14));
    // log(2/delta) * 2 V^2 / eps^2 == 1 with V = 4
    CHECK(plan_samples_exact(std::sqrt(2.0) * 4.0, 2.0 / std::exp(1.0), 2.0, 0.5) == 1);
    CHECK(plan_samples_exact(2.0 * 4.0, 2.0 / std::exp(2.0), 2.0, 0.5) == 1);
    CHECK(plan_samples_exact(std::sqrt(2.0) * 4.0, 2.0 / std::exp(2.0), 2.0, 0.5) == 2);
  }
  SUBCASE("truncated rollout bound is inflated fourfold at half the tolerance") {
    // gamma = 1/2, V_max = 2, T = 5: gamma^T V_max = 1/16 = eps / 2
    const auto mc = samples_bound_mc(0.125, 0.05, 1.0, 0.5, 5);
    REQUIRE(mc.has_value());
    CHECK(*mc == doctest::Approx(4 * samples_bound_exact(0.125, 0.05, 1.0, 0.5)).epsilon(1e-14));
    CHECK(*plan_samples_mc(0.125, 0.05, 1.0, 0.5, 5) == static_cast<std::int64_t>(std::ceil(*mc)));
  }
  SUBCASE("infeasible below the minimum horizon") {
    const auto T = min_horizon(0.001, 1.0, 0.999);
    CHECK(T == 13809);
    CHECK_FALSE(plan_samples_mc(0.001, 0.05, 1.0, 0.999, T - 1).has_value());
    CHECK(plan_samples_mc(0.001, 0.05, 1.0, 0.999, T).has_value());
  }
  SUBCASE("plan summary") {
    const auto plan = make_sample_plan(0.1, 0.05, 1.0, 0.0, 10);
    CHECK(plan.n_samples_exact == 738);
    CHECK(plan.v_max == 1.0);
    CHECK(plan.min_horizon == 1);
  }
  SUBCASE("domain errors") {
    CHECK_THROWS_AS(plan_samples_exact(0.0, 0.05, 1, 0), ParameterError);
    CHECK_THROWS_AS(plan_samples_exact(0.1, 1.0, 1, 0), ParameterError);
    CHECK_THROWS_AS(plan_samples_mc(0.1, 0.05, 1, 0.5, 0), ParameterError);
  }
}
