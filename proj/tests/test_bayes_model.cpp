#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "bayesmdp/bayes_model.hpp"
#include "posterior_oracle.hpp"

using namespace bayesmdp;

namespace {

using oracle::dataset_from;

TransitionCounts counts_from_row(Index S, const std::vector<long>& row) {
  TransitionDataset d{S, 1, {}};
  for (Index j = 0; j < static_cast<Index>(row.size()); ++j)
    for (long k = 0; k < row[j]; ++k) d.records.push_back({0, 0, j});
  return count_transitions(d);
}

/// -log of the two-outcome evidence by midpoint quadrature over theta, using the
/// substitution theta = (1 - cos(pi u)) / 2 to tame endpoint singularities.
double quadrature_nll(long n0, long n1, double alpha) {
  const int N = 200000;
  const double pi = 3.14159265358979323846;
  const double log_beta = 2 * std::lgamma(alpha) - std::lgamma(2 * alpha);
  double total = 0;
  for (int k = 0; k < N; ++k) {
    const double u = (k + 0.5) / N;
    const double th = 0.5 * (1 - std::cos(pi * u));
    const double jac = 0.5 * pi * std::sin(pi * u);
    const double log_f = (n0 + alpha - 1) * std::log(th) + (n1 + alpha - 1) * std::log1p(-th) - log_beta;
    total += std::exp(log_f) * jac / N;
  }
  return -std::log(total);
}

}  // namespace

TEST_CASE("count_transitions") {
  SUBCASE("empty dataset") {
    const auto c = count_transitions({3, 2, {}});
    CHECK(c.total() == 0);
    CHECK(c.visit_totals().isZero());
  }
  SUBCASE("repeated record") {
    const auto c = count_transitions({3, 2, {{0, 0, 1}, {0, 0, 1}, {0, 0, 1}}});
    CHECK(c.count(0, 0, 1) == 3);
    CHECK(c.visits(0, 0) == 3);
    CHECK(c.visits(1, 0) == 0);
  }
  SUBCASE("order invariance") {
    const auto m = oracle::random_mdp(4, 3, 0.9, 1);
    auto d = dataset_from(m, 500, 2);
    const auto sorted_counts = count_transitions(d);
    std::shuffle(d.records.begin(), d.records.end(), std::mt19937_64(3));
    CHECK(count_transitions(d) == sorted_counts);
  }
  SUBCASE("out of range index") {
    CHECK_THROWS_AS(count_transitions({3, 2, {{0, 2, 1}}}), ValidationError);
  }
}

TEST_CASE("build_posterior") {
  SUBCASE("no data: posterior equals prior") {
    const auto post = build_posterior(counts_from_row(3, {0, 0, 0}), {PriorKind::symmetric, 1.0, {}}, 0);
    CHECK(post.concentration(0, 0).isApprox(Vector<double>::Ones(3)));
  }
  SUBCASE("conjugate update") {
    const auto post = build_posterior(counts_from_row(3, {2, 0, 1}), {PriorKind::symmetric, 1.0, {}}, 0);
    Vector<double> expected(3);
    expected << 3, 1, 2;
    CHECK(post.concentration(0, 0).isApprox(expected));
    CHECK(post.support(0, 0).size() == 3);
  }
  SUBCASE("sparse conservative support") {
    const auto post = build_posterior(counts_from_row(3, {2, 0, 1}), {PriorKind::sparse_conservative, 1.0, 2}, 0);
    CHECK(post.support(0, 0) == std::vector<Index>{0, 2});
    Vector<double> expected(2);
    expected << 3, 2;
    CHECK(post.concentration(0, 0).isApprox(expected));
  }
  SUBCASE("sparse conservative never supports unobserved non-sink states") {
    const auto m = oracle::random_mdp(6, 3, 0.9, 5);
    const auto counts = count_transitions(dataset_from(m, 40, 6));
    const auto post = build_posterior(counts, {PriorKind::sparse_conservative, 1.0, 5}, 0);
    for (Index s = 0; s < 6; ++s)
      for (Index a = 0; a < 3; ++a)
        for (Index j : post.support(s, a)) CHECK((j == 5 || counts.count(s, a, j) > 0));
  }
  SUBCASE("conjugacy: concentrations add") {
    const auto m = oracle::random_mdp(4, 2, 0.9, 9);
    const auto ca = count_transitions(dataset_from(m, 100, 1));
    const auto cb = count_transitions(dataset_from(m, 70, 2));
    const PriorSpec prior{PriorKind::symmetric, 0.5, {}};
    const auto joint = build_posterior(ca + cb, prior, 0);
    const auto first = build_posterior(ca, prior, 0);
    // sequential update: posterior of A acts as the prior for B
    const Eigen::MatrixXd seq = Eigen::MatrixXd(first.concentrations()) + Eigen::MatrixXd(cb.counts().cast<double>());
    CHECK((Eigen::MatrixXd(joint.concentrations()) - seq).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("min visits filter and coverage error") {
    TransitionDataset d{2, 2, {{0, 0, 1}, {0, 0, 1}, {0, 1, 0}, {1, 0, 0}, {1, 0, 0}}};
    const auto post = build_posterior(count_transitions(d), {}, 2);
    CHECK(post.allowed_actions()(0, 0));
    CHECK_FALSE(post.allowed_actions()(0, 1));
    CHECK_FALSE(post.allowed_actions()(1, 1));
    try {
      build_posterior(count_transitions(d), {}, 3);
      FAIL("expected coverage error");
    } catch (const CoverageError& e) {
      CHECK(e.state() == 0);
    }
  }
  SUBCASE("terminal rows route to the sink") {
    StateMask terminal(3);
    terminal << false, true, true;
    const auto post = build_posterior(counts_from_row(3, {1, 1, 1}), {}, 0, {terminal, 2});
    CHECK(post.support(1, 0) == std::vector<Index>{2});
    CHECK(post.sample(1, 0)(1, 0, 2) == 1.0);
  }
  SUBCASE("invalid prior") {
    CHECK_THROWS_AS(build_posterior(counts_from_row(3, {1, 0, 0}), {PriorKind::symmetric, 0.0, {}}, 0), DomainError);
    CHECK_THROWS_AS(build_posterior(counts_from_row(3, {1, 0, 0}), {PriorKind::sparse_conservative, 1.0, {}}, 0),
                    ValidationError);
  }
}

TEST_CASE("sample_models") {
  SUBCASE("single-support row is exactly one") {
    const auto post = build_posterior(counts_from_row(3, {4, 0, 0}), {PriorKind::sparse_conservative, 1.0, 0}, 0);
    for (const auto& t : sample_models(post, 5, 3)) CHECK(t(0, 0, 0) == 1.0);
  }
  SUBCASE("Dirichlet(1,1) mean") {
    const auto post = build_posterior(counts_from_row(2, {0, 0}), {}, 0);
    double mean = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) mean += post.sample(17, i)(0, 0, 0);
    CHECK(std::abs(mean / n - 0.5) < 0.01);
  }
  SUBCASE("determinism and index independence") {
    const auto m = oracle::random_mdp(4, 2, 0.9, 1);
    const auto post = build_posterior(count_transitions(dataset_from(m, 30, 1)), {PriorKind::symmetric, 0.3, {}}, 0);
    const auto a = sample_models(post, 4, 123);
    const auto b = sample_models(post, 9, 123);
    for (int i = 0; i < 4; ++i) {
      const Eigen::MatrixXd da(a[i].rows()), db(b[i].rows());
      CHECK((da.array() == db.array()).all());
      CHECK((da.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    }
  }
  SUBCASE("tiny concentrations stay normalized") {
    const auto post = build_posterior(counts_from_row(4, {0, 0, 0, 0}), {PriorKind::symmetric, 1e-4, {}}, 0);
    for (const auto& t : sample_models(post, 50, 8)) {
      const Vector<double> row = t.row(0, 0);
      CHECK(row.allFinite());
      CHECK(std::abs(row.sum() - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("nominal_model") {
  SUBCASE("Dirichlet mean") {
    const auto post = build_posterior(counts_from_row(3, {2, 0, 1}), {}, 0);
    const auto nominal = nominal_model(post);
    CHECK(nominal(0, 0, 0) == doctest::Approx(0.5));
    CHECK(nominal(0, 0, 1) == doctest::Approx(1.0 / 6.0));
    CHECK(nominal(0, 0, 2) == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("no data gives uniform rows") {
    const auto nominal = nominal_model(build_posterior(counts_from_row(4, {0, 0, 0, 0}), {}, 0));
    for (Index j = 0; j < 4; ++j) CHECK(nominal(0, 0, j) == doctest::Approx(0.25));
  }
  SUBCASE("matches the mean of posterior draws") {
    const auto m = oracle::random_mdp(3, 2, 0.9, 4);
    const auto post = build_posterior(count_transitions(dataset_from(m, 20, 4)), {}, 0);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(6, 3);
    const int n = 100000;
    for (int i = 0; i < n; ++i) acc += Eigen::MatrixXd(post.sample(5, i).rows());
    acc /= n;
    CHECK((acc - Eigen::MatrixXd(nominal_model(post).rows())).cwiseAbs().maxCoeff() < 0.01);
  }
  SUBCASE("posterior consistency with large counts") {
    const auto m = oracle::random_mdp(3, 2, 0.9, 8);
    const auto counts = count_transitions(dataset_from(m, 60000, 8));
    const auto nominal = nominal_model(build_posterior(counts, {}, 0));
    for (Index s = 0; s < 3; ++s)
      for (Index a = 0; a < 2; ++a)
        for (Index j = 0; j < 3; ++j) {
          const double freq = double(counts.count(s, a, j)) / double(counts.visits(s, a));
          CHECK(std::abs(nominal(s, a, j) - freq) < 0.02);
          CHECK(std::abs(nominal(s, a, j) - m.transitions(s, a, j)) < 0.02);
        }
  }
}

TEST_CASE("mle_model") {
  TransitionDataset d{3, 2, {{0, 0, 1}, {0, 0, 2}, {0, 0, 2}, {1, 1, 0}}};
  const auto mle = mle_model(count_transitions(d), all_actions(3, 2));
  CHECK(mle(0, 0, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(mle(1, 1, 0) == 1.0);
  CHECK(mle(2, 0, 2) == 1.0);  // unvisited row: self loop
}

TEST_CASE("evidence_nll") {
  SUBCASE("empty counts") { CHECK(evidence_nll(counts_from_row(3, {0, 0, 0}), 0.7, all_actions(3, 1)) == 0.0); }
  SUBCASE("counts (1,0), alpha 1") {
    CHECK(std::abs(evidence_nll(counts_from_row(2, {1, 0}), 1.0, all_actions(2, 1)) - std::log(2.0)) < 1e-12);
  }
  SUBCASE("matches quadrature on two-outcome rows") {
    for (auto [n0, n1, alpha] : std::vector<std::tuple<long, long, double>>{
             {1, 0, 1.0}, {3, 2, 0.5}, {0, 7, 2.5}, {10, 4, 0.8}, {5, 5, 3.0}}) {
      const double nll = evidence_nll(counts_from_row(2, {n0, n1}), alpha, all_actions(2, 1));
      CHECK(std::abs(nll - quadrature_nll(n0, n1, alpha)) < 1e-4);
    }
  }
  SUBCASE("invariance to record order and label permutation") {
    const auto m = oracle::random_mdp(4, 2, 0.9, 12);
    auto d = dataset_from(m, 300, 12);
    const double base = evidence_nll(count_transitions(d), 0.4, all_actions(4, 2));
    std::shuffle(d.records.begin(), d.records.end(), std::mt19937_64(1));
    CHECK(evidence_nll(count_transitions(d), 0.4, all_actions(4, 2)) == doctest::Approx(base).epsilon(1e-12));
    const std::vector<Index> perm{2, 0, 3, 1};
    for (auto& r : d.records) r.next_state = perm[r.next_state];
    CHECK(evidence_nll(count_transitions(d), 0.4, all_actions(4, 2)) == doctest::Approx(base).epsilon(1e-12));
  }
  SUBCASE("masked state-actions are ignored") {
    TransitionDataset d{2, 2, {{0, 0, 1}, {0, 1, 1}}};
    ActionMask mask = all_actions(2, 2);
    mask(0, 1) = false;
    CHECK(evidence_nll(count_transitions(d), 1.0, mask) == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("domain error") { CHECK_THROWS_AS(evidence_nll(counts_from_row(2, {1, 0}), 0.0, all_actions(2, 1)), DomainError); }
}

TEST_CASE("select_alpha") {
  auto grid_min = [](const TransitionCounts& c, const ActionMask& mask) {
    const auto grid = log_grid(1e-4, 10.0, 5000);
    double best = grid.front(), best_v = 1e300;
    for (double a : grid) {
      const double v = evidence_nll(c, a, mask);
      if (v < best_v) best_v = v, best = a;
    }
    return std::pair{best, best_v};
  };
  const double cell = std::log(1e5) / 4999;

  SUBCASE("near-deterministic dynamics favour sparse priors") {
    std::vector<TransitionEntry<double>> e;
    for (Index s = 0; s < 6; ++s)
      for (Index a = 0; a < 2; ++a) e.push_back({s, a, (s + a + 1) % 6, 1.0});
    MdpModel m = oracle::random_mdp(6, 2, 0.9, 0);
    m.transitions = TransitionTensor::from_entries(6, 2, e);
    const auto counts = count_transitions(dataset_from(m, 200, 3));
    const auto sel = select_alpha(counts, all_actions(6, 2));
    CHECK(sel.alpha < 1.0);
    const auto [ga, gv] = grid_min(counts, all_actions(6, 2));
    CHECK(std::abs(std::log(sel.alpha) - std::log(ga)) <= cell);
    CHECK(sel.nll <= gv + 1e-9);
  }
  SUBCASE("uniform dynamics with many samples") {
    MdpModel m = oracle::random_mdp(4, 2, 0.9, 0);
    std::vector<TransitionEntry<double>> e;
    for (Index s = 0; s < 4; ++s)
      for (Index a = 0; a < 2; ++a)
        for (Index j = 0; j < 4; ++j) e.push_back({s, a, j, 0.25});
    m.transitions = TransitionTensor::from_entries(4, 2, e);
    const auto counts = count_transitions(dataset_from(m, 5000, 4));
    const auto sel = select_alpha(counts, all_actions(4, 2));
    const auto [ga, gv] = grid_min(counts, all_actions(4, 2));
    CHECK(std::abs(sel.alpha - ga) < 1e-3 + ga * cell);
    CHECK(sel.nll <= gv + 1e-9);
  }
  SUBCASE("unimodal on the coarse grid for random corpora") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto m = oracle::random_mdp(5, 3, 0.9, 40 + seed);
      const auto counts = count_transitions(dataset_from(m, 150, seed));
      CHECK_FALSE(select_alpha(counts, all_actions(5, 3)).grid_fallback);
    }
  }
  SUBCASE("bad range") { CHECK_THROWS_AS(select_alpha(counts_from_row(2, {1, 0}), all_actions(2, 1), 1.0, 0.5), ParameterError); }
}
