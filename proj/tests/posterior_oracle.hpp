#pragma once

// Double-sampling oracle: draw an MDP from the Dirichlet posterior with the
// standard library's gamma sampler, then one trajectory from it. Each pair is
// independent, so the pooled returns have the total (epistemic + aleatoric)
// variance.

#include <random>

#include "bayesmdp/bayes_model.hpp"
#include "oracles.hpp"

namespace oracle {

/// Records with uniform (state, action) and next state drawn from the true model.
inline bayesmdp::TransitionDataset dataset_from(const bayesmdp::MdpModel& m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto P = to_dense(m.transitions);
  bayesmdp::TransitionDataset d{m.n_states(), m.n_actions(), {}};
  std::uniform_int_distribution<Index> s_dist(0, m.n_states() - 1), a_dist(0, m.n_actions() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Index s = s_dist(rng), a = a_dist(rng);
    d.records.push_back({s, a, draw(P[s][a], rng)});
  }
  return d;
}

inline Dense draw_dirichlet_mdp(const bayesmdp::DirichletPosterior& post, std::mt19937_64& rng) {
  const Index S = post.n_states(), A = post.n_actions();
  Dense P(S, std::vector<std::vector<double>>(A, std::vector<double>(S, 0.0)));
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) {
      const auto& support = post.support(s, a);
      const auto conc = post.concentration(s, a);
      if (support.empty()) {
        P[s][a][s] = 1.0;
        continue;
      }
      double total = 0;
      std::vector<double> g(support.size());
      for (std::size_t k = 0; k < support.size(); ++k) {
        std::gamma_distribution<double> gamma(conc(static_cast<Index>(k)), 1.0);
        total += (g[k] = gamma(rng));
      }
      for (std::size_t k = 0; k < support.size(); ++k) P[s][a][support[k]] = g[k] / total;
    }
  return P;
}

inline MomentEstimate double_sampled_return(const bayesmdp::DirichletPosterior& post,
                                            const bayesmdp::MdpSkeleton& skeleton,
                                            const bayesmdp::StochasticPolicy& policy, Index start, long horizon,
                                            std::size_t pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::vector<double> r(skeleton.reward.data(), skeleton.reward.data() + skeleton.reward.size());
  const auto pi = policy.probabilities();
  MomentAccumulator acc;
  for (std::size_t i = 0; i < pairs; ++i) {
    const Dense P = draw_dirichlet_mdp(post, rng);
    acc.add(simulate_return(P, r, pi, skeleton.discount, start, horizon, rng));
  }
  return acc.finish();
}

struct NestedEstimate {
  double value = 0, value_se = 0;
  double aleatoric = 0, aleatoric_se = 0;
  double epistemic = 0, epistemic_se = 0;
};

/// Nested Monte Carlo: n_models posterior draws, each with `rollouts` trajectories.
/// The spread of per-model means overstates the epistemic variance by the mean
/// within-model variance / rollouts, which is subtracted.
inline NestedEstimate nested_moments(const bayesmdp::DirichletPosterior& post, const bayesmdp::MdpSkeleton& skeleton,
                                     const bayesmdp::StochasticPolicy& policy, Index start, long horizon,
                                     std::size_t n_models, std::size_t rollouts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::vector<double> r(skeleton.reward.data(), skeleton.reward.data() + skeleton.reward.size());
  const auto pi = policy.probabilities();
  MomentAccumulator means, within;
  for (std::size_t i = 0; i < n_models; ++i) {
    const Dense P = draw_dirichlet_mdp(post, rng);
    MomentAccumulator acc;
    for (std::size_t k = 0; k < rollouts; ++k) acc.add(simulate_return(P, r, pi, skeleton.discount, start, horizon, rng));
    const auto e = acc.finish();
    means.add(e.mean);
    within.add(e.var);
  }
  const auto m = means.finish(), w = within.finish();
  NestedEstimate out;
  out.value = m.mean;
  out.value_se = m.mean_se;
  out.aleatoric = w.mean;
  out.aleatoric_se = w.mean_se;
  out.epistemic = m.var - w.mean / static_cast<double>(rollouts);
  out.epistemic_se = std::sqrt(m.var_se * m.var_se + w.mean_se * w.mean_se / double(rollouts * rollouts));
  return out;
}

}  // namespace oracle
