#pragma once

// Ground-truth environments, offline dataset generation and rollout evaluation.

#include <cstdint>
#include <utility>
#include <vector>

#include "bayesmdp/bayes_model.hpp"
#include "bayesmdp/rng.hpp"

namespace bayesmdp {

struct Cell {
  Index x = 0;  ///< column, 0 = left
  Index y = 0;  ///< row, 0 = top

  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Gridworld where, with probability p_rand, the agent is pushed one cell down
/// regardless of its action. Moves are boundary-clamped.
struct GridworldSpec {
  Index width = 4;
  Index height = 3;
  std::vector<Cell> cliff_cells{{0, 2}, {1, 2}, {2, 2}};
  Cell goal_cell{3, 2};
  Cell star_cell{2, 1};  ///< exemplar state for uncertainty series
  double p_rand = 0.0;
  double discount = 0.999;
  double goal_reward = 1.0;
  double cliff_reward = -1.0;
  double step_reward = 0.0;

  void validate() const;
  Index state_of(Cell c) const { return c.y * width + c.x; }
  Index n_cells() const { return width * height; }
};

enum GridAction : Index { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

/// States are cells in row-major order followed by the absorbing sink. Cliff and
/// goal cells are terminal. rho is uniform over non-terminal cells.
MdpModel build_gridworld(const GridworldSpec& spec);

struct SyntheticSpec {
  Index n_states = 5;
  Index n_actions = 5;
  /// Empty means: draw once from a standard normal with reward_seed.
  Vector<double> reward;
  std::uint64_t reward_seed = 0;
  long visits_per_state_action = 1;
  double discount = 0.9;
  std::uint64_t seed = 0;
};

/// Reward vector shared by every synthetic MDP drawn with this reward_seed.
Vector<double> synthetic_reward(Index n_states, std::uint64_t reward_seed);

/// Each P(.|s,a) drawn independently from a flat Dirichlet; rho uniform; no terminals.
MdpModel build_synthetic_mdp(const SyntheticSpec& spec);

/// Casino: state s (reward -1) with actions play / leave, win state w (reward R,
/// terminal) and the sink. Playing loses (stay in s) with probability theta and
/// wins otherwise; theta ~ Bernoulli(1/2) is the two-atom posterior.
struct Casino {
  static constexpr Index kCasino = 0;
  static constexpr Index kWin = 1;
  static constexpr Index kSink = 2;
  static constexpr Index kPlay = 0;
  static constexpr Index kLeave = 1;

  MdpSkeleton skeleton;
  MixturePosterior posterior;
  ActionMask allowed;
};

Casino build_casino(double payout, double discount);

/// Value at s for one theta: (-1 + g pi (1 - theta) R) / (1 - g pi theta).
double casino_value(double play_prob, double theta, double payout, double discount);

/// Bernoulli(1/2) mixture: (-1 + g pi R - 1 / (1 - g pi)) / 2.
double casino_mixture_value(double play_prob, double payout, double discount);

/// Policy over the casino's 2 actions playing with the given probability.
StochasticPolicy casino_policy(double play_prob);

/// i.i.d. records: uniform non-terminal state, uniform allowed action, next state
/// from the model. Record i depends only on (seed, i), so smaller datasets are
/// prefixes of larger ones.
TransitionDataset sample_dataset_uniform(const MdpModel& model, std::size_t n_transitions, std::uint64_t seed);

/// Exactly k records per allowed non-terminal (state, action), in state-action order.
TransitionDataset sample_dataset_per_sa(const MdpModel& model, long visits_per_sa, std::uint64_t seed);

struct RolloutEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Discounted return sum_{t<horizon} g^t r(s_t) from s_0 ~ rho, averaged over
/// episodes. Episode e uses substream (seed, e).
RolloutEstimate rollout_return(const MdpModel& model, const StochasticPolicy& policy, long horizon,
                               std::size_t n_episodes, std::uint64_t seed, unsigned jobs = 1);

/// Draws s' ~ P(.|s, a).
Index sample_next_state(const TransitionTensor& transitions, Index s, Index a, Rng& rng);

}  // namespace bayesmdp
