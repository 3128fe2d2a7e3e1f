#include "bayesmdp/envs.hpp"

#include <cmath>
#include <string>

#include "bayesmdp/parallel.hpp"
#include "bayesmdp/stats.hpp"

namespace bayesmdp {

void GridworldSpec::validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("gridworld needs positive width and height");
  if (!(p_rand >= 0.0 && p_rand <= 1.0)) throw ValidationError("p_rand must lie in [0, 1]");
  if (!(discount >= 0.0 && discount < 1.0)) throw ValidationError("discount must lie in [0, 1)");
  auto inside = [&](Cell c) { return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height; };
  if (!inside(goal_cell)) throw ValidationError("goal cell outside the grid");
  if (!inside(star_cell)) throw ValidationError("star cell outside the grid");
  for (std::size_t i = 0; i < cliff_cells.size(); ++i) {
    const Cell c = cliff_cells[i];
    if (!inside(c)) throw ValidationError("cliff cell outside the grid");
    if (c == goal_cell) throw ValidationError("cliff cell overlaps the goal");
    for (std::size_t j = 0; j < i; ++j)
      if (cliff_cells[j] == c) throw ValidationError("duplicate cliff cell");
  }
  if (static_cast<Index>(cliff_cells.size()) + 1 >= width * height)
    throw ValidationError("gridworld has no non-terminal cell");
}

MdpModel build_gridworld(const GridworldSpec& spec) {
  spec.validate();
  const Index W = spec.width;
  const Index H = spec.height;
  const Index cells = W * H;
  const Index A = 4;

  Vector<double> reward = Vector<double>::Constant(cells, spec.step_reward);
  std::vector<Index> terminals;
  for (const Cell& c : spec.cliff_cells) {
    reward(spec.state_of(c)) = spec.cliff_reward;
    terminals.push_back(spec.state_of(c));
  }
  reward(spec.state_of(spec.goal_cell)) = spec.goal_reward;
  terminals.push_back(spec.state_of(spec.goal_cell));

  auto move = [&](Cell c, Index action) {
    switch (action) {
      case kUp: c.y = std::max<Index>(0, c.y - 1); break;
      case kDown: c.y = std::min<Index>(H - 1, c.y + 1); break;
      case kLeft: c.x = std::max<Index>(0, c.x - 1); break;
      default: c.x = std::min<Index>(W - 1, c.x + 1); break;
    }
    return spec.state_of(c);
  };

  std::vector<TransitionEntry<double>> entries;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const Cell c{x, y};
      const Index s = spec.state_of(c);
      for (Index a = 0; a < A; ++a) {
        if (spec.p_rand < 1.0) entries.push_back({s, a, move(c, a), 1.0 - spec.p_rand});
        if (spec.p_rand > 0.0) entries.push_back({s, a, move(c, kDown), spec.p_rand});
      }
    }
  const auto transitions = TransitionTensor::from_entries(cells, A, entries);

  StateMask terminal = StateMask::Constant(cells, false);
  for (Index t : terminals) terminal(t) = true;
  Vector<double> rho = Vector<double>::Zero(cells);
  const double n_free = static_cast<double>(cells - static_cast<Index>(terminals.size()));
  for (Index s = 0; s < cells; ++s)
    if (!terminal(s)) rho(s) = 1.0 / n_free;

  return augment_with_sink<double>(reward, spec.discount, rho, transitions, all_actions(cells, A), terminals);
}

Vector<double> synthetic_reward(Index n_states, std::uint64_t reward_seed) {
  Rng rng = substream(reward_seed, {0x5e3a7d});
  Vector<double> r(n_states);
  for (Index s = 0; s < n_states; ++s) r(s) = standard_normal(rng);
  return r;
}

MdpModel build_synthetic_mdp(const SyntheticSpec& spec) {
  if (spec.n_states <= 0 || spec.n_actions <= 0) throw ValidationError("synthetic MDP needs positive sizes");
  if (spec.visits_per_state_action < 1) throw ValidationError("visits per state-action must be at least 1");
  const Index S = spec.n_states;
  const Index A = spec.n_actions;
  std::vector<TransitionEntry<double>> entries;
  Rng rng = substream(spec.seed, {0xd1c1e7});
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) {
      Vector<double> row(S);
      for (Index j = 0; j < S; ++j) {
        double u = uniform01(rng);
        while (u <= 0.0) u = uniform01(rng);
        row(j) = -std::log(u);  // Gamma(1, 1)
      }
      row /= row.sum();
      for (Index j = 0; j < S; ++j) entries.push_back({s, a, j, row(j)});
    }

  MdpModel model;
  model.skeleton.reward = spec.reward.size() == 0 ? synthetic_reward(S, spec.reward_seed) : spec.reward;
  if (model.skeleton.reward.size() != S) throw DimensionError("synthetic reward length differs from n_states");
  model.skeleton.discount = spec.discount;
  model.skeleton.initial_dist = Vector<double>::Constant(S, 1.0 / static_cast<double>(S));
  model.skeleton.terminal = StateMask::Constant(S, false);
  model.transitions = TransitionTensor::from_entries(S, A, entries);
  model.allowed_actions = all_actions(S, A);
  validate(model);
  return model;
}

namespace {

TransitionTensor casino_dynamics(double theta) {
  std::vector<TransitionEntry<double>> entries{
      {Casino::kCasino, Casino::kLeave, Casino::kSink, 1.0},
      {Casino::kWin, Casino::kPlay, Casino::kSink, 1.0},
      {Casino::kWin, Casino::kLeave, Casino::kSink, 1.0},
      {Casino::kSink, Casino::kPlay, Casino::kSink, 1.0},
      {Casino::kSink, Casino::kLeave, Casino::kSink, 1.0},
  };
  if (theta > 0.0) entries.push_back({Casino::kCasino, Casino::kPlay, Casino::kCasino, theta});
  if (theta < 1.0) entries.push_back({Casino::kCasino, Casino::kPlay, Casino::kWin, 1.0 - theta});
  return TransitionTensor::from_entries(3, 2, entries);
}

}  // namespace

Casino build_casino(double payout, double discount) {
  if (!(payout > 0.0)) throw ValidationError("casino payout must be positive");
  if (!(discount > 0.0 && discount < 1.0)) throw ValidationError("casino discount must lie in (0, 1)");
  MdpSkeleton skeleton;
  skeleton.reward = Vector<double>(3);
  skeleton.reward << -1.0, payout, 0.0;
  skeleton.discount = discount;
  skeleton.initial_dist = Vector<double>(3);
  skeleton.initial_dist << 1.0, 0.0, 0.0;
  skeleton.terminal = StateMask(3);
  skeleton.terminal << false, true, true;
  skeleton.sink = Casino::kSink;
  ActionMask allowed = all_actions(3, 2);
  MixturePosterior posterior({casino_dynamics(0.0), casino_dynamics(1.0)}, allowed);
  return Casino{std::move(skeleton), std::move(posterior), std::move(allowed)};
}

double casino_value(double play_prob, double theta, double payout, double discount) {
  return (-1.0 + discount * play_prob * (1.0 - theta) * payout) / (1.0 - discount * play_prob * theta);
}

double casino_mixture_value(double play_prob, double payout, double discount) {
  return 0.5 * (-1.0 + discount * play_prob * payout - 1.0 / (1.0 - discount * play_prob));
}

StochasticPolicy casino_policy(double play_prob) {
  if (!(play_prob >= 0.0 && play_prob <= 1.0)) throw ValidationError("play probability must lie in [0, 1]");
  Matrix<double> probs(3, 2);
  probs << play_prob, 1.0 - play_prob, 0.5, 0.5, 0.5, 0.5;
  return StochasticPolicy::from_probabilities(probs, all_actions(3, 2));
}

Index sample_next_state(const TransitionTensor& transitions, Index s, Index a, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  Index last = -1;
  for (TransitionTensor::Rows::InnerIterator it(transitions.rows(), transitions.row_index(s, a)); it; ++it) {
    if (it.value() <= 0.0) continue;
    acc += it.value();
    last = it.col();
    if (u < acc) return it.col();
  }
  if (last < 0) throw ValidationError("empty transition row at state " + std::to_string(s));
  return last;
}

namespace {

std::vector<Index> non_terminal_states(const MdpModel& model) {
  std::vector<Index> out;
  for (Index s = 0; s < model.n_states(); ++s)
    if (!model.skeleton.is_terminal(s)) out.push_back(s);
  return out;
}

std::vector<std::vector<Index>> allowed_lists(const MdpModel& model) {
  std::vector<std::vector<Index>> out(model.n_states());
  for (Index s = 0; s < model.n_states(); ++s)
    for (Index a = 0; a < model.n_actions(); ++a)
      if (model.allowed_actions(s, a)) out[s].push_back(a);
  return out;
}

Index pick(std::size_t n, Rng& rng) {
  return static_cast<Index>(std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n))));
}

}  // namespace

TransitionDataset sample_dataset_uniform(const MdpModel& model, std::size_t n_transitions, std::uint64_t seed) {
  validate(model);
  const auto states = non_terminal_states(model);
  if (states.empty()) throw ValidationError("model has no non-terminal state to spawn in");
  const auto actions = allowed_lists(model);
  TransitionDataset data{model.n_states(), model.n_actions(), {}};
  data.records.reserve(n_transitions);
  for (std::size_t i = 0; i < n_transitions; ++i) {
    Rng rng = substream(seed, {i});
    const Index s = states[pick(states.size(), rng)];
    const Index a = actions[s][pick(actions[s].size(), rng)];
    data.records.push_back({s, a, sample_next_state(model.transitions, s, a, rng)});
  }
  return data;
}

TransitionDataset sample_dataset_per_sa(const MdpModel& model, long visits_per_sa, std::uint64_t seed) {
  validate(model);
  if (visits_per_sa < 0) throw ValidationError("visits per state-action must be nonnegative");
  TransitionDataset data{model.n_states(), model.n_actions(), {}};
  for (Index s : non_terminal_states(model))
    for (Index a = 0; a < model.n_actions(); ++a) {
      if (!model.allowed_actions(s, a)) continue;
      for (long k = 0; k < visits_per_sa; ++k) {
        Rng rng = substream(seed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(a),
                                   static_cast<std::uint64_t>(k)});
        data.records.push_back({s, a, sample_next_state(model.transitions, s, a, rng)});
      }
    }
  return data;
}

RolloutEstimate rollout_return(const MdpModel& model, const StochasticPolicy& policy, long horizon,
                               std::size_t n_episodes, std::uint64_t seed, unsigned jobs) {
  validate(model);
  check_policy_fits(model, policy);
  if (horizon < 1) throw ParameterError("rollout horizon must be at least 1");
  if (n_episodes < 1) throw ParameterError("need at least one episode");
  const Matrix<double> probs = policy.probabilities();
  const Index S = model.n_states();
  const Index A = model.n_actions();
  const auto& rho = model.initial_dist();
  const Index sink = model.skeleton.sink;
  const double g = model.discount();

  std::vector<double> returns(n_episodes);
  parallel_for(n_episodes, jobs, [&](std::size_t e) {
    Rng rng = substream(seed, {e});
    Index s = S - 1;
    double u = uniform01(rng);
    for (Index i = 0; i < S; ++i) {
      if (u < rho(i)) {
        s = i;
        break;
      }
      u -= rho(i);
    }
    double ret = 0.0;
    double weight = 1.0;
    for (long t = 0; t < horizon; ++t) {
      if (s == sink) break;  // absorbing, zero reward
      ret += weight * model.reward()(s);
      weight *= g;
      double v = uniform01(rng);
      Index a = -1;
      for (Index b = 0; b < A; ++b) {
        if (probs(s, b) <= 0.0) continue;
        a = b;
        if (v < probs(s, b)) break;
        v -= probs(s, b);
      }
      s = sample_next_state(model.transitions, s, a, rng);
    }
    returns[e] = ret;
  });

  const auto [mean, se] = mean_and_std_error(returns);
  return {mean, se};
}

}  // namespace bayesmdp
