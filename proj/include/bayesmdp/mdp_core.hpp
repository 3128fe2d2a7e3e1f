#pragma once

// Finite-state MDP representation and closed-form solvers for the first two
// moments of the discounted return.
//
// Transition tensors P(s'|s,a) are stored as row-major sparse matrices with one
// row per (state, action) pair: row index s * n_actions + a. All linear systems
// are dense and solved by LU with partial pivoting.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bayesmdp/errors.hpp"

namespace bayesmdp {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Per-state boolean mask, n_states x n_actions.
using ActionMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using StateMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// One action index per state.
using DeterministicPolicy = std::vector<Index>;

/// A single entry P(next | state, action) = prob.
template <typename Scalar>
struct TransitionEntry {
  Index state;
  Index action;
  Index next;
  Scalar prob;
};

template <typename Scalar>
class TransitionTensorT {
 public:
  using Rows = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;

  TransitionTensorT() = default;

  TransitionTensorT(Index n_states, Index n_actions, Rows rows)
      : n_states_(n_states), n_actions_(n_actions), rows_(std::move(rows)) {
    if (rows_.rows() != n_states * n_actions || rows_.cols() != n_states)
      throw DimensionError("transition rows must be (n_states*n_actions) x n_states");
    rows_.makeCompressed();
  }

  /// Duplicate (state, action, next) entries are summed.
  static TransitionTensorT from_entries(Index n_states, Index n_actions,
                                        const std::vector<TransitionEntry<Scalar>>& entries) {
    std::vector<Eigen::Triplet<Scalar>> triplets;
    triplets.reserve(entries.size());
    for (const auto& e : entries) {
      if (e.state < 0 || e.state >= n_states || e.action < 0 || e.action >= n_actions ||
          e.next < 0 || e.next >= n_states)
        throw ValidationError("transition entry index out of range");
      triplets.emplace_back(e.state * n_actions + e.action, e.next, e.prob);
    }
    Rows rows(n_states * n_actions, n_states);
    rows.setFromTriplets(triplets.begin(), triplets.end());
    return TransitionTensorT(n_states, n_actions, std::move(rows));
  }

  /// Dense input: one n_states x n_states matrix per action.
  static TransitionTensorT from_dense(const std::vector<Matrix<Scalar>>& per_action) {
    if (per_action.empty()) throw DimensionError("no actions");
    const Index n_states = per_action.front().rows();
    const Index n_actions = static_cast<Index>(per_action.size());
    std::vector<TransitionEntry<Scalar>> entries;
    for (Index a = 0; a < n_actions; ++a) {
      const auto& m = per_action[a];
      if (m.rows() != n_states || m.cols() != n_states)
        throw DimensionError("per-action transition matrices must be square and equal size");
      for (Index s = 0; s < n_states; ++s)
        for (Index t = 0; t < n_states; ++t)
          if (m(s, t) != Scalar(0)) entries.push_back({s, a, t, m(s, t)});
    }
    return from_entries(n_states, n_actions, entries);
  }

  Index n_states() const { return n_states_; }
  Index n_actions() const { return n_actions_; }
  Index row_index(Index s, Index a) const { return s * n_actions_ + a; }

  Scalar operator()(Index s, Index a, Index next) const {
    return rows_.coeff(row_index(s, a), next);
  }

  const Rows& rows() const { return rows_; }

  /// Dense copy of the (s, a) next-state distribution.
  Vector<Scalar> row(Index s, Index a) const {
    Vector<Scalar> out = Vector<Scalar>::Zero(n_states_);
    for (typename Rows::InnerIterator it(rows_, row_index(s, a)); it; ++it) out(it.col()) = it.value();
    return out;
  }

  Matrix<Scalar> dense_action(Index a) const {
    Matrix<Scalar> out = Matrix<Scalar>::Zero(n_states_, n_states_);
    for (Index s = 0; s < n_states_; ++s) out.row(s) = row(s, a).transpose();
    return out;
  }

 private:
  Index n_states_ = 0;
  Index n_actions_ = 0;
  Rows rows_;
};

/// Everything about an MDP except its dynamics: known reward r(s), discount, initial
/// distribution, and which states are terminal. Terminal states (and the absorbing
/// sink they route to) are flagged in `terminal`.
template <typename Scalar>
struct MdpSkeletonT {
  Vector<Scalar> reward;
  Scalar discount = Scalar(0);
  Vector<Scalar> initial_dist;
  StateMask terminal;
  Index sink = -1;  ///< zero-reward absorbing state; -1 when the model has none

  Index n_states() const { return reward.size(); }
  bool is_terminal(Index s) const { return terminal.size() > 0 && terminal(s); }
};

template <typename Scalar>
struct MdpModelT {
  MdpSkeletonT<Scalar> skeleton;
  TransitionTensorT<Scalar> transitions;
  ActionMask allowed_actions;

  Index n_states() const { return transitions.n_states(); }
  Index n_actions() const { return transitions.n_actions(); }
  const Vector<Scalar>& reward() const { return skeleton.reward; }
  Scalar discount() const { return skeleton.discount; }
  const Vector<Scalar>& initial_dist() const { return skeleton.initial_dist; }
};

/// Softmax policy over allowed actions. Logits of -inf are permitted and give
/// exactly zero probability.
template <typename Scalar>
class StochasticPolicyT {
 public:
  StochasticPolicyT() = default;
  StochasticPolicyT(Matrix<Scalar> logits, ActionMask allowed)
      : logits_(std::move(logits)), allowed_(std::move(allowed)) {
    if (logits_.rows() != allowed_.rows() || logits_.cols() != allowed_.cols())
      throw DimensionError("policy logits and mask shapes differ");
    for (Index s = 0; s < allowed_.rows(); ++s) {
      bool any = false;
      for (Index a = 0; a < allowed_.cols(); ++a)
        if (allowed_(s, a) && logits_(s, a) > -std::numeric_limits<Scalar>::infinity()) any = true;
      if (!any) throw ValidationError("policy has no action with finite logit at state " + std::to_string(s));
    }
  }

  static StochasticPolicyT uniform(const ActionMask& allowed) {
    return StochasticPolicyT(Matrix<Scalar>::Zero(allowed.rows(), allowed.cols()), allowed);
  }

  /// Probabilities are taken on the allowed entries; zeros map to -inf logits.
  static StochasticPolicyT from_probabilities(const Matrix<Scalar>& probs, const ActionMask& allowed) {
    Matrix<Scalar> logits(probs.rows(), probs.cols());
    for (Index s = 0; s < probs.rows(); ++s)
      for (Index a = 0; a < probs.cols(); ++a)
        logits(s, a) = probs(s, a) > Scalar(0) ? std::log(probs(s, a))
                                                : -std::numeric_limits<Scalar>::infinity();
    return StochasticPolicyT(std::move(logits), allowed);
  }

  static StochasticPolicyT deterministic(const DeterministicPolicy& actions, const ActionMask& allowed) {
    if (static_cast<Index>(actions.size()) != allowed.rows()) throw DimensionError("policy length mismatch");
    Matrix<Scalar> probs = Matrix<Scalar>::Zero(allowed.rows(), allowed.cols());
    for (Index s = 0; s < allowed.rows(); ++s) {
      const Index a = actions[s];
      if (a < 0 || a >= allowed.cols() || !allowed(s, a))
        throw ValidationError("deterministic policy picks a disallowed action at state " + std::to_string(s));
      probs(s, a) = Scalar(1);
    }
    return from_probabilities(probs, allowed);
  }

  Index n_states() const { return logits_.rows(); }
  Index n_actions() const { return logits_.cols(); }
  const Matrix<Scalar>& logits() const { return logits_; }
  Matrix<Scalar>& logits() { return logits_; }
  const ActionMask& allowed() const { return allowed_; }

  /// Masked softmax, row by row.
  Matrix<Scalar> probabilities() const {
    Matrix<Scalar> p = Matrix<Scalar>::Zero(logits_.rows(), logits_.cols());
    for (Index s = 0; s < logits_.rows(); ++s) {
      Scalar top = -std::numeric_limits<Scalar>::infinity();
      for (Index a = 0; a < logits_.cols(); ++a)
        if (allowed_(s, a)) top = std::max(top, logits_(s, a));
      Scalar total = 0;
      for (Index a = 0; a < logits_.cols(); ++a) {
        if (!allowed_(s, a)) continue;
        p(s, a) = std::exp(logits_(s, a) - top);
        total += p(s, a);
      }
      p.row(s) /= total;
    }
    return p;
  }

 private:
  Matrix<Scalar> logits_;
  ActionMask allowed_;
};

template <typename Scalar>
struct MomentSolutionT {
  Vector<Scalar> value;
  Vector<Scalar> variance;
};

template <typename Scalar>
struct ValueIterationResultT {
  DeterministicPolicy policy;
  Vector<Scalar> value;
  long iterations = 0;
};

using TransitionTensor = TransitionTensorT<double>;
using MdpSkeleton = MdpSkeletonT<double>;
using MdpModel = MdpModelT<double>;
using StochasticPolicy = StochasticPolicyT<double>;
using MomentSolution = MomentSolutionT<double>;
using ValueIterationResult = ValueIterationResultT<double>;

inline ActionMask all_actions(Index n_states, Index n_actions) {
  return ActionMask::Constant(n_states, n_actions, true);
}

namespace detail {

template <typename Scalar>
void check_probability_vector(const Vector<Scalar>& p, const std::string& what) {
  for (Index i = 0; i < p.size(); ++i)
    if (!(p(i) >= Scalar(0))) throw ValidationError(what + " has a negative or NaN entry");
  if (std::abs(p.sum() - Scalar(1)) > Scalar(1e-9)) throw ValidationError(what + " does not sum to 1");
}

}  // namespace detail

/// Throws ValidationError / DimensionError when any model invariant fails.
template <typename Scalar>
void validate(const MdpModelT<Scalar>& model) {
  const Index S = model.n_states();
  const Index A = model.n_actions();
  const auto& sk = model.skeleton;
  if (S <= 0 || A <= 0) throw DimensionError("model needs at least one state and one action");
  if (sk.reward.size() != S || sk.initial_dist.size() != S)
    throw DimensionError("reward / initial distribution length differs from n_states");
  if (model.allowed_actions.rows() != S || model.allowed_actions.cols() != A)
    throw DimensionError("allowed-action mask shape differs from model");
  if (sk.terminal.size() != 0 && sk.terminal.size() != S) throw DimensionError("terminal mask length");
  if (!(sk.discount >= Scalar(0) && sk.discount < Scalar(1))) throw ValidationError("discount must lie in [0, 1)");
  if (!sk.reward.allFinite()) throw ValidationError("reward must be finite");
  detail::check_probability_vector<Scalar>(sk.initial_dist, "initial distribution");
  for (Index s = 0; s < S; ++s)
    if (sk.is_terminal(s) && sk.initial_dist(s) != Scalar(0))
      throw ValidationError("initial distribution puts mass on terminal state " + std::to_string(s));

  const auto& rows = model.transitions.rows();
  for (Index s = 0; s < S; ++s) {
    bool any = false;
    for (Index a = 0; a < A; ++a) {
      if (!model.allowed_actions(s, a)) continue;
      any = true;
      Scalar total = 0;
      for (typename TransitionTensorT<Scalar>::Rows::InnerIterator it(rows, s * A + a); it; ++it) {
        if (!(it.value() >= Scalar(0)))
          throw ValidationError("negative transition probability at (" + std::to_string(s) + ", " +
                                std::to_string(a) + ")");
        total += it.value();
      }
      if (std::abs(total - Scalar(1)) > Scalar(1e-9))
        throw ValidationError("transition row (" + std::to_string(s) + ", " + std::to_string(a) +
                              ") does not sum to 1");
    }
    if (!any) throw CoverageError("state " + std::to_string(s) + " has no allowed action", s);
  }
}

/// T(i, j) = sum_a pi(a|i) P(j|i, a), from a probability matrix over actions.
template <typename Scalar>
Matrix<Scalar> policy_transition_matrix(const TransitionTensorT<Scalar>& transitions,
                                        const Matrix<Scalar>& action_probs) {
  const Index S = transitions.n_states();
  const Index A = transitions.n_actions();
  if (action_probs.rows() != S || action_probs.cols() != A)
    throw DimensionError("policy shape differs from transition tensor");
  Matrix<Scalar> T = Matrix<Scalar>::Zero(S, S);
  const auto& rows = transitions.rows();
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) {
      const Scalar w = action_probs(s, a);
      if (w == Scalar(0)) continue;
      for (typename TransitionTensorT<Scalar>::Rows::InnerIterator it(rows, s * A + a); it; ++it)
        T(s, it.col()) += w * it.value();
    }
  return T;
}

template <typename Scalar>
void check_policy_fits(const MdpModelT<Scalar>& model, const StochasticPolicyT<Scalar>& policy) {
  if (policy.n_states() != model.n_states() || policy.n_actions() != model.n_actions())
    throw DimensionError("policy shape differs from model");
  for (Index s = 0; s < model.n_states(); ++s)
    for (Index a = 0; a < model.n_actions(); ++a)
      if (policy.allowed()(s, a) && !model.allowed_actions(s, a))
        throw DimensionError("policy allows an action the model disallows at state " + std::to_string(s));
}

template <typename Scalar>
Matrix<Scalar> policy_transition_matrix(const MdpModelT<Scalar>& model, const StochasticPolicyT<Scalar>& policy) {
  check_policy_fits(model, policy);
  return policy_transition_matrix(model.transitions, policy.probabilities());
}

namespace detail {

template <typename Scalar>
Vector<Scalar> solve_discounted(const Matrix<Scalar>& T, Scalar factor, const Vector<Scalar>& rhs) {
  const Index S = T.rows();
  Matrix<Scalar> system = Matrix<Scalar>::Identity(S, S) - factor * T;
  Eigen::PartialPivLU<Matrix<Scalar>> lu(system);
  Vector<Scalar> x = lu.solve(rhs);
  if (!x.allFinite()) throw NumericalError("discounted linear system is singular or input is corrupted");
  return x;
}

}  // namespace detail

/// Per-state return variance reward, sum_j T_ij (r_i + g V_j - V_i)^2. Equal to
/// sum_j T_ij (r_i + g V_j)^2 - V_i^2 whenever V solves the Bellman equation, and
/// never negative.
template <typename Scalar>
Vector<Scalar> variance_reward(const Matrix<Scalar>& T, const Vector<Scalar>& reward, Scalar discount,
                               const Vector<Scalar>& value) {
  const Index S = T.rows();
  Vector<Scalar> out(S);
  for (Index i = 0; i < S; ++i) {
    Scalar acc = 0;
    for (Index j = 0; j < S; ++j) {
      const Scalar t = T(i, j);
      if (t == Scalar(0)) continue;
      const Scalar d = reward(i) + discount * value(j) - value(i);
      acc += t * d * d;
    }
    out(i) = acc;
  }
  return out;
}

/// Moments from an already-formed policy transition matrix.
template <typename Scalar>
MomentSolutionT<Scalar> solve_moments(const Matrix<Scalar>& T, const Vector<Scalar>& reward, Scalar discount) {
  MomentSolutionT<Scalar> out;
  out.value = detail::solve_discounted<Scalar>(T, discount, reward);
  const Vector<Scalar> rvar = variance_reward<Scalar>(T, reward, discount, out.value);
  out.variance = detail::solve_discounted<Scalar>(T, discount * discount, rvar).cwiseMax(Scalar(0));
  return out;
}

/// v = (I - g T(pi))^{-1} r.
template <typename Scalar>
Vector<Scalar> solve_value(const MdpModelT<Scalar>& model, const StochasticPolicyT<Scalar>& policy) {
  return detail::solve_discounted<Scalar>(policy_transition_matrix(model, policy), model.discount(), model.reward());
}

/// var = (I - g^2 T(pi))^{-1} r_var(pi), clamped at zero. `value` must be the
/// solve_value result for the same model and policy.
template <typename Scalar>
Vector<Scalar> solve_return_variance(const MdpModelT<Scalar>& model, const StochasticPolicyT<Scalar>& policy,
                                     const Vector<Scalar>& value) {
  if (value.size() != model.n_states()) throw DimensionError("value vector length differs from n_states");
  const Matrix<Scalar> T = policy_transition_matrix(model, policy);
  const Scalar g = model.discount();
  const Vector<Scalar> rvar = variance_reward<Scalar>(T, model.reward(), g, value);
  return detail::solve_discounted<Scalar>(T, g * g, rvar).cwiseMax(Scalar(0));
}

template <typename Scalar>
MomentSolutionT<Scalar> solve_moments(const MdpModelT<Scalar>& model, const StochasticPolicyT<Scalar>& policy) {
  return solve_moments<Scalar>(policy_transition_matrix(model, policy), model.reward(), model.discount());
}

template <typename Scalar>
Vector<Scalar> solve_value(const MdpModelT<Scalar>& model, const DeterministicPolicy& policy) {
  return solve_value(model, StochasticPolicyT<Scalar>::deterministic(policy, model.allowed_actions));
}

/// Greedy action per state for the one-step lookahead r + g P v. Ties within a
/// relative 1e-12 go to the lowest action index.
template <typename Scalar>
DeterministicPolicy greedy_policy(const TransitionTensorT<Scalar>& transitions, const ActionMask& allowed,
                                  const Vector<Scalar>& value) {
  const Index S = transitions.n_states();
  const Index A = transitions.n_actions();
  const Vector<Scalar> q = transitions.rows() * value;
  DeterministicPolicy policy(S, 0);
  for (Index s = 0; s < S; ++s) {
    Index best = -1;
    Scalar best_q = 0;
    for (Index a = 0; a < A; ++a) {
      if (!allowed(s, a)) continue;
      const Scalar qa = q(s * A + a);
      if (best < 0 || qa > best_q + Scalar(1e-12) * (Scalar(1) + std::abs(best_q))) {
        best = a;
        best_q = qa;
      }
    }
    if (best < 0) throw CoverageError("state " + std::to_string(s) + " has no allowed action", s);
    policy[s] = best;
  }
  return policy;
}

/// One Bellman optimality backup: max_a r(s) + g sum_s' P(s'|s,a) v(s').
template <typename Scalar>
Vector<Scalar> bellman_optimality_backup(const TransitionTensorT<Scalar>& transitions, const ActionMask& allowed,
                                         const Vector<Scalar>& reward, Scalar discount,
                                         const Vector<Scalar>& value) {
  const Index S = transitions.n_states();
  const Index A = transitions.n_actions();
  const Vector<Scalar> q = transitions.rows() * value;
  Vector<Scalar> out(S);
  for (Index s = 0; s < S; ++s) {
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    for (Index a = 0; a < A; ++a)
      if (allowed(s, a)) best = std::max(best, q(s * A + a));
    out(s) = reward(s) + discount * best;
  }
  return out;
}

/// Synchronous value iteration. Stops when successive iterates differ by less than
/// `tol` in sup norm, then returns the greedy policy with its exact value.
template <typename Scalar>
ValueIterationResultT<Scalar> value_iteration(const MdpModelT<Scalar>& model, Scalar tol = Scalar(1e-10),
                                              long max_iters = 10'000'000) {
  validate(model);
  ValueIterationResultT<Scalar> out;
  Vector<Scalar> v = Vector<Scalar>::Zero(model.n_states());
  for (out.iterations = 1; out.iterations <= max_iters; ++out.iterations) {
    Vector<Scalar> next =
        bellman_optimality_backup(model.transitions, model.allowed_actions, model.reward(), model.discount(), v);
    const Scalar diff = (next - v).template lpNorm<Eigen::Infinity>();
    v = std::move(next);
    if (diff < tol) break;
  }
  out.policy = greedy_policy(model.transitions, model.allowed_actions, v);
  out.value = solve_value(model, out.policy);
  return out;
}

template <typename Scalar>
MdpModelT<Scalar> assemble_model(const MdpSkeletonT<Scalar>& skeleton, TransitionTensorT<Scalar> transitions,
                                 ActionMask allowed) {
  MdpModelT<Scalar> model{skeleton, std::move(transitions), std::move(allowed)};
  validate(model);
  return model;
}

/// Appends one zero-reward absorbing sink (index n_states). Every listed terminal
/// state keeps its reward and moves to the sink with probability 1 under every
/// action, so a terminal reward is collected exactly once.
template <typename Scalar>
MdpModelT<Scalar> augment_with_sink(const Vector<Scalar>& reward, Scalar discount, const Vector<Scalar>& initial_dist,
                                    const TransitionTensorT<Scalar>& transitions, const ActionMask& allowed,
                                    const std::vector<Index>& terminal_states) {
  const Index S = transitions.n_states();
  const Index A = transitions.n_actions();
  if (reward.size() != S || initial_dist.size() != S || allowed.rows() != S || allowed.cols() != A)
    throw DimensionError("augment_with_sink: inputs disagree on shape");
  const Index sink = S;
  StateMask terminal = StateMask::Constant(S + 1, false);
  for (Index t : terminal_states) {
    if (t < 0 || t >= S) throw ValidationError("terminal state out of range");
    terminal(t) = true;
  }
  terminal(sink) = true;

  std::vector<TransitionEntry<Scalar>> entries;
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) {
      if (terminal(s)) {
        entries.push_back({s, a, sink, Scalar(1)});
        continue;
      }
      for (typename TransitionTensorT<Scalar>::Rows::InnerIterator it(transitions.rows(), s * A + a); it; ++it)
        entries.push_back({s, a, it.col(), it.value()});
    }
  for (Index a = 0; a < A; ++a) entries.push_back({sink, a, sink, Scalar(1)});

  MdpModelT<Scalar> model;
  model.skeleton.reward = Vector<Scalar>::Zero(S + 1);
  model.skeleton.reward.head(S) = reward;
  model.skeleton.discount = discount;
  model.skeleton.initial_dist = Vector<Scalar>::Zero(S + 1);
  model.skeleton.initial_dist.head(S) = initial_dist;
  model.skeleton.terminal = terminal;
  model.skeleton.sink = sink;
  model.transitions = TransitionTensorT<Scalar>::from_entries(S + 1, A, entries);
  model.allowed_actions = ActionMask::Constant(S + 1, A, true);
  for (Index s = 0; s < S; ++s)
    if (!terminal(s)) model.allowed_actions.row(s) = allowed.row(s);
  validate(model);
  return model;
}

/// Sup-norm Bellman residual of v for policy pi, relative to 1 + |v|_inf.
template <typename Scalar>
Scalar bellman_residual(const MdpModelT<Scalar>& model, const StochasticPolicyT<Scalar>& policy,
                        const Vector<Scalar>& v) {
  const Matrix<Scalar> T = policy_transition_matrix(model, policy);
  const Vector<Scalar> r = v - model.reward() - model.discount() * T * v;
  return r.template lpNorm<Eigen::Infinity>() / (Scalar(1) + v.template lpNorm<Eigen::Infinity>());
}

}  // namespace bayesmdp
