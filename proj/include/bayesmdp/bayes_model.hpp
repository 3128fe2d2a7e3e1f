#pragma once

// Conjugate Dirichlet inference over transition dynamics from offline counts.

#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "bayesmdp/mdp_core.hpp"

namespace bayesmdp {

struct TransitionRecord {
  Index state = 0;
  Index action = 0;
  Index next_state = 0;

  friend bool operator==(const TransitionRecord&, const TransitionRecord&) = default;
};

struct TransitionDataset {
  Index n_states = 0;
  Index n_actions = 0;
  std::vector<TransitionRecord> records;

  void validate() const;
};

/// Visit counts n(s, a, s') as a row-major sparse (S*A) x S matrix plus per-pair totals.
class TransitionCounts {
 public:
  using Counts = Eigen::SparseMatrix<long, Eigen::RowMajor>;
  using Totals = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>;

  TransitionCounts() = default;
  TransitionCounts(Index n_states, Index n_actions, Counts counts);

  Index n_states() const { return n_states_; }
  Index n_actions() const { return n_actions_; }
  long count(Index s, Index a, Index next) const { return counts_.coeff(s * n_actions_ + a, next); }
  long visits(Index s, Index a) const { return totals_(s, a); }
  long total() const { return totals_.sum(); }
  const Counts& counts() const { return counts_; }
  const Totals& visit_totals() const { return totals_; }

  /// Elementwise sum of two tallies over the same state/action spaces.
  TransitionCounts operator+(const TransitionCounts& other) const;
  friend bool operator==(const TransitionCounts& a, const TransitionCounts& b);

 private:
  Index n_states_ = 0;
  Index n_actions_ = 0;
  Counts counts_;
  Totals totals_;
};

TransitionCounts count_transitions(const TransitionDataset& data);

enum class PriorKind { symmetric, sparse_conservative };

struct PriorSpec {
  PriorKind kind = PriorKind::symmetric;
  double alpha = 1.0;
  /// Required for sparse_conservative: the bad-outcome absorbing state that stays in
  /// the support of every state-action.
  std::optional<Index> sink_state;

  void validate(Index n_states) const;
};

/// Terminal states whose dynamics are known: each routes to `sink` with probability 1.
struct TerminalStructure {
  StateMask terminal;
  Index sink = -1;

  static TerminalStructure none() { return {}; }
  static TerminalStructure from(const MdpSkeleton& skeleton) { return {skeleton.terminal, skeleton.sink}; }
  bool is_terminal(Index s) const { return terminal.size() > 0 && terminal(s); }
};

/// Anything that can produce transition tensors drawn from a distribution over MDPs.
/// Sample `index` for a given `seed` depends only on (seed, index).
class ModelPosterior {
 public:
  virtual ~ModelPosterior() = default;
  virtual Index n_states() const = 0;
  virtual Index n_actions() const = 0;
  virtual const ActionMask& allowed_actions() const = 0;
  virtual TransitionTensor sample(std::uint64_t seed, std::uint64_t index) const = 0;
  /// Posterior-mean dynamics.
  virtual TransitionTensor mean() const = 0;
};

class DirichletPosterior final : public ModelPosterior {
 public:
  using Concentrations = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  DirichletPosterior(Index n_states, Index n_actions, PriorKind kind, Concentrations concentrations,
                     ActionMask allowed);

  Index n_states() const override { return n_states_; }
  Index n_actions() const override { return n_actions_; }
  const ActionMask& allowed_actions() const override { return allowed_; }
  PriorKind kind() const { return kind_; }

  /// Sparsity pattern is the support; values are the Dirichlet concentrations.
  const Concentrations& concentrations() const { return concentrations_; }
  std::vector<Index> support(Index s, Index a) const;
  Vector<double> concentration(Index s, Index a) const;

  TransitionTensor sample(std::uint64_t seed, std::uint64_t index) const override;
  TransitionTensor mean() const override;

 private:
  Index n_states_;
  Index n_actions_;
  PriorKind kind_;
  Concentrations concentrations_;
  ActionMask allowed_;
};

/// Equal-weight mixture over a finite set of transition tensors. A single atom is a
/// collapsed (point-mass) posterior.
class MixturePosterior final : public ModelPosterior {
 public:
  MixturePosterior(std::vector<TransitionTensor> atoms, ActionMask allowed);

  Index n_states() const override { return atoms_.front().n_states(); }
  Index n_actions() const override { return atoms_.front().n_actions(); }
  const ActionMask& allowed_actions() const override { return allowed_; }
  const std::vector<TransitionTensor>& atoms() const { return atoms_; }

  TransitionTensor sample(std::uint64_t seed, std::uint64_t index) const override;
  TransitionTensor mean() const override;

 private:
  std::vector<TransitionTensor> atoms_;
  ActionMask allowed_;
};

/// Conjugate update with the min-visitation action filter (0 disables it). Terminal
/// rows are fixed to the sink.
DirichletPosterior build_posterior(const TransitionCounts& counts, const PriorSpec& prior, long min_visits,
                                   const TerminalStructure& terminals = TerminalStructure::none());

/// Samples 0..n_samples-1 for `seed`.
std::vector<TransitionTensor> sample_models(const ModelPosterior& posterior, std::size_t n_samples,
                                            std::uint64_t seed);

/// Samples first..first+n_samples-1 for `seed`.
std::vector<TransitionTensor> sample_models(const ModelPosterior& posterior, std::uint64_t first,
                                            std::size_t n_samples, std::uint64_t seed);

inline TransitionTensor nominal_model(const ModelPosterior& posterior) { return posterior.mean(); }

/// Action mask after the min-visitation filter; terminal states keep every action.
ActionMask visited_actions(const TransitionCounts& counts, long min_visits,
                           const TerminalStructure& terminals = TerminalStructure::none());

/// Empirical visitation frequencies. Allowed rows without data become self-loops.
TransitionTensor mle_model(const TransitionCounts& counts, const ActionMask& allowed,
                           const TerminalStructure& terminals = TerminalStructure::none());

/// Negative log marginal likelihood of the counts under a symmetric Dirichlet(alpha)
/// prior over all n_states outcomes, summed over allowed state-actions.
double evidence_nll(const TransitionCounts& counts, double alpha, const ActionMask& allowed);

struct AlphaSelection {
  double alpha = 1.0;
  double nll = 0.0;
  bool grid_fallback = false;
};

/// Golden-section search on log(alpha) in [lo, hi] (tolerance 1e-4 in log space).
/// A 50-point log grid is scanned first; if it shows more than one local minimum
/// the search is restricted to the bracket around the best grid point.
AlphaSelection select_alpha(const TransitionCounts& counts, const ActionMask& allowed, double lo = 1e-4,
                            double hi = 10.0);

/// Evenly spaced points in log space, endpoints included.
std::vector<double> log_grid(double lo, double hi, std::size_t n);

}  // namespace bayesmdp
