#include "bayesmdp/bayes_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bayesmdp/rng.hpp"

namespace bayesmdp {

void TransitionDataset::validate() const {
  if (n_states <= 0 || n_actions <= 0) throw ValidationError("dataset needs positive n_states and n_actions");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.state < 0 || r.state >= n_states || r.action < 0 || r.action >= n_actions || r.next_state < 0 ||
        r.next_state >= n_states)
      throw ValidationError("dataset record " + std::to_string(i) + " has an index out of range");
  }
}

TransitionCounts::TransitionCounts(Index n_states, Index n_actions, Counts counts)
    : n_states_(n_states), n_actions_(n_actions), counts_(std::move(counts)) {
  if (counts_.rows() != n_states * n_actions || counts_.cols() != n_states)
    throw DimensionError("count matrix must be (n_states*n_actions) x n_states");
  counts_.prune(0L);
  counts_.makeCompressed();
  totals_ = Totals::Zero(n_states, n_actions);
  for (Index row = 0; row < counts_.rows(); ++row)
    for (Counts::InnerIterator it(counts_, row); it; ++it) {
      if (it.value() < 0) throw ValidationError("negative transition count");
      totals_(row / n_actions, row % n_actions) += it.value();
    }
}

TransitionCounts TransitionCounts::operator+(const TransitionCounts& other) const {
  if (n_states_ != other.n_states_ || n_actions_ != other.n_actions_)
    throw DimensionError("cannot add counts over different spaces");
  Counts sum = counts_ + other.counts_;
  return TransitionCounts(n_states_, n_actions_, std::move(sum));
}

bool operator==(const TransitionCounts& a, const TransitionCounts& b) {
  if (a.n_states_ != b.n_states_ || a.n_actions_ != b.n_actions_) return false;
  const TransitionCounts::Counts diff = a.counts_ - b.counts_;
  for (Index row = 0; row < diff.rows(); ++row)
    for (TransitionCounts::Counts::InnerIterator it(diff, row); it; ++it)
      if (it.value() != 0) return false;
  return true;
}

TransitionCounts count_transitions(const TransitionDataset& data) {
  data.validate();
  std::vector<Eigen::Triplet<long>> triplets;
  triplets.reserve(data.records.size());
  for (const auto& r : data.records) triplets.emplace_back(r.state * data.n_actions + r.action, r.next_state, 1L);
  TransitionCounts::Counts counts(data.n_states * data.n_actions, data.n_states);
  counts.setFromTriplets(triplets.begin(), triplets.end());
  return TransitionCounts(data.n_states, data.n_actions, std::move(counts));
}

void PriorSpec::validate(Index n_states) const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("prior alpha must be positive and finite");
  if (kind == PriorKind::sparse_conservative) {
    if (!sink_state) throw ValidationError("sparse_conservative prior requires a sink state");
    if (*sink_state < 0 || *sink_state >= n_states) throw ValidationError("prior sink state out of range");
  } else if (sink_state) {
    throw ValidationError("sink state is only meaningful for the sparse_conservative prior");
  }
}

DirichletPosterior::DirichletPosterior(Index n_states, Index n_actions, PriorKind kind, Concentrations concentrations,
                                       ActionMask allowed)
    : n_states_(n_states),
      n_actions_(n_actions),
      kind_(kind),
      concentrations_(std::move(concentrations)),
      allowed_(std::move(allowed)) {
  if (concentrations_.rows() != n_states * n_actions || concentrations_.cols() != n_states)
    throw DimensionError("concentration matrix must be (n_states*n_actions) x n_states");
  if (allowed_.rows() != n_states || allowed_.cols() != n_actions) throw DimensionError("allowed mask shape");
  concentrations_.makeCompressed();
  for (Index row = 0; row < concentrations_.rows(); ++row) {
    Index nnz = 0;
    for (Concentrations::InnerIterator it(concentrations_, row); it; ++it, ++nnz)
      if (!(it.value() > 0.0)) throw ValidationError("Dirichlet concentrations must be positive");
    if (nnz == 0) throw ValidationError("Dirichlet row with empty support");
  }
}

std::vector<Index> DirichletPosterior::support(Index s, Index a) const {
  std::vector<Index> out;
  for (Concentrations::InnerIterator it(concentrations_, s * n_actions_ + a); it; ++it) out.push_back(it.col());
  return out;
}

Vector<double> DirichletPosterior::concentration(Index s, Index a) const {
  std::vector<double> values;
  for (Concentrations::InnerIterator it(concentrations_, s * n_actions_ + a); it; ++it) values.push_back(it.value());
  return Eigen::Map<const Vector<double>>(values.data(), static_cast<Index>(values.size()));
}

TransitionTensor DirichletPosterior::sample(std::uint64_t seed, std::uint64_t index) const {
  Rng rng = substream(seed, {index});
  TransitionTensor::Rows rows = concentrations_;
  const auto* outer = rows.outerIndexPtr();
  double* values = rows.valuePtr();
  for (Index row = 0; row < rows.rows(); ++row) {
    const Index begin = outer[row];
    const Index end = outer[row + 1];
    if (end - begin == 1) {
      values[begin] = 1.0;
      continue;
    }
    double top = -std::numeric_limits<double>::infinity();
    for (Index k = begin; k < end; ++k) {
      values[k] = log_gamma_variate(values[k], rng);
      top = std::max(top, values[k]);
    }
    double total = 0.0;
    for (Index k = begin; k < end; ++k) {
      values[k] = std::exp(values[k] - top);
      total += values[k];
    }
    for (Index k = begin; k < end; ++k) values[k] /= total;
  }
  return TransitionTensor(n_states_, n_actions_, std::move(rows));
}

TransitionTensor DirichletPosterior::mean() const {
  TransitionTensor::Rows rows = concentrations_;
  for (Index row = 0; row < rows.rows(); ++row) {
    const double total = rows.row(row).sum();
    for (TransitionTensor::Rows::InnerIterator it(rows, row); it; ++it) it.valueRef() /= total;
  }
  return TransitionTensor(n_states_, n_actions_, std::move(rows));
}

MixturePosterior::MixturePosterior(std::vector<TransitionTensor> atoms, ActionMask allowed)
    : atoms_(std::move(atoms)), allowed_(std::move(allowed)) {
  if (atoms_.empty()) throw ParameterError("mixture posterior needs at least one atom");
  for (const auto& atom : atoms_)
    if (atom.n_states() != atoms_.front().n_states() || atom.n_actions() != atoms_.front().n_actions())
      throw DimensionError("mixture atoms differ in shape");
  if (allowed_.rows() != n_states() || allowed_.cols() != n_actions()) throw DimensionError("allowed mask shape");
}

TransitionTensor MixturePosterior::sample(std::uint64_t seed, std::uint64_t index) const {
  if (atoms_.size() == 1) return atoms_.front();
  Rng rng = substream(seed, {index});
  const auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(atoms_.size()));
  return atoms_[std::min(k, atoms_.size() - 1)];
}

TransitionTensor MixturePosterior::mean() const {
  TransitionTensor::Rows sum = atoms_.front().rows();
  for (std::size_t i = 1; i < atoms_.size(); ++i) sum = sum + atoms_[i].rows();
  sum /= static_cast<double>(atoms_.size());
  return TransitionTensor(n_states(), n_actions(), std::move(sum));
}

ActionMask visited_actions(const TransitionCounts& counts, long min_visits, const TerminalStructure& terminals) {
  const Index S = counts.n_states();
  const Index A = counts.n_actions();
  ActionMask allowed = ActionMask::Constant(S, A, true);
  if (min_visits <= 0) return allowed;
  for (Index s = 0; s < S; ++s) {
    if (terminals.is_terminal(s)) continue;
    bool any = false;
    for (Index a = 0; a < A; ++a) {
      allowed(s, a) = counts.visits(s, a) >= min_visits;
      any = any || allowed(s, a);
    }
    if (!any)
      throw CoverageError("state " + std::to_string(s) + " has no action with at least " +
                              std::to_string(min_visits) + " visits",
                          s);
  }
  return allowed;
}

namespace {

void check_terminals(const TerminalStructure& terminals, Index n_states) {
  if (terminals.terminal.size() == 0) return;
  if (terminals.terminal.size() != n_states) throw DimensionError("terminal mask length differs from n_states");
  if (terminals.terminal.any() && (terminals.sink < 0 || terminals.sink >= n_states))
    throw ValidationError("terminal states require a sink index in range");
}

}  // namespace

DirichletPosterior build_posterior(const TransitionCounts& counts, const PriorSpec& prior, long min_visits,
                                   const TerminalStructure& terminals) {
  const Index S = counts.n_states();
  const Index A = counts.n_actions();
  prior.validate(S);
  check_terminals(terminals, S);
  ActionMask allowed = visited_actions(counts, min_visits, terminals);

  std::vector<Eigen::Triplet<double>> triplets;
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) {
      const Index row = s * A + a;
      if (terminals.is_terminal(s)) {
        triplets.emplace_back(row, terminals.sink, 1.0);
        continue;
      }
      if (prior.kind == PriorKind::symmetric) {
        for (Index j = 0; j < S; ++j) triplets.emplace_back(row, j, prior.alpha + counts.count(s, a, j));
      } else {
        bool sink_seen = false;
        for (TransitionCounts::Counts::InnerIterator it(counts.counts(), row); it; ++it) {
          triplets.emplace_back(row, it.col(), prior.alpha + static_cast<double>(it.value()));
          sink_seen = sink_seen || it.col() == *prior.sink_state;
        }
        if (!sink_seen) triplets.emplace_back(row, *prior.sink_state, prior.alpha);
      }
    }
  DirichletPosterior::Concentrations conc(S * A, S);
  conc.setFromTriplets(triplets.begin(), triplets.end());
  return DirichletPosterior(S, A, prior.kind, std::move(conc), std::move(allowed));
}

std::vector<TransitionTensor> sample_models(const ModelPosterior& posterior, std::uint64_t first,
                                            std::size_t n_samples, std::uint64_t seed) {
  std::vector<TransitionTensor> out;
  out.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) out.push_back(posterior.sample(seed, first + i));
  return out;
}

std::vector<TransitionTensor> sample_models(const ModelPosterior& posterior, std::size_t n_samples,
                                            std::uint64_t seed) {
  return sample_models(posterior, 0, n_samples, seed);
}

TransitionTensor mle_model(const TransitionCounts& counts, const ActionMask& allowed,
                           const TerminalStructure& terminals) {
  const Index S = counts.n_states();
  const Index A = counts.n_actions();
  check_terminals(terminals, S);
  if (allowed.rows() != S || allowed.cols() != A) throw DimensionError("allowed mask shape differs from counts");
  std::vector<TransitionEntry<double>> entries;
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) {
      if (terminals.is_terminal(s)) {
        entries.push_back({s, a, terminals.sink, 1.0});
        continue;
      }
      const long n = counts.visits(s, a);
      if (n == 0) {
        entries.push_back({s, a, s, 1.0});
        continue;
      }
      for (TransitionCounts::Counts::InnerIterator it(counts.counts(), s * A + a); it; ++it)
        entries.push_back({s, a, it.col(), static_cast<double>(it.value()) / static_cast<double>(n)});
    }
  return TransitionTensor::from_entries(S, A, entries);
}

double evidence_nll(const TransitionCounts& counts, double alpha, const ActionMask& allowed) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("evidence_nll requires alpha > 0");
  const Index S = counts.n_states();
  const Index A = counts.n_actions();
  if (allowed.rows() != S || allowed.cols() != A) throw DimensionError("allowed mask shape differs from counts");
  const double outcomes = static_cast<double>(S);
  const double lg_alpha = std::lgamma(alpha);
  const double lg_total_alpha = std::lgamma(outcomes * alpha);
  double nll = 0.0;
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) {
      const long n = counts.visits(s, a);
      if (!allowed(s, a) || n == 0) continue;
      // log p(D_sa) = lgG(K a) - lgG(K a + N) + sum_{j: n_j > 0} [lgG(a + n_j) - lgG(a)]
      double log_evidence = lg_total_alpha - std::lgamma(outcomes * alpha + static_cast<double>(n));
      for (TransitionCounts::Counts::InnerIterator it(counts.counts(), s * A + a); it; ++it)
        log_evidence += std::lgamma(alpha + static_cast<double>(it.value())) - lg_alpha;
      nll -= log_evidence;
    }
  return nll;
}

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0) || !(hi > lo)) throw ParameterError("log grid needs 0 < lo < hi");
  if (n < 2) throw ParameterError("log grid needs at least two points");
  std::vector<double> out(n);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

AlphaSelection select_alpha(const TransitionCounts& counts, const ActionMask& allowed, double lo, double hi) {
  if (!(lo > 0.0) || !(hi > lo)) throw ParameterError("select_alpha needs 0 < lo < hi");
  auto objective = [&](double log_alpha) {
    const double v = evidence_nll(counts, std::exp(log_alpha), allowed);
    if (!std::isfinite(v)) throw NumericalError("non-finite evidence NLL at alpha = " + std::to_string(std::exp(log_alpha)));
    return v;
  };

  const std::vector<double> grid = log_grid(lo, hi, 50);
  std::vector<double> values(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) values[i] = objective(std::log(grid[i]));
  const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  std::size_t local_minima = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const bool left_ok = i == 0 || values[i] < values[i - 1];
    const bool right_ok = i + 1 == grid.size() || values[i] <= values[i + 1];
    if (left_ok && right_ok) ++local_minima;
  }

  AlphaSelection out;
  double a = std::log(lo);
  double b = std::log(hi);
  if (local_minima > 1) {
    out.grid_fallback = true;
    a = std::log(grid[best == 0 ? 0 : best - 1]);
    b = std::log(grid[std::min(best + 1, grid.size() - 1)]);
  }

  constexpr double inv_phi = 0.6180339887498948482;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = objective(c);
  double fd = objective(d);
  while (b - a > 1e-4) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = objective(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = objective(d);
    }
  }
  double x = 0.5 * (a + b);
  double fx = objective(x);
  // Minima pinned at the search boundary: golden-section only approaches them.
  for (double edge : {std::log(lo), std::log(hi)}) {
    const double fe = objective(edge);
    if (fe < fx) {
      x = edge;
      fx = fe;
    }
  }
  out.alpha = std::exp(x);
  out.nll = fx;
  return out;
}

}  // namespace bayesmdp
