#pragma once

// Plain-text persistence: datasets as CSV, models as JSON, policies and traces as
// CSV. Every writer goes through write_atomic.

#include <filesystem>
#include <string>

#include "bayesmdp/bayes_model.hpp"
#include "bayesmdp/policy_opt.hpp"

namespace bayesmdp {

/// Writes to a sibling temporary file and renames it over `path`, so readers never
/// see a partial file and a failure leaves any previous file intact.
void write_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_text(const std::filesystem::path& path);

/// Header "state,action,next_state", then one integer triple per line.
std::string dataset_to_csv(const TransitionDataset& data);

/// Parses the dataset format. Dimensions of zero are inferred as max index + 1.
TransitionDataset dataset_from_csv(const std::string& text, Index n_states = 0, Index n_actions = 0);

void write_dataset(const std::filesystem::path& path, const TransitionDataset& data);
TransitionDataset read_dataset(const std::filesystem::path& path, Index n_states = 0, Index n_actions = 0);

/// JSON object with n_states, n_actions, reward, discount, initial_dist, the
/// row-major (s, a, s') transition tensor as a flat list, allowed_actions, terminal
/// and sink.
std::string model_to_json(const MdpModel& model);
MdpModel model_from_json(const std::string& text);

void write_model(const std::filesystem::path& path, const MdpModel& model);
MdpModel read_model(const std::filesystem::path& path);

/// Columns state, action, probability for every (state, action) pair.
std::string policy_to_csv(const StochasticPolicy& policy);

/// Columns step, minibatch_objective.
std::string trace_to_csv(const OptimizationTrace& trace);

/// Shortest round-trip decimal form of a double.
std::string format_double(double x);

}  // namespace bayesmdp
