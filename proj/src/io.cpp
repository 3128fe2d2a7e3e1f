#include "bayesmdp/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include "json.hpp"

namespace bayesmdp {

namespace fs = std::filesystem;
using nlohmann::json;

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string dataset_to_csv(const TransitionDataset& data) {
  std::string out = "state,action,next_state\n";
  for (const auto& r : data.records) {
    out += std::to_string(r.state);
    out += ',';
    out += std::to_string(r.action);
    out += ',';
    out += std::to_string(r.next_state);
    out += '\n';
  }
  return out;
}

namespace {

Index parse_index(std::string_view field, std::size_t line) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  Index value = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size() || field.empty())
    throw IoError("dataset line " + std::to_string(line) + ": expected an integer, got '" + std::string(field) + "'");
  if (value < 0) throw IoError("dataset line " + std::to_string(line) + ": negative index");
  return value;
}

}  // namespace

TransitionDataset dataset_from_csv(const std::string& text, Index n_states, Index n_actions) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset is missing its header line");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "state,action,next_state") throw IoError("dataset header must be 'state,action,next_state'");

  TransitionDataset data{n_states, n_actions, {}};
  Index max_state = -1, max_action = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::string_view view(line);
    const auto c1 = view.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : view.find(',', c1 + 1);
    if (c2 == std::string_view::npos || view.find(',', c2 + 1) != std::string_view::npos)
      throw IoError("dataset line " + std::to_string(line_no) + ": expected three comma-separated fields");
    TransitionRecord r{parse_index(view.substr(0, c1), line_no), parse_index(view.substr(c1 + 1, c2 - c1 - 1), line_no),
                       parse_index(view.substr(c2 + 1), line_no)};
    max_state = std::max({max_state, r.state, r.next_state});
    max_action = std::max(max_action, r.action);
    data.records.push_back(r);
  }
  if (data.n_states == 0) data.n_states = max_state + 1;
  if (data.n_actions == 0) data.n_actions = max_action + 1;
  data.validate();
  return data;
}

void write_dataset(const fs::path& path, const TransitionDataset& data) { write_atomic(path, dataset_to_csv(data)); }

TransitionDataset read_dataset(const fs::path& path, Index n_states, Index n_actions) {
  return dataset_from_csv(read_text(path), n_states, n_actions);
}

std::string model_to_json(const MdpModel& model) {
  const Index S = model.n_states();
  const Index A = model.n_actions();
  json j;
  j["n_states"] = S;
  j["n_actions"] = A;
  j["reward"] = std::vector<double>(model.reward().data(), model.reward().data() + S);
  j["discount"] = model.discount();
  j["initial_dist"] = std::vector<double>(model.initial_dist().data(), model.initial_dist().data() + S);
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(S * A * S));
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a)
      for (Index k = 0; k < S; ++k) flat.push_back(model.transitions(s, a, k));
  j["transitions"] = flat;
  std::vector<std::vector<int>> allowed(S, std::vector<int>(A));
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) allowed[s][a] = model.allowed_actions(s, a) ? 1 : 0;
  j["allowed_actions"] = allowed;
  std::vector<Index> terminal;
  for (Index s = 0; s < S; ++s)
    if (model.skeleton.is_terminal(s)) terminal.push_back(s);
  j["terminal"] = terminal;
  j["sink"] = model.skeleton.sink >= 0 ? json(model.skeleton.sink) : json(nullptr);
  return j.dump(1) + "\n";
}

MdpModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    const Index S = j.at("n_states").get<Index>();
    const Index A = j.at("n_actions").get<Index>();
    if (S <= 0 || A <= 0) throw ValidationError("model dimensions must be positive");
    const auto reward = j.at("reward").get<std::vector<double>>();
    const auto rho = j.at("initial_dist").get<std::vector<double>>();
    const auto flat = j.at("transitions").get<std::vector<double>>();
    if (static_cast<Index>(reward.size()) != S || static_cast<Index>(rho.size()) != S)
      throw DimensionError("reward and initial_dist need n_states entries");
    if (static_cast<Index>(flat.size()) != S * A * S) throw DimensionError("transitions need n_states^2 * n_actions entries");

    MdpModel m;
    m.skeleton.reward = Eigen::Map<const Vector<double>>(reward.data(), S);
    m.skeleton.initial_dist = Eigen::Map<const Vector<double>>(rho.data(), S);
    m.skeleton.discount = j.at("discount").get<double>();
    m.skeleton.terminal = StateMask::Constant(S, false);
    if (j.contains("terminal"))
      for (Index s : j["terminal"].get<std::vector<Index>>()) {
        if (s < 0 || s >= S) throw ValidationError("terminal state out of range");
        m.skeleton.terminal(s) = true;
      }
    m.skeleton.sink = j.contains("sink") && !j["sink"].is_null() ? j["sink"].get<Index>() : -1;

    std::vector<TransitionEntry<double>> entries;
    for (Index s = 0; s < S; ++s)
      for (Index a = 0; a < A; ++a)
        for (Index k = 0; k < S; ++k) {
          const double p = flat[static_cast<std::size_t>((s * A + a) * S + k)];
          if (p != 0.0) entries.push_back({s, a, k, p});
        }
    m.transitions = TransitionTensor::from_entries(S, A, entries);

    m.allowed_actions = all_actions(S, A);
    if (j.contains("allowed_actions")) {
      const auto allowed = j["allowed_actions"].get<std::vector<std::vector<int>>>();
      if (static_cast<Index>(allowed.size()) != S) throw DimensionError("allowed_actions needs n_states rows");
      for (Index s = 0; s < S; ++s) {
        if (static_cast<Index>(allowed[s].size()) != A) throw DimensionError("allowed_actions rows need n_actions entries");
        for (Index a = 0; a < A; ++a) m.allowed_actions(s, a) = allowed[s][a] != 0;
      }
    }
    validate(m);
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed model file: ") + e.what());
  }
}

void write_model(const fs::path& path, const MdpModel& model) { write_atomic(path, model_to_json(model)); }

MdpModel read_model(const fs::path& path) { return model_from_json(read_text(path)); }

std::string policy_to_csv(const StochasticPolicy& policy) {
  const Matrix<double> p = policy.probabilities();
  std::string out = "state,action,probability\n";
  for (Index s = 0; s < p.rows(); ++s)
    for (Index a = 0; a < p.cols(); ++a)
      out += std::to_string(s) + "," + std::to_string(a) + "," + format_double(p(s, a)) + "\n";
  return out;
}

std::string trace_to_csv(const OptimizationTrace& trace) {
  std::string out = "step,minibatch_objective\n";
  for (std::size_t t = 0; t < trace.minibatch_objective.size(); ++t)
    out += std::to_string(t) + "," + format_double(trace.minibatch_objective[t]) + "\n";
  return out;
}

}  // namespace bayesmdp
