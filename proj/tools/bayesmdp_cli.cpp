// bayesmdp_cli: runs the experiments described by a JSON config.
//
//   bayesmdp_cli <command> --config FILE [--seed N] [--out DIR] [--jobs N] [--full-scale]
//
// Commands: gen, uncertainty, compare, casino, alpha, bench. Outputs land in the
// config's output_dir unless --out overrides it.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "bayesmdp/experiment.hpp"
#include "bayesmdp/io.hpp"

using namespace bayesmdp;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> jobs;
  bool full_scale = false;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Options& opts) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("-c,--config", opts.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", opts.seed, "override the config seed");
  sub->add_option("-o,--out", opts.out, "override the output directory");
  sub->add_option("-j,--jobs", opts.jobs, "worker threads")->check(CLI::PositiveNumber);
  sub->add_flag("--full-scale", opts.full_scale, "apply the config's full_scale overrides");
  return sub;
}

ExperimentConfig resolve(const Options& opts) {
  ExperimentConfig cfg = load_config(opts.config, opts.full_scale);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.output_dir = *opts.out;
  if (opts.jobs) cfg.jobs = *opts.jobs;
  cfg.validate();
  return cfg;
}

void report_compare(const CompareSummary& s) {
  std::printf("%-8s %-10s %-10s %5s %12s %12s %6s\n", "size", "reference", "method", "n", "mean_diff", "sem", "wins");
  for (const auto& p : s.paired)
    std::printf("%-8ld %-10s %-10s %5ld %12.5g %12.3g %6ld\n", p.dataset_size, to_string(p.reference).c_str(),
                to_string(p.method).c_str(), p.n, p.mean_diff, p.sem_diff, p.wins);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian policy optimization on tabular MDPs"};
  app.require_subcommand(1);
  Options opts;
  auto* gen = add_command(app, "gen", "write ground-truth models and datasets", opts);
  auto* unc = add_command(app, "uncertainty", "value and variance decomposition vs dataset size", opts);
  auto* cmp = add_command(app, "compare", "train and score policies per seed and dataset size", opts);
  auto* cas = add_command(app, "casino", "two-model casino sweep and optimizer run", opts);
  auto* alp = add_command(app, "alpha", "evidence curve and prior concentration", opts);
  auto* ben = add_command(app, "bench", "optimizer wall-clock", opts);
  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = resolve(opts);
    if (gen->parsed()) {
      const auto s = cmd_gen(cfg);
      std::printf("wrote %zu files to %s\n", s.files.size(), cfg.output_dir.string().c_str());
    } else if (unc->parsed()) {
      const auto s = cmd_uncertainty(cfg);
      std::printf("%-8s %-7s %12s %12s %12s\n", "size", "p_rand", "value", "aleatoric", "epistemic");
      for (const auto& r : s.star_rows)
        std::printf("%-8ld %-7g %12.5g %12.5g %12.5g\n", r.dataset_size, r.p_rand, r.bayes_value, r.aleatoric_std,
                    r.epistemic_std);
    } else if (cmp->parsed()) {
      report_compare(cmd_compare(cfg));
    } else if (cas->parsed()) {
      const auto s = cmd_casino(cfg);
      std::printf("sweep argmax %.4f value %.5f (pi=0: %.5f, pi=1: %.5f)\n", s.sweep_argmax, s.sweep_max,
                  s.value_at_zero, s.value_at_one);
      std::printf("optimizer pi %.4f value %.5f after %ld steps\n", s.optimizer_pi, s.optimizer_value, s.steps);
    } else if (alp->parsed()) {
      const auto s = cmd_alpha(cfg);
      std::printf("alpha %.6g nll %.6g over %zu records%s\n", s.selection.alpha, s.selection.nll, s.n_records,
                  s.selection.grid_fallback ? " (grid fallback)" : "");
    } else if (ben->parsed()) {
      for (const auto& r : cmd_bench(cfg))
        std::printf("S=%-6ld batch=%-5zu resample=%d %.4fs\n", static_cast<long>(r.n_states), r.batch, r.resample ? 1 : 0,
                    r.seconds);
    }
  } catch (const ParameterError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
