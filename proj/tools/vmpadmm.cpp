#include "vmpadmm/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace vmpadmm;
  CLI::App app{"Variable-metric proximal ADMM with runtime certification"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string verify = "all";
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--schedule", cfg.schedule, "Schedule JSON file (default: H = I, R = S = 0)");
    sub->add_option("--theta", cfg.theta, "Over-relaxation stepsize in (0, (sqrt(5)+1)/2)");
    sub->add_option("--sigma-margin", cfg.sigma_margin, "Margin added to the minimal feasible sigma");
    sub->add_option("--max-iters", cfg.max_iters, "Iteration cap");
    sub->add_option("--rho", cfg.rho, "Residual tolerance");
    sub->add_option("--eps", cfg.eps, "Ergodic epsilon tolerance");
    sub->add_option("--seed", cfg.seed, "Sampling seed (VMPADMM_SEED overrides)");
    sub->add_option("--verify", verify, "Comma list of hpe,bounds,memberships,fejer (or all, none)");
  };

  CLI::App* solve = app.add_subcommand("solve", "Run one certified solve");
  solve->add_option("--problem", cfg.problem, "Problem JSON file or gen:kind:dims:seed")->required();
  add_common(solve);
  solve->add_option("--log", cfg.log_path, "CSV iteration log");
  solve->add_option("--report", cfg.report_path, "JSON verification report");

  std::string corpus, out_dir, aggregate;
  int jobs = 1;
  CLI::App* batch = app.add_subcommand("batch", "Run a corpus of instances");
  batch->add_option("--corpus", corpus, "Corpus JSON file or kind:dims:LO-HI[,...]")->required();
  add_common(batch);
  batch->add_option("--out-dir", out_dir, "Directory for per-instance CSV and JSON files");
  batch->add_option("--report", aggregate, "Aggregate JSON report");
  batch->add_option("--jobs", jobs, "Instances run in parallel")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    cfg.verify = parse_verify_flags(verify);
    if (solve->parsed()) return run_solve(cfg);
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    return run_batch(parse_corpus(corpus), cfg, out_dir, aggregate, jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
