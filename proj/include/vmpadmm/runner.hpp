#pragma once

// Single-run and batch drivers behind the command-line tool.

#include "vmpadmm/io.hpp"
#include "vmpadmm/problems.hpp"
#include "vmpadmm/schedule.hpp"
#include "vmpadmm/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace vmpadmm {

struct RunConfig {
  std::string problem;   // file path or gen:kind:dims:seed
  std::string schedule;  // file path; empty selects H = I, R = S = 0
  double theta = 1.0;
  double sigma_margin = 1e-3;
  long max_iters = 1000;
  double rho = 1e-6;
  double eps = 1e-6;
  unsigned long long seed = 0;
  std::string log_path;
  std::string report_path;
  VerifyFlags verify;
  double reference_accuracy = 1e-10;

  void validate() const {
    require(!problem.empty(), "--problem: required");
    require(rho > 0.0, "--rho: must be positive");
    require(eps > 0.0, "--eps: must be positive");
    require(max_iters >= 1, "--max-iters: must be >= 1");
    require(theta_admissible(theta), "--theta: must lie in (0, (sqrt(5)+1)/2), got " + format_real(theta));
  }
};

inline VerifyFlags parse_verify_flags(const std::string& list) {
  VerifyFlags f{false, false, false, false};
  if (list == "all") return VerifyFlags{};
  if (list == "none" || list.empty()) return f;
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "hpe") f.hpe = true;
    else if (tok == "bounds") f.bounds = true;
    else if (tok == "memberships") f.memberships = true;
    else if (tok == "fejer") f.fejer = true;
    else throw Error("--verify: unknown check '" + tok + "' (expected hpe, bounds, memberships, fejer)");
  }
  return f;
}

// VMPADMM_SEED overrides the configured seed.
inline unsigned long long effective_seed(unsigned long long configured) {
  const char* env = std::getenv("VMPADMM_SEED");
  if (env == nullptr || *env == '\0') return configured;
  try {
    std::size_t used = 0;
    const unsigned long long s = std::stoull(env, &used);
    require(used == std::string(env).size(), "");
    return s;
  } catch (const std::exception&) {
    throw Error("VMPADMM_SEED: invalid value '" + std::string(env) + "'");
  }
}

struct SolveOutcome {
  int exit_code = 0;  // 0 verified, 1 configuration or I/O error, 2 verification failure
  std::string error;
  Json report;
  std::vector<AdmmRecord> records;
};

namespace run_detail {

struct CheckSummary {
  bool enabled = true;
  long checked = 0;
  long failures = 0;
  double worst_slack = std::numeric_limits<double>::infinity();
  long first_failure_k = 0;

  void add(long k, bool pass, double slack) {
    ++checked;
    if (!std::isnan(slack)) worst_slack = std::min(worst_slack, slack);
    if (!pass) {
      ++failures;
      if (first_failure_k == 0) first_failure_k = k;
    }
  }
  bool ok() const { return !enabled || failures == 0; }
  Json to_json() const {
    Json j;
    j["enabled"] = enabled;
    j["pass"] = ok();
    j["checked"] = checked;
    j["failures"] = failures;
    j["worst_slack"] = checked > 0 ? Json(worst_slack) : Json(nullptr);
    j["first_failure_k"] = failures > 0 ? Json(first_failure_k) : Json(nullptr);
    return j;
  }
};

inline Json real_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json pass_slack(bool pass, double slack) {
  Json j;
  j["pass"] = pass;
  j["slack"] = real_or_null(slack);
  return j;
}

}  // namespace run_detail

// Runs one certified solve without writing files.
inline SolveOutcome execute(RunConfig cfg) {
  using namespace run_detail;
  SolveOutcome out;
  try {
    cfg.validate();
    cfg.seed = effective_seed(cfg.seed);
    const ProblemSpec problem = load_problem(cfg.problem);
    ScheduleFile sf;
    if (!cfg.schedule.empty()) sf = load_schedule(cfg.schedule, problem);
    const long k_max = sf.k_max.value_or(cfg.max_iters);
    const MetricSchedule sched(sf.rule, problem.A, problem.B, k_max, true);
    const ValidationReport vr = validate(sched);
    if (!vr.ok()) {
      std::string what = "schedule violates the metric drift assumption at k = " +
                         std::to_string(*vr.first_offending_k());
      if (!vr.c_out_of_range.empty()) what += " (c_k outside [0, 1])";
      if (!vr.failures.empty())
        what += " (" + vr.failures.front().family + "_{k+1} not within the (1 + c_k) sandwich of " +
                vr.failures.front().family + "_k)";
      throw Error(what);
    }
    require(sf.rule.kind != ScheduleKind::custom_list || sched.k_max() >= cfg.max_iters,
            "schedule: custom list has " + std::to_string(sched.k_max() + 1) + " entries but --max-iters is " +
                std::to_string(cfg.max_iters));
    const ThetaParams tp = compute_sigma_theta(cfg.theta, cfg.sigma_margin);
    const ReferenceSolution ref = reference_solve(problem, cfg.reference_accuracy);

    SolverOptions opts;
    opts.sigma_margin = cfg.sigma_margin;
    opts.verify = cfg.verify;
    opts.seed = cfg.seed;
    opts.erg_membership_at = {cfg.max_iters};
    VmPadmmSolver solver(problem, sched, tp, ref.z(), std::nullopt, opts);

    std::optional<long> pw_first, erg_first;
    for (long k = 1; k <= cfg.max_iters; ++k) {
      solver.step();
      const AdmmRecord& r = solver.records().back();
      if (!erg_first && r.erg_res_max <= cfg.rho && r.eps_sum <= cfg.eps) erg_first = k;
      if (!pw_first && r.res_max_iter <= cfg.rho) {
        pw_first = k;
        break;
      }
    }
    const long iters = solver.k();
    const KktResidualCertificate fin_erg = solver.ergodic_kkt_certificate();
    const KktResidualCertificate fin_pw = solver.pointwise_kkt_certificate(iters);

    const VerifyFlags& vf = cfg.verify;
    CheckSummary hpe, recon, gid, pw, er, ee, enn, dec, fej, mem, emem;
    hpe.enabled = recon.enabled = vf.hpe;
    pw.enabled = er.enabled = ee.enabled = dec.enabled = vf.bounds;
    enn.enabled = true;
    gid.enabled = true;
    fej.enabled = vf.fejer;
    mem.enabled = emem.enabled = vf.memberships;
    Json per_k = Json::array();
    for (const AdmmRecord& r : solver.records()) {
      hpe.add(r.k, r.hpe_ok, r.hpe_slack);
      recon.add(r.k, r.reconstruction_ok, r.reconstruction_ok ? 0.0 : -1.0);
      gid.add(r.k, r.gamma_identity_ok, r.gamma_identity_ok ? 0.0 : -1.0);
      pw.add(r.k, r.pointwise_ok, r.bound_pointwise - r.res_max_best);
      er.add(r.k, r.erg_res_ok, r.bound_erg_res - r.erg_res_max);
      ee.add(r.k, r.erg_eps_ok, r.bound_erg_eps - r.eps_sum);
      enn.add(r.k, r.eps_nonneg_ok, std::min(r.eps_x, r.eps_y));
      dec.add(r.k, r.decomposition_ok, -r.decomposition_err);
      fej.add(r.k, r.fejer_ok, r.fejer_slack);
      mem.add(r.k, r.membership_ok, -r.membership_worst);
      if (r.erg_membership_checked) emem.add(r.k, r.erg_membership_ok, r.erg_membership_worst);

      Json row;
      row["k"] = r.k;
      if (vf.hpe) row["hpe"] = pass_slack(r.hpe_ok && r.reconstruction_ok, r.hpe_slack);
      if (vf.bounds) {
        row["pointwise_bound"] = pass_slack(r.pointwise_ok, r.bound_pointwise - r.res_max_best);
        row["ergodic_residual_bound"] = pass_slack(r.erg_res_ok, r.bound_erg_res - r.erg_res_max);
        row["ergodic_eps_bound"] = pass_slack(r.erg_eps_ok && r.eps_nonneg_ok && r.decomposition_ok,
                                              r.bound_erg_eps - r.eps_sum);
      }
      if (vf.fejer) row["fejer"] = pass_slack(r.fejer_ok, r.fejer_slack);
      if (vf.memberships) {
        row["membership"] = pass_slack(r.membership_ok, -r.membership_worst);
        if (r.erg_membership_checked)
          row["ergodic_membership"] = pass_slack(r.erg_membership_ok, r.erg_membership_worst);
      }
      per_k.push_back(std::move(row));
    }
    if (vf.memberships) emem.add(iters, fin_erg.memberships_ok, fin_erg.memberships_ok ? 0.0 : -1.0);

    const bool verified = hpe.ok() && recon.ok() && gid.ok() && pw.ok() && er.ok() && ee.ok() && enn.ok() &&
                          dec.ok() && fej.ok() && mem.ok() && emem.ok();
    const RateBounds rb = *solver.rate_bounds();

    Json rep;
    rep["problem"] = problem.name;
    rep["seed"] = cfg.seed;
    rep["theta"] = cfg.theta;
    rep["iterations"] = iters;
    rep["status"] = verified ? "verified" : "verification_failed";
    Json c;
    c["sigma_theta"] = tp.sigma;
    c["sigma_theta_min"] = tp.sigma_min;
    c["sigma_margin"] = tp.margin;
    c["sigma_margin_clamped"] = tp.margin_clamped;
    c["tau_theta"] = tp.tau;
    c["C_S"] = sched.C_S();
    c["C_P"] = sched.C_P();
    c["E"] = rb.E();
    c["E_hat"] = rb.E_hat();
    c["d0_upper_bound"] = *solver.d0();
    c["d0_note"] = "upper bound from one reference solution; the true d0 is an infimum over the solution set";
    c["eta0"] = rb.eta0;
    c["pointwise_coefficient"] = solver.pointwise_coef();
    c["reference_kkt_residual"] = ref.kkt_residual;
    if (ref.kkt_residual > 1e-9) c["warning"] = "reference KKT residual above 1e-9; d0 may not bound the true distance";
    rep["constants"] = c;
    Json checks;
    checks["hpe_condition"] = hpe.to_json();
    checks["residual_reconstruction"] = recon.to_json();
    checks["gamma_residual_identity"] = gid.to_json();
    checks["pointwise_bound"] = pw.to_json();
    checks["ergodic_residual_bound"] = er.to_json();
    checks["ergodic_eps_bound"] = ee.to_json();
    checks["eps_nonnegative"] = enn.to_json();
    checks["eps_decomposition"] = dec.to_json();
    checks["fejer_bound"] = fej.to_json();
    checks["memberships"] = mem.to_json();
    checks["ergodic_memberships"] = emem.to_json();
    rep["checks"] = checks;
    Json stop;
    stop["rho"] = cfg.rho;
    stop["eps"] = cfg.eps;
    stop["pointwise_first_k"] = pw_first ? Json(*pw_first) : Json("not reached");
    stop["ergodic_first_k"] = erg_first ? Json(*erg_first) : Json("not reached");
    stop["stopped_by"] = pw_first ? "pointwise" : "max_iters";
    rep["stopping"] = stop;
    Json fin;
    fin["pointwise_best_i"] = fin_pw.index;
    fin["pointwise_residual"] = fin_pw.dual_max();
    fin["pointwise_bound"] = real_or_null(fin_pw.residual_bound);
    fin["ergodic_residual"] = real_or_null(fin_erg.dual_max());
    fin["ergodic_residual_bound"] = real_or_null(fin_erg.residual_bound);
    fin["eps_x"] = fin_erg.eps_x;
    fin["eps_y"] = fin_erg.eps_y;
    fin["ergodic_eps_bound"] = real_or_null(fin_erg.eps_bound);
    fin["ergodic_certificate_valid"] = fin_erg.valid();
    if (!fin_erg.violation.empty()) fin["ergodic_violation"] = fin_erg.violation;
    const KktResiduals kkt = kkt_residual(problem, solver.x(), solver.y(), solver.gamma());
    fin["kkt_residual_last"] = {kkt.res_x, kkt.res_y, kkt.res_gamma};
    rep["final"] = fin;
    rep["per_k"] = std::move(per_k);

    out.exit_code = verified ? 0 : 2;
    out.report = std::move(rep);
    out.records = solver.records();
  } catch (const std::exception& e) {
    out.exit_code = 1;
    out.error = e.what();
    out.report = Json::object();
    out.report["status"] = "error";
    out.report["error"] = out.error;
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot write '" + path + "'");
  f << text;
  require(static_cast<bool>(f), "write to '" + path + "' failed");
}

inline std::string csv_text(const std::vector<AdmmRecord>& records) {
  std::ostringstream s;
  write_csv(s, records);
  return s.str();
}

// Runs one solve and writes the CSV log and JSON report; returns the exit status.
inline int run_solve(const RunConfig& cfg, std::ostream& err = std::cerr) {
  SolveOutcome o = execute(cfg);
  try {
    if (o.exit_code != 1 && !cfg.log_path.empty()) write_text(cfg.log_path, csv_text(o.records));
    if (!cfg.report_path.empty()) write_text(cfg.report_path, o.report.dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  if (o.exit_code == 1) err << "error: " << o.error << '\n';
  else if (o.exit_code == 2) err << "verification failed for " << o.report.value("problem", "?") << '\n';
  return o.exit_code;
}

struct BatchEntry {
  std::string problem;
  std::optional<double> theta;
  std::string schedule;
};

// A JSON file (array of problem strings or {"problem", "theta", "schedule"} objects) or a
// comma-separated list of kind:dims:seeds items where seeds is N or LO-HI.
inline std::vector<BatchEntry> parse_corpus(const std::string& spec) {
  std::vector<BatchEntry> out;
  if (std::filesystem::is_regular_file(spec)) {
    const Json j = read_json_file(spec);
    require(j.is_array(), "corpus '" + spec + "': expected a JSON array");
    for (std::size_t i = 0; i < j.size(); ++i) {
      const std::string w = "corpus[" + std::to_string(i) + "]";
      BatchEntry e;
      if (j[i].is_string()) {
        e.problem = j[i].get<std::string>();
      } else {
        e.problem = io_detail::field(j[i], "problem", w).get<std::string>();
        if (j[i].contains("theta")) e.theta = io_detail::number(j[i]["theta"], w + ".theta");
        if (j[i].contains("schedule")) e.schedule = j[i]["schedule"].get<std::string>();
      }
      out.push_back(std::move(e));
    }
  } else {
    std::stringstream items(spec);
    std::string item;
    while (std::getline(items, item, ',')) {
      const auto a = item.find(':'), b = item.rfind(':');
      require(a != std::string::npos && b != a, "--corpus: expected kind:dims:seeds, got '" + item + "'");
      const std::string head = item.substr(0, b), seeds = item.substr(b + 1);
      unsigned long long lo = 0, hi = 0;
      try {
        const auto dash = seeds.find('-');
        lo = std::stoull(seeds.substr(0, dash));
        hi = dash == std::string::npos ? lo : std::stoull(seeds.substr(dash + 1));
      } catch (const std::exception&) {
        throw Error("--corpus: invalid seed range '" + seeds + "'");
      }
      require(lo <= hi, "--corpus: empty seed range '" + seeds + "'");
      for (unsigned long long s = lo; s <= hi; ++s) out.push_back({"gen:" + head + ":" + std::to_string(s), {}, ""});
    }
  }
  require(!out.empty(), "--corpus: empty corpus");
  return out;
}

inline std::string sanitize(const std::string& s) {
  std::string o = s;
  for (char& c : o)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  return o;
}

// Runs every corpus entry with the template configuration; per-instance files go to out_dir.
inline int run_batch(const std::vector<BatchEntry>& corpus, const RunConfig& tmpl, const std::string& out_dir,
                     const std::string& aggregate_path, int jobs = 1, std::ostream& err = std::cerr) {
  require(!corpus.empty(), "run_batch: empty corpus");
  std::vector<SolveOutcome> results(corpus.size());
  std::vector<RunConfig> cfgs(corpus.size(), tmpl);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    cfgs[i].problem = corpus[i].problem;
    if (corpus[i].theta) cfgs[i].theta = *corpus[i].theta;
    if (!corpus[i].schedule.empty()) cfgs[i].schedule = corpus[i].schedule;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < corpus.size(); i = next++) results[i] = execute(cfgs[i]);
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(corpus.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  Json agg;
  Json list = Json::array();
  long passed = 0, failed = 0, errors = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const SolveOutcome& o = results[i];
    Json e;
    e["index"] = i;
    e["problem"] = cfgs[i].problem;
    e["theta"] = cfgs[i].theta;
    e["exit_code"] = o.exit_code;
    e["status"] = o.exit_code == 0 ? "pass" : (o.exit_code == 2 ? "fail" : "error");
    if (o.exit_code == 1) {
      e["error"] = o.error;
      ++errors;
    } else {
      Json worst;
      for (const auto& [name, chk] : o.report["checks"].items()) worst[name] = chk["worst_slack"];
      e["worst_slacks"] = worst;
      e["iterations"] = o.report["iterations"];
      (o.exit_code == 0 ? passed : failed)++;
    }
    if (!out_dir.empty() && o.exit_code != 1) {
      const std::string stem = out_dir + "/" + std::to_string(i) + "_" + sanitize(cfgs[i].problem);
      write_text(stem + ".csv", csv_text(o.records));
      write_text(stem + ".json", o.report.dump(2) + "\n");
    }
    e["report"] = o.report;
    list.push_back(std::move(e));
  }
  agg["summary"] = {{"total", corpus.size()}, {"passed", passed}, {"failed", failed}, {"errors", errors}};
  agg["instances"] = std::move(list);
  if (!aggregate_path.empty()) write_text(aggregate_path, agg.dump(2) + "\n");
  for (const auto& e : agg["instances"])
    if (e["status"] != "pass")
      err << e["problem"].get<std::string>() << ": " << e["status"].get<std::string>()
          << (e.contains("error") ? " (" + e["error"].get<std::string>() + ")" : std::string()) << '\n';
  if (failed > 0) return 2;
  if (errors > 0) return 1;
  return 0;
}

}  // namespace vmpadmm
