// Certified VM-PADMM on a generated lasso instance with a decaying penalty schedule.

#include "vmpadmm/vmpadmm.hpp"

#include <cstdio>

int main() {
  using namespace vmpadmm;
  const ProblemSpec p = generate(GeneratorKind::lasso, {20, 10}, 7);
  const ReferenceSolution ref = reference_solve(p, 1e-10);

  ScheduleRule rule;
  rule.kind = ScheduleKind::scaled_identity_decay;
  rule.H = OperatorSpec::scaled_identity(1.0);
  rule.decay = {1.0, DecayLaw::inverse_square};
  const MetricSchedule sched(rule, p.A, p.B, 300);
  if (!validate(sched).ok()) return 1;

  const ThetaParams tp = compute_sigma_theta(1.5);
  VmPadmmSolver solver(p, sched, tp, ref.z());
  for (int k = 0; k < 300; ++k) solver.step();

  std::printf("sigma_theta = %.6f  tau_theta = %.6f  C_P = %.6f  d0 <= %.6f\n", tp.sigma, tp.tau, sched.C_P(),
              *solver.d0());
  std::printf("%6s %14s %14s %14s %14s\n", "k", "best res", "bound", "erg res", "erg bound");
  for (const AdmmRecord& r : solver.records()) {
    if (r.k % 50 != 0) continue;
    std::printf("%6ld %14.6e %14.6e %14.6e %14.6e%s\n", r.k, r.res_max_best, r.bound_pointwise, r.erg_res_max,
                r.bound_erg_res, r.all_ok() ? "" : "  FAILED");
  }
  return 0;
}
