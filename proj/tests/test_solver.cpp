#include "vmpadmm/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace vmpadmm;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Matrix mat1(double a) { return Matrix::Constant(1, 1, a); }

// Feasibility conditions on sigma written out independently: the 2x2 matrix through its
// eigenvalues, the scalar inequalities as stated.
bool sigma_feasible_oracle(double th, double s) {
  Eigen::Matrix2d m;
  const double off = (s + th - 1) * (1 - th);
  m << s * (1 + th) - 1, off, off, s - (1 - th) * (1 - th);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(m);
  const bool pd = es.eigenvalues()(0) > 0;
  const double lower = std::max({(1 - th) * (1 - th), 1 - th, 1 / (1 + th)});
  const bool ineq2 = (s + th - 1) * (4 - 2 * std::sqrt(2.0)) / (std::sqrt(2.0) * th) < s;
  return pd && m(0, 0) > 0 && lower < s && ineq2;
}

ScheduleRule constant_rule(double beta, double r = 0.0, double s = 0.0) {
  ScheduleRule rule;
  rule.H = OperatorSpec::scaled_identity(beta);
  rule.R = r > 0 ? OperatorSpec::scaled_identity(r) : OperatorSpec::zero();
  rule.S = s > 0 ? OperatorSpec::scaled_identity(s) : OperatorSpec::zero();
  return rule;
}

ScheduleRule decay_rule(double beta, double r = 0.0, double s = 0.0) {
  ScheduleRule rule = constant_rule(beta, r, s);
  rule.kind = ScheduleKind::scaled_identity_decay;
  rule.decay = {1.0, DecayLaw::inverse_square};
  return rule;
}

// Textbook scaled-form ADMM for min 0.5 x^T Q x + q^T x + lambda ||z||_1 s.t. Ax - z = 0.
struct TextbookLassoAdmm {
  Matrix Q, A;
  Vector q;
  double lambda, rho;
  Vector x, z, u;

  void step() {
    const Matrix lhs = Q + rho * A.transpose() * A;
    x = lhs.ldlt().solve(-q + rho * A.transpose() * (z - u));
    const Vector w = A * x + u;
    const double t = lambda / rho;
    z = w.unaryExpr([t](double v) { return v > t ? v - t : (v < -t ? v + t : 0.0); });
    u += A * x - z;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// sigma_theta

TEST(SigmaTheta, ThetaOneClosedForm) {
  const ThetaParams tp = compute_sigma_theta(1.0);
  // M_1(sigma) = diag(2 sigma - 1, sigma): minimal feasible sigma is 1/2
  EXPECT_NEAR(tp.sigma, 0.501, 1e-6);
  EXPECT_NEAR(tp.sigma_min, 0.5, 1e-6);
  EXPECT_NEAR(tp.tau, 8.0 * tp.sigma, 1e-12);
  EXPECT_NEAR(tau_theta(1.0, 0.501), 4.008, 1e-12);
}

TEST(SigmaTheta, BoundaryExclusion) {
  EXPECT_THROW(compute_sigma_theta(0.0), Error);
  EXPECT_THROW(compute_sigma_theta(kGoldenRatio), Error);
  EXPECT_THROW(compute_sigma_theta(1.62), Error);
  EXPECT_THROW(compute_sigma_theta(-0.5), Error);
}

TEST(SigmaTheta, GridOfThetas) {
  for (int i = 0; i < 50; ++i) {
    const double th = 0.01 + (1.60 - 0.01) * i / 49.0;
    const ThetaParams tp = compute_sigma_theta(th);
    EXPECT_TRUE(sigma_feasible_oracle(th, tp.sigma)) << th;
    EXPECT_LT(tp.sigma, 1.0);
    if (!tp.margin_clamped) {
      EXPECT_NEAR(tp.sigma - tp.margin, tp.sigma_min, 1e-15);
      EXPECT_FALSE(sigma_feasible_oracle(th, tp.sigma_min - 1e-6)) << th;
    }
    // every sigma in [sigma_theta, 1) is admissible
    for (double s = tp.sigma; s < 1.0; s += 0.01) EXPECT_TRUE(sigma_feasible_oracle(th, s)) << th << " " << s;
    const double tau = 8 * (tp.sigma + th - 1) * std::max(1.0, th / (2 - th)) / std::sqrt(th * th * th);
    EXPECT_NEAR(tp.tau, tau, 1e-12 * tau);
  }
}

TEST(SigmaTheta, PointwiseCoefficientExample) {
  ThetaParams tp;
  tp.sigma = 0.501;
  tp.tau = 4.008;
  const double expect = std::sqrt((2 * 1.501 * 5.008 + 2 * 0.499 * 4.008) / 0.499);
  EXPECT_NEAR(pointwise_coefficient(tp, 1.0), expect, 1e-12);
}

// ---------------------------------------------------------------------------
// subproblems and multiplier

TEST(Subproblem, ZeroFunctionNormalEquations) {
  const Matrix I = Matrix::Identity(2, 2);
  const auto H = PsdOperator::identity(2, SpaceLabel::Gamma);
  const Vector g = vec({1, 2}), b = vec({0.5, -1}), yp = vec({3, 4}), xp = vec({7, 7});
  const Vector x = solve_x_subproblem(FunctionDescriptor::zero(2), g, yp, xp, H, PsdOperator::zero(2), I, I, b);
  EXPECT_TRUE(x.isApprox(g + b - yp, 1e-14));
  const Vector y =
      solve_y_subproblem(FunctionDescriptor::zero(2), g, x, yp, H, PsdOperator::zero(2, SpaceLabel::Y), I, I, b);
  EXPECT_TRUE(y.isApprox(g + b - x, 1e-14));
}

TEST(Subproblem, L1WithLinearizedMetricIsSoftThreshold) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  Matrix A(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) A(i, j) = nd(rng);
  const double beta = 1.5, lambda = 0.4;
  const auto H = PsdOperator::scaled_identity(3, beta, SpaceLabel::Gamma);
  Eigen::SelfAdjointEigenSolver<Matrix> es(beta * A.transpose() * A);
  const double tau = 1.1 * es.eigenvalues().maxCoeff();
  const PsdOperator R(tau * Matrix::Identity(4, 4) - beta * A.transpose() * A);
  const Matrix B = -Matrix::Identity(3, 3);
  const Vector g = vec({0.3, -0.2, 0.1}), yp = vec({1, -1, 0.5}), xp = vec({0.2, 0.0, -0.4, 1.0}), b = Vector::Zero(3);
  const auto f = FunctionDescriptor::l1(4, lambda);
  const Vector x = solve_x_subproblem(f, g, yp, xp, H, R, A, B, b);
  const Vector w = (tau * xp - beta * A.transpose() * (A * xp + B * yp - b) + A.transpose() * g) / tau;
  const double t = lambda / tau;
  const Vector expect = w.unaryExpr([t](double v) { return v > t ? v - t : (v < -t ? v + t : 0.0); });
  EXPECT_LT((x - expect).norm(), 1e-12);
  // first-order optimality through the membership oracle
  const Vector v = A.transpose() * (g - H.apply(A * x + B * yp - b)) + R.apply(xp - x);
  EXPECT_TRUE(f.contains_subgradient(x, v).ok);
}

TEST(Subproblem, BoxWithDiagonalQuadraticIsClipped) {
  const Matrix I = Matrix::Identity(3, 3);
  const auto H = PsdOperator::scaled_identity(3, 2.0, SpaceLabel::Gamma);
  const auto f = FunctionDescriptor::box(vec({-1, -1, -1}), vec({1, 1, 1}));
  const Vector g = vec({4, 0.5, -9}), yp = Vector::Zero(3), b = Vector::Zero(3);
  const Vector x = solve_x_subproblem(f, g, yp, Vector::Zero(3), H, PsdOperator::zero(3), I, -I, b);
  // per coordinate: argmin -g_i x + x^2 over [-1, 1]
  EXPECT_TRUE(x.isApprox(vec({1, 0.25, -1})));
}

TEST(Subproblem, L1WithDiagonalProximalWeights) {
  const Matrix I = Matrix::Identity(2, 2);
  const double beta = 2.0;
  const auto H = PsdOperator::scaled_identity(2, beta, SpaceLabel::Gamma);
  const auto S = PsdOperator::diagonal(vec({1, 3}), SpaceLabel::Y);
  const auto g = FunctionDescriptor::l1(2, 1.0);
  const Vector gam = vec({1, -1}), x = vec({2, 0.5}), yp = vec({0.5, 0.5}), b = Vector::Zero(2);
  const Vector y = solve_y_subproblem(g, gam, x, yp, H, S, I, I, b);
  // coordinate i: minimize |y| + 0.5 (beta + S_ii) y^2 - (gam_i - beta x_i + S_ii yp_i) y
  for (int i = 0; i < 2; ++i) {
    const double w = beta + S.matrix()(i, i);
    const double q = gam(i) - beta * x(i) + S.matrix()(i, i) * yp(i);
    const double expect = q > 1 ? (q - 1) / w : (q < -1 ? (q + 1) / w : 0.0);
    EXPECT_NEAR(y(i), expect, 1e-15);
  }
}

TEST(Subproblem, QuadraticLinearSolve) {
  const ProblemSpec p = generate(GeneratorKind::consensus_ls, {8, 4}, 2);
  const auto H = PsdOperator::identity(4, SpaceLabel::Gamma);
  const Vector g = Vector::Ones(4), x = Vector::Ones(8), yp = Vector::Zero(8);
  const Vector y = solve_y_subproblem(p.g, g, x, yp, H, PsdOperator::zero(8, SpaceLabel::Y), p.A, p.B, p.b);
  const auto& gq = p.g.as_quadratic();
  const Vector grad = gq.Q * y + gq.q - p.B.transpose() * g + p.B.transpose() * (p.A * x + p.B * y - p.b);
  EXPECT_LE(grad.norm(), 1e-10);
}

TEST(Subproblem, NonDiagonalMetricForL1IsExplained) {
  Matrix A(2, 2);
  A << 1, 1, 0, 1;
  try {
    solve_x_subproblem(FunctionDescriptor::l1(2, 1.0), Vector::Zero(2), Vector::Zero(2), Vector::Zero(2),
                       PsdOperator::identity(2), PsdOperator::zero(2), A, Matrix::Identity(2, 2), Vector::Zero(2));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("linearized"), std::string::npos);
  }
}

TEST(Multiplier, OneDimensionalExample) {
  // H = 2, theta = 0.5, A x + B y - b = 3, gamma_prev = 0
  const auto H = PsdOperator::scaled_identity(1, 2.0, SpaceLabel::Gamma);
  const MultiplierUpdate u =
      update_multiplier(vec({0}), H, 0.5, vec({3}), vec({0}), vec({0}), mat1(1), mat1(1), vec({0}));
  EXPECT_DOUBLE_EQ(u.gamma(0), -3.0);
  EXPECT_DOUBLE_EQ(u.gamma_tilde(0), -6.0);
}

TEST(Multiplier, FeasiblePointKeepsMultiplier) {
  const auto H = PsdOperator::scaled_identity(1, 2.0, SpaceLabel::Gamma);
  const MultiplierUpdate u =
      update_multiplier(vec({1.5}), H, 1.3, vec({2}), vec({1}), vec({4}), mat1(1), mat1(-2), vec({0}));
  EXPECT_DOUBLE_EQ(u.gamma(0), 1.5);
}

TEST(Multiplier, ThetaOneWithUnchangedYGivesEqualMultipliers) {
  const auto H = PsdOperator::scaled_identity(2, 3.0, SpaceLabel::Gamma);
  const Matrix A = Matrix::Identity(2, 2), B = 2.0 * Matrix::Identity(2, 2);
  const MultiplierUpdate u = update_multiplier(vec({1, 2}), H, 1.0, vec({0.3, 0.1}), vec({1, 1}), vec({1, 1}), A, B,
                                               vec({0, 1}));
  EXPECT_TRUE(u.gamma.isApprox(u.gamma_tilde, 1e-15));
}

// ---------------------------------------------------------------------------
// d0

TEST(D0, Examples) {
  ProblemSpec p;
  p.name = "d0";
  p.A = mat1(1);
  p.B = mat1(0);
  p.b = vec({0});
  p.f = FunctionDescriptor::zero(1);
  p.g = FunctionDescriptor::zero(1);
  const Vector zs = vec({1, 2, 3});
  const auto H = PsdOperator::identity(1, SpaceLabel::Gamma);
  const auto R = PsdOperator::zero(1), S = PsdOperator::scaled_identity(1, 4.0, SpaceLabel::Y);
  EXPECT_EQ(compute_d0_admm(p, zs, zs, H, R, S, 1.0), 0.0);
  // R = 0, B = 0, H = I, theta = 1: sqrt(||dy||_S^2 + ||dgamma||^2)
  const Vector z0 = vec({5, 0, 0});
  EXPECT_NEAR(compute_d0_admm(p, z0, zs, H, R, S, 1.0), std::sqrt(4.0 * 4.0 + 9.0), 1e-14);

  // H_0 -> 4 H_0 halves the gamma term and doubles the B^T H_0 B term
  p.B = mat1(1);
  const auto S0 = PsdOperator::zero(1, SpaceLabel::Y);
  const Vector zg = vec({0, 2, 0}), zy = vec({0, 0, 3});
  const auto H4 = PsdOperator::scaled_identity(1, 4.0, SpaceLabel::Gamma);
  EXPECT_NEAR(compute_d0_admm(p, zg, zs, H4, R, S0, 1.0), 0.5 * compute_d0_admm(p, zg, zs, H, R, S0, 1.0), 1e-14);
  EXPECT_NEAR(compute_d0_admm(p, zy, zs, H4, R, S0, 1.0), 2.0 * compute_d0_admm(p, zy, zs, H, R, S0, 1.0), 1e-14);
}

// ---------------------------------------------------------------------------
// solver runs

TEST(Solver, ReducesToTextbookAdmm) {
  for (double beta : {0.5, 1.0, 2.0}) {
    for (unsigned long long seed : {1ULL, 2ULL, 3ULL}) {
      const ProblemSpec p = generate(GeneratorKind::lasso, {12, 6}, seed);
      const MetricSchedule sched(constant_rule(beta), p.A, p.B, 100);
      VmPadmmSolver s(p, sched, compute_sigma_theta(1.0));
      TextbookLassoAdmm tb{p.f.as_quadratic().Q, p.A, p.f.as_quadratic().q, p.g.as_l1().lambda, beta,
                           Vector::Zero(12), Vector::Zero(6), Vector::Zero(6)};
      for (int k = 0; k < 100; ++k) {
        s.step();
        tb.step();
        ASSERT_LE((s.x() - tb.x).cwiseAbs().maxCoeff(), 1e-10) << "k = " << k;
        ASSERT_LE((s.y() - tb.z).cwiseAbs().maxCoeff(), 1e-10);
        ASSERT_LE((s.gamma() + beta * tb.u).cwiseAbs().maxCoeff(), 1e-10);
      }
    }
  }
}

TEST(Solver, KktPointIsAFixedPoint) {
  const ProblemSpec p = generate(GeneratorKind::box_qp, {6, 6}, 3);
  const ReferenceSolution ref = reference_solve(p, 1e-12);
  const MetricSchedule sched(constant_rule(1.0, 0.5, 0.5), p.A, p.B, 10);
  VmPadmmSolver s(p, sched, compute_sigma_theta(1.2), ref.z(), ref.z());
  for (int k = 0; k < 5; ++k) s.step();
  EXPECT_LE((s.x() - ref.x).norm(), 1e-10);
  EXPECT_LE((s.gamma() - ref.gamma).norm(), 1e-10);
  const KktResidualCertificate c = s.pointwise_kkt_certificate(5);
  EXPECT_LE(c.dual_max(), 1e-10);
  EXPECT_TRUE(c.valid());
  EXPECT_LE(*s.d0(), 1e-12);
}

class EmbeddingRun : public ::testing::TestWithParam<std::tuple<int, double, bool>> {};

TEST_P(EmbeddingRun, EveryIterateIsCertified) {
  const auto [kind, theta, drift] = GetParam();
  const ProblemSpec p = generate(static_cast<GeneratorKind>(kind), {16, 8}, 21);
  const ReferenceSolution ref = reference_solve(p, 1e-10);
  const double rs = kind == 2 ? 0.3 : 0.0;
  const ScheduleRule rule = drift ? decay_rule(1.0, rs, 0.0) : constant_rule(1.0, rs, 0.0);
  const MetricSchedule sched(rule, p.A, p.B, 300);
  ASSERT_TRUE(validate(sched).ok());
  const ThetaParams tp = compute_sigma_theta(theta);
  VmPadmmSolver s(p, sched, tp, ref.z());
  for (int k = 1; k <= 300; ++k) {
    const Vector x0 = s.x(), y0 = s.y(), g0 = s.gamma();
    const AdmmIterate& it = s.step();
    const AdmmRecord& r = s.records().back();
    ASSERT_TRUE(r.all_ok()) << "k = " << k << " hpe " << r.hpe_ok << " pw " << r.pointwise_ok << " er "
                            << r.erg_res_ok << " ee " << r.erg_eps_ok << " fej " << r.fejer_ok << " mem "
                            << r.membership_ok << " dec " << r.decomposition_ok << " emem " << r.erg_membership_ok;
    // seminorm decompositions of the embedding
    const MetricTriple& ops = *it.ops;
    const PsdOperator& ginv = it.M.block(2);
    const double lhs1 = seminorm_sq(it.M, concat(x0, y0, g0) - concat(it.x, it.y, it.gamma_tilde));
    const double rhs1 = seminorm_sq(ops.R, x0 - it.x) + seminorm_sq(ops.H, p.B * (y0 - it.y)) +
                        seminorm_sq(ops.S, y0 - it.y) + seminorm_sq(ginv, g0 - it.gamma_tilde);
    EXPECT_LE(std::abs(lhs1 - rhs1), 1e-10 * (1 + std::abs(rhs1)));
    const double lhs2 = seminorm_sq(it.M, concat(it.x, it.y, it.gamma) - concat(it.x, it.y, it.gamma_tilde));
    EXPECT_LE(std::abs(lhs2 - seminorm_sq(ginv, it.gamma - it.gamma_tilde)), 1e-10 * (1 + lhs2));
    // dual norms through preimages against the pseudo-inverse path
    EXPECT_LE(std::abs(dual_seminorm_general(it.M.block(1), it.r_y) - r.res_y_dual), 1e-8 * (1 + r.res_y_dual));
    EXPECT_LE(std::abs(dual_seminorm_general(ginv, it.r_gamma) - r.res_gamma_dual), 1e-8 * (1 + r.res_gamma_dual));
    if (rs > 0)
      EXPECT_LE(std::abs(dual_seminorm_general(it.M.block(0), it.r_x) - r.res_x_dual), 1e-8 * (1 + r.res_x_dual));
    // eta_k per its definition
    const double eta = (tp.sigma - (theta - 1) * (theta - 1)) / (theta * theta) * seminorm_sq(ginv, g0 - it.gamma) +
                       std::sqrt(2.0) * (tp.sigma + theta - 1) / theta * seminorm_sq(ops.S, y0 - it.y);
    EXPECT_NEAR(it.eta, eta, 1e-12 * (1 + eta));
    EXPECT_GE(it.eta, 0.0);
  }
  for (long k : {1L, 10L, 100L, 300L}) EXPECT_TRUE(s.pointwise_kkt_certificate(k).valid()) << k;
  const KktResidualCertificate ec = s.ergodic_kkt_certificate();
  EXPECT_TRUE(ec.valid()) << ec.violation;
  EXPECT_LE((p.A * ec.x + p.B * ec.y - p.b - ec.r_gamma).norm(), 1e-10 * (1 + ec.r_gamma.norm()));
}

INSTANTIATE_TEST_SUITE_P(Grid, EmbeddingRun,
                         ::testing::Combine(::testing::Values(0, 1, 2), ::testing::Values(0.5, 1.0, 1.5),
                                            ::testing::Bool()));

TEST(Solver, FirstErgodicCertificateEqualsPointwiseIterate) {
  const ProblemSpec p = generate(GeneratorKind::lasso, {10, 5}, 7);
  const MetricSchedule sched(constant_rule(1.0), p.A, p.B, 10);
  VmPadmmSolver s(p, sched, compute_sigma_theta(1.0), reference_solve(p).z());
  const AdmmIterate& it = s.step();
  const KktResidualCertificate ec = s.ergodic_kkt_certificate();
  EXPECT_EQ(ec.x, it.x);
  EXPECT_EQ(ec.y, it.y);
  EXPECT_EQ(ec.gamma_tilde, it.gamma_tilde);
  EXPECT_EQ(ec.eps_x, 0.0);
  EXPECT_EQ(ec.eps_y, 0.0);
}

TEST(Solver, LassoErgodicCheckpoints) {
  const ProblemSpec p = generate(GeneratorKind::lasso, {20, 10}, 7);
  const MetricSchedule sched(decay_rule(1.0), p.A, p.B, 500);
  VmPadmmSolver s(p, sched, compute_sigma_theta(1.0), reference_solve(p).z());
  for (long k = 1; k <= 500; ++k) {
    s.step();
    if (k == 10 || k == 100 || k == 500) {
      const KktResidualCertificate ec = s.ergodic_kkt_certificate(200, 99);
      EXPECT_TRUE(ec.valid()) << k << " " << ec.violation;
      EXPECT_GE(ec.eps_x, -1e-10);
      EXPECT_GE(ec.eps_y, -1e-10);
      EXPECT_TRUE(within_bound(ec.eps_x + ec.eps_y, ec.eps_bound));
    }
  }
}

TEST(Solver, CustomListScheduleUsesGeneralAssembly) {
  const ProblemSpec p = generate(GeneratorKind::consensus_ls, {6, 3}, 4);
  ScheduleRule rule;
  rule.kind = ScheduleKind::custom_list;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  Matrix G(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) G(i, j) = 0.2 * nd(rng);
  const Matrix H0 = Matrix::Identity(3, 3) + G * G.transpose();
  for (int k = 0; k <= 40; ++k) {
    const double s = k % 2 == 0 ? 1.0 : 1.0 + 1.0 / ((k + 1.0) * (k + 1.0));
    rule.custom.push_back({PsdOperator(s * H0, Definiteness::definite, SpaceLabel::Gamma),
                           PsdOperator::scaled_identity(6, 0.1 * s), PsdOperator::zero(6, SpaceLabel::Y)});
  }
  for (int k = 0; k < 40; ++k) rule.custom_c.push_back(1.0 / ((k + 1.0) * (k + 1.0)));
  const MetricSchedule sched(rule, p.A, p.B, 40);
  ASSERT_TRUE(validate(sched).ok());
  VmPadmmSolver s(p, sched, compute_sigma_theta(0.8), reference_solve(p).z());
  for (int k = 0; k < 40; ++k) {
    s.step();
    EXPECT_TRUE(s.records().back().all_ok()) << k;
  }
}
