#pragma once

// VM-PADMM: subproblem solves, multiplier update, theta-dependent constants,
// KKT residual certificates and the embedding of every iteration into the
// VM-HPE driver.

#include "vmpadmm/common.hpp"
#include "vmpadmm/hpe.hpp"
#include "vmpadmm/linalg.hpp"
#include "vmpadmm/problems.hpp"
#include "vmpadmm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace vmpadmm {

// ---------------------------------------------------------------------------
// sigma_theta and tau_theta

struct ThetaParams {
  double theta = 1.0;
  double sigma = 0.501;      // sigma_theta
  double tau = 4.008;        // tau_theta
  double margin = 1e-3;
  double sigma_min = 0.5;    // feasibility boundary found by the search
  bool margin_clamped = false;  // sigma_min + margin >= 1, midpoint used instead
};

struct SigmaConditions {
  double top_left = 0.0, det = 0.0, lower = 0.0, ineq2_lhs = 0.0;
  bool top_left_ok = false, det_ok = false, lower_ok = false, ineq2_ok = false;
  bool all() const { return top_left_ok && det_ok && lower_ok && ineq2_ok; }
};

inline SigmaConditions sigma_conditions(double theta, double sigma) {
  SigmaConditions c;
  const double off = (sigma + theta - 1.0) * (1.0 - theta);
  c.top_left = sigma * (1.0 + theta) - 1.0;
  const double bottom = sigma - (1.0 - theta) * (1.0 - theta);
  c.det = c.top_left * bottom - off * off;
  c.lower = std::max({(1.0 - theta) * (1.0 - theta), 1.0 - theta, 1.0 / (1.0 + theta)});
  c.ineq2_lhs = (sigma + theta - 1.0) * (4.0 - 2.0 * std::sqrt(2.0)) / (std::sqrt(2.0) * theta);
  c.top_left_ok = c.top_left > 0.0;
  c.det_ok = c.det > 0.0;
  c.lower_ok = c.lower < sigma;
  c.ineq2_ok = c.ineq2_lhs < sigma;
  return c;
}

inline double tau_theta(double theta, double sigma) {
  return 8.0 * (sigma + theta - 1.0) * std::max(1.0, theta / (2.0 - theta)) / std::pow(theta, 1.5);
}

inline ThetaParams compute_sigma_theta(double theta, double margin = 1e-3) {
  require(theta_admissible(theta), "compute_sigma_theta: theta must lie in (0, (sqrt(5)+1)/2)");
  require(margin > 0.0 && margin < 1.0, "compute_sigma_theta: margin must lie in (0, 1)");
  constexpr int kGrid = 10000;
  auto feasible = [theta](double s) { return sigma_conditions(theta, s).all(); };
  // smallest grid index from which every larger grid point is feasible
  int first = -1;
  for (int j = kGrid - 1; j >= 1; --j) {
    if (!feasible(static_cast<double>(j) / kGrid)) break;
    first = j;
  }
  require(first != -1, "compute_sigma_theta: no feasible sigma found (internal error)");
  double lo = static_cast<double>(first - 1) / kGrid, hi = static_cast<double>(first) / kGrid;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  ThetaParams p;
  p.theta = theta;
  p.margin = margin;
  p.sigma_min = hi;
  p.sigma = hi + margin;
  if (p.sigma >= 1.0) {
    p.sigma = 0.5 * (hi + 1.0);
    p.margin_clamped = true;
  }
  require(feasible(p.sigma), "compute_sigma_theta: returned sigma fails the feasibility conditions (internal error)");
  p.tau = tau_theta(theta, p.sigma);
  return p;
}

// ---------------------------------------------------------------------------
// Subproblems and multiplier

namespace detail {

inline Vector solve_block(const FunctionDescriptor& fd, const Matrix& P, const Vector& q, const char* which) {
  Vector x = fd.argmin_quadratic(P, q);
  const MembershipResult m = fd.contains_subgradient(x, q - P * x, 1e-8);
  require(m.ok, std::string(which) + "-subproblem: optimality check failed (violation " +
                    std::to_string(m.worst_violation) + ")");
  return x;
}

}  // namespace detail

// argmin_x f(x) - <gamma, Ax> + 0.5 ||Ax + By - b||^2_H + 0.5 ||x - x_prev||^2_R
inline Vector solve_x_subproblem(const FunctionDescriptor& f, const Vector& gamma_prev, const Vector& y_prev,
                                 const Vector& x_prev, const PsdOperator& H, const PsdOperator& R, const Matrix& A,
                                 const Matrix& B, const Vector& b) {
  const Matrix HA = H.matrix() * A;
  Matrix P = A.transpose() * HA + R.matrix();
  P = 0.5 * (P + P.transpose()).eval();
  const Vector q = A.transpose() * gamma_prev - HA.transpose() * (B * y_prev - b) + R.matrix() * x_prev;
  return detail::solve_block(f, P, q, "x");
}

// argmin_y g(y) - <gamma, By> + 0.5 ||Ax + By - b||^2_H + 0.5 ||y - y_prev||^2_S
inline Vector solve_y_subproblem(const FunctionDescriptor& g, const Vector& gamma_prev, const Vector& x,
                                 const Vector& y_prev, const PsdOperator& H, const PsdOperator& S, const Matrix& A,
                                 const Matrix& B, const Vector& b) {
  const Matrix HB = H.matrix() * B;
  Matrix P = B.transpose() * HB + S.matrix();
  P = 0.5 * (P + P.transpose()).eval();
  const Vector q = B.transpose() * gamma_prev - HB.transpose() * (A * x - b) + S.matrix() * y_prev;
  return detail::solve_block(g, P, q, "y");
}

struct MultiplierUpdate {
  Vector gamma;        // gamma_k
  Vector gamma_tilde;  // gamma_{k-1} - H (A x_k + B y_{k-1} - b)
};

inline MultiplierUpdate update_multiplier(const Vector& gamma_prev, const PsdOperator& H, double theta,
                                          const Vector& x, const Vector& y, const Vector& y_prev, const Matrix& A,
                                          const Matrix& B, const Vector& b) {
  require(theta_admissible(theta), "update_multiplier: theta must lie in (0, (sqrt(5)+1)/2)");
  const Vector ax = A * x - b;
  MultiplierUpdate u;
  u.gamma = gamma_prev - theta * H.apply(ax + B * y);
  u.gamma_tilde = gamma_prev - H.apply(ax + B * y_prev);
#ifndef NDEBUG
  const Vector dg = u.gamma - gamma_prev;
  const Vector hbdy = H.apply(B * (y - y_prev));
  const double scale = 1.0 + gamma_prev.norm() + u.gamma.norm() + u.gamma_tilde.norm();
  require((u.gamma_tilde - u.gamma - ((1.0 - theta) / theta) * dg - hbdy).norm() <= 1e-9 * scale,
          "update_multiplier: identity gt - g = ((1-theta)/theta) dg + H B dy violated");
  require((u.gamma_tilde - gamma_prev - dg / theta - hbdy).norm() <= 1e-9 * scale,
          "update_multiplier: identity gt - g_prev = dg / theta + H B dy violated");
#endif
  return u;
}

// sqrt(||x0 - x*||^2_{R0} + ||y0 - y*||^2_{B^T H0 B + S0} + ||g0 - g*||^2_{theta^{-1} H0^{-1}})
inline double compute_d0_admm(const ProblemSpec& p, const Vector& z0, const Vector& z_star, const PsdOperator& H0,
                              const PsdOperator& R0, const PsdOperator& S0, double theta) {
  require(z0.size() == z_star.size() && z0.size() == p.nx() + p.ny() + p.m(), "compute_d0_admm: dimension mismatch");
  return seminorm(assemble_Mk(H0, R0, S0, p.B, theta), z0 - z_star);
}

// sqrt([2(1+sigma) C_P (1+tau) + 2(1-sigma) tau] / (1-sigma)), so the pointwise bound is d0 coef / sqrt(k).
inline double pointwise_coefficient(const ThetaParams& tp, double C_P) {
  const double s = tp.sigma, t = tp.tau;
  return std::sqrt((2.0 * (1.0 + s) * C_P * (1.0 + t) + 2.0 * (1.0 - s) * t) / (1.0 - s));
}

// ---------------------------------------------------------------------------
// Solver

struct AdmmIterate {
  long k = 0;
  Vector x, y, gamma, gamma_tilde;
  Vector r_x, r_y, r_gamma;     // residual triple
  Vector dx, dy, dgamma;        // preimages x_{k-1} - x_k, y_{k-1} - y_k, gamma_{k-1} - gamma_k
  double eta = 0.0;
  std::optional<MetricTriple> ops;  // H_k, R_k, S_k
  BlockDiagOperator M;
};

struct VerifyFlags {
  bool hpe = true;
  bool bounds = true;
  bool memberships = true;
  bool fejer = true;
};

struct SolverOptions {
  double sigma_margin = 1e-3;
  VerifyFlags verify;
  int erg_samples = 200;                  // samples per ergodic membership check
  unsigned long long seed = 0;
  bool erg_membership_pow2 = true;        // sampled checks at k = 1, 2, 4, ...
  std::vector<long> erg_membership_at;    // plus these indices
  bool keep_history = false;              // retain HPE iterates (tests)
};

// Scalars recorded for every iteration; bound columns are NaN without a reference point.
struct AdmmRecord {
  long k = 0;
  double res_x_dual = 0.0, res_y_dual = 0.0, res_gamma_dual = 0.0;
  double res_max_iter = 0.0;  // max of the three at k
  double res_max_best = 0.0;  // min over i <= k of res_max_iter
  long best_i = 0;
  double bound_pointwise = std::numeric_limits<double>::quiet_NaN();
  double erg_res_x = 0.0, erg_res_y = 0.0, erg_res_gamma = 0.0, erg_res_max = 0.0;
  double bound_erg_res = std::numeric_limits<double>::quiet_NaN();
  double eps_x = 0.0, eps_y = 0.0, eps_sum = 0.0, eps_scale = 0.0;
  double bound_erg_eps = std::numeric_limits<double>::quiet_NaN();
  double eta = 0.0;
  double hpe_lhs = std::numeric_limits<double>::quiet_NaN();
  double hpe_rhs = std::numeric_limits<double>::quiet_NaN();
  double hpe_slack = std::numeric_limits<double>::quiet_NaN();
  double fejer_slack = std::numeric_limits<double>::quiet_NaN();
  double decomposition_err = 0.0;
  double membership_worst = 0.0;
  double erg_membership_worst = std::numeric_limits<double>::infinity();

  bool hpe_ok = true, reconstruction_ok = true, gamma_identity_ok = true;
  bool pointwise_ok = true, erg_res_ok = true, erg_eps_ok = true, eps_nonneg_ok = true;
  bool decomposition_ok = true, fejer_ok = true, membership_ok = true;
  bool erg_membership_checked = false, erg_membership_ok = true;

  bool all_ok() const {
    return hpe_ok && reconstruction_ok && gamma_identity_ok && pointwise_ok && erg_res_ok && erg_eps_ok &&
           eps_nonneg_ok && decomposition_ok && fejer_ok && membership_ok && erg_membership_ok;
  }
};

struct KktResidualCertificate {
  enum class Mode { pointwise, ergodic };
  Mode mode = Mode::pointwise;
  long k = 0;
  long index = 0;  // certified iterate (pointwise)
  Vector x, y, gamma_tilde;
  Vector r_x, r_y, r_gamma;
  double dual_x = 0.0, dual_y = 0.0, dual_gamma = 0.0;
  double eps_x = 0.0, eps_y = 0.0;
  double residual_bound = std::numeric_limits<double>::quiet_NaN();
  double eps_bound = std::numeric_limits<double>::quiet_NaN();
  bool bound_ok = true, eps_ok = true, eps_nonneg = true, memberships_ok = true, gamma_identity_ok = true;
  std::string violation;  // first failing component, empty when valid

  double dual_max() const { return std::max({dual_x, dual_y, dual_gamma}); }
  bool valid() const { return bound_ok && eps_ok && eps_nonneg && memberships_ok && gamma_identity_ok; }
};

using RecordSink = std::function<void(const AdmmRecord&)>;

class VmPadmmSolver {
 public:
  VmPadmmSolver(const ProblemSpec& problem, const MetricSchedule& schedule, ThetaParams tp,
                std::optional<Vector> z_star = {}, std::optional<Vector> z0 = {}, SolverOptions opts = {})
      : p_(problem), sched_(schedule), tp_(tp), opts_(std::move(opts)) {
    p_.validate();
    require(theta_admissible(tp_.theta), "VmPadmmSolver: theta must lie in (0, (sqrt(5)+1)/2)");
    require(tp_.sigma > 0.0 && tp_.sigma < 1.0, "VmPadmmSolver: sigma_theta must lie in (0, 1)");
    require(sched_.A().rows() == p_.m() && sched_.A().cols() == p_.nx() && sched_.B().cols() == p_.ny(),
            "VmPadmmSolver: schedule and problem dimensions differ");
    const Eigen::Index N = p_.nx() + p_.ny() + p_.m();
    const Vector start = z0 ? *z0 : Vector::Zero(N);
    require(start.size() == N, "VmPadmmSolver: z0 has the wrong dimension");
    x_ = start.head(p_.nx());
    y_ = start.segment(p_.nx(), p_.ny());
    gamma_ = start.tail(p_.m());
    coef_ = pointwise_coefficient(tp_, sched_.C_P());
    if (z_star) {
      require(z_star->size() == N, "VmPadmmSolver: z_star has the wrong dimension");
      z_star_ = *z_star;
      const MetricTriple t0 = sched_.realize(0);
      d0_ = compute_d0_admm(p_, start, *z_star_, t0.H, t0.R, t0.S, tp_.theta);
      const double eta0 = tp_.tau * (*d0_) * (*d0_);
      const RateBounds rb = RateBounds::make(*d0_, sched_.C_S(), sched_.C_P(), tp_.sigma, eta0);
      hpe_.emplace(tp_.sigma, eta0, start, sched_.metric(0, tp_.theta), rb, 1e-8, opts_.keep_history);
      z_star_kkt_ = kkt_residual(p_, z_star_->head(p_.nx()), z_star_->segment(p_.nx(), p_.ny()),
                                 z_star_->tail(p_.m()))
                        .max();
    }
  }

  const ProblemSpec& problem() const { return p_; }
  const ThetaParams& theta_params() const { return tp_; }
  const MetricSchedule& schedule() const { return sched_; }
  long k() const { return k_; }
  const Vector& x() const { return x_; }
  const Vector& y() const { return y_; }
  const Vector& gamma() const { return gamma_; }
  std::optional<double> d0() const { return d0_; }
  // KKT residual of the reference point; above 1e-9 the d0 bound is flagged.
  std::optional<double> reference_kkt() const { return z_star_kkt_; }
  double pointwise_coef() const { return coef_; }
  const std::optional<HpeDriver>& hpe() const { return hpe_; }
  const std::vector<AdmmRecord>& records() const { return records_; }
  const AdmmIterate& last() const { return last_; }
  void set_sink(RecordSink sink) { sink_ = std::move(sink); }

  std::optional<RateBounds> rate_bounds() const {
    if (!hpe_) return std::nullopt;
    return hpe_->bounds();
  }
  double pointwise_bound(long k) const { return d0_ ? (*d0_) * coef_ / std::sqrt(static_cast<double>(k)) : NaN(); }
  double ergodic_res_bound(long k) const {
    return d0_ ? std::sqrt(1.0 + tp_.tau) * hpe_->bounds()->E() * (*d0_) / static_cast<double>(k) : NaN();
  }
  double ergodic_eps_bound(long k) const {
    return d0_ ? (1.0 + tp_.tau) * hpe_->bounds()->E_hat() * (*d0_) * (*d0_) / static_cast<double>(k) : NaN();
  }

  // One VM-PADMM iteration followed by its certification.
  const AdmmIterate& step() {
    const long k = k_ + 1;
    MetricTriple ops = sched_.realize(k);
    const Matrix& A = p_.A;
    const Matrix& B = p_.B;
    AdmmIterate it;
    it.k = k;
    it.x = solve_x_subproblem(p_.f, gamma_, y_, x_, ops.H, ops.R, A, B, p_.b);
    it.y = solve_y_subproblem(p_.g, gamma_, it.x, y_, ops.H, ops.S, A, B, p_.b);
    const MultiplierUpdate mu = update_multiplier(gamma_, ops.H, tp_.theta, it.x, it.y, y_, A, B, p_.b);
    it.gamma = mu.gamma;
    it.gamma_tilde = mu.gamma_tilde;
    it.dx = x_ - it.x;
    it.dy = y_ - it.y;
    it.dgamma = gamma_ - it.gamma;
    it.M = sched_.metric(k, tp_.theta);
    it.r_x = it.M.block(0).apply(it.dx);
    it.r_y = it.M.block(1).apply(it.dy);
    it.r_gamma = A * it.x + B * it.y - p_.b;
    const double t = tp_.theta, s = tp_.sigma;
    it.eta = (s - (t - 1.0) * (t - 1.0)) / (t * t) * seminorm_sq(it.M.block(2), it.dgamma) +
             std::sqrt(2.0) * (s + t - 1.0) / t * seminorm_sq(ops.S, it.dy);
    it.ops = std::move(ops);

    AdmmRecord rec = certify(it);
    x_ = it.x;
    y_ = it.y;
    gamma_ = it.gamma;
    k_ = k;
    last_ = std::move(it);
    records_.push_back(rec);
    if (sink_) sink_(records_.back());
    return last_;
  }

  KktResidualCertificate pointwise_kkt_certificate(long k) const {
    require(k >= 1 && k <= k_, "pointwise_kkt_certificate: k out of range");
    const AdmmRecord& rec = records_[k - 1];
    const AdmmRecord& best = records_[rec.best_i - 1];
    KktResidualCertificate c;
    c.mode = KktResidualCertificate::Mode::pointwise;
    c.k = k;
    c.index = rec.best_i;
    c.dual_x = best.res_x_dual;
    c.dual_y = best.res_y_dual;
    c.dual_gamma = best.res_gamma_dual;
    c.residual_bound = rec.bound_pointwise;
    if (best_snapshot_ && best_snapshot_->k == rec.best_i) {
      c.x = best_snapshot_->x;
      c.y = best_snapshot_->y;
      c.gamma_tilde = best_snapshot_->gamma_tilde;
      c.r_x = best_snapshot_->r_x;
      c.r_y = best_snapshot_->r_y;
      c.r_gamma = best_snapshot_->r_gamma;
    }
    c.bound_ok = !d0_ || within_bound(c.dual_max(), c.residual_bound);
    c.memberships_ok = best.membership_ok;
    c.gamma_identity_ok = best.gamma_identity_ok;
    if (!c.memberships_ok) c.violation = "membership";
    else if (!c.bound_ok) c.violation = "pointwise bound";
    else if (!c.gamma_identity_ok) c.violation = "gamma residual identity";
    return c;
  }

  // Ergodic certificate at the latest k, with sampled epsilon-subdifferential checks.
  KktResidualCertificate ergodic_kkt_certificate(int samples = -1, std::optional<unsigned long long> seed = {}) const {
    require(k_ >= 1, "ergodic_kkt_certificate: no iterations yet");
    KktResidualCertificate c = ergodic_snapshot();
    const int ns = samples >= 0 ? samples : opts_.erg_samples;
    if (ns > 0) {
      const auto mem = ergodic_memberships(c, ns, seed.value_or(opts_.seed + static_cast<unsigned long long>(k_)));
      c.memberships_ok = mem.first;
    }
    fill_violation(c);
    return c;
  }

 private:
  static double NaN() { return std::numeric_limits<double>::quiet_NaN(); }

  static void fill_violation(KktResidualCertificate& c) {
    if (!c.memberships_ok) c.violation = "epsilon-subdifferential membership";
    else if (!c.eps_nonneg) c.violation = "negative epsilon";
    else if (!c.bound_ok) c.violation = "ergodic residual bound";
    else if (!c.eps_ok) c.violation = "ergodic epsilon bound";
    else if (!c.gamma_identity_ok) c.violation = "gamma residual identity";
  }

  KktResidualCertificate ergodic_snapshot() const {
    const double kk = static_cast<double>(k_);
    const Eigen::Index nx = p_.nx(), ny = p_.ny();
    KktResidualCertificate c;
    c.mode = KktResidualCertificate::Mode::ergodic;
    c.k = k_;
    c.index = k_;
    const Vector dxa = erg_.sum_x / kk, dya = erg_.sum_y / kk;
    c.x = erg_.x1 + dxa;
    c.y = erg_.y1 + dya;
    c.gamma_tilde = erg_.sum_gt / kk;
    c.r_x = erg_.sum_rx / kk;
    c.r_y = erg_.sum_ry / kk;
    c.r_gamma = erg_.sum_rg / kk;
    const Vector vxa = erg_.sum_vx / kk, vya = erg_.sum_vy / kk;
    const double cx = vxa.dot(dxa), cy = vya.dot(dya);
    c.eps_x = erg_.inner_x / kk - cx;
    c.eps_y = erg_.inner_y / kk - cy;
    const BlockDiagOperator& M = last_.M;
    c.dual_x = dual_seminorm_general(M.block(0), c.r_x);
    c.dual_y = dual_seminorm_general(M.block(1), c.r_y);
    c.dual_gamma = dual_seminorm_general(M.block(2), c.r_gamma);
    const double scale_x = erg_.abs_x / kk + std::abs(cx), scale_y = erg_.abs_y / kk + std::abs(cy);
    c.eps_nonneg = c.eps_x >= -1e-10 * (1.0 + scale_x) && c.eps_y >= -1e-10 * (1.0 + scale_y);
    const Vector rg = p_.A * c.x + p_.B * c.y - p_.b;
    c.gamma_identity_ok = (rg - c.r_gamma).norm() <= 1e-10 * (1.0 + c.r_gamma.norm() + erg_.scale_rg);
    if (d0_) {
      c.residual_bound = ergodic_res_bound(k_);
      c.eps_bound = ergodic_eps_bound(k_);
      c.bound_ok = std::isfinite(c.dual_max()) && within_bound(c.dual_max(), c.residual_bound);
      c.eps_ok = within_bound(c.eps_x + c.eps_y, c.eps_bound);
    }
    (void)nx;
    (void)ny;
    return c;
  }

  // v_x = r_x^a + A^T gt^a in d_{eps_x} f(x^a) and the mirror for g; returns (ok, worst margin).
  std::pair<bool, double> ergodic_memberships(const KktResidualCertificate& c, int samples,
                                              unsigned long long seed) const {
    std::mt19937_64 rng(seed);
    const Vector vx = c.r_x + p_.A.transpose() * c.gamma_tilde;
    const Vector vy = c.r_y + p_.B.transpose() * c.gamma_tilde;
    const SampledCheck sx = p_.f.epsilon_subgradient_check(c.x, vx, std::max(c.eps_x, 0.0), samples, rng);
    const SampledCheck sy = p_.g.epsilon_subgradient_check(c.y, vy, std::max(c.eps_y, 0.0), samples, rng);
    return {sx.ok() && sy.ok(), std::min(sx.worst_margin, sy.worst_margin)};
  }

  bool erg_membership_due(long k) const {
    if (opts_.erg_membership_pow2 && (k & (k - 1)) == 0) return true;
    return std::find(opts_.erg_membership_at.begin(), opts_.erg_membership_at.end(), k) !=
           opts_.erg_membership_at.end();
  }

  AdmmRecord certify(const AdmmIterate& it) {
    AdmmRecord rec;
    rec.k = it.k;
    rec.eta = it.eta;
    const BlockDiagOperator& M = it.M;
    rec.res_x_dual = seminorm(M.block(0), it.dx);
    rec.res_y_dual = seminorm(M.block(1), it.dy);
    rec.res_gamma_dual = seminorm(M.block(2), it.dgamma);
    rec.res_max_iter = std::max({rec.res_x_dual, rec.res_y_dual, rec.res_gamma_dual});
    if (records_.empty() || rec.res_max_iter < records_.back().res_max_best) {
      rec.res_max_best = rec.res_max_iter;
      rec.best_i = it.k;
    } else {
      rec.res_max_best = records_.back().res_max_best;
      rec.best_i = records_.back().best_i;
    }
    const Vector rg_pre = M.block(2).apply(it.dgamma);
    rec.gamma_identity_ok = (rg_pre - it.r_gamma).norm() <= 1e-10 * (1.0 + it.r_gamma.norm());

    // closed-form inclusions r_x in df(x) - A^T gt, r_y in dg(y) - B^T gt
    const Vector vx = it.r_x + p_.A.transpose() * it.gamma_tilde;
    const Vector vy = it.r_y + p_.B.transpose() * it.gamma_tilde;
    if (opts_.verify.memberships) {
      const MembershipResult mx = p_.f.contains_subgradient(it.x, vx, 1e-8);
      const MembershipResult my = p_.g.contains_subgradient(it.y, vy, 1e-8);
      rec.membership_ok = mx.ok && my.ok;
      rec.membership_worst = std::max(mx.worst_violation, my.worst_violation);
    }
    if (rec.best_i == it.k) best_snapshot_ = it;

    // ergodic accumulators, shifted by (x_1, y_1)
    if (it.k == 1) {
      erg_ = {};
      erg_.x1 = it.x;
      erg_.y1 = it.y;
      erg_.sum_x = Vector::Zero(p_.nx());
      erg_.sum_y = Vector::Zero(p_.ny());
      erg_.sum_gt = Vector::Zero(p_.m());
      erg_.sum_rx = Vector::Zero(p_.nx());
      erg_.sum_ry = Vector::Zero(p_.ny());
      erg_.sum_rg = Vector::Zero(p_.m());
      erg_.sum_vx = Vector::Zero(p_.nx());
      erg_.sum_vy = Vector::Zero(p_.ny());
    }
    const Vector ddx = it.x - erg_.x1, ddy = it.y - erg_.y1;
    erg_.sum_x += ddx;
    erg_.sum_y += ddy;
    erg_.sum_gt += it.gamma_tilde;
    erg_.sum_rx += it.r_x;
    erg_.sum_ry += it.r_y;
    erg_.sum_rg += it.r_gamma;
    erg_.sum_vx += vx;
    erg_.sum_vy += vy;
    const double ix = vx.dot(ddx), iy = vy.dot(ddy);
    erg_.inner_x += ix;
    erg_.inner_y += iy;
    erg_.abs_x += std::abs(ix);
    erg_.abs_y += std::abs(iy);
    erg_.scale_rg = std::max(erg_.scale_rg, (p_.A * it.x).norm() + (p_.B * it.y).norm() + p_.b.norm());
    last_.M = it.M;  // ergodic dual norms use M_k
    k_ = it.k;

    KktResidualCertificate ec = ergodic_snapshot();
    rec.erg_res_x = ec.dual_x;
    rec.erg_res_y = ec.dual_y;
    rec.erg_res_gamma = ec.dual_gamma;
    rec.erg_res_max = ec.dual_max();
    rec.eps_x = ec.eps_x;
    rec.eps_y = ec.eps_y;
    rec.eps_sum = ec.eps_x + ec.eps_y;
    rec.eps_scale = erg_.abs_x / it.k + erg_.abs_y / it.k;
    rec.eps_nonneg_ok = ec.eps_nonneg;
    rec.gamma_identity_ok = rec.gamma_identity_ok && ec.gamma_identity_ok;
    if (opts_.verify.memberships && erg_membership_due(it.k)) {
      rec.erg_membership_checked = true;
      const auto mem = ergodic_memberships(ec, opts_.erg_samples, opts_.seed + static_cast<unsigned long long>(it.k));
      rec.erg_membership_ok = mem.first;
      rec.erg_membership_worst = mem.second;
    }

    if (hpe_) {
      HpeIterate h;
      h.k = it.k;
      h.z = concat(it.x, it.y, it.gamma);
      h.z_tilde = concat(it.x, it.y, it.gamma_tilde);
      h.r = concat(it.r_x, it.r_y, it.r_gamma);
      h.preimage = concat(it.dx, it.dy, it.dgamma);
      h.eta = it.eta;
      h.M = it.M;
      const HpeRecord& hr = hpe_->accept(std::move(h));
      rec.hpe_lhs = hr.check.lhs;
      rec.hpe_rhs = hr.check.rhs;
      rec.hpe_slack = hr.check.slack;
      if (opts_.verify.hpe) {
        rec.hpe_ok = hr.check.pass;
        rec.reconstruction_ok = hr.reconstruction_ok;
      }
      rec.bound_pointwise = pointwise_bound(it.k);
      rec.bound_erg_res = ec.residual_bound;
      rec.bound_erg_eps = ec.eps_bound;
      if (opts_.verify.bounds) {
        rec.pointwise_ok = within_bound(rec.res_max_best, rec.bound_pointwise);
        rec.erg_res_ok = ec.bound_ok;
        rec.erg_eps_ok = ec.eps_ok;
        const ErgodicCertificate hc = hpe_->ergodic_certificate();
        rec.decomposition_err = std::abs(hc.eps_a - rec.eps_sum);
        rec.decomposition_ok = rec.decomposition_err <= 1e-9 * (hc.eps_scale + rec.eps_scale) + 1e-15;
        rec.eps_nonneg_ok = rec.eps_nonneg_ok && hc.eps_nonneg;
      }
      if (opts_.verify.fejer) {
        const BoundCheck fc = hpe_->fejer_check(*z_star_);
        rec.fejer_slack = fc.slack;
        rec.fejer_ok = fc.pass;
      }
    }
    return rec;
  }

  struct ErgodicSums {
    Vector x1, y1;
    Vector sum_x, sum_y, sum_gt, sum_rx, sum_ry, sum_rg, sum_vx, sum_vy;
    double inner_x = 0.0, inner_y = 0.0, abs_x = 0.0, abs_y = 0.0;
    double scale_rg = 0.0;
  };

  ProblemSpec p_;
  const MetricSchedule& sched_;
  ThetaParams tp_;
  SolverOptions opts_;
  Vector x_, y_, gamma_;
  long k_ = 0;
  double coef_ = 0.0;
  std::optional<Vector> z_star_;
  std::optional<double> d0_, z_star_kkt_;
  std::optional<HpeDriver> hpe_;
  std::vector<AdmmRecord> records_;
  AdmmIterate last_;
  std::optional<AdmmIterate> best_snapshot_;
  ErgodicSums erg_;
  RecordSink sink_;
};

}  // namespace vmpadmm
