#pragma once

// Variable-metric HPE driver: certifies iterates handed to it by an instance
// (it never computes steps itself) and evaluates the pointwise, ergodic and
// Fejer-type bounds.

#include "vmpadmm/common.hpp"
#include "vmpadmm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace vmpadmm {

// Relative slack used by every "value <= bound" assertion.
inline constexpr double kBoundRelTol = 1e-6;
inline constexpr double kBoundAbsTol = 1e-12;

inline bool within_bound(double value, double bound) {
  return value <= bound + kBoundRelTol * std::abs(bound) + kBoundAbsTol;
}

struct RateBounds {
  double d0 = 0.0;  // upper bound on the metric distance from z_0 to the solution set
  double C_S = 0.0;
  double C_P = 1.0;
  double sigma = 0.0;
  double eta0 = 0.0;

  static RateBounds make(double d0, double C_S, double C_P, double sigma, double eta0) {
    require(d0 >= 0.0 && std::isfinite(d0), "RateBounds: d0 must be finite and nonnegative");
    require(C_S >= 0.0 && C_P >= 1.0, "RateBounds: need C_S >= 0 and C_P >= 1");
    require(sigma >= 0.0 && sigma < 1.0, "RateBounds: sigma must lie in [0, 1)");
    require(eta0 >= 0.0, "RateBounds: eta_0 must be nonnegative");
    return {d0, C_S, C_P, sigma, eta0};
  }

  double E() const { return (1.0 + C_P) * (std::sqrt(C_P) + C_S * C_P) + C_S * std::pow(C_P, 1.5); }
  double E_hat() const {
    return 2.0 * C_P * (1.0 + C_S) * (sigma * C_P / (1.0 - sigma) + 2.0 * (1.0 + C_P));
  }
  double pointwise_rhs(long k) const {
    require(k >= 1, "RateBounds::pointwise_rhs: k must be >= 1");
    const double d2 = d0 * d0;
    return std::sqrt((2.0 * (1.0 + sigma) * C_P * (d2 + eta0) + 2.0 * (1.0 - sigma) * eta0) /
                     ((1.0 - sigma) * static_cast<double>(k)));
  }
  double ergodic_res_rhs(long k) const {
    require(k >= 1, "RateBounds::ergodic_res_rhs: k must be >= 1");
    return E() * std::sqrt(d0 * d0 + eta0) / static_cast<double>(k);
  }
  double ergodic_eps_rhs(long k) const {
    require(k >= 1, "RateBounds::ergodic_eps_rhs: k must be >= 1");
    return E_hat() * (d0 * d0 + eta0) / static_cast<double>(k);
  }
};

struct HpeIterate {
  long k = 0;
  Vector z, z_tilde, r;
  Vector preimage;  // z_{k-1} - z_k; derived by the driver when left empty
  double eta = 0.0;
  BlockDiagOperator M;
};

struct ErrorCheck {
  long k = 0;
  double lhs = 0.0, rhs = 0.0, slack = 0.0;
  bool pass = true;
};

struct BoundCheck {
  double lhs = 0.0, rhs = 0.0, slack = 0.0;
  bool pass = true;
};

// ||z_k - zt_k||^2_M + eta_k <= sigma ||z_{k-1} - zt_k||^2_M + eta_{k-1}.
inline ErrorCheck check_error_condition(double sigma, const HpeIterate& it, const Vector& z_prev, double prev_eta,
                                        double tol = 1e-8) {
  require(it.k >= 1, "check_error_condition: k must be >= 1");
  ErrorCheck c;
  c.k = it.k;
  c.lhs = seminorm_sq(it.M, it.z - it.z_tilde) + it.eta;
  c.rhs = sigma * seminorm_sq(it.M, z_prev - it.z_tilde) + prev_eta;
  c.slack = c.rhs - c.lhs;
  c.pass = c.slack >= -tol * (1.0 + c.rhs);
  return c;
}

struct PointwiseCertificate {
  long k = 0;
  long best_i = 0;
  double dual_res_best = 0.0;
  double bound_rhs = 0.0;
  bool pass = true;
};

struct ErgodicCertificate {
  long k = 0;
  Vector z_tilde_a, r_a;
  double eps_a = 0.0;
  double eps_scale = 0.0;          // magnitude of the terms entering eps_a
  std::vector<double> eps_blocks;  // per-block split of eps_a
  double dual_res_erg = 0.0;       // +inf when r_a leaves range(M_k)
  double res_bound = 0.0, eps_bound = 0.0;
  bool eps_nonneg = true, in_range = true, res_ok = true, eps_ok = true;
  bool pass() const { return eps_nonneg && in_range && res_ok && eps_ok; }
};

struct MembershipReport {
  int samples = 0;
  int violations = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  bool ok() const { return violations == 0; }
};

// Per-iteration scalars retained by the driver.
struct HpeRecord {
  long k = 0;
  ErrorCheck check;
  double reconstruction_err = 0.0;
  bool reconstruction_ok = true;
  double dual_res = 0.0;  // ||r_k||*_{M_k} = ||z_{k-1} - z_k||_{M_k}
  double gap_sq = 0.0;    // ||z_{k-1} - zt_k||^2_{M_k}
  double eta = 0.0;
  long best_i = 0;        // argmin of dual_res over i <= k (smallest index on ties)
  double best_dual_res = 0.0;
};

class HpeDriver {
 public:
  HpeDriver(double sigma, double eta0, Vector z0, BlockDiagOperator M0, std::optional<RateBounds> bounds = {},
            double tol = 1e-8, bool keep_history = false)
      : sigma_(sigma),
        eta0_(eta0),
        tol_(tol),
        keep_history_(keep_history),
        z0_(std::move(z0)),
        M0_(std::move(M0)),
        bounds_(bounds),
        z_prev_(z0_),
        eta_prev_(eta0) {
    require(sigma_ >= 0.0 && sigma_ < 1.0, "HpeDriver: sigma must lie in [0, 1)");
    require(eta0_ >= 0.0, "HpeDriver: eta_0 must be nonnegative");
    require(z0_.size() == M0_.dim(), "HpeDriver: z_0 and M_0 dimensions differ");
  }

  double sigma() const { return sigma_; }
  double eta0() const { return eta0_; }
  long k() const { return static_cast<long>(records_.size()); }
  const Vector& z0() const { return z0_; }
  const Vector& z() const { return z_prev_; }
  const BlockDiagOperator& M0() const { return M0_; }
  const std::optional<RateBounds>& bounds() const { return bounds_; }
  void set_bounds(const RateBounds& b) { bounds_ = b; }
  const std::vector<HpeRecord>& records() const { return records_; }
  const std::vector<HpeIterate>& history() const { return history_; }

  // Registers iterate k = k() + 1 and returns its error-condition check.
  const HpeRecord& accept(HpeIterate it) {
    require(it.k == k() + 1, "HpeDriver::accept: iterates must arrive with contiguous indices from 1");
    const Eigen::Index n = z0_.size();
    require(it.z.size() == n && it.z_tilde.size() == n && it.r.size() == n && it.M.dim() == n,
            "HpeDriver::accept: dimension mismatch");
    require(it.eta >= 0.0, "HpeDriver::accept: eta_k must be nonnegative");
    const Vector w = z_prev_ - it.z;
    if (it.preimage.size() == 0) it.preimage = w;

    HpeRecord rec;
    rec.k = it.k;
    rec.check = check_error_condition(sigma_, it, z_prev_, eta_prev_, tol_);
    rec.reconstruction_err = std::max((it.r - it.M.apply(it.preimage)).norm(), (it.r - it.M.apply(w)).norm());
    rec.reconstruction_ok = rec.reconstruction_err <= 1e-10 * (1.0 + it.r.norm());
    rec.dual_res = seminorm(it.M, it.preimage);
    rec.gap_sq = seminorm_sq(it.M, z_prev_ - it.z_tilde);
    rec.eta = it.eta;
    if (records_.empty() || rec.dual_res < records_.back().best_dual_res) {
      rec.best_i = rec.k;
      rec.best_dual_res = rec.dual_res;
    } else {
      rec.best_i = records_.back().best_i;
      rec.best_dual_res = records_.back().best_dual_res;
    }
    gap_sum_ += rec.gap_sq;

    // ergodic accumulators, shifted by zt_1
    if (records_.empty()) {
      shift_ = it.z_tilde;
      sum_zt_ = Vector::Zero(n);
      sum_r_ = Vector::Zero(n);
      sum_inner_blocks_.assign(it.M.num_blocks(), 0.0);
    }
    const Vector d = it.z_tilde - shift_;
    sum_zt_ += d;
    sum_r_ += it.r;
    for (std::size_t b = 0; b < it.M.num_blocks(); ++b) {
      const double t = it.M.segment(it.r, b).dot(it.M.segment(d, b));
      sum_inner_blocks_[b] += t;
      sum_abs_inner_ += std::abs(t);
    }

    z_prev_ = it.z;
    eta_prev_ = it.eta;
    current_M_ = it.M;
    records_.push_back(rec);
    if (keep_history_) history_.push_back(std::move(it));
    return records_.back();
  }

  const BlockDiagOperator& current_metric() const {
    require(current_M_.has_value(), "HpeDriver: no iterate accepted yet");
    return *current_M_;
  }

  PointwiseCertificate pointwise_certificate(long k) const {
    require(k >= 1 && k <= this->k(), "pointwise_certificate: k out of range");
    require(bounds_.has_value(), "pointwise_certificate: rate bounds were not supplied");
    const HpeRecord& rec = records_[k - 1];
    PointwiseCertificate c;
    c.k = k;
    c.best_i = rec.best_i;
    c.dual_res_best = rec.best_dual_res;
    c.bound_rhs = bounds_->pointwise_rhs(k);
    c.pass = within_bound(c.dual_res_best, c.bound_rhs);
    return c;
  }

  // Ergodic averages and certificate at the latest index.
  ErgodicCertificate ergodic_certificate() const {
    require(k() >= 1, "ergodic_certificate: no iterate accepted yet");
    const double kk = static_cast<double>(k());
    const BlockDiagOperator& M = current_metric();
    ErgodicCertificate c;
    c.k = k();
    const Vector da = sum_zt_ / kk;
    c.z_tilde_a = shift_ + da;
    c.r_a = sum_r_ / kk;
    double cross_abs = 0.0;
    c.eps_a = 0.0;
    for (std::size_t b = 0; b < M.num_blocks(); ++b) {
      const double cross = M.segment(c.r_a, b).dot(M.segment(da, b));
      const double e = sum_inner_blocks_[b] / kk - cross;
      c.eps_blocks.push_back(e);
      c.eps_a += e;
      cross_abs += std::abs(cross);
    }
    c.eps_scale = sum_abs_inner_ / kk + cross_abs;
    c.eps_nonneg = c.eps_a >= -1e-10 * (1.0 + c.eps_scale);
    c.dual_res_erg = dual_seminorm_general(M, c.r_a);
    c.in_range = std::isfinite(c.dual_res_erg);
    if (bounds_) {
      c.res_bound = bounds_->ergodic_res_rhs(c.k);
      c.eps_bound = bounds_->ergodic_eps_rhs(c.k);
      c.res_ok = c.in_range && within_bound(c.dual_res_erg, c.res_bound);
      c.eps_ok = within_bound(c.eps_a, c.eps_bound);
    }
    return c;
  }

  // ||z* - z_k||^2_{M_k} + eta_k + (1 - sigma) sum ||z_{i-1} - zt_i||^2_{M_i} <= C_P (||z* - z_0||^2_{M_0} + eta_0)
  // at the latest index.
  BoundCheck fejer_check(const Vector& z_star, double tol_abs = 1e-8, double tol_rel = 1e-6) const {
    require(bounds_.has_value(), "fejer_check: rate bounds were not supplied");
    require(z_star.size() == z0_.size(), "fejer_check: dimension mismatch");
    BoundCheck c;
    if (k() == 0) {
      c.lhs = seminorm_sq(M0_, z_star - z0_) + eta0_;
      c.rhs = bounds_->C_P * c.lhs;
    } else {
      c.lhs = seminorm_sq(current_metric(), z_star - z_prev_) + eta_prev_ + (1.0 - sigma_) * gap_sum_;
      c.rhs = bounds_->C_P * (seminorm_sq(M0_, z_star - z0_) + eta0_);
    }
    c.slack = c.rhs - c.lhs;
    c.pass = c.slack >= -tol_abs - tol_rel * c.rhs;
    return c;
  }

 private:
  double sigma_, eta0_, tol_;
  bool keep_history_;
  Vector z0_;
  BlockDiagOperator M0_;
  std::optional<RateBounds> bounds_;
  Vector z_prev_;
  double eta_prev_;
  std::optional<BlockDiagOperator> current_M_;
  std::vector<HpeRecord> records_;
  std::vector<HpeIterate> history_;
  double gap_sum_ = 0.0;
  Vector shift_, sum_zt_, sum_r_;
  std::vector<double> sum_inner_blocks_;
  double sum_abs_inner_ = 0.0;
};

// Sampled check that (zt_a, r_a) lies in the eps_a-enlargement of T:
// <r_a - v', zt_a - z'> >= -eps_a for pairs (z', v' in T(z')) drawn from the oracle.
template <class Oracle>
MembershipReport transportation_check(Oracle&& oracle, const Vector& z_tilde_a, const Vector& r_a, double eps_a,
                                      int samples = 1000, unsigned long long seed = 0, double tol = 1e-10) {
  require(samples >= 1, "transportation_check: need at least one sample");
  std::mt19937_64 rng(seed);
  MembershipReport rep;
  rep.samples = samples;
  for (int s = 0; s < samples; ++s) {
    const auto [zp, vp] = oracle(rng);
    require(zp.size() == z_tilde_a.size() && vp.size() == r_a.size(), "transportation_check: oracle dimension mismatch");
    const Vector dz = z_tilde_a - zp;
    const double a = r_a.dot(dz), b = vp.dot(dz);
    const double margin = a - b + eps_a + tol * (1.0 + std::abs(a) + std::abs(b) + std::abs(eps_a));
    rep.worst_margin = std::min(rep.worst_margin, margin);
    if (margin < 0.0) ++rep.violations;
  }
  return rep;
}

}  // namespace vmpadmm
