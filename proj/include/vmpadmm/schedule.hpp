#pragma once

// Variable-metric schedules {H_k}, {R_k}, {S_k} with their drift sequence
// {c_k} and the constants C_S >= sum c_i, C_P >= prod (1 + c_i).

#include "vmpadmm/linalg.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace vmpadmm {

struct OperatorSpec {
  enum class Kind { zero, scaled_identity, dense, linearized };
  Kind kind = Kind::zero;
  double scale = 0.0;  // scaled_identity
  Matrix matrix;       // dense
  double tau = 0.0;    // linearized: R = tau I - A^T H A

  static OperatorSpec zero() { return {}; }
  static OperatorSpec scaled_identity(double beta) { return {Kind::scaled_identity, beta, {}, 0.0}; }
  static OperatorSpec dense(Matrix m) { return {Kind::dense, 0.0, std::move(m), 0.0}; }
  static OperatorSpec linearized(double tau) { return {Kind::linearized, 0.0, {}, tau}; }
};

enum class DecayLaw { zero, inverse_square };

struct DecaySpec {
  double c0 = 0.0;
  DecayLaw law = DecayLaw::zero;

  double c(long k) const {
    if (law == DecayLaw::zero) return 0.0;
    const double kk = static_cast<double>(k) + 1.0;
    return c0 / (kk * kk);
  }
  // Upper bound on sum_{i > k_max} c_i.
  double tail_bound(long k_max) const {
    if (law == DecayLaw::zero) return 0.0;
    return c0 / (static_cast<double>(k_max) + 1.0);
  }
};

struct MetricTriple {
  PsdOperator H;  // definite, on Gamma
  PsdOperator R;  // semidefinite, on X
  PsdOperator S;  // semidefinite, on Y
};

enum class ScheduleKind {
  constant,               // Q_k = Q_0, c_k = 0
  scaled_identity_decay,  // Q_{k+1} = (1 + c_k)^{+-1} Q_k, alternating up/down starting upward
  custom_list             // explicit operators per k with explicit c_k
};

struct ScheduleRule {
  ScheduleKind kind = ScheduleKind::constant;
  OperatorSpec H = OperatorSpec::scaled_identity(1.0);
  OperatorSpec R = OperatorSpec::zero();
  OperatorSpec S = OperatorSpec::zero();
  DecaySpec decay;
  // custom_list only: custom[k] for k = 0..N-1 and custom_c[k] for k = 0..N-2 (at least).
  std::vector<MetricTriple> custom;
  std::vector<double> custom_c;
};

// M_k = blkdiag(R_k, B^T H_k B + S_k, theta^{-1} H_k^{-1}).
inline BlockDiagOperator assemble_Mk(const PsdOperator& H, const PsdOperator& R, const PsdOperator& S,
                                     const Matrix& B, double theta) {
  require(theta_admissible(theta), "assemble_Mk: theta must lie in (0, (sqrt(5)+1)/2)");
  require(H.definite(), "assemble_Mk: H must be positive definite");
  require(B.rows() == H.dim() && B.cols() == S.dim(), "assemble_Mk: dimension mismatch");
  Matrix mid = B.transpose() * H.matrix() * B + S.matrix();
  mid = 0.5 * (mid + mid.transpose()).eval();
  return block_diag({R, PsdOperator(std::move(mid), Definiteness::semidefinite, SpaceLabel::Y),
                     H.inverse().scaled(1.0 / theta)});
}

struct SandwichFailure {
  long k = 0;
  std::string family;  // "H", "R" or "S"
  bool lower_ok = true;
  bool upper_ok = true;
};

struct ValidationReport {
  long k_max = 0;
  double sum_c = 0.0;   // realized sum_{i<=k_max} c_i
  double prod_c = 1.0;  // realized prod_{i<=k_max} (1 + c_i)
  double C_S = 0.0;
  double C_P = 1.0;
  std::vector<SandwichFailure> failures;
  std::vector<long> c_out_of_range;  // k with c_k outside [0, 1] (ADMM mode)

  bool ok() const { return failures.empty() && c_out_of_range.empty(); }
  std::optional<long> first_offending_k() const {
    std::optional<long> k;
    for (const auto& f : failures) k = k ? std::min(*k, f.k) : f.k;
    for (long c : c_out_of_range) k = k ? std::min(*k, c) : c;
    return k;
  }
};

class MetricSchedule {
 public:
  MetricSchedule(ScheduleRule rule, const Matrix& A, const Matrix& B, long k_max, bool admm_mode = true)
      : rule_(std::move(rule)), A_(A), B_(B), k_max_(k_max), admm_mode_(admm_mode) {
    require(k_max_ >= 1, "MetricSchedule: k_max must be >= 1");
    require(A_.rows() == B_.rows(), "MetricSchedule: A and B must have the same number of rows");
    if (rule_.kind == ScheduleKind::custom_list) {
      require(rule_.custom.size() >= 2, "MetricSchedule: custom_list needs at least two entries");
      require(rule_.custom_c.size() + 1 >= rule_.custom.size(),
              "MetricSchedule: custom_list needs one c_k per transition");
      k_max_ = std::min<long>(k_max_, static_cast<long>(rule_.custom.size()) - 1);
      for (long k = 0; k <= k_max_; ++k)
        c_seq_.push_back(k < static_cast<long>(rule_.custom_c.size()) ? rule_.custom_c[k] : 0.0);
      for (double c : c_seq_) require(c >= 0.0, "MetricSchedule: c_k must be nonnegative");
      base_.emplace(rule_.custom.front());
    } else {
      base_.emplace(build_base());
      for (long k = 0; k <= k_max_; ++k)
        c_seq_.push_back(rule_.kind == ScheduleKind::constant ? 0.0 : rule_.decay.c(k));
      factors_.push_back(1.0);
      for (long k = 0; k < k_max_ + 1; ++k) factors_.push_back(next_factor(factors_.back(), k));
      mid0_.emplace(PsdOperator(symmetrized(B_.transpose() * base_->H.matrix() * B_ + base_->S.matrix()),
                                Definiteness::semidefinite, SpaceLabel::Y));
      hinv0_.emplace(base_->H.inverse());
    }
    double sum = 0.0, prod = 1.0;
    for (double c : c_seq_) {
      sum += c;
      prod *= 1.0 + c;
    }
    sum_c_ = sum;
    prod_c_ = prod;
    const double tail = rule_.kind == ScheduleKind::scaled_identity_decay ? rule_.decay.tail_bound(k_max_) : 0.0;
    C_S_ = sum + tail;
    C_P_ = prod * std::exp(tail);
  }

  const ScheduleRule& rule() const { return rule_; }
  long k_max() const { return k_max_; }
  bool admm_mode() const { return admm_mode_; }
  const std::vector<double>& c_seq() const { return c_seq_; }
  double c(long k) const {
    require(k >= 0, "MetricSchedule::c: negative index");
    if (k < static_cast<long>(c_seq_.size())) return c_seq_[k];
    return rule_.kind == ScheduleKind::scaled_identity_decay ? rule_.decay.c(k) : 0.0;
  }
  double C_S() const { return C_S_; }
  double C_P() const { return C_P_; }

  // Scalar s_k with Q_k = s_k Q_0 (H, R, S alike) for factor-driven schedules.
  double factor(long k) const {
    require(rule_.kind != ScheduleKind::custom_list, "MetricSchedule::factor: custom_list has no factor");
    require(k >= 0, "MetricSchedule::factor: negative index");
    if (k < static_cast<long>(factors_.size())) return factors_[k];
    double s = factors_.back();
    for (long i = static_cast<long>(factors_.size()) - 1; i < k; ++i) s = next_factor(s, i);
    return s;
  }

  MetricTriple realize(long k) const {
    require(k >= 0, "MetricSchedule::realize: negative index");
    if (rule_.kind == ScheduleKind::custom_list) {
      require(k < static_cast<long>(rule_.custom.size()), "MetricSchedule::realize: index beyond custom list");
      const MetricTriple& t = rule_.custom[k];
      require(t.H.definite(), "MetricSchedule::realize: H_k is not positive definite at k = " + std::to_string(k));
      return t;
    }
    const double s = factor(k);
    if (s == 1.0) return *base_;
    return {base_->H.scaled(s), scaled_or_zero(base_->R, s), scaled_or_zero(base_->S, s)};
  }

  // Product-space metric M_k; factor-driven schedules reuse the anchor spectra.
  BlockDiagOperator metric(long k, double theta) const {
    require(theta_admissible(theta), "MetricSchedule::metric: theta must lie in (0, (sqrt(5)+1)/2)");
    if (rule_.kind == ScheduleKind::custom_list) {
      const MetricTriple t = realize(k);
      return assemble_Mk(t.H, t.R, t.S, B_, theta);
    }
    const double s = factor(k);
    return block_diag({scaled_or_zero(base_->R, s), scaled_or_zero(*mid0_, s), hinv0_->scaled(1.0 / (s * theta))});
  }

  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }

 private:
  static Matrix symmetrized(Matrix m) { return 0.5 * (m + m.transpose()); }
  static PsdOperator scaled_or_zero(const PsdOperator& q, double s) { return s == 1.0 ? q : q.scaled(s); }

  double next_factor(double s, long k) const {
    if (rule_.kind != ScheduleKind::scaled_identity_decay) return s;
    const double c = rule_.decay.c(k);
    return (k % 2 == 0) ? s * (1.0 + c) : s / (1.0 + c);
  }

  PsdOperator make(const OperatorSpec& spec, Eigen::Index n, SpaceLabel label, bool definite,
                   const PsdOperator* h0) const {
    switch (spec.kind) {
      case OperatorSpec::Kind::zero:
        return PsdOperator::zero(n, label);
      case OperatorSpec::Kind::scaled_identity:
        require(spec.scale >= 0.0, "schedule: negative identity scale");
        return PsdOperator::scaled_identity(n, spec.scale, label);
      case OperatorSpec::Kind::dense:
        require(spec.matrix.rows() == n && spec.matrix.cols() == n,
                "schedule: dense operator has wrong dimension (expected " + std::to_string(n) + ")");
        return PsdOperator(spec.matrix, definite ? Definiteness::definite : Definiteness::semidefinite, label);
      case OperatorSpec::Kind::linearized: {
        require(label == SpaceLabel::X && h0 != nullptr, "schedule: linearized operators are only defined for R");
        const Matrix aha = A_.transpose() * h0->matrix() * A_;
        Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(aha), Eigen::EigenvaluesOnly);
        const double lmax = es.eigenvalues().maxCoeff();
        require(spec.tau >= lmax * (1.0 - 1e-12),
                "schedule: linearized R = tau I - A^T H A is not PSD (tau = " + std::to_string(spec.tau) +
                    " < lambda_max(A^T H A) = " + std::to_string(lmax) + ")");
        return PsdOperator(symmetrized(spec.tau * Matrix::Identity(n, n) - aha), Definiteness::semidefinite, label);
      }
    }
    throw Error("schedule: unknown operator kind");
  }

  MetricTriple build_base() const {
    PsdOperator h = make(rule_.H, A_.rows(), SpaceLabel::Gamma, true, nullptr);
    require(h.definite(), "schedule: H_0 must be positive definite");
    PsdOperator r = make(rule_.R, A_.cols(), SpaceLabel::X, false, &h);
    PsdOperator s = make(rule_.S, B_.cols(), SpaceLabel::Y, false, nullptr);
    return {std::move(h), std::move(r), std::move(s)};
  }

  ScheduleRule rule_;
  Matrix A_, B_;
  long k_max_;
  bool admm_mode_;
  std::optional<MetricTriple> base_;
  std::optional<PsdOperator> mid0_, hinv0_;
  std::vector<double> c_seq_;
  std::vector<double> factors_;
  double sum_c_ = 0.0, prod_c_ = 1.0, C_S_ = 0.0, C_P_ = 1.0;

  friend ValidationReport validate(const MetricSchedule&, bool);
};

// Checks (1/(1+c_k)) Q_k <= Q_{k+1} <= (1+c_k) Q_k for every family and k < k_max.
// Factor-driven schedules reduce to a scalar ratio test unless full_check is set.
inline ValidationReport validate(const MetricSchedule& sched, bool full_check = false) {
  ValidationReport rep;
  rep.k_max = sched.k_max_;
  rep.sum_c = sched.sum_c_;
  rep.prod_c = sched.prod_c_;
  rep.C_S = sched.C_S_;
  rep.C_P = sched.C_P_;
  for (long k = 0; k <= sched.k_max_; ++k) {
    const double c = sched.c_seq_[k];
    if (sched.admm_mode_ && (c < 0.0 || c > 1.0)) rep.c_out_of_range.push_back(k);
  }
  constexpr double slack = 1e-10;
  const bool structural = sched.rule_.kind != ScheduleKind::custom_list && !full_check;
  for (long k = 0; k < sched.k_max_; ++k) {
    const double c = sched.c_seq_[k];
    if (structural) {
      const double ratio = sched.factor(k + 1) / sched.factor(k);
      const bool lower = ratio >= (1.0 / (1.0 + c)) * (1.0 - slack);
      const bool upper = ratio <= (1.0 + c) * (1.0 + slack);
      if (!(lower && upper)) {
        // zero families satisfy the sandwich trivially
        const MetricTriple& q = *sched.base_;
        if (q.H.norm() > 0.0) rep.failures.push_back({k, "H", lower, upper});
        if (q.R.norm() > 0.0) rep.failures.push_back({k, "R", lower, upper});
        if (q.S.norm() > 0.0) rep.failures.push_back({k, "S", lower, upper});
      }
      continue;
    }
    const MetricTriple a = sched.realize(k);
    const MetricTriple b = sched.realize(k + 1);
    auto check = [&](const PsdOperator& qk, const PsdOperator& qn, const char* fam) {
      const bool lower = operator_leq(PsdOperator(qk.matrix() / (1.0 + c)), qn, slack);
      const bool upper = operator_leq(qn, PsdOperator(qk.matrix() * (1.0 + c)), slack);
      if (!(lower && upper)) rep.failures.push_back({k, fam, lower, upper});
    };
    check(a.H, b.H, "H");
    check(a.R, b.R, "R");
    check(a.S, b.S, "S");
  }
  return rep;
}

}  // namespace vmpadmm
