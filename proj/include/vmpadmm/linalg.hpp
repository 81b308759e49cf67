#pragma once

// Dense operator algebra on finite-dimensional spaces with degenerate
// (positive semidefinite) metrics.

#include "vmpadmm/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <vector>

namespace vmpadmm {

enum class SpaceLabel { X, Y, Gamma, ZProduct };

struct VectorSpaceTag {
  Eigen::Index dim = 1;
  SpaceLabel label = SpaceLabel::X;
};

enum class Definiteness { semidefinite, definite };

struct PsdTolerances {
  double symmetry = 1e-12;      // relative to max |entry|
  double psd = 1e-10;           // allowed negative eigenvalue, relative to max(1, lambda_max)
  double definite_rel = 1e-12;  // lambda_min / lambda_max floor for definite operators
};

// Selfadjoint positive (semi)definite operator stored as a dense symmetric
// matrix together with its spectral decomposition. Immutable.
class PsdOperator {
 public:
  explicit PsdOperator(Matrix m, Definiteness def = Definiteness::semidefinite,
                       SpaceLabel label = SpaceLabel::X, PsdTolerances tol = {})
      : label_(label), definiteness_(def) {
    require(m.rows() >= 1 && m.rows() == m.cols(), "PsdOperator: matrix must be square and nonempty");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    require(asym <= tol.symmetry * scale, "PsdOperator: matrix is not symmetric (max asymmetry " +
                                              std::to_string(asym) + ")");
    matrix_ = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(matrix_);
    require(es.info() == Eigen::Success, "PsdOperator: eigendecomposition failed");
    eigenvalues_ = es.eigenvalues();
    eigenvectors_ = std::make_shared<const Matrix>(es.eigenvectors());
    const double lmin = eigenvalues_(0);
    const double lmax = eigenvalues_(eigenvalues_.size() - 1);
    require(lmin >= -tol.psd * std::max(1.0, std::abs(lmax)),
            "PsdOperator: matrix is not positive semidefinite (lambda_min = " + std::to_string(lmin) + ")");
    if (def == Definiteness::definite) {
      require(lmax > 0.0 && lmin >= tol.definite_rel * lmax,
              "PsdOperator: matrix is not positive definite (lambda_min = " + std::to_string(lmin) + ")");
    }
  }

  static PsdOperator scaled_identity(Eigen::Index n, double beta, SpaceLabel label = SpaceLabel::X) {
    require(beta >= 0.0, "scaled_identity: negative scale");
    return PsdOperator(beta * Matrix::Identity(n, n),
                       beta > 0.0 ? Definiteness::definite : Definiteness::semidefinite, label);
  }
  static PsdOperator identity(Eigen::Index n, SpaceLabel label = SpaceLabel::X) {
    return scaled_identity(n, 1.0, label);
  }
  static PsdOperator zero(Eigen::Index n, SpaceLabel label = SpaceLabel::X) {
    return scaled_identity(n, 0.0, label);
  }
  static PsdOperator diagonal(const Vector& d, SpaceLabel label = SpaceLabel::X) {
    const bool pos = d.size() > 0 && d.minCoeff() > 0.0;
    return PsdOperator(d.asDiagonal().toDenseMatrix(),
                       pos ? Definiteness::definite : Definiteness::semidefinite, label);
  }

  Eigen::Index dim() const { return matrix_.rows(); }
  const Matrix& matrix() const { return matrix_; }
  SpaceLabel label() const { return label_; }
  VectorSpaceTag space() const { return {dim(), label_}; }
  Definiteness definiteness() const { return definiteness_; }
  bool definite() const { return definiteness_ == Definiteness::definite; }

  // Ascending eigenvalues and matching orthonormal eigenvectors.
  const Vector& eigenvalues() const { return eigenvalues_; }
  const Matrix& eigenvectors() const { return *eigenvectors_; }
  double lambda_min() const { return eigenvalues_(0); }
  double lambda_max() const { return eigenvalues_(eigenvalues_.size() - 1); }
  double norm() const { return std::max(std::abs(lambda_min()), std::abs(lambda_max())); }

  Vector apply(const Vector& z) const {
    require(z.size() == dim(), "PsdOperator::apply: dimension mismatch");
    return matrix_ * z;
  }

  // s * M, reusing the spectral decomposition.
  PsdOperator scaled(double s) const {
    require(s > 0.0 && std::isfinite(s), "PsdOperator::scaled: factor must be positive");
    PsdOperator out = *this;
    out.matrix_ *= s;
    out.eigenvalues_ *= s;
    return out;
  }

  // M^{-1} through the eigendecomposition; condition number above 1e12 is refused.
  PsdOperator inverse() const {
    require(lambda_min() > 0.0 && lambda_max() <= 1e12 * lambda_min(),
            "PsdOperator::inverse: operator is singular or ill-conditioned (cond > 1e12)");
    PsdOperator out = *this;
    out.eigenvalues_ = eigenvalues_.cwiseInverse().reverse();
    Matrix v = eigenvectors_->rowwise().reverse();
    out.matrix_ = v * out.eigenvalues_.asDiagonal() * v.transpose();
    out.matrix_ = 0.5 * (out.matrix_ + out.matrix_.transpose()).eval();
    out.eigenvectors_ = std::make_shared<const Matrix>(std::move(v));
    out.definiteness_ = Definiteness::definite;
    return out;
  }

  // Minimum-norm solution of M u = r (pseudo-inverse applied to r).
  Vector pseudo_solve(const Vector& r) const {
    require(r.size() == dim(), "PsdOperator::pseudo_solve: dimension mismatch");
    const double cut = definite() ? 0.0 : 1e-10 * std::max(lambda_max(), 0.0);
    const Matrix& v = eigenvectors();
    Vector coeff = v.transpose() * r;
    for (Eigen::Index i = 0; i < coeff.size(); ++i) {
      const double l = eigenvalues_(i);
      coeff(i) = (l > cut && l > 0.0) ? coeff(i) / l : 0.0;
    }
    return v * coeff;
  }

 private:
  Matrix matrix_;
  Vector eigenvalues_;
  std::shared_ptr<const Matrix> eigenvectors_;
  SpaceLabel label_;
  Definiteness definiteness_;
};

// ||z||_M^2 = <Mz, z>, clamped at zero inside the PSD rounding band.
inline double seminorm_sq(const PsdOperator& m, const Vector& z) {
  require(z.size() == m.dim(), "seminorm: dimension mismatch");
  const double q = z.dot(m.matrix() * z);
  if (q < 0.0) {
    require(q >= -1e-10 * std::max(m.norm(), 1e-300) * z.squaredNorm() - 1e-300,
            "seminorm: negative quadratic form, operator is not PSD");
    return 0.0;
  }
  return q;
}

inline double seminorm(const PsdOperator& m, const Vector& z) { return std::sqrt(seminorm_sq(m, z)); }

// Dual seminorm of M w, which equals ||w||_M for any preimage w.
inline double dual_seminorm_of_image(const PsdOperator& m, const Vector& w) {
  require(w.size() == m.dim(), "dual_seminorm_of_image: dimension mismatch");
  return seminorm(m, w);
}

inline constexpr double kRangeTolerance = 1e-8;

// Dual seminorm sup{<r, z> : ||z||_M <= 1} evaluated through the pseudo-inverse.
// Returns +infinity when r is not in range(M) within tol * ||r||.
inline double dual_seminorm_general(const PsdOperator& m, const Vector& r, double tol = kRangeTolerance) {
  require(r.size() == m.dim(), "dual_seminorm_general: dimension mismatch");
  const double rn = r.norm();
  if (rn == 0.0) return 0.0;
  const Vector u = m.pseudo_solve(r);
  if ((m.matrix() * u - r).norm() > tol * rn) return std::numeric_limits<double>::infinity();
  return std::sqrt(std::max(0.0, u.dot(r)));
}

// M <= N in the Loewner order, up to slack_tol * (1 + ||N - M||).
inline bool operator_leq(const PsdOperator& m, const PsdOperator& n, double slack_tol = 1e-10) {
  require(m.dim() == n.dim(), "operator_leq: dimension mismatch");
  const Matrix d = n.matrix() - m.matrix();
  Eigen::SelfAdjointEigenSolver<Matrix> es(d, Eigen::EigenvaluesOnly);
  const Vector& ev = es.eigenvalues();
  const double dn = std::max(std::abs(ev(0)), std::abs(ev(ev.size() - 1)));
  return ev(0) >= -slack_tol * (1.0 + dn);
}

// Block-diagonal operator on a product space.
class BlockDiagOperator {
 public:
  BlockDiagOperator() = default;
  explicit BlockDiagOperator(std::vector<PsdOperator> blocks) : blocks_(std::move(blocks)) {
    require(!blocks_.empty(), "block_diag: empty block list");
    offsets_.reserve(blocks_.size() + 1);
    offsets_.push_back(0);
    for (const auto& b : blocks_) offsets_.push_back(offsets_.back() + b.dim());
  }

  std::size_t num_blocks() const { return blocks_.size(); }
  const PsdOperator& block(std::size_t i) const { return blocks_.at(i); }
  const std::vector<PsdOperator>& blocks() const { return blocks_; }
  Eigen::Index dim() const { return offsets_.empty() ? 0 : offsets_.back(); }
  VectorSpaceTag space() const { return {dim(), SpaceLabel::ZProduct}; }
  Eigen::Index offset(std::size_t i) const { return offsets_.at(i); }

  auto segment(const Vector& z, std::size_t i) const {
    return z.segment(offsets_.at(i), blocks_.at(i).dim());
  }

  Vector apply(const Vector& z) const {
    require(z.size() == dim(), "BlockDiagOperator::apply: dimension mismatch");
    Vector out(dim());
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      out.segment(offsets_[i], blocks_[i].dim()) = blocks_[i].matrix() * segment(z, i);
    return out;
  }

  Matrix to_dense() const {
    Matrix out = Matrix::Zero(dim(), dim());
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      out.block(offsets_[i], offsets_[i], blocks_[i].dim(), blocks_[i].dim()) = blocks_[i].matrix();
    return out;
  }

 private:
  std::vector<PsdOperator> blocks_;
  std::vector<Eigen::Index> offsets_;
};

inline BlockDiagOperator block_diag(std::vector<PsdOperator> blocks) {
  return BlockDiagOperator(std::move(blocks));
}

inline double seminorm_sq(const BlockDiagOperator& m, const Vector& z) {
  require(z.size() == m.dim(), "seminorm: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < m.num_blocks(); ++i) s += seminorm_sq(m.block(i), Vector(m.segment(z, i)));
  return s;
}

inline double seminorm(const BlockDiagOperator& m, const Vector& z) { return std::sqrt(seminorm_sq(m, z)); }

inline double dual_seminorm_of_image(const BlockDiagOperator& m, const Vector& w) {
  return seminorm(m, w);
}

inline double dual_seminorm_general(const BlockDiagOperator& m, const Vector& r,
                                    double tol = kRangeTolerance) {
  require(r.size() == m.dim(), "dual_seminorm_general: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < m.num_blocks(); ++i) {
    const double d = dual_seminorm_general(m.block(i), Vector(m.segment(r, i)), tol);
    if (!std::isfinite(d)) return d;
    s += d * d;
  }
  return std::sqrt(s);
}

inline bool operator_leq(const BlockDiagOperator& m, const BlockDiagOperator& n, double slack_tol = 1e-10) {
  require(m.num_blocks() == n.num_blocks(), "operator_leq: block structure mismatch");
  double worst_min = std::numeric_limits<double>::infinity();
  double worst_norm = 0.0;
  for (std::size_t i = 0; i < m.num_blocks(); ++i) {
    require(m.block(i).dim() == n.block(i).dim(), "operator_leq: dimension mismatch");
    Eigen::SelfAdjointEigenSolver<Matrix> es(n.block(i).matrix() - m.block(i).matrix(),
                                             Eigen::EigenvaluesOnly);
    const Vector& ev = es.eigenvalues();
    worst_min = std::min(worst_min, ev(0));
    worst_norm = std::max({worst_norm, std::abs(ev(0)), std::abs(ev(ev.size() - 1))});
  }
  return worst_min >= -slack_tol * (1.0 + worst_norm);
}

}  // namespace vmpadmm
