#pragma once

// Structured instances of min f(x) + g(y) s.t. Ax + By = b: function
// descriptors with closed-form subdifferential oracles, seeded generators and
// a high-accuracy reference solver.

#include "vmpadmm/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace vmpadmm {

struct ZeroFn {};
struct QuadraticFn {  // 0.5 x^T Q x + q^T x
  Matrix Q;
  Vector q;
};
struct L1Fn {  // lambda ||x||_1
  double lambda = 1.0;
};
struct BoxFn {  // indicator of [l, u]
  Vector l, u;
};

struct MembershipResult {
  bool ok = true;
  double worst_violation = 0.0;  // largest violation found (0 when ok)
  Eigen::Index worst_index = -1;
};

struct SampledCheck {
  int samples = 0;
  int violations = 0;
  double worst_margin = std::numeric_limits<double>::infinity();  // min over samples of (slack + tolerance)
  bool ok() const { return violations == 0; }
};

class FunctionDescriptor {
 public:
  enum class Kind { zero, quadratic, l1, box };

  static FunctionDescriptor zero(Eigen::Index n) { return FunctionDescriptor(ZeroFn{}, n); }
  static FunctionDescriptor quadratic(Matrix Q, Vector q) {
    require(Q.rows() == Q.cols() && Q.rows() == q.size(), "quadratic: dimension mismatch");
    require((Q - Q.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, Q.cwiseAbs().maxCoeff()),
            "quadratic: Q must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(Q, Eigen::EigenvaluesOnly);
    require(es.eigenvalues()(0) >= -1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()),
            "quadratic: Q must be positive semidefinite");
    const Eigen::Index n = q.size();
    return FunctionDescriptor(QuadraticFn{0.5 * (Q + Q.transpose()), std::move(q)}, n);
  }
  static FunctionDescriptor l1(Eigen::Index n, double lambda) {
    require(lambda > 0.0, "l1: lambda must be positive");
    return FunctionDescriptor(L1Fn{lambda}, n);
  }
  static FunctionDescriptor box(Vector l, Vector u) {
    require(l.size() == u.size(), "box: dimension mismatch");
    require((u - l).minCoeff() >= 0.0, "box: requires l <= u componentwise");
    const Eigen::Index n = l.size();
    return FunctionDescriptor(BoxFn{std::move(l), std::move(u)}, n);
  }

  Kind kind() const { return static_cast<Kind>(fn_.index()); }
  Eigen::Index dim() const { return dim_; }
  bool smooth() const { return kind() == Kind::zero || kind() == Kind::quadratic; }
  const QuadraticFn& as_quadratic() const { return std::get<QuadraticFn>(fn_); }
  const L1Fn& as_l1() const { return std::get<L1Fn>(fn_); }
  const BoxFn& as_box() const { return std::get<BoxFn>(fn_); }

  static constexpr double kDomainTol = 1e-12;

  bool in_domain(const Vector& x) const {
    if (kind() != Kind::box) return true;
    const auto& b = as_box();
    for (Eigen::Index i = 0; i < dim_; ++i) {
      const double t = kDomainTol * (1.0 + std::abs(b.l(i)) + std::abs(b.u(i)));
      if (x(i) < b.l(i) - t || x(i) > b.u(i) + t) return false;
    }
    return true;
  }

  double value(const Vector& x) const {
    check_dim(x);
    switch (kind()) {
      case Kind::zero:
        return 0.0;
      case Kind::quadratic: {
        const auto& f = as_quadratic();
        return 0.5 * x.dot(f.Q * x) + f.q.dot(x);
      }
      case Kind::l1:
        return as_l1().lambda * x.lpNorm<1>();
      case Kind::box:
        return in_domain(x) ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return 0.0;
  }

  // Euclidean distance from v to the subdifferential at x (+inf off the domain).
  double subdiff_distance(const Vector& x, const Vector& v) const {
    check_dim(x);
    require(v.size() == dim_, "subdiff_distance: dimension mismatch");
    switch (kind()) {
      case Kind::zero:
        return v.norm();
      case Kind::quadratic: {
        const auto& f = as_quadratic();
        return (f.Q * x + f.q - v).norm();
      }
      case Kind::l1: {
        const double lam = as_l1().lambda;
        double s = 0.0;
        for (Eigen::Index i = 0; i < dim_; ++i) {
          const double d = x(i) != 0.0 ? std::abs(v(i) - lam * sign(x(i))) : std::max(0.0, std::abs(v(i)) - lam);
          s += d * d;
        }
        return std::sqrt(s);
      }
      case Kind::box: {
        if (!in_domain(x)) return std::numeric_limits<double>::infinity();
        double s = 0.0;
        for (Eigen::Index i = 0; i < dim_; ++i) {
          const double d = box_face_distance(i, x(i), v(i));
          s += d * d;
        }
        return std::sqrt(s);
      }
    }
    return 0.0;
  }

  // Closed-form membership test v in df(x): componentwise with tolerance tol * (1 + |v_i|)
  // (vector-wise for quadratic and zero).
  MembershipResult contains_subgradient(const Vector& x, const Vector& v, double tol = 1e-8) const {
    check_dim(x);
    require(v.size() == dim_, "contains_subgradient: dimension mismatch");
    MembershipResult res;
    auto note = [&](double viol, double scale, Eigen::Index i) {
      const double excess = viol - tol * (1.0 + scale);
      if (excess > 0.0) res.ok = false;
      if (viol > res.worst_violation) {
        res.worst_violation = viol;
        res.worst_index = i;
      }
      (void)excess;
    };
    switch (kind()) {
      case Kind::zero:
        note(v.norm(), v.norm(), -1);
        break;
      case Kind::quadratic: {
        const auto& f = as_quadratic();
        const Vector grad = f.Q * x + f.q;
        note((grad - v).norm(), std::max(grad.norm(), v.norm()), -1);
        break;
      }
      case Kind::l1: {
        const double lam = as_l1().lambda;
        for (Eigen::Index i = 0; i < dim_; ++i) {
          const double d = x(i) != 0.0 ? std::abs(v(i) - lam * sign(x(i))) : std::max(0.0, std::abs(v(i)) - lam);
          note(d, std::abs(v(i)), i);
        }
        break;
      }
      case Kind::box: {
        if (!in_domain(x)) {
          res.ok = false;
          res.worst_violation = std::numeric_limits<double>::infinity();
          break;
        }
        for (Eigen::Index i = 0; i < dim_; ++i) note(box_face_distance(i, x(i), v(i)), std::abs(v(i)), i);
        break;
      }
    }
    return res;
  }

  // A subgradient at x: l1 takes 0 on zero coordinates, box takes 0 (always in the normal cone).
  Vector subgradient(const Vector& x) const {
    check_dim(x);
    require(in_domain(x), "subgradient: point outside the domain");
    switch (kind()) {
      case Kind::quadratic: {
        const auto& f = as_quadratic();
        return f.Q * x + f.q;
      }
      case Kind::l1: {
        const double lam = as_l1().lambda;
        return x.unaryExpr([lam](double t) { return lam * sign(t); });
      }
      case Kind::zero:
      case Kind::box:
        return Vector::Zero(dim_);
    }
    return Vector::Zero(dim_);
  }

  // Random element of df(x): uniform on [-lambda, lambda] at l1 zeros, random
  // normal-cone elements on active box faces.
  template <class Rng>
  Vector subgradient(const Vector& x, Rng& rng) const {
    Vector g = subgradient(x);
    if (kind() == Kind::l1) {
      std::uniform_real_distribution<double> u(-as_l1().lambda, as_l1().lambda);
      for (Eigen::Index i = 0; i < dim_; ++i)
        if (x(i) == 0.0) g(i) = u(rng);
    } else if (kind() == Kind::box) {
      std::exponential_distribution<double> e(1.0);
      const auto& b = as_box();
      for (Eigen::Index i = 0; i < dim_; ++i) {
        const bool at_l = x(i) <= b.l(i), at_u = x(i) >= b.u(i);
        if (at_l && at_u) g(i) = e(rng) - e(rng);
        else if (at_l) g(i) = -e(rng);
        else if (at_u) g(i) = e(rng);
      }
    }
    return g;
  }

  // argmin_x f(x) + 0.5 x^T P x - q^T x. Nonsmooth kinds need a diagonal P.
  Vector argmin_quadratic(const Matrix& P, const Vector& q) const {
    require(P.rows() == dim_ && P.cols() == dim_ && q.size() == dim_, "argmin_quadratic: dimension mismatch");
    if (smooth()) {
      Matrix K = P;
      Vector rhs = q;
      if (kind() == Kind::quadratic) {
        K += as_quadratic().Q;
        rhs -= as_quadratic().q;
      }
      K = 0.5 * (K + K.transpose()).eval();
      Eigen::LLT<Matrix> llt(K);
      require(llt.info() == Eigen::Success, "subproblem: quadratic system is singular (not positive definite)");
      Vector x = llt.solve(rhs);
      // one step of iterative refinement
      x += llt.solve(rhs - K * x);
      return x;
    }
    const Vector d = P.diagonal();
    const double dmax = d.cwiseAbs().maxCoeff();
    const Matrix off = P - Matrix(d.asDiagonal());
    require(off.cwiseAbs().maxCoeff() <= 1e-10 * std::max(dmax, 1e-300),
            std::string("subproblem: ") + (kind() == Kind::l1 ? "l1" : "box") +
                " term needs a metric that diagonalizes the quadratic part (use a diagonal H/S or a linearized R)");
    require(d.minCoeff() > 0.0, "subproblem: quadratic part is singular");
    Vector x(dim_);
    if (kind() == Kind::l1) {
      const double lam = as_l1().lambda;
      for (Eigen::Index i = 0; i < dim_; ++i) {
        const double t = q(i) / d(i), thr = lam / d(i);
        x(i) = t > thr ? t - thr : (t < -thr ? t + thr : 0.0);
      }
    } else {
      const auto& b = as_box();
      for (Eigen::Index i = 0; i < dim_; ++i) x(i) = std::clamp(q(i) / d(i), b.l(i), b.u(i));
    }
    return x;
  }

  // Sampled test of f(x') >= f(x) + <v, x' - x> - eps with tolerance rel_tol * (1 + magnitudes).
  template <class Rng>
  SampledCheck epsilon_subgradient_check(const Vector& x, const Vector& v, double eps, int samples, Rng& rng,
                                         double rel_tol = 1e-8) const {
    check_dim(x);
    SampledCheck out;
    out.samples = samples;
    const double fx = value(x);
    if (!std::isfinite(fx)) {
      out.violations = samples;
      out.worst_margin = -std::numeric_limits<double>::infinity();
      return out;
    }
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    static constexpr double kScales[] = {1e-3, 1e-1, 1.0, 10.0};
    const double base = 1.0 + (x.size() ? x.cwiseAbs().maxCoeff() : 0.0);
    Vector qxv;
    if (kind() == Kind::quadratic) qxv = as_quadratic().Q * x + as_quadratic().q - v;
    for (int s = 0; s < samples; ++s) {
      Vector d(dim_);
      for (Eigen::Index i = 0; i < dim_; ++i) d(i) = nd(rng);
      d *= kScales[s % 4] * base;
      if (kind() == Kind::box) {
        const auto& b = as_box();
        Vector xp(dim_);
        for (Eigen::Index i = 0; i < dim_; ++i)
          xp(i) = (s % 2 == 0) ? b.l(i) + ud(rng) * (b.u(i) - b.l(i)) : std::clamp(x(i) + d(i), b.l(i), b.u(i));
        d = xp - x;
      }
      double gap = 0.0, mag = 0.0;
      switch (kind()) {
        case Kind::zero:
        case Kind::box:
          gap = -v.dot(d);
          mag = std::abs(gap);
          break;
        case Kind::quadratic: {
          const double curv = 0.5 * d.dot(as_quadratic().Q * d);
          const double lin = qxv.dot(d);
          gap = curv + lin;
          mag = std::abs(curv) + std::abs(lin);
          break;
        }
        case Kind::l1: {
          const double lam = as_l1().lambda;
          const double fxp = lam * (x + d).lpNorm<1>();
          const double lin = v.dot(d);
          gap = fxp - fx - lin;
          mag = std::abs(fxp) + std::abs(fx) + std::abs(lin);
          break;
        }
      }
      const double margin = gap + eps + rel_tol * (1.0 + mag + std::abs(eps));
      out.worst_margin = std::min(out.worst_margin, margin);
      if (margin < 0.0) ++out.violations;
    }
    return out;
  }

 private:
  template <class F>
  FunctionDescriptor(F f, Eigen::Index n) : fn_(std::move(f)), dim_(n) {
    require(n >= 1, "function descriptor: dimension must be >= 1");
  }

  static double sign(double t) { return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0); }

  void check_dim(const Vector& x) const { require(x.size() == dim_, "function descriptor: dimension mismatch"); }

  // Distance from v to the normal cone of [l_i, u_i] at t.
  double box_face_distance(Eigen::Index i, double t, double v) const {
    const auto& b = as_box();
    const double tl = kDomainTol * (1.0 + std::abs(b.l(i)));
    const double tu = kDomainTol * (1.0 + std::abs(b.u(i)));
    const bool at_l = t <= b.l(i) + tl, at_u = t >= b.u(i) - tu;
    if (at_l && at_u) return 0.0;
    if (at_l) return std::max(0.0, v);
    if (at_u) return std::max(0.0, -v);
    return std::abs(v);
  }

  std::variant<ZeroFn, QuadraticFn, L1Fn, BoxFn> fn_;
  Eigen::Index dim_;
};

struct ProblemSpec {
  std::string name;
  FunctionDescriptor f = FunctionDescriptor::zero(1);
  FunctionDescriptor g = FunctionDescriptor::zero(1);
  Matrix A, B;
  Vector b;
  unsigned long long seed = 0;

  Eigen::Index nx() const { return A.cols(); }
  Eigen::Index ny() const { return B.cols(); }
  Eigen::Index m() const { return A.rows(); }

  void validate() const {
    require(A.rows() == B.rows() && A.rows() == b.size(), "problem '" + name + "': A, B, b row counts differ");
    require(f.dim() == A.cols(), "problem '" + name + "': dim(f) does not match columns of A");
    require(g.dim() == B.cols(), "problem '" + name + "': dim(g) does not match columns of B");
    require(A.rows() >= 1, "problem '" + name + "': empty constraint");
  }
};

enum class GeneratorKind { lasso, box_qp, consensus_ls };

inline GeneratorKind parse_generator_kind(const std::string& s) {
  if (s == "lasso") return GeneratorKind::lasso;
  if (s == "box_qp") return GeneratorKind::box_qp;
  if (s == "consensus_ls") return GeneratorKind::consensus_ls;
  throw Error("unknown generator kind '" + s + "' (expected lasso, box_qp or consensus_ls)");
}

inline std::string to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::lasso: return "lasso";
    case GeneratorKind::box_qp: return "box_qp";
    case GeneratorKind::consensus_ls: return "consensus_ls";
  }
  return "?";
}

struct Dims {
  Eigen::Index n = 10;  // dim of x (and of y for box_qp / consensus_ls)
  Eigen::Index m = 5;   // constraint rows (lasso: dim of y); ignored by box_qp
};

// "10x5" or "10" (m defaults to max(1, n/2)).
inline Dims parse_dims(const std::string& s) {
  Dims d;
  try {
    const auto x = s.find('x');
    std::size_t used = 0;
    d.n = std::stol(s.substr(0, x), &used);
    require(used == (x == std::string::npos ? s.size() : x), "");
    if (x == std::string::npos) {
      d.m = std::max<Eigen::Index>(1, d.n / 2);
    } else {
      const std::string ms = s.substr(x + 1);
      d.m = std::stol(ms, &used);
      require(used == ms.size(), "");
    }
  } catch (const std::exception&) {
    throw Error("invalid dims '" + s + "' (expected N or NxM)");
  }
  return d;
}

// Deterministic per (kind, dims, seed); b is built from a sampled feasible point.
inline ProblemSpec generate(GeneratorKind kind, Dims dims, unsigned long long seed) {
  require(dims.n >= 1 && dims.m >= 1 && dims.n <= 200 && dims.m <= 200,
          "generate: dims must satisfy 1 <= n, m <= 200");
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<unsigned long long>(kind) + 1);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  auto gauss = [&](Eigen::Index r, Eigen::Index c) {
    Matrix M(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) M(i, j) = nd(rng);
    return M;
  };
  auto gauss_vec = [&](Eigen::Index n) { return Vector(gauss(n, 1).col(0)); };

  ProblemSpec p;
  p.seed = seed;
  const Eigen::Index n = dims.n;
  switch (kind) {
    case GeneratorKind::lasso: {
      // min 0.5 ||x - c||^2 + lambda ||y||_1  s.t.  Ax - y = 0
      const Eigen::Index m = dims.m;
      p.A = gauss(m, n) / std::sqrt(static_cast<double>(n));
      p.B = -Matrix::Identity(m, m);
      p.b = Vector::Zero(m);
      const Vector c = 2.0 * gauss_vec(n);
      p.f = FunctionDescriptor::quadratic(Matrix::Identity(n, n), -c);
      p.g = FunctionDescriptor::l1(m, 0.5);
      break;
    }
    case GeneratorKind::box_qp: {
      // min 0.5 x^T Q x + q^T x + indicator_[l,u](y)  s.t.  x - y = 0
      const Matrix G = gauss(n, n);
      Matrix Q = G.transpose() * G / static_cast<double>(n) + 0.5 * Matrix::Identity(n, n);
      Q = 0.5 * (Q + Q.transpose()).eval();
      const Vector q = 2.0 * gauss_vec(n);
      Vector u(n);
      for (Eigen::Index i = 0; i < n; ++i) u(i) = 0.2 + 0.8 * ud(rng);
      p.A = Matrix::Identity(n, n);
      p.B = -Matrix::Identity(n, n);
      p.b = Vector::Zero(n);
      p.f = FunctionDescriptor::quadratic(std::move(Q), q);
      p.g = FunctionDescriptor::box(-u, u);
      break;
    }
    case GeneratorKind::consensus_ls: {
      // min 0.5 ||D1 x - c1||^2 + 0.5 ||D2 y - c2||^2  s.t.  Ax + By = A x_hat + B y_hat
      const Eigen::Index m = std::min(dims.m, n);
      const Matrix D1 = gauss(n + 2, n) / std::sqrt(static_cast<double>(n));
      const Matrix D2 = gauss(n + 2, n) / std::sqrt(static_cast<double>(n));
      const Vector c1 = gauss_vec(n + 2), c2 = gauss_vec(n + 2);
      p.A = gauss(m, n) / std::sqrt(static_cast<double>(n));
      p.B = gauss(m, n) / std::sqrt(static_cast<double>(n));
      const Vector xh = gauss_vec(n), yh = gauss_vec(n);
      p.b = p.A * xh + p.B * yh;
      Matrix Q1 = D1.transpose() * D1, Q2 = D2.transpose() * D2;
      Q1 = 0.5 * (Q1 + Q1.transpose()).eval();
      Q2 = 0.5 * (Q2 + Q2.transpose()).eval();
      p.f = FunctionDescriptor::quadratic(std::move(Q1), -(D1.transpose() * c1));
      p.g = FunctionDescriptor::quadratic(std::move(Q2), -(D2.transpose() * c2));
      break;
    }
  }
  p.name = to_string(kind) + ":" + std::to_string(dims.n) + "x" + std::to_string(dims.m) + ":" + std::to_string(seed);
  p.validate();
  return p;
}

struct KktResiduals {
  double res_x = 0.0, res_y = 0.0, res_gamma = 0.0;
  double max() const { return std::max({res_x, res_y, res_gamma}); }
};

// Distances realizing 0 in df(x) - A^T gamma, 0 in dg(y) - B^T gamma, Ax + By - b = 0.
inline KktResiduals kkt_residual(const ProblemSpec& p, const Vector& x, const Vector& y, const Vector& gamma) {
  require(x.size() == p.nx() && y.size() == p.ny() && gamma.size() == p.m(), "kkt_residual: dimension mismatch");
  KktResiduals r;
  r.res_x = p.f.subdiff_distance(x, p.A.transpose() * gamma);
  r.res_y = p.g.subdiff_distance(y, p.B.transpose() * gamma);
  r.res_gamma = (p.A * x + p.B * y - p.b).norm();
  return r;
}

inline Vector subgradient_sample(const FunctionDescriptor& d, const Vector& x) { return d.subgradient(x); }

template <class Rng>
Vector subgradient_sample(const FunctionDescriptor& d, const Vector& x, Rng& rng) {
  return d.subgradient(x, rng);
}

// A pair (z', v') with v' in T(z') for the KKT operator
// T(x, y, gamma) = (df(x) - A^T gamma, dg(y) - B^T gamma, Ax + By - b).
template <class Rng>
std::pair<Vector, Vector> sample_kkt_pair(const ProblemSpec& p, const Vector& center, double spread, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  auto draw = [&](const FunctionDescriptor& fd, const Vector& c) {
    Vector x(fd.dim());
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = c(i) + spread * nd(rng);
    if (fd.kind() == FunctionDescriptor::Kind::box) {
      const auto& b = fd.as_box();
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        // land on the faces with positive probability
        const double r = ud(rng);
        x(i) = r < 0.15 ? b.l(i) : (r < 0.3 ? b.u(i) : std::clamp(x(i), b.l(i), b.u(i)));
      }
    } else if (fd.kind() == FunctionDescriptor::Kind::l1) {
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (ud(rng) < 0.2) x(i) = 0.0;
    }
    return x;
  };
  const Vector x = draw(p.f, center.head(p.nx()));
  const Vector y = draw(p.g, center.segment(p.nx(), p.ny()));
  Vector gamma(p.m());
  for (Eigen::Index i = 0; i < gamma.size(); ++i) gamma(i) = center(p.nx() + p.ny() + i) + spread * nd(rng);
  Vector v = concat(p.f.subgradient(x, rng) - p.A.transpose() * gamma, p.g.subgradient(y, rng) - p.B.transpose() * gamma,
                    p.A * x + p.B * y - p.b);
  return {concat(x, y, gamma), std::move(v)};
}

struct ReferenceSolution {
  Vector x, y, gamma;
  double kkt_residual = 0.0;
  long iterations = 0;
  bool direct = false;

  Vector z() const { return concat(x, y, gamma); }
};

namespace detail {

struct CoordRole {
  bool fixed = false;
  double value = 0.0;  // fixed coordinates
  double shift = 0.0;  // constant subgradient part of free coordinates
};

inline std::vector<CoordRole> coord_roles(const FunctionDescriptor& fd, const Vector& x, double tol) {
  std::vector<CoordRole> roles(static_cast<std::size_t>(fd.dim()));
  if (fd.kind() == FunctionDescriptor::Kind::l1) {
    const double lam = fd.as_l1().lambda;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (std::abs(x(i)) <= tol) roles[i] = {true, 0.0, 0.0};
      else roles[i] = {false, 0.0, x(i) > 0 ? lam : -lam};
    }
  } else if (fd.kind() == FunctionDescriptor::Kind::box) {
    const auto& b = fd.as_box();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (x(i) <= b.l(i) + tol) roles[i] = {true, b.l(i), 0.0};
      else if (x(i) >= b.u(i) - tol) roles[i] = {true, b.u(i), 0.0};
    }
  }
  return roles;
}

// Solves the KKT system with the active structure guessed from (x, y): fixed
// coordinates are pinned, free ones satisfy the smooth stationarity equation.
inline ReferenceSolution polish(const ProblemSpec& p, const Vector& x, const Vector& y, double tol) {
  const Eigen::Index nx = p.nx(), ny = p.ny(), m = p.m(), N = nx + ny + m;
  const auto rx = coord_roles(p.f, x, tol);
  const auto ry = coord_roles(p.g, y, tol);
  Matrix K = Matrix::Zero(N, N);
  Vector rhs = Vector::Zero(N);
  auto fill = [&](const FunctionDescriptor& fd, const std::vector<CoordRole>& roles, const Matrix& C,
                  Eigen::Index off) {
    const Eigen::Index n = fd.dim();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index row = off + i;
      if (roles[i].fixed) {
        K(row, off + i) = 1.0;
        rhs(row) = roles[i].value;
        continue;
      }
      if (fd.kind() == FunctionDescriptor::Kind::quadratic) {
        K.block(row, off, 1, n) = fd.as_quadratic().Q.row(i);
        rhs(row) = -fd.as_quadratic().q(i);
      }
      rhs(row) -= roles[i].shift;
      K.block(row, nx + ny, 1, m) = -C.col(i).transpose();
    }
  };
  fill(p.f, rx, p.A, 0);
  fill(p.g, ry, p.B, nx);
  K.block(nx + ny, 0, m, nx) = p.A;
  K.block(nx + ny, nx, m, ny) = p.B;
  rhs.tail(m) = p.b;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(K);
  Vector w = cod.solve(rhs);
  w += cod.solve(rhs - K * w);
  ReferenceSolution s;
  s.x = w.head(nx);
  s.y = w.segment(nx, ny);
  s.gamma = w.tail(m);
  // pinned box coordinates must stay exactly on their faces
  for (Eigen::Index i = 0; i < nx; ++i)
    if (rx[i].fixed) s.x(i) = rx[i].value;
  for (Eigen::Index i = 0; i < ny; ++i)
    if (ry[i].fixed) s.y(i) = ry[i].value;
  s.kkt_residual = kkt_residual(p, s.x, s.y, s.gamma).max();
  return s;
}

}  // namespace detail

// High-accuracy KKT point: direct linear solve when f and g are smooth,
// otherwise plain ADMM (linearized where needed) with active-set polishing.
inline ReferenceSolution reference_solve(const ProblemSpec& p, double accuracy = 1e-10, long max_iters = 1000000) {
  p.validate();
  require(accuracy >= 1e-12, "reference_solve: accuracy must be >= 1e-12");
  if (p.f.smooth() && p.g.smooth()) {
    ReferenceSolution s = detail::polish(p, Vector::Zero(p.nx()), Vector::Zero(p.ny()), 0.0);
    s.direct = true;
    require(s.kkt_residual <= accuracy,
            "reference_solve: direct KKT solve reached only " + std::to_string(s.kkt_residual));
    return s;
  }
  const Eigen::Index nx = p.nx(), ny = p.ny(), m = p.m();
  const double beta = 1.0;
  auto linearized = [&](const FunctionDescriptor& fd, const Matrix& C) -> Matrix {
    const Matrix chc = beta * C.transpose() * C;
    const Matrix off = chc - Matrix(chc.diagonal().asDiagonal());
    if (fd.smooth() || off.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, chc.cwiseAbs().maxCoeff()))
      return Matrix::Zero(fd.dim(), fd.dim());
    Eigen::SelfAdjointEigenSolver<Matrix> es(chc, Eigen::EigenvaluesOnly);
    return 1.01 * es.eigenvalues().maxCoeff() * Matrix::Identity(fd.dim(), fd.dim()) - chc;
  };
  const Matrix R = linearized(p.f, p.A), S = linearized(p.g, p.B);
  const Matrix Px = beta * p.A.transpose() * p.A + R;
  const Matrix Py = beta * p.B.transpose() * p.B + S;
  Vector x = Vector::Zero(nx), y = Vector::Zero(ny), gamma = Vector::Zero(m);
  ReferenceSolution best;
  best.kkt_residual = std::numeric_limits<double>::infinity();
  constexpr long kChunk = 50;
  for (long it = 0; it < max_iters;) {
    for (long j = 0; j < kChunk && it < max_iters; ++j, ++it) {
      const Vector qx = p.A.transpose() * (gamma - beta * (p.B * y - p.b)) + R * x;
      x = p.f.argmin_quadratic(Px, qx);
      const Vector qy = p.B.transpose() * (gamma - beta * (p.A * x - p.b)) + S * y;
      y = p.g.argmin_quadratic(Py, qy);
      gamma -= beta * (p.A * x + p.B * y - p.b);
    }
    const double res = kkt_residual(p, x, y, gamma).max();
    if (res < best.kkt_residual) best = {x, y, gamma, res, it, false};
    if (res < 1e-3) {
      for (double tol : {1e-6, 1e-9}) {
        const double scale = 1.0 + std::max(x.cwiseAbs().maxCoeff(), y.cwiseAbs().maxCoeff());
        ReferenceSolution s = detail::polish(p, x, y, tol * scale);
        if (s.kkt_residual < best.kkt_residual) {
          s.iterations = it;
          best = s;
        }
      }
    }
    if (best.kkt_residual <= accuracy) return best;
  }
  throw Error("reference_solve: iteration cap reached with best KKT residual " + std::to_string(best.kkt_residual));
}

}  // namespace vmpadmm
