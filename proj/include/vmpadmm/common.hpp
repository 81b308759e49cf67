#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace vmpadmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// All precondition and configuration failures in the library surface as this
// exception type; verification outcomes are reported through result structs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

// (sqrt(5)+1)/2, the open upper end of the admissible over-relaxation range.
inline constexpr double kGoldenRatio = 1.6180339887498948482;

inline bool theta_admissible(double theta) {
  return theta > 1e-12 && theta < kGoldenRatio - 1e-12;
}

// Concatenates blocks of a product-space vector.
inline Vector concat(const Vector& a, const Vector& b, const Vector& c) {
  Vector z(a.size() + b.size() + c.size());
  z << a, b, c;
  return z;
}

}  // namespace vmpadmm
