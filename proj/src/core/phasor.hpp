#pragma once
#include <complex>

#include <Eigen/Core>

namespace dsopt {

using Cx = std::complex<double>;

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

constexpr double kPi = 3.14159265358979323846;

// Real 2x2 block representing multiplication by a complex number in
// stacked (x, y) coordinates: [Re -Im; Im Re].
inline Eigen::Matrix2d cx_block(Cx z) {
  Eigen::Matrix2d b;
  b << z.real(), -z.imag(), z.imag(), z.real();
  return b;
}

}  // namespace dsopt
