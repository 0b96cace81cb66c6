#include "pmpguard/numeric.hpp"

#include <algorithm>
#include <cmath>

namespace pmpguard {

Matrix softmax_rows(const Matrix& a) {
  if (a.empty()) fail(Errc::EmptyInput, "softmax_rows on empty matrix");
  Matrix out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    auto in = a.row(i);
    double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (int j = 0; j < a.cols; ++j) {
      double e = std::exp(in[j] - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < a.cols; ++j) out.at(i, j) /= sum;
  }
  return out;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (size_t k = 0; k < u.size(); ++k) {
    uu += u[k] * u[k];
    vv += v[k] * v[k];
    uv += u[k] * v[k];
  }
  if (uu == 0.0 || vv == 0.0) fail(Errc::ZeroVector, "cosine of zero-norm vector");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace pmpguard
