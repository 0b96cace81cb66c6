#pragma once

#include <span>

#include "pmpguard/matrix.hpp"

namespace pmpguard {

// Row-wise softmax with max-subtraction; every output row sums to 1.
Matrix softmax_rows(const Matrix& a);

// Cosine similarity; throws ZeroVector on a zero-norm input.
double cosine(std::span<const double> u, std::span<const double> v);

// Numerically stable logistic sigmoid.
double sigmoid(double x);

// Standard normal CDF, accurate to machine precision via erfc.
double std_normal_cdf(double x);

}  // namespace pmpguard
