#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pmpguard/autodiff.hpp"
#include "pmpguard/numeric.hpp"
#include "pmpguard/rng.hpp"

using namespace pmpguard;

namespace {

// Quadrature oracle for the standard normal CDF: trapezoid rule from 0 to x
// with a fixed step, anchored at Phi(0) = 1/2.
double cdf_quadrature(double x, double step = 1e-4) {
  double lo = 0.0, hi = std::abs(x);
  auto pdf = [](double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  };
  double area = 0.0;
  double z = lo;
  while (z < hi) {
    double z2 = std::min(hi, z + step);
    area += 0.5 * (pdf(z) + pdf(z2)) * (z2 - z);
    z = z2;
  }
  return x >= 0.0 ? 0.5 + area : 0.5 - area;
}

}  // namespace

TEST_CASE("softmax_rows uniform input") {
  Matrix a(1, 3);
  auto out = softmax_rows(a);
  for (int j = 0; j < 3; ++j) CHECK(out.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax_rows exponential identity") {
  Matrix a(1, 3);
  a.at(0, 0) = std::log(1.0);
  a.at(0, 1) = std::log(2.0);
  a.at(0, 2) = std::log(3.0);
  auto out = softmax_rows(a);
  CHECK(out.at(0, 0) == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(out.at(0, 2) == doctest::Approx(3.0 / 6).epsilon(1e-12));
}

TEST_CASE("softmax_rows large magnitude does not overflow") {
  Matrix a(1, 2);
  a.at(0, 0) = 1000.0;
  a.at(0, 1) = 0.0;
  auto out = softmax_rows(a);
  // exact values: 1/(1+e^-1000) and e^-1000/(1+e^-1000); the second
  // underflows to 0 in double precision
  CHECK(std::abs(out.at(0, 0) - 1.0) < 1e-12);
  CHECK(std::abs(out.at(0, 1)) < 1e-12);
  CHECK(all_finite(out));
}

TEST_CASE("softmax_rows rows sum to 1 on 1000 random matrices") {
  Rng rng(11);
  for (int it = 0; it < 1000; ++it) {
    int r = 1 + rng.index(5), c = 1 + rng.index(6);
    Matrix a(r, c);
    for (auto& x : a.data) x = rng.uniform(-50.0, 50.0);
    auto out = softmax_rows(a);
    for (int i = 0; i < r; ++i) {
      double sum = 0.0;
      for (int j = 0; j < c; ++j) {
        CHECK(out.at(i, j) >= 0.0);
        sum += out.at(i, j);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax_rows rejects empty input") {
  CHECK_THROWS_AS(softmax_rows(Matrix()), Error);
  try {
    softmax_rows(Matrix());
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyInput);
  }
}

TEST_CASE("cosine basic identities") {
  std::vector<double> u = {1, 2, 3};
  CHECK(cosine(u, u) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> a = {1, 0}, b = {0, 1};
  CHECK(cosine(a, b) == doctest::Approx(0.0).epsilon(1e-12));
  std::vector<double> p = {1, 2}, q = {3, -1};
  CHECK(cosine(p, q) == doctest::Approx(1.0 / std::sqrt(50.0)).epsilon(1e-12));
}

TEST_CASE("cosine symmetry and scale invariance") {
  Rng rng(5);
  for (int it = 0; it < 100; ++it) {
    std::vector<double> u(4), v(4);
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    double c = cosine(u, v);
    CHECK(std::abs(c - cosine(v, u)) < 1e-12);
    double scale = rng.uniform(0.1, 10.0);
    std::vector<double> su = u;
    for (auto& x : su) x *= scale;
    CHECK(std::abs(c - cosine(su, v)) < 1e-12);
    CHECK(c >= -1.0 - 1e-12);
    CHECK(c <= 1.0 + 1e-12);
  }
}

TEST_CASE("cosine rejects zero vectors") {
  std::vector<double> z = {0, 0}, u = {1, 1};
  try {
    cosine(z, u);
    FAIL("expected ZeroVector");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ZeroVector);
  }
}

TEST_CASE("sigmoid identities") {
  CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(sigmoid(1000.0) - 1.0) < 1e-12);
  CHECK(std::abs(sigmoid(-1000.0)) < 1e-12);
  CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-12));
  Rng rng(2);
  for (int it = 0; it < 100; ++it) {
    double x = rng.uniform(-30.0, 30.0);
    CHECK(std::abs(sigmoid(-x) - (1.0 - sigmoid(x))) < 1e-12);
    CHECK(sigmoid(x) > 0.0);
    CHECK(sigmoid(x) < 1.0);
  }
}

TEST_CASE("std_normal_cdf anchor values") {
  CHECK(std_normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(std_normal_cdf(1.0) - 0.8413447) < 1e-7);
  CHECK(std::abs(std_normal_cdf(-1.0) - 0.1586553) < 1e-7);
}

TEST_CASE("std_normal_cdf complement and monotonicity") {
  Rng rng(9);
  double prev_x = -9.0, prev_p = std_normal_cdf(prev_x);
  for (int it = 0; it < 200; ++it) {
    double x = rng.uniform(-8.0, 8.0);
    CHECK(std::abs(std_normal_cdf(x) + std_normal_cdf(-x) - 1.0) < 1e-12);
  }
  for (double x = -8.0; x <= 8.0; x += 0.05) {
    double p = std_normal_cdf(x);
    CHECK(p >= prev_p);
    prev_x = x;
    prev_p = p;
  }
}

TEST_CASE("std_normal_cdf agrees with trapezoid quadrature oracle") {
  Rng rng(17);
  for (int it = 0; it < 1000; ++it) {
    double x = rng.uniform(-8.0, 8.0);
    CHECK(std::abs(std_normal_cdf(x) - cdf_quadrature(x)) < 1e-6);
  }
}

TEST_CASE("rng determinism and basic ranges") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    all_equal = all_equal && (x == y);
    any_diff = any_diff || (x != z);
  }
  CHECK(all_equal);
  CHECK(any_diff);
  Rng d(1);
  for (int i = 0; i < 100; ++i) {
    double u = d.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    int k = d.index(7);
    CHECK(k >= 0);
    CHECK(k < 7);
  }
}

TEST_CASE("autodiff matches closed-form derivatives on composite scalars") {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  ad::Var x = ad::leaf(0.7), y = ad::leaf(-1.3);
  ad::Var f = ad::vexp(x * y) + ad::vlog(ad::vsqrt(x * x + ad::Var(1.0))) / y;
  auto g = tape.backward(f.i);
  double xv = 0.7, yv = -1.3;
  double dfdx = yv * std::exp(xv * yv) + (xv / (xv * xv + 1.0)) / yv;
  double dfdy = xv * std::exp(xv * yv) -
                0.5 * std::log(xv * xv + 1.0) / (yv * yv);
  CHECK(g[x.i] == doctest::Approx(dfdx).epsilon(1e-12));
  CHECK(g[y.i] == doctest::Approx(dfdy).epsilon(1e-12));
}
