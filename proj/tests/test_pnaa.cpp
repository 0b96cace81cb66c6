#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "pmpguard/numeric.hpp"
#include "pmpguard/pnaa.hpp"
#include "pmpguard/rng.hpp"

using namespace pmpguard;

namespace {

pnaa::GaussianFit random_fit(Rng& rng) {
  pnaa::GaussianFit f;
  f.mu_neg = rng.uniform(0.05, 0.4);
  f.mu_pos = f.mu_neg + rng.uniform(0.1, 0.5);
  f.sigma_neg = rng.uniform(0.02, 0.2);
  f.sigma_pos = rng.uniform(0.02, 0.2);
  return f;
}

double objective(const pnaa::GaussianFit& f, double alpha, double t) {
  return alpha * (1.0 - std_normal_cdf((t - f.mu_neg) / f.sigma_neg)) +
         std_normal_cdf((t - f.mu_pos) / f.sigma_pos);
}

Matrix basis_row(int d, int k) {
  Matrix m(1, d);
  m.at(0, k) = 1.0;
  return m;
}

Matrix random_rows(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (auto& x : m.data) x = rng.normal();
  return m;
}

// Independent double-loop recomputation of the two-branch word scores and
// the pair score, written without reusing any library kernels.
double naive_pair_similarity(const Matrix& u, const Matrix& v, double t) {
  const int m = u.rows, n = v.rows, d = u.cols;
  auto cos_ij = [&](int i, int j) {
    double num = 0.0, nu = 0.0, nv = 0.0;
    for (int k = 0; k < d; ++k) {
      num += u.at(i, k) * v.at(j, k);
      nu += u.at(i, k) * u.at(i, k);
      nv += v.at(j, k) * v.at(j, k);
    }
    return num / std::sqrt(nu * nv);
  };
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    double s_raw = cos_ij(i, 0) - t;
    for (int j = 1; j < n; ++j) s_raw = std::max(s_raw, cos_ij(i, j) - t);
    double s_neg = s_raw < 0.0 ? s_raw : 0.0;

    std::vector<int> support;
    for (int j = 0; j < n; ++j)
      if (cos_ij(i, j) - t > 0.0) support.push_back(j);
    double s_pos = 0.0;
    if (!support.empty()) {
      double esum = 0.0, msum = 0.0;
      for (int j : support) {
        esum += std::exp(cos_ij(i, j));
        msum += cos_ij(i, j) - t;
      }
      std::vector<double> agg(d, 0.0);
      for (int j : support)
        for (int k = 0; k < d; ++k) agg[k] += std::exp(cos_ij(i, j)) / esum * v.at(j, k);
      double num = 0.0, nu = 0.0, na = 0.0;
      for (int k = 0; k < d; ++k) {
        num += u.at(i, k) * agg[k];
        nu += u.at(i, k) * u.at(i, k);
        na += agg[k] * agg[k];
      }
      s_pos = num / std::sqrt(nu * na);
      for (int j : support) s_pos += (cos_ij(i, j) - t) / msum * cos_ij(i, j);
    }
    total += s_pos + s_neg;
  }
  return total / m;
}

}  // namespace

TEST_CASE("labeled gaussian fit reproduces hand-computed moments") {
  std::vector<std::pair<double, int>> scores = {{0.7, 1}, {0.9, 1}, {0.1, 0}, {0.3, 0}};
  auto f = pnaa::fit_gaussians_labeled(scores);
  CHECK(f.mu_pos == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(f.mu_neg == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(f.sigma_pos == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(f.sigma_neg == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("labeled gaussian fit rejects small or constant classes") {
  try {
    pnaa::fit_gaussians_labeled({{0.7, 1}, {0.1, 0}, {0.3, 0}});
    FAIL("expected InsufficientSamples");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InsufficientSamples);
  }
  try {
    pnaa::fit_gaussians_labeled({{0.5, 1}, {0.5, 1}, {0.1, 0}, {0.3, 0}});
    FAIL("expected DegenerateFit");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateFit);
  }
}

TEST_CASE("EM recovers a well-separated two-component mixture") {
  Rng rng(31);
  std::vector<double> scores;
  for (int i = 0; i < 500; ++i) scores.push_back(0.2 + 0.05 * rng.normal());
  for (int i = 0; i < 500; ++i) scores.push_back(0.8 + 0.08 * rng.normal());
  rng.shuffle(scores);
  auto f = pnaa::fit_gaussians_em(scores);
  CHECK(std::abs(f.mu_neg - 0.2) < 0.02);
  CHECK(std::abs(f.mu_pos - 0.8) < 0.02);
  CHECK(std::abs(f.sigma_neg - 0.05) < 0.02);
  CHECK(std::abs(f.sigma_pos - 0.08) < 0.02);
  CHECK(f.mu_pos > f.mu_neg);
}

TEST_CASE("EM rejects degenerate inputs") {
  try {
    pnaa::fit_gaussians_em({0.1, 0.2, 0.3});
    FAIL("expected InsufficientSamples");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InsufficientSamples);
  }
  try {
    pnaa::fit_gaussians_em({0.5, 0.5, 0.5, 0.5, 0.5});
    FAIL("expected DegenerateFit");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateFit);
  }
}

TEST_CASE("boundary of the symmetric fit is the midpoint") {
  pnaa::GaussianFit f{0.8, 0.1, 0.2, 0.1};
  auto b = pnaa::solve_boundary(f, 1.0);
  CHECK(std::abs(b.t - 0.5) < 1e-6);
  CHECK(b.fitted);
  CHECK(b.objective_at_t == doctest::Approx(objective(f, 1.0, b.t)).epsilon(1e-12));
}

TEST_CASE("solver tracks the grid oracle on 100 random fits") {
  Rng rng(41);
  for (int it = 0; it < 100; ++it) {
    auto f = random_fit(rng);
    for (double alpha : {0.5, 1.0, 2.0}) {
      double t_solver = pnaa::solve_boundary(f, alpha).t;
      double t_grid = pnaa::boundary_grid_oracle(f, alpha);
      CHECK(std::abs(t_solver - t_grid) <= 2e-4);
    }
  }
}

TEST_CASE("boundary grows with the penalty and is locally optimal") {
  Rng rng(43);
  for (int it = 0; it < 20; ++it) {
    auto f = random_fit(rng);
    double prev = -1.0;
    for (double alpha : {0.5, 1.0, 2.0, 4.0}) {
      auto b = pnaa::solve_boundary(f, alpha);
      CHECK(b.t >= prev - 1e-9);
      prev = b.t;
      for (double delta : {1e-3, -1e-3}) {
        double t2 = b.t + delta;
        if (t2 < 0.0) continue;
        CHECK(objective(f, alpha, t2) >= b.objective_at_t - 1e-9);
      }
    }
  }
}

TEST_CASE("solver validates its inputs") {
  pnaa::GaussianFit bad{0.8, 0.0, 0.2, 0.1};
  try {
    pnaa::solve_boundary(bad, 1.0);
    FAIL("expected InvalidArgument");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidArgument);
  }
  pnaa::GaussianFit f{0.8, 0.1, 0.2, 0.1};
  try {
    pnaa::solve_boundary(f, 0.0);
    FAIL("expected InvalidArgument");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidArgument);
  }
}

TEST_CASE("branch scores on a two-word hand example") {
  Matrix u(2, 2);
  u.at(0, 0) = 1.0;
  u.at(1, 1) = 1.0;
  Matrix v(1, 2);
  v.at(0, 0) = 1.0;
  double t = 0.5;
  auto out = pnaa::score_words(u, v, t);
  CHECK(out.s_raw[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.s_raw[1] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(out.s_neg[0] == 0.0);
  CHECK(out.s_neg[1] == doctest::Approx(-0.5).epsilon(1e-12));
  // word 0 has a singleton support: attention weight 1, relevance weight 1,
  // aggregate equals the region, so s_pos = cos + 1 * cos = 2
  CHECK(out.w_inter.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.w_relev.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.v_pos.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.s_pos[0] == doctest::Approx(2.0).epsilon(1e-12));
  // word 1 is orthogonal to everything: neutral positive contribution
  CHECK(out.s_pos[1] == 0.0);
  CHECK(pnaa::pair_similarity(u, v, t) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("score_words matches the double-loop oracle on random instances") {
  Rng rng(47);
  for (int it = 0; it < 200; ++it) {
    int m = 1 + rng.index(5), n = 1 + rng.index(6), d = 2 + rng.index(5);
    auto u = random_rows(m, d, rng);
    auto v = random_rows(n, d, rng);
    double t = rng.uniform(-0.2, 0.6);
    CHECK(std::abs(pnaa::pair_similarity(u, v, t) - naive_pair_similarity(u, v, t)) < 1e-10);
  }
}

TEST_CASE("structural invariants of the word scores") {
  Rng rng(53);
  for (int it = 0; it < 300; ++it) {
    int m = 1 + rng.index(5), n = 1 + rng.index(6), d = 2 + rng.index(5);
    auto u = random_rows(m, d, rng);
    auto v = random_rows(n, d, rng);
    double t = rng.uniform(-0.2, 0.6);
    auto out = pnaa::score_words(u, v, t);
    auto [s_raw, s_neg] = pnaa::negative_branch(u, v, t);
    for (int i = 0; i < m; ++i) {
      CHECK(out.s_neg[i] <= 0.0);
      CHECK(out.s_raw[i] == s_raw[i]);
      CHECK(out.s_neg[i] == s_neg[i]);
      double wi = 0.0, wr = 0.0;
      bool any = false;
      for (int j = 0; j < n; ++j) {
        CHECK(out.w_inter.at(i, j) >= 0.0);
        wi += out.w_inter.at(i, j);
        wr += out.w_relev.at(i, j);
        any = any || out.w_inter.at(i, j) > 0.0;
      }
      if (any) {
        CHECK(std::abs(wi - 1.0) < 1e-12);
        CHECK(std::abs(wr - 1.0) < 1e-12);
      } else {
        CHECK(out.s_pos[i] == 0.0);
      }
    }
  }
}

TEST_CASE("pick_negatives takes the argmax and breaks ties low") {
  Matrix s(3, 3);
  // row b: text negatives for b are the off-diagonal argmax of row b
  s.at(0, 0) = 0.9;
  s.at(0, 1) = 0.2;
  s.at(0, 2) = 0.7;
  s.at(1, 0) = 0.4;
  s.at(1, 1) = 0.9;
  s.at(1, 2) = 0.4;  // tie between 0 and 2 -> 0
  s.at(2, 0) = 0.1;
  s.at(2, 1) = 0.6;
  s.at(2, 2) = 0.9;
  auto picks = pnaa::pick_negatives(s, pnaa::Mining::hardest, nullptr);
  CHECK(picks[0].v_neg == 2);
  CHECK(picks[1].v_neg == 0);
  CHECK(picks[2].v_neg == 1);
  // column argmaxes for the image negatives
  CHECK(picks[0].u_neg == 1);  // column 0: s(1,0)=0.4 > s(2,0)=0.1
  CHECK(picks[1].u_neg == 2);  // column 1: s(2,1)=0.6 > s(0,1)=0.2
  CHECK(picks[2].u_neg == 0);  // column 2: s(0,2)=0.7 > s(1,2)=0.4

  Rng rng(3);
  auto rp = pnaa::pick_negatives(s, pnaa::Mining::random, &rng);
  for (int b = 0; b < 3; ++b) {
    CHECK(rp[b].v_neg != b);
    CHECK(rp[b].u_neg != b);
  }
  try {
    pnaa::pick_negatives(s, pnaa::Mining::random, nullptr);
    FAIL("expected InvalidArgument");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidArgument);
  }
}

TEST_CASE("pa_loss vanishes on a margin-satisfied construction") {
  // orthonormal singleton pairs: S_bb = 2 and S_bc = -0.5 at t = 0.5, so
  // every hinge is gamma - 2 - 0.5 < 0 for gamma = 0.5
  int nb = 4, d = 4;
  std::vector<std::pair<Matrix, Matrix>> batch;
  for (int b = 0; b < nb; ++b) batch.emplace_back(basis_row(d, b), basis_row(d, b));
  double loss = pnaa::pa_loss(batch, 0.5, 0.5, pnaa::Mining::hardest);
  CHECK(loss == 0.0);
}

TEST_CASE("pa_loss on exact ties is 2 gamma per pair") {
  Rng rng(59);
  auto u = random_rows(3, 4, rng);
  auto v = random_rows(2, 4, rng);
  int nb = 5;
  std::vector<std::pair<Matrix, Matrix>> batch(nb, {u, v});
  for (double gamma : {0.25, 0.5, 1.0}) {
    double loss = pnaa::pa_loss(batch, 0.0, gamma, pnaa::Mining::hardest);
    CHECK(loss == doctest::Approx(2.0 * gamma * nb).epsilon(1e-12));
  }
}

TEST_CASE("pa_loss matches an exhaustive hinge oracle") {
  Rng rng(61);
  for (int it = 0; it < 50; ++it) {
    int nb = 2 + rng.index(4);
    std::vector<std::pair<Matrix, Matrix>> batch;
    for (int b = 0; b < nb; ++b)
      batch.emplace_back(random_rows(3, 4, rng), random_rows(3, 4, rng));
    double t = rng.uniform(0.0, 0.4);
    double gamma = rng.uniform(0.1, 1.0);

    Matrix s(nb, nb);
    for (int b = 0; b < nb; ++b)
      for (int c = 0; c < nb; ++c)
        s.at(b, c) = pnaa::pair_similarity(batch[b].first, batch[c].second, t);
    double oracle = 0.0;
    for (int b = 0; b < nb; ++b) {
      double vbest = -1e30, ubest = -1e30;
      for (int c = 0; c < nb; ++c) {
        if (c == b) continue;
        vbest = std::max(vbest, s.at(b, c));
        ubest = std::max(ubest, s.at(c, b));
      }
      oracle += std::max(0.0, gamma - s.at(b, b) + vbest);
      oracle += std::max(0.0, gamma - s.at(b, b) + ubest);
    }
    // anchor filter disabled so the oracle covers every pair
    double loss = pnaa::pa_loss(batch, t, gamma, pnaa::Mining::hardest, nullptr, 0.0);
    CHECK(std::abs(loss - oracle) < 1e-10);
  }
}

TEST_CASE("matched_anchors keeps confident pairs and falls back when empty") {
  std::vector<double> ref = {0.9, 0.1, 0.6, 0.2};
  auto sim = [&](int b) { return ref[b]; };
  auto all = pnaa::matched_anchors(4, sim, 0.0);
  CHECK(all == std::vector<int>({0, 1, 2, 3}));
  auto kept = pnaa::matched_anchors(4, sim, 0.5);
  CHECK(kept == std::vector<int>({0, 2}));
  auto fallback = pnaa::matched_anchors(4, sim, 0.95);
  CHECK(fallback == std::vector<int>({0, 1, 2, 3}));
}

TEST_CASE("pa_loss anchor filter drops exactly the suspect pairs") {
  Rng rng(67);
  int nb = 4;
  std::vector<std::pair<Matrix, Matrix>> batch;
  for (int b = 0; b < nb; ++b)
    batch.emplace_back(random_rows(3, 5, rng), random_rows(3, 5, rng));
  double t = 0.2, gamma = 0.5;

  Matrix s(nb, nb);
  std::vector<double> ref(nb);
  for (int b = 0; b < nb; ++b) {
    for (int c = 0; c < nb; ++c)
      s.at(b, c) = pnaa::pair_similarity(batch[b].first, batch[c].second, t);
    ref[b] = pnaa::pair_similarity(batch[b].first, batch[b].second, 0.0);
  }
  std::vector<double> sorted_ref = ref;
  std::sort(sorted_ref.begin(), sorted_ref.end());
  double filter = 0.5 * (sorted_ref[1] + sorted_ref[2]);  // keeps the top two
  if (!(filter > 0.0)) return;  // construction landed below zero; nothing to assert

  auto anchors = pnaa::matched_anchors(nb, [&](int b) { return ref[b]; }, filter);
  double oracle = 0.0;
  for (int b : anchors) {
    double vbest = -1e30, ubest = -1e30;
    for (int c = 0; c < nb; ++c) {
      if (c == b) continue;
      vbest = std::max(vbest, s.at(b, c));
      ubest = std::max(ubest, s.at(c, b));
    }
    oracle += std::max(0.0, gamma - s.at(b, b) + vbest);
    oracle += std::max(0.0, gamma - s.at(b, b) + ubest);
  }
  double loss = pnaa::pa_loss(batch, t, gamma, pnaa::Mining::hardest, nullptr, filter);
  CHECK(std::abs(loss - oracle) < 1e-12);
  CHECK(anchors.size() == 2);
}

TEST_CASE("pa_loss validates its inputs") {
  Rng rng(71);
  std::vector<std::pair<Matrix, Matrix>> one = {
      {random_rows(2, 3, rng), random_rows(2, 3, rng)}};
  try {
    pnaa::pa_loss(one, 0.0, 0.5, pnaa::Mining::hardest);
    FAIL("expected NeedNegatives");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NeedNegatives);
  }
  std::vector<std::pair<Matrix, Matrix>> two = {
      {random_rows(2, 3, rng), random_rows(2, 3, rng)},
      {random_rows(2, 3, rng), random_rows(2, 3, rng)}};
  try {
    pnaa::pa_loss(two, 0.0, 0.0, pnaa::Mining::hardest);
    FAIL("expected InvalidArgument");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidArgument);
  }
}
