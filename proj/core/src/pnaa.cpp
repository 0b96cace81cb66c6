#include "pmpguard/pnaa.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pmpguard/kernels.hpp"
#include "pmpguard/numeric.hpp"

namespace pmpguard::pnaa {

namespace {

double gauss_pdf(double x, double mu, double sigma) {
  double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

double overlap_objective(const GaussianFit& f, double alpha, double t) {
  return alpha * (1.0 - std_normal_cdf((t - f.mu_neg) / f.sigma_neg)) +
         std_normal_cdf((t - f.mu_pos) / f.sigma_pos);
}

void validate_fit(const GaussianFit& f) {
  if (!(f.sigma_pos > 0.0) || !(f.sigma_neg > 0.0))
    fail(Errc::InvalidArgument, "GaussianFit sigmas must be positive");
}

}  // namespace

GaussianFit fit_gaussians_labeled(const std::vector<std::pair<double, int>>& scores) {
  double sum[2] = {0, 0}, sumsq[2] = {0, 0};
  int cnt[2] = {0, 0};
  for (auto [s, flag] : scores) {
    int c = flag ? 1 : 0;
    sum[c] += s;
    sumsq[c] += s * s;
    cnt[c]++;
  }
  if (cnt[1] < 2) fail(Errc::InsufficientSamples, "matched class has fewer than 2 samples");
  if (cnt[0] < 2) fail(Errc::InsufficientSamples, "mismatched class has fewer than 2 samples");
  GaussianFit f;
  f.mu_pos = sum[1] / cnt[1];
  f.mu_neg = sum[0] / cnt[0];
  f.sigma_pos = std::sqrt(std::max(0.0, sumsq[1] / cnt[1] - f.mu_pos * f.mu_pos));
  f.sigma_neg = std::sqrt(std::max(0.0, sumsq[0] / cnt[0] - f.mu_neg * f.mu_neg));
  if (f.sigma_pos == 0.0 || f.sigma_neg == 0.0)
    fail(Errc::DegenerateFit, "zero variance within a class");
  return f;
}

GaussianFit fit_gaussians_em(const std::vector<double>& scores, int max_iter, double tol) {
  const int n = static_cast<int>(scores.size());
  if (n < 4) fail(Errc::InsufficientSamples, "EM needs at least 4 samples");

  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  double mu_lo = sorted[static_cast<size_t>(0.25 * (n - 1))];
  double mu_hi = sorted[static_cast<size_t>(0.75 * (n - 1))];
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= n;
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  var /= n;
  double sigma0 = std::sqrt(var);
  if (sigma0 < 1e-6) fail(Errc::DegenerateFit, "scores have no variance");
  if (mu_lo == mu_hi) {
    // identical quartiles; nudge the initial means apart
    mu_lo = mean - sigma0;
    mu_hi = mean + sigma0;
  }

  double mu[2] = {mu_lo, mu_hi};
  double sg[2] = {sigma0, sigma0};
  double w[2] = {0.5, 0.5};
  double prev_ll = -1e300;
  std::vector<double> resp(n);

  for (int it = 0; it < max_iter; ++it) {
    double ll = 0.0;
    double s0 = 0.0, s1 = 0.0, m0 = 0.0, m1 = 0.0, q0 = 0.0, q1 = 0.0;
    for (int i = 0; i < n; ++i) {
      double p0 = w[0] * gauss_pdf(scores[i], mu[0], sg[0]);
      double p1 = w[1] * gauss_pdf(scores[i], mu[1], sg[1]);
      double tot = p0 + p1;
      if (tot <= 0.0 || !std::isfinite(tot)) fail(Errc::DegenerateFit, "EM likelihood underflow");
      double r = p1 / tot;
      resp[i] = r;
      ll += std::log(tot);
      s0 += 1.0 - r;
      s1 += r;
      m0 += (1.0 - r) * scores[i];
      m1 += r * scores[i];
    }
    if (s0 < 1e-12 || s1 < 1e-12) fail(Errc::DegenerateFit, "EM component collapsed");
    mu[0] = m0 / s0;
    mu[1] = m1 / s1;
    for (int i = 0; i < n; ++i) {
      q0 += (1.0 - resp[i]) * (scores[i] - mu[0]) * (scores[i] - mu[0]);
      q1 += resp[i] * (scores[i] - mu[1]) * (scores[i] - mu[1]);
    }
    sg[0] = std::sqrt(q0 / s0);
    sg[1] = std::sqrt(q1 / s1);
    if (sg[0] < 1e-6 || sg[1] < 1e-6) fail(Errc::DegenerateFit, "EM sigma collapsed");
    w[0] = s0 / n;
    w[1] = s1 / n;
    if (std::abs(ll - prev_ll) < tol) break;
    prev_ll = ll;
  }

  GaussianFit f;
  int pos = mu[1] >= mu[0] ? 1 : 0;  // positive component is the larger-mean one
  f.mu_pos = mu[pos];
  f.sigma_pos = sg[pos];
  f.mu_neg = mu[1 - pos];
  f.sigma_neg = sg[1 - pos];
  return f;
}

double boundary_grid_oracle(const GaussianFit& fit, double alpha_penalty, double step) {
  validate_fit(fit);
  double hi = std::max(1.0, fit.mu_pos + 4.0 * fit.sigma_pos);
  double best_t = 0.0, best_j = overlap_objective(fit, alpha_penalty, 0.0);
  for (double t = step; t <= hi; t += step) {
    double j = overlap_objective(fit, alpha_penalty, t);
    if (j < best_j) {
      best_j = j;
      best_t = t;
    }
  }
  return best_t;
}

Boundary solve_boundary(const GaussianFit& fit, double alpha_penalty) {
  validate_fit(fit);
  if (!(alpha_penalty > 0.0)) fail(Errc::InvalidArgument, "alpha_penalty must be positive");

  const double sp = fit.sigma_pos, sn = fit.sigma_neg;
  const double mp = fit.mu_pos, mn = fit.mu_neg;
  const double hi = std::max(1.0, mp + 4.0 * sp);

  // Stationarity f+(t) = alpha f-(t) in log form is quadratic in t:
  //   A t^2 + B t + C = 0
  const double a = 1.0 / (2.0 * sn * sn) - 1.0 / (2.0 * sp * sp);
  const double b = mp / (sp * sp) - mn / (sn * sn);
  const double c =
      mn * mn / (2.0 * sn * sn) - mp * mp / (2.0 * sp * sp) - std::log(alpha_penalty * sp / sn);

  std::vector<double> candidates = {0.0, hi};
  bool degenerate = false;
  if (std::abs(a) < 1e-12) {
    if (std::abs(b) < 1e-12) {
      degenerate = true;
    } else {
      double t = -c / b;
      if (t >= 0.0 && std::isfinite(t)) candidates.push_back(t);
    }
  } else {
    double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      double sq = std::sqrt(disc);
      for (double t : {(-b + sq) / (2.0 * a), (-b - sq) / (2.0 * a)})
        if (t >= 0.0 && std::isfinite(t)) candidates.push_back(t);
    } else {
      degenerate = true;
    }
  }

  Boundary out;
  out.alpha_penalty = alpha_penalty;
  out.fitted = true;
  if (degenerate && candidates.size() <= 2) {
    out.t = boundary_grid_oracle(fit, alpha_penalty);
  } else {
    double best_t = candidates[0], best_j = overlap_objective(fit, alpha_penalty, candidates[0]);
    for (double t : candidates) {
      double j = overlap_objective(fit, alpha_penalty, t);
      if (j < best_j) {
        best_j = j;
        best_t = t;
      }
    }
    out.t = best_t;
  }
  out.objective_at_t = overlap_objective(fit, alpha_penalty, out.t);
  if (!std::isfinite(out.objective_at_t)) fail(Errc::NumericalFailure, "overlap objective not finite");
  return out;
}

std::pair<std::vector<double>, std::vector<double>> negative_branch(const Matrix& u,
                                                                    const Matrix& v, double t) {
  Matrix cosm = kern::cosine_matrix(u, v);
  auto nb = kern::negative_branch_from_cos(cosm, t);
  return {std::move(nb.s_raw), std::move(nb.s_neg)};
}

PnaaOutputs positive_branch(const Matrix& u, const Matrix& v, double t) { return score_words(u, v, t); }

PnaaOutputs score_words(const Matrix& u, const Matrix& v, double t) {
  Matrix cosm = kern::cosine_matrix(u, v);
  auto nb = kern::negative_branch_from_cos(cosm, t);
  auto pb = kern::positive_branch_from_cos(cosm, u, v, t);
  PnaaOutputs out;
  out.s_raw = std::move(nb.s_raw);
  out.s_neg = std::move(nb.s_neg);
  out.s_pos = std::move(pb.s_pos);
  out.w_inter = std::move(pb.w_inter);
  out.w_relev = std::move(pb.w_relev);
  out.v_pos = std::move(pb.v_pos);
  return out;
}

double pair_similarity(const Matrix& u, const Matrix& v, double t) {
  if (u.rows < 1) fail(Errc::EmptyInput, "pair_similarity needs at least one word");
  return kern::pair_similarity_t(u, v, t);
}

std::vector<TripletPick> pick_negatives(const Matrix& s, Mining mining, Rng* rng) {
  const int nb = s.rows;
  std::vector<TripletPick> picks(nb);
  for (int b = 0; b < nb; ++b) {
    if (mining == Mining::hardest) {
      int vn = -1, un = -1;
      for (int c = 0; c < nb; ++c) {
        if (c == b) continue;
        if (vn < 0 || s.at(b, c) > s.at(b, vn)) vn = c;
        if (un < 0 || s.at(c, b) > s.at(un, b)) un = c;
      }
      picks[b] = {vn, un};
    } else {
      if (!rng) fail(Errc::InvalidArgument, "random mining needs an Rng");
      int vn = rng->index(nb - 1);
      if (vn >= b) vn++;
      int un = rng->index(nb - 1);
      if (un >= b) un++;
      picks[b] = {vn, un};
    }
  }
  return picks;
}

double pa_loss(const std::vector<std::pair<Matrix, Matrix>>& batch, double t, double gamma,
               Mining mining, Rng* rng, double anchor_filter_t) {
  const int nb = static_cast<int>(batch.size());
  if (nb < 2) fail(Errc::NeedNegatives, "pa_loss needs a batch of at least 2");
  if (!(gamma > 0.0)) fail(Errc::InvalidArgument, "gamma must be positive");
  // S[b][c] pairs words of b with regions of c.
  Matrix s(nb, nb);
  for (int b = 0; b < nb; ++b)
    for (int c = 0; c < nb; ++c) s.at(b, c) = pair_similarity(batch[b].first, batch[c].second, t);
  auto picks = pick_negatives(s, mining, rng);
  if (anchor_filter_t < 0.0) anchor_filter_t = t;
  auto anchors = matched_anchors(s.rows, [&](int b) {
    return pair_similarity(batch[b].first, batch[b].second, 0.0);
  }, anchor_filter_t);
  double loss = 0.0;
  for (int b : anchors) {
    loss += std::max(0.0, gamma - s.at(b, b) + s.at(b, picks[b].v_neg));
    loss += std::max(0.0, gamma - s.at(b, b) + s.at(picks[b].u_neg, b));
  }
  return loss;
}

std::vector<int> matched_anchors(int nb, const std::function<double(int)>& ref_similarity,
                                 double t) {
  std::vector<int> all(nb);
  for (int b = 0; b < nb; ++b) all[b] = b;
  if (!(t > 0.0)) return all;
  std::vector<int> kept;
  for (int b = 0; b < nb; ++b)
    if (ref_similarity(b) >= t) kept.push_back(b);
  // A batch of pure suspects would starve training; fall back to all pairs.
  return kept.empty() ? all : kept;
}

}  // namespace pmpguard::pnaa
