#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "pmpguard/matrix.hpp"
#include "pmpguard/rng.hpp"

namespace pmpguard::pnaa {

struct GaussianFit {
  double mu_pos = 0.0;
  double sigma_pos = 0.0;
  double mu_neg = 0.0;
  double sigma_neg = 0.0;
};

struct Boundary {
  double t = 0.0;
  double alpha_penalty = 1.0;
  double objective_at_t = 0.0;
  bool fitted = false;
};

struct PnaaOutputs {
  std::vector<double> s_raw;  // per-word max cosine minus t
  std::vector<double> s_neg;  // masked, always <= 0
  std::vector<double> s_pos;
  Matrix w_inter;  // m x n, softmax over masked support
  Matrix w_relev;  // m x n, margin-proportional weights
  Matrix v_pos;    // m x d, aggregated positive features
};

enum class Mining { hardest, random };

// Per-class sample mean and population (N-denominator) standard deviation.
GaussianFit fit_gaussians_labeled(const std::vector<std::pair<double, int>>& scores);

// Unsupervised two-component 1-D EM; component with the larger mean is
// reported as positive. Initialization from the 25th/75th percentiles.
GaussianFit fit_gaussians_em(const std::vector<double>& scores, int max_iter = 200,
                             double tol = 1e-8);

// Minimizes J(t) = alpha * (1 - Phi((t - mu-)/sigma-)) + Phi((t - mu+)/sigma+)
// over t >= 0, analytically via the stationarity quadratic with a grid
// fallback for degenerate cases.
Boundary solve_boundary(const GaussianFit& fit, double alpha_penalty);

// Grid minimization of the same objective (step 1e-4); the independent
// oracle that solve_boundary is checked against.
double boundary_grid_oracle(const GaussianFit& fit, double alpha_penalty, double step = 1e-4);

std::pair<std::vector<double>, std::vector<double>> negative_branch(const Matrix& u,
                                                                    const Matrix& v, double t);

PnaaOutputs positive_branch(const Matrix& u, const Matrix& v, double t);

// Both branches; the full two-branch word-score bundle.
PnaaOutputs score_words(const Matrix& u, const Matrix& v, double t);

double pair_similarity(const Matrix& u, const Matrix& v, double t);

// Hardest-in-batch (or random) negative picks from a batch similarity
// matrix S where S[b][b'] pairs image b with text b'. Ties break toward
// the smaller index.
struct TripletPick {
  int v_neg;  // text negative for pair b
  int u_neg;  // image negative for pair b
};
std::vector<TripletPick> pick_negatives(const Matrix& s, Mining mining, Rng* rng);

// Anchor selection for the triplet loss: with a fitted boundary (t > 0),
// only pairs whose reference similarity (threshold 0) clears t count as
// matched anchors — suspected pseudo-matches stay in the batch as
// negatives but contribute no pull of their own. With t = 0 (no boundary
// yet) or when every pair is suspect, all pairs anchor.
std::vector<int> matched_anchors(int nb, const std::function<double(int)>& ref_similarity,
                                 double t);

// Bidirectional triplet ranking loss with margin gamma over a batch of
// aligned (U, V) feature pairs. Anchors are boundary-filtered via
// matched_anchors at anchor_filter_t; the default (negative) reuses t,
// 0 disables filtering (callers gate it on fit confidence).
double pa_loss(const std::vector<std::pair<Matrix, Matrix>>& batch, double t, double gamma,
               Mining mining, Rng* rng = nullptr, double anchor_filter_t = -1.0);

}  // namespace pmpguard::pnaa
