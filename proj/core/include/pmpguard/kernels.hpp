#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "pmpguard/autodiff.hpp"
#include "pmpguard/matrix.hpp"

// Model math shared between the double-precision public API and the
// reverse-mode training path. Everything here is templated on the scalar
// type T (double or ad::Var); control flow (masks, argmax picks) always
// branches on value_of() so both instantiations trace the same path.
namespace pmpguard::kern {

using ad::relu;
using ad::value_of;
using ad::vexp;
using ad::vlog;
using ad::vmax;
using ad::vsigmoid;
using ad::vsqrt;

// Spans and vectors of T, const or not, all deduce through these.
template <class U, class V>
auto dot(const U& u, const V& v) {
  std::remove_cv_t<std::remove_reference_t<decltype(u[0])>> s(0.0);
  for (size_t k = 0; k < u.size(); ++k) s += u[k] * v[k];
  return s;
}

template <class U>
auto norm(const U& u) {
  return vsqrt(dot(u, u));
}

template <class T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  Mat<T> out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      T aik = a.at(i, k);
      if (value_of(aik) == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) out.at(i, j) += aik * b.at(k, j);
    }
  return out;
}

// X is raw (constant) input features, P a learnable projection.
template <class T>
Mat<T> project(const Matrix& x, const Mat<T>& p) {
  Mat<T> out(x.rows, p.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int k = 0; k < x.cols; ++k) {
      double xik = x.at(i, k);
      if (xik == 0.0) continue;
      for (int j = 0; j < p.cols; ++j) out.at(i, j) += T(xik) * p.at(k, j);
    }
  return out;
}

// a_ij = u_i^T W_a v_j / (||u_i|| ||v_j||)
template <class T>
Mat<T> attention_scores(const Mat<T>& u, const Mat<T>& v, const Mat<T>& wa) {
  const int m = u.rows, n = v.rows, d = u.cols;
  std::vector<T> nu(m), nv(n);
  for (int i = 0; i < m; ++i) {
    nu[i] = norm(u.row(i));
    if (value_of(nu[i]) == 0.0) fail(Errc::ZeroVector, "text row " + std::to_string(i));
  }
  for (int j = 0; j < n; ++j) {
    nv[j] = norm(v.row(j));
    if (value_of(nv[j]) == 0.0) fail(Errc::ZeroVector, "image row " + std::to_string(j));
  }
  // precompute W_a v_j
  Mat<T> wv(n, d);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < d; ++k) {
      T vjk = v.at(j, k);
      for (int r = 0; r < d; ++r) wv.at(j, r) += wa.at(r, k) * vjk;
    }
  Mat<T> scores(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) scores.at(i, j) = dot(u.row(i), wv.row(j)) / (nu[i] * nv[j]);
  return scores;
}

template <class T>
Mat<T> softmax_rows_t(const Mat<T>& a) {
  Mat<T> out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mx = value_of(a.at(i, 0));
    for (int j = 1; j < a.cols; ++j) mx = std::max(mx, value_of(a.at(i, j)));
    T sum(0.0);
    for (int j = 0; j < a.cols; ++j) {
      T e = vexp(a.at(i, j) - T(mx));
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < a.cols; ++j) out.at(i, j) /= sum;
  }
  return out;
}

template <class T>
Mat<T> softmax_cols_t(const Mat<T>& a) {
  return transpose(softmax_rows_t(transpose(a)));
}

// v_tilde_i = sum_j alpha_ij v_j ; u_tilde_j = sum_i beta_ij u_i
template <class T>
std::pair<Mat<T>, Mat<T>> attend(const Mat<T>& u, const Mat<T>& v, const Mat<T>& alpha,
                                 const Mat<T>& beta) {
  Mat<T> v_tilde = matmul(alpha, v);
  Mat<T> u_tilde = matmul(transpose(beta), u);
  return {std::move(v_tilde), std::move(u_tilde)};
}

// Per row: g = sigmoid(W [x; c] + b); fused = g .* x + (1-g) .* c
template <class T>
std::pair<Mat<T>, Mat<T>> gate_rows(const Mat<T>& x, const Mat<T>& ctx, const Mat<T>& w,
                                    const std::vector<T>& b) {
  const int rows = x.rows, d = x.cols;
  Mat<T> gates(rows, d), fused(rows, d);
  for (int i = 0; i < rows; ++i) {
    for (int r = 0; r < d; ++r) {
      T z = b[r];
      for (int k = 0; k < d; ++k) z += w.at(r, k) * x.at(i, k);
      for (int k = 0; k < d; ++k) z += w.at(r, d + k) * ctx.at(i, k);
      T g = vsigmoid(z);
      gates.at(i, r) = g;
      fused.at(i, r) = g * x.at(i, r) + (T(1.0) - g) * ctx.at(i, r);
    }
  }
  return {std::move(gates), std::move(fused)};
}

// Mean over rows followed by L2 normalization.
template <class T>
std::vector<T> pool_normalize(const Mat<T>& feats) {
  if (feats.empty()) fail(Errc::EmptyInput, "pool_normalize on empty matrix");
  std::vector<T> mean(feats.cols, T(0.0));
  for (int i = 0; i < feats.rows; ++i)
    for (int k = 0; k < feats.cols; ++k) mean[k] += feats.at(i, k);
  T inv_rows(1.0 / feats.rows);
  for (auto& m : mean) m *= inv_rows;
  T n = norm(std::span<const T>(mean));
  if (value_of(n) == 0.0) fail(Errc::ZeroVector, "pooled feature has zero norm");
  for (auto& m : mean) m /= n;
  return mean;
}

// InfoNCE over pooled unit vectors; the matched term appears in both
// denominator sums, so each summand is at least ln 2.
template <class T>
T ia_loss(const std::vector<std::vector<T>>& us, const std::vector<std::vector<T>>& vs,
          const std::vector<std::pair<int, int>>& matched, T tau) {
  if (value_of(tau) <= 0.0) fail(Errc::InvalidTemperature, "tau must be positive");
  if (matched.empty()) fail(Errc::EmptyInput, "matched pair set is empty");
  const int nb = static_cast<int>(us.size());
  T loss(0.0);
  for (auto [i, j] : matched) {
    std::vector<T> logits;
    logits.reserve(2 * nb);
    for (int k = 0; k < nb; ++k)
      logits.push_back(dot(std::span<const T>(us[i]), std::span<const T>(vs[k])) / tau);
    for (int k = 0; k < nb; ++k)
      logits.push_back(dot(std::span<const T>(us[k]), std::span<const T>(vs[j])) / tau);
    double mx = value_of(logits[0]);
    for (auto& l : logits) mx = std::max(mx, value_of(l));
    T denom(0.0);
    for (auto& l : logits) denom += vexp(l - T(mx));
    T pos = dot(std::span<const T>(us[i]), std::span<const T>(vs[j])) / tau;
    loss += T(mx) + vlog(denom) - pos;
  }
  return loss;
}

template <class T>
Mat<T> cosine_matrix(const Mat<T>& u, const Mat<T>& v) {
  const int m = u.rows, n = v.rows;
  std::vector<T> nu(m), nv(n);
  for (int i = 0; i < m; ++i) {
    nu[i] = norm(u.row(i));
    if (value_of(nu[i]) == 0.0) fail(Errc::ZeroVector, "text row " + std::to_string(i));
  }
  for (int j = 0; j < n; ++j) {
    nv[j] = norm(v.row(j));
    if (value_of(nv[j]) == 0.0) fail(Errc::ZeroVector, "image row " + std::to_string(j));
  }
  Mat<T> out(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = dot(u.row(i), v.row(j)) / (nu[i] * nv[j]);
  return out;
}

template <class T>
struct NegBranch {
  std::vector<T> s_raw;
  std::vector<T> s_neg;
};

// s_i = max_j (cos_ij - t); the negative mask keeps only s_i < 0.
template <class T>
NegBranch<T> negative_branch_from_cos(const Mat<T>& cosm, double t) {
  NegBranch<T> out;
  out.s_raw.reserve(cosm.rows);
  out.s_neg.reserve(cosm.rows);
  for (int i = 0; i < cosm.rows; ++i) {
    T s = cosm.at(i, 0) - T(t);
    for (int j = 1; j < cosm.cols; ++j) s = vmax(s, cosm.at(i, j) - T(t));
    out.s_raw.push_back(s);
    out.s_neg.push_back(value_of(s) < 0.0 ? s : T(0.0));
  }
  return out;
}

template <class T>
struct PosBranch {
  std::vector<T> s_pos;
  Mat<T> w_inter;
  Mat<T> w_relev;
  Mat<T> v_pos;
};

// Positive branch: softmax attention over the above-threshold support,
// relevance weights proportional to the masked margins, and the
// aggregate-feature plus relevance-weighted score sum.
template <class T>
PosBranch<T> positive_branch_from_cos(const Mat<T>& cosm, const Mat<T>& u, const Mat<T>& v,
                                      double t) {
  const int m = cosm.rows, n = cosm.cols, d = v.cols;
  PosBranch<T> out;
  out.w_inter = Mat<T>(m, n);
  out.w_relev = Mat<T>(m, n);
  out.v_pos = Mat<T>(m, d);
  out.s_pos.assign(m, T(0.0));
  for (int i = 0; i < m; ++i) {
    std::vector<int> support;
    for (int j = 0; j < n; ++j)
      if (value_of(cosm.at(i, j)) - t > 0.0) support.push_back(j);
    if (support.empty()) continue;  // mismatched word: neutral contribution

    double mx = value_of(cosm.at(i, support[0]));
    for (int j : support) mx = std::max(mx, value_of(cosm.at(i, j)));
    T esum(0.0), msum(0.0);
    for (int j : support) {
      T margin = cosm.at(i, j) - T(t);
      out.w_inter.at(i, j) = vexp(cosm.at(i, j) - T(mx));
      esum += out.w_inter.at(i, j);
      out.w_relev.at(i, j) = margin;
      msum += margin;
    }
    for (int j : support) {
      out.w_inter.at(i, j) /= esum;
      out.w_relev.at(i, j) /= msum;
      for (int k = 0; k < d; ++k) out.v_pos.at(i, k) += out.w_inter.at(i, j) * v.at(j, k);
    }
    T npos = norm(out.v_pos.row(i));
    if (value_of(npos) == 0.0) fail(Errc::ZeroVector, "aggregated positive feature, word " + std::to_string(i));
    T score = dot(u.row(i), out.v_pos.row(i)) / (norm(u.row(i)) * npos);
    for (int j : support) score += out.w_relev.at(i, j) * cosm.at(i, j);
    out.s_pos[i] = score;
  }
  return out;
}

// S = (1/m) sum_i (s_pos_i + s_neg_i)
template <class T>
T pair_similarity_t(const Mat<T>& u, const Mat<T>& v, double t) {
  Mat<T> cosm = cosine_matrix(u, v);
  auto neg = negative_branch_from_cos(cosm, t);
  auto pos = positive_branch_from_cos(cosm, u, v, t);
  T s(0.0);
  for (int i = 0; i < u.rows; ++i) s += pos.s_pos[i] + neg.s_neg[i];
  return s / T(static_cast<double>(u.rows));
}

}  // namespace pmpguard::kern
