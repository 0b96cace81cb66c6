#include "pmpguard/cga.hpp"

#include <cmath>

#include "pmpguard/kernels.hpp"

namespace pmpguard::cga {

CgaParams CgaParams::init(int d, int d_text, int d_img, Rng& rng) {
  CgaParams p;
  p.d = d;
  p.d_text = d_text;
  p.d_img = d_img;
  double bound = 1.0 / std::sqrt(static_cast<double>(d));
  auto fill = [&](Matrix& m, int r, int c) {
    m = Matrix(r, c);
    for (auto& x : m.data) x = rng.uniform(-bound, bound);
  };
  fill(p.w_a, d, d);
  fill(p.w_g_u, d, 2 * d);
  fill(p.w_g_v, d, 2 * d);
  p.b_g_u.assign(d, 0.0);
  p.b_g_v.assign(d, 0.0);
  fill(p.proj_text, d_text, d);
  fill(p.proj_img, d_img, d);
  return p;
}

std::vector<TensorRef> CgaParams::flat_tensors() {
  return {{"w_a", w_a.data.data(), w_a.data.size(), w_a.rows, w_a.cols, true},
          {"w_g_u", w_g_u.data.data(), w_g_u.data.size(), w_g_u.rows, w_g_u.cols, true},
          {"b_g_u", b_g_u.data(), b_g_u.size(), 1, static_cast<int>(b_g_u.size()), false},
          {"w_g_v", w_g_v.data.data(), w_g_v.data.size(), w_g_v.rows, w_g_v.cols, true},
          {"b_g_v", b_g_v.data(), b_g_v.size(), 1, static_cast<int>(b_g_v.size()), false},
          {"proj_text", proj_text.data.data(), proj_text.data.size(), proj_text.rows,
           proj_text.cols, true},
          {"proj_img", proj_img.data.data(), proj_img.data.size(), proj_img.rows, proj_img.cols,
           true}};
}

Matrix attention_scores(const Matrix& u, const Matrix& v, const CgaParams& params) {
  return kern::attention_scores(u, v, params.w_a);
}

AttentionMaps bidirectional_softmax(const Matrix& scores) {
  if (scores.empty()) fail(Errc::EmptyInput, "bidirectional_softmax on empty matrix");
  AttentionMaps maps;
  maps.scores = scores;
  maps.alpha = kern::softmax_rows_t(scores);
  maps.beta = kern::softmax_cols_t(scores);
  return maps;
}

std::pair<Matrix, Matrix> attend(const Matrix& u, const Matrix& v, const AttentionMaps& maps) {
  return kern::attend(u, v, maps.alpha, maps.beta);
}

GatedFeatures gate(const Matrix& u, const Matrix& v, const Matrix& v_tilde, const Matrix& u_tilde,
                   const CgaParams& params) {
  GatedFeatures out;
  auto [gu, uhat] = kern::gate_rows(u, v_tilde, params.w_g_u, params.b_g_u);
  auto [gv, vhat] = kern::gate_rows(v, u_tilde, params.w_g_v, params.b_g_v);
  out.gates_u = std::move(gu);
  out.u_hat = std::move(uhat);
  out.gates_v = std::move(gv);
  out.v_hat = std::move(vhat);
  out.v_tilde = v_tilde;
  out.u_tilde = u_tilde;
  return out;
}

std::vector<double> pool_and_normalize(const Matrix& feats) { return kern::pool_normalize(feats); }

double ia_loss(const std::vector<std::vector<double>>& batch_u,
               const std::vector<std::vector<double>>& batch_v,
               const std::vector<std::pair<int, int>>& matched_pairs, double temperature) {
  return kern::ia_loss(batch_u, batch_v, matched_pairs, temperature);
}

}  // namespace pmpguard::cga
