#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pmpguard/matrix.hpp"
#include "pmpguard/rng.hpp"

namespace pmpguard::cga {

// Flat view over one parameter tensor; `decay` marks tensors subject to
// weight decay (matrices yes, biases no).
struct TensorRef {
  std::string name;
  double* data;
  size_t n;
  int rows;
  int cols;
  bool decay;
};

// Learnable parameters of the cross-gated attention block plus the two
// input projections bridging raw corpus dimensions into the shared space.
struct CgaParams {
  int d = 0;
  int d_text = 0;
  int d_img = 0;
  Matrix w_a;                  // d x d bilinear score map
  Matrix w_g_u;                // d x 2d text gate
  std::vector<double> b_g_u;   // d
  Matrix w_g_v;                // d x 2d image gate
  std::vector<double> b_g_v;   // d
  Matrix proj_text;            // d_text x d
  Matrix proj_img;             // d_img x d

  static CgaParams init(int d, int d_text, int d_img, Rng& rng);

  // Named views over every tensor, used by the optimizer and checkpoints.
  std::vector<TensorRef> flat_tensors();
};

struct AttentionMaps {
  Matrix scores;  // m x n
  Matrix alpha;   // m x n, rows sum to 1
  Matrix beta;    // m x n, columns sum to 1
};

struct GatedFeatures {
  Matrix u_hat;    // m x d
  Matrix v_hat;    // n x d
  Matrix gates_u;  // m x d
  Matrix gates_v;  // n x d
  Matrix v_tilde;  // m x d, cross-modal context for each word
  Matrix u_tilde;  // n x d, cross-modal context for each region
};

// a_ij = u_i^T W_a v_j / (||u_i|| ||v_j||); U, V are post-projection.
Matrix attention_scores(const Matrix& u, const Matrix& v, const CgaParams& params);

AttentionMaps bidirectional_softmax(const Matrix& scores);

// v_tilde_i = sum_j alpha_ij v_j ; u_tilde_j = sum_i beta_ji u_i
std::pair<Matrix, Matrix> attend(const Matrix& u, const Matrix& v, const AttentionMaps& maps);

GatedFeatures gate(const Matrix& u, const Matrix& v, const Matrix& v_tilde, const Matrix& u_tilde,
                   const CgaParams& params);

// Mean over rows, scaled to unit norm.
std::vector<double> pool_and_normalize(const Matrix& feats);

// InfoNCE over pooled unit vectors; the matched term appears in both
// denominator sums, so every summand is at least ln 2.
double ia_loss(const std::vector<std::vector<double>>& batch_u,
               const std::vector<std::vector<double>>& batch_v,
               const std::vector<std::pair<int, int>>& matched_pairs, double temperature);

}  // namespace pmpguard::cga
