#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pmpguard/cga.hpp"
#include "pmpguard/corpus.hpp"
#include "pmpguard/pnaa.hpp"

namespace pmpguard::train {

enum class Ablation { full, no_cga, no_pnaa };
enum class PnaaInput { projected, gated };
enum class Optimizer { adamw, sgd };

const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& s);

struct TrainConfig {
  double lambda = 1.0;          // weight of the PA term
  double gamma = 0.5;           // triplet margin
  double tau_init = 0.07;       // learned temperature, stored as log
  int epochs = 40;
  int batch_size = 16;
  double learning_rate = 5e-3;
  Optimizer optimizer = Optimizer::adamw;
  double weight_decay = 0.01;
  uint64_t seed = 0;
  double boundary_alpha = 1.0;
  pnaa::Mining mining = pnaa::Mining::hardest;
  // Fragment scoring reads the shared-space projections; gated features mix
  // each record's two modalities into one another, which washes out the
  // match/mismatch contrast the boundary relies on.
  PnaaInput pnaa_input = PnaaInput::projected;
  int d = 16;                   // shared embedding dimension
  Ablation ablation = Ablation::full;

  void validate() const;
};

struct LossRecord {
  int epoch;
  double ia;
  double pa;
  double total;
};

struct TrainState {
  cga::CgaParams params;
  double log_tau = std::log(0.07);
  pnaa::Boundary boundary;
  pnaa::GaussianFit fit;
  int epoch = 0;
  std::vector<LossRecord> history;
  PnaaInput pnaa_input = PnaaInput::projected;
  Ablation ablation = Ablation::full;

  double tau() const { return std::exp(log_tau); }
};

struct LossParts {
  double total;
  double ia;
  double pa;
};

// Threshold below which a pair's reference similarity marks it as a
// suspected pseudo-match during training: the fitted boundary once one
// exists, 0 (filter off) before that.
double anchor_filter_threshold(const TrainState& state);

// L_total = L_IA + lambda * L_PA on one batch, under the state's boundary.
LossParts total_loss(const std::vector<const PairRecord*>& batch, const TrainState& state,
                     const TrainConfig& cfg);

TrainState train(const PairCorpus& corpus, const TrainConfig& cfg);

// Features a record contributes to scoring: pnaa-input matrices (words,
// regions in the shared space, gated or projected per config) and pooled
// unit vectors.
struct RecordFeatures {
  Matrix words;                  // m x d
  Matrix regions;                // n x d
  std::vector<double> u_pool;    // pooled projected features, unit norm
  std::vector<double> v_pool;
};
RecordFeatures record_features(const PairRecord& rec, const TrainState& state);

// Pair score under the state: the full model uses fragment scoring,
// the no_pnaa ablation falls back to pooled cosine.
double score_records(const RecordFeatures& text_side, const RecordFeatures& image_side,
                     const TrainState& state);

struct GradCheckEntry {
  std::string tensor;
  double ia;
  double pa;
  double total;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel = 0.0;
};

// Central finite differences against the analytic gradients of L_IA, L_PA
// and L_total for every parameter tensor. Throws KinkTooClose when the
// batch sits within kink_margin of a hinge, mask, or argmax switch.
GradCheckReport grad_check(const TrainState& state, const std::vector<const PairRecord*>& batch,
                           const TrainConfig& cfg, double epsilon, double kink_margin);

// Generic FD-vs-analytic comparison used to calibrate the checker itself.
double fd_rel_error(const std::vector<double>& x,
                    const std::function<double(const std::vector<double>&)>& f,
                    const std::vector<double>& analytic_grad, double epsilon);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

void write_loss_csv(const std::vector<LossRecord>& history, const std::string& path);

}  // namespace pmpguard::train
