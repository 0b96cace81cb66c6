#include "pmpguard/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pmpguard/kernels.hpp"

namespace pmpguard::train {

using ad::Var;

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_cga: return "no_cga";
    case Ablation::no_pnaa: return "no_pnaa";
  }
  return "full";
}

Ablation ablation_from_name(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_cga") return Ablation::no_cga;
  if (s == "no_pnaa") return Ablation::no_pnaa;
  fail(Errc::InvalidArgument, "unknown ablation: " + s);
}

void TrainConfig::validate() const {
  if (!(lambda > 0.0)) fail(Errc::InvalidArgument, "lambda must be positive");
  if (!(gamma > 0.0)) fail(Errc::InvalidArgument, "gamma must be positive");
  if (batch_size < 2) fail(Errc::InvalidArgument, "batch_size must be at least 2");
  if (!(tau_init > 0.0)) fail(Errc::InvalidTemperature, "tau_init must be positive");
  if (epochs < 0 || d < 1) fail(Errc::InvalidArgument, "invalid epochs or dimension");
  if (!(boundary_alpha > 0.0)) fail(Errc::InvalidArgument, "boundary_alpha must be positive");
}

namespace {

// Probability that a suspected pseudo-matched pair is kept as an anchor
// anyway (see batch_loss). Small enough to shield training from mismatch
// corruption, large enough that a trapped genuine pair escapes within a
// handful of epochs.
constexpr double kSuspectRescueRate = 0.3;

template <class T>
struct ParamsT {
  Mat<T> w_a, w_g_u, w_g_v, proj_text, proj_img;
  std::vector<T> b_g_u, b_g_v;
  T log_tau;
};

ParamsT<double> lower(const TrainState& st) {
  const auto& p = st.params;
  return {p.w_a, p.w_g_u, p.w_g_v, p.proj_text, p.proj_img, p.b_g_u, p.b_g_v, st.log_tau};
}

// Lifts every parameter onto the active tape as a leaf and records the
// leaf indices in canonical tensor order (flat_tensors order + log_tau).
struct Lifted {
  ParamsT<Var> p;
  std::vector<std::vector<int>> leaves;
};

Lifted lift(const TrainState& st) {
  Lifted out;
  auto lift_vec = [&](const double* data, size_t n) {
    std::vector<Var> v(n);
    std::vector<int> idx(n);
    for (size_t i = 0; i < n; ++i) {
      v[i] = ad::leaf(data[i]);
      idx[i] = v[i].i;
    }
    out.leaves.push_back(std::move(idx));
    return v;
  };
  auto lift_mat = [&](const Matrix& m) {
    Mat<Var> r(m.rows, m.cols);
    r.data = lift_vec(m.data.data(), m.data.size());
    return r;
  };
  const auto& p = st.params;
  out.p.w_a = lift_mat(p.w_a);
  out.p.w_g_u = lift_mat(p.w_g_u);
  out.p.b_g_u = lift_vec(p.b_g_u.data(), p.b_g_u.size());
  out.p.w_g_v = lift_mat(p.w_g_v);
  out.p.b_g_v = lift_vec(p.b_g_v.data(), p.b_g_v.size());
  out.p.proj_text = lift_mat(p.proj_text);
  out.p.proj_img = lift_mat(p.proj_img);
  out.p.log_tau = lift_vec(&st.log_tau, 1)[0];
  return out;
}

template <class T>
struct RecFwd {
  Mat<T> words_f;    // pnaa-input features, m x d
  Mat<T> regions_f;  // n x d
  std::vector<T> u_pool, v_pool;
  // Pooled projections, before any cross-modal mixing. Gated features fold
  // each record's other modality into the pool, which makes same-record
  // dot products large for any parameters — useless as a retrieval score.
  std::vector<T> u_plain, v_plain;
};

template <class T>
RecFwd<T> forward_record(const PairRecord& rec, const ParamsT<T>& p, PnaaInput input,
                         Ablation abl) {
  Mat<T> u = kern::project(rec.words, p.proj_text);
  Mat<T> v = kern::project(rec.regions, p.proj_img);
  RecFwd<T> out;
  out.u_plain = kern::pool_normalize(u);
  out.v_plain = kern::pool_normalize(v);
  if (abl == Ablation::no_cga) {
    out.u_pool = kern::pool_normalize(u);
    out.v_pool = kern::pool_normalize(v);
    out.words_f = std::move(u);
    out.regions_f = std::move(v);
    return out;
  }
  Mat<T> scores = kern::attention_scores(u, v, p.w_a);
  Mat<T> alpha = kern::softmax_rows_t(scores);
  Mat<T> beta = kern::softmax_cols_t(scores);
  auto [v_tilde, u_tilde] = kern::attend(u, v, alpha, beta);
  auto [gu, u_hat] = kern::gate_rows(u, v_tilde, p.w_g_u, p.b_g_u);
  auto [gv, v_hat] = kern::gate_rows(v, u_tilde, p.w_g_v, p.b_g_v);
  out.u_pool = kern::pool_normalize(u_hat);
  out.v_pool = kern::pool_normalize(v_hat);
  if (input == PnaaInput::gated) {
    out.words_f = std::move(u_hat);
    out.regions_f = std::move(v_hat);
  } else {
    out.words_f = std::move(u);
    out.regions_f = std::move(v);
  }
  return out;
}

template <class T>
Matrix value_mat(const Mat<T>& m) {
  Matrix out(m.rows, m.cols);
  for (size_t i = 0; i < m.data.size(); ++i) out.data[i] = ad::value_of(m.data[i]);
  return out;
}

template <class T>
struct LossT {
  T ia, pa, total;
};

template <class T>
LossT<T> batch_loss(const std::vector<const PairRecord*>& batch, const ParamsT<T>& p, double t,
                    double filter_t, const TrainConfig& cfg, Rng* mining_rng) {
  const int nb = static_cast<int>(batch.size());
  if (nb < 2) fail(Errc::NeedNegatives, "batch of at least 2 required");
  std::vector<RecFwd<T>> fw;
  fw.reserve(nb);
  for (const auto* r : batch)
    fw.push_back(forward_record(*r, p, cfg.pnaa_input, cfg.ablation));

  // Training labels claim every pair is matched; pseudo-matched pairs are
  // exactly the ones where that claim is wrong. Once a boundary exists,
  // pairs whose reference similarity falls below it are treated as
  // suspects: they stay in the batch as negatives but usually contribute
  // no pull of their own. Each suspect keeps a small rescue probability —
  // a genuinely matched pair that drifted below the boundary must still be
  // pulled back occasionally, or it stays trapped below the threshold
  // forever, while corruption from true pseudo-matches is cut by the same
  // factor. One rng draw happens per pair regardless of the decision so
  // the draw sequence never depends on parameter values.
  std::vector<int> anchors;
  if (cfg.ablation == Ablation::no_pnaa || !(filter_t > 0.0)) {
    anchors.resize(nb);
    for (int b = 0; b < nb; ++b) anchors[b] = b;
  } else {
    for (int b = 0; b < nb; ++b) {
      double s0 =
          pnaa::pair_similarity(value_mat(fw[b].words_f), value_mat(fw[b].regions_f), 0.0);
      double r = mining_rng ? mining_rng->uniform() : 1.0;
      if (s0 >= filter_t || r < kSuspectRescueRate) anchors.push_back(b);
    }
    if (anchors.empty()) {
      // a batch of pure suspects would starve training
      anchors.resize(nb);
      for (int b = 0; b < nb; ++b) anchors[b] = b;
    }
  }

  std::vector<std::vector<T>> us, vs;
  std::vector<std::pair<int, int>> matched;
  for (int b = 0; b < nb; ++b) {
    us.push_back(fw[b].u_pool);
    vs.push_back(fw[b].v_pool);
  }
  for (int b : anchors) matched.emplace_back(b, b);
  LossT<T> out;
  out.ia = kern::ia_loss(us, vs, matched, kern::vexp(p.log_tau));

  // Negative picks always come from a plain-double similarity matrix, so
  // both scalar instantiations trace identical selections.
  out.pa = T(0.0);
  if (cfg.ablation == Ablation::no_pnaa) {
    Matrix sval(nb, nb);
    for (int b = 0; b < nb; ++b)
      for (int c = 0; c < nb; ++c) {
        double s = 0.0;
        for (size_t k = 0; k < fw[b].u_plain.size(); ++k)
          s += ad::value_of(fw[b].u_plain[k]) * ad::value_of(fw[c].v_plain[k]);
        sval.at(b, c) = s;
      }
    auto picks = pnaa::pick_negatives(sval, cfg.mining, mining_rng);
    for (int b = 0; b < nb; ++b) {
      T sbb = kern::dot(fw[b].u_plain, fw[b].v_plain);
      T sbv = kern::dot(fw[b].u_plain, fw[picks[b].v_neg].v_plain);
      T sub = kern::dot(fw[picks[b].u_neg].u_plain, fw[b].v_plain);
      out.pa += kern::relu(T(cfg.gamma) - sbb + sbv);
      out.pa += kern::relu(T(cfg.gamma) - sbb + sub);
    }
  } else {
    Matrix sval(nb, nb);
    for (int b = 0; b < nb; ++b)
      for (int c = 0; c < nb; ++c)
        sval.at(b, c) =
            pnaa::pair_similarity(value_mat(fw[b].words_f), value_mat(fw[c].regions_f), t);
    auto picks = pnaa::pick_negatives(sval, cfg.mining, mining_rng);
    for (int b : anchors) {
      T sbb = kern::pair_similarity_t(fw[b].words_f, fw[b].regions_f, t);
      T sbv = kern::pair_similarity_t(fw[b].words_f, fw[picks[b].v_neg].regions_f, t);
      T sub = kern::pair_similarity_t(fw[picks[b].u_neg].words_f, fw[b].regions_f, t);
      out.pa += kern::relu(T(cfg.gamma) - sbb + sbv);
      out.pa += kern::relu(T(cfg.gamma) - sbb + sub);
    }
  }
  out.total = out.ia + T(cfg.lambda) * out.pa;
  return out;
}

// Boundary refits use similarities on a fixed reference scale (t = 0) so
// the per-epoch threshold is a function of the parameters alone.
void refit_boundary(TrainState& st, const PairCorpus& corpus, const TrainConfig& cfg) {
  if (cfg.ablation == Ablation::no_pnaa) return;
  ParamsT<double> p = lower(st);
  std::vector<double> sims;
  sims.reserve(corpus.records.size());
  for (const auto& rec : corpus.records) {
    auto f = forward_record<double>(rec, p, cfg.pnaa_input, cfg.ablation);
    sims.push_back(pnaa::pair_similarity(f.words_f, f.regions_f, 0.0));
  }
  try {
    auto fit = pnaa::fit_gaussians_em(sims);
    st.fit = fit;
    st.boundary = pnaa::solve_boundary(fit, cfg.boundary_alpha);
  } catch (const Error&) {
    // degenerate similarity distribution; keep the previous boundary
  }
}

struct OptStateBuf {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

struct ParamView {
  double* data;
  size_t n;
  bool decay;
};

std::vector<ParamView> param_views(TrainState& st) {
  std::vector<ParamView> views;
  for (auto& t : st.params.flat_tensors()) views.push_back({t.data, t.n, t.decay});
  views.push_back({&st.log_tau, 1, false});
  return views;
}

void optimizer_step(TrainState& st, OptStateBuf& opt, const std::vector<std::vector<int>>& leaves,
                    const std::vector<double>& grads, const TrainConfig& cfg) {
  auto views = param_views(st);
  if (opt.m.empty()) {
    for (auto& v : views) {
      opt.m.emplace_back(v.n, 0.0);
      opt.v.emplace_back(v.n, 0.0);
    }
  }
  opt.step++;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(opt.step));
  for (size_t ti = 0; ti < views.size(); ++ti) {
    auto& view = views[ti];
    for (size_t i = 0; i < view.n; ++i) {
      int li = leaves[ti][i];
      double g = li >= 0 && li < static_cast<int>(grads.size()) ? grads[li] : 0.0;
      if (cfg.optimizer == Optimizer::adamw) {
        opt.m[ti][i] = b1 * opt.m[ti][i] + (1.0 - b1) * g;
        opt.v[ti][i] = b2 * opt.v[ti][i] + (1.0 - b2) * g * g;
        double update = (opt.m[ti][i] / bc1) / (std::sqrt(opt.v[ti][i] / bc2) + eps);
        if (view.decay) update += cfg.weight_decay * view.data[i];
        view.data[i] -= cfg.learning_rate * update;
      } else {
        double update = g;
        if (view.decay) update += cfg.weight_decay * view.data[i];
        view.data[i] -= cfg.learning_rate * update;
      }
    }
  }
}

}  // namespace

double anchor_filter_threshold(const TrainState& state) {
  if (!state.boundary.fitted || !(state.boundary.t > 0.0)) return 0.0;
  return state.boundary.t;
}

LossParts total_loss(const std::vector<const PairRecord*>& batch, const TrainState& state,
                     const TrainConfig& cfg) {
  cfg.validate();
  ParamsT<double> p = lower(state);
  Rng mining_rng(cfg.seed);
  auto l = batch_loss<double>(batch, p, state.boundary.t, anchor_filter_threshold(state), cfg,
                              &mining_rng);
  return {l.total, l.ia, l.pa};
}

TrainState train(const PairCorpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.records.empty()) fail(Errc::EmptyInput, "empty corpus");
  if (corpus.size() < 2) fail(Errc::NeedNegatives, "training needs at least 2 pairs");

  Rng rng(cfg.seed);
  TrainState st;
  st.params = cga::CgaParams::init(cfg.d, corpus.d_text, corpus.d_img, rng);
  st.log_tau = std::log(cfg.tau_init);
  st.boundary.alpha_penalty = cfg.boundary_alpha;
  st.pnaa_input = cfg.pnaa_input;
  st.ablation = cfg.ablation;

  OptStateBuf opt;
  std::vector<int> idx(corpus.records.size());
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    refit_boundary(st, corpus, cfg);
    rng.shuffle(idx);
    double sum_ia = 0.0, sum_pa = 0.0, sum_total = 0.0;
    int batches = 0;
    for (size_t start = 0; start + 2 <= idx.size(); start += cfg.batch_size) {
      size_t end = std::min(idx.size(), start + cfg.batch_size);
      if (end - start < 2) break;
      std::vector<const PairRecord*> batch;
      for (size_t i = start; i < end; ++i) batch.push_back(&corpus.records[idx[i]]);

      ad::Tape tape;
      ad::TapeScope scope(tape);
      Lifted lp = lift(st);
      auto l = batch_loss<Var>(batch, lp.p, st.boundary.t, anchor_filter_threshold(st), cfg, &rng);
      double lt = ad::value_of(l.total);
      if (!std::isfinite(lt))
        fail(Errc::Diverged, "non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(batches));
      std::vector<double> grads;
      if (l.total.i >= 0) grads = tape.backward(l.total.i);
      optimizer_step(st, opt, lp.leaves, grads, cfg);

      sum_ia += ad::value_of(l.ia);
      sum_pa += ad::value_of(l.pa);
      sum_total += lt;
      batches++;
    }
    if (batches == 0) fail(Errc::NeedNegatives, "corpus smaller than a minimal batch");
    st.history.push_back({epoch, sum_ia / batches, sum_pa / batches, sum_total / batches});
    st.epoch = epoch + 1;
  }
  refit_boundary(st, corpus, cfg);
  return st;
}

RecordFeatures record_features(const PairRecord& rec, const TrainState& state) {
  ParamsT<double> p = lower(state);
  auto f = forward_record<double>(rec, p, state.pnaa_input, state.ablation);
  return {std::move(f.words_f), std::move(f.regions_f), std::move(f.u_plain),
          std::move(f.v_plain)};
}

double score_records(const RecordFeatures& text_side, const RecordFeatures& image_side,
                     const TrainState& state) {
  if (state.ablation == Ablation::no_pnaa) {
    double s = 0.0;
    for (size_t k = 0; k < text_side.u_pool.size(); ++k)
      s += text_side.u_pool[k] * image_side.v_pool[k];
    return s;
  }
  return pnaa::pair_similarity(text_side.words, image_side.regions, state.boundary.t);
}

double fd_rel_error(const std::vector<double>& x,
                    const std::function<double(const std::vector<double>&)>& f,
                    const std::vector<double>& analytic_grad, double epsilon) {
  double max_rel = 0.0;
  std::vector<double> p = x;
  for (size_t i = 0; i < x.size(); ++i) {
    p[i] = x[i] + epsilon;
    double fp = f(p);
    p[i] = x[i] - epsilon;
    double fm = f(p);
    p[i] = x[i];
    double fd = (fp - fm) / (2.0 * epsilon);
    double a = analytic_grad[i];
    double rel = std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-5});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

namespace {

// Verifies the batch is at least kink_margin away from every switching
// point: mask indicators, per-word argmax, hinge activations, and the
// hardest-negative selections.
void audit_kinks(const std::vector<const PairRecord*>& batch, const TrainState& state,
                 const TrainConfig& cfg, double kink_margin) {
  ParamsT<double> p = lower(state);
  const double t = state.boundary.t;
  const int nb = static_cast<int>(batch.size());
  std::vector<RecFwd<double>> fw;
  for (const auto* r : batch) fw.push_back(forward_record<double>(*r, p, cfg.pnaa_input, cfg.ablation));

  Matrix sval(nb, nb);
  if (cfg.ablation == Ablation::no_pnaa) {
    for (int b = 0; b < nb; ++b)
      for (int c = 0; c < nb; ++c) {
        double s = 0.0;
        for (size_t k = 0; k < fw[b].u_plain.size(); ++k) s += fw[b].u_plain[k] * fw[c].v_plain[k];
        sval.at(b, c) = s;
      }
  } else {
    double filter_t = anchor_filter_threshold(state);
    if (filter_t > 0.0) {
      for (int b = 0; b < nb; ++b) {
        double s0 = pnaa::pair_similarity(fw[b].words_f, fw[b].regions_f, 0.0);
        if (std::abs(s0 - filter_t) < kink_margin)
          fail(Errc::KinkTooClose,
               "pair " + std::to_string(b) + " reference similarity near the anchor boundary");
      }
    }
    for (int b = 0; b < nb; ++b) {
      for (int c = 0; c < nb; ++c) {
        sval.at(b, c) = pnaa::pair_similarity(fw[b].words_f, fw[c].regions_f, t);
        // Every (b, c) feature pair can enter the hinge terms through the
        // negative picks, so mask and argmax kinks are audited for all of
        // them, not just the diagonal.
        Matrix cosm = kern::cosine_matrix(fw[b].words_f, fw[c].regions_f);
        for (int i = 0; i < cosm.rows; ++i) {
          double top1 = -2.0, top2 = -2.0;
          for (int j = 0; j < cosm.cols; ++j) {
            double margin = cosm.at(i, j) - t;
            if (std::abs(margin) < kink_margin)
              fail(Errc::KinkTooClose, "pair (" + std::to_string(b) + "," + std::to_string(c) +
                                           ") word " + std::to_string(i) + " region " +
                                           std::to_string(j) + " near mask boundary");
            if (margin > top1) {
              top2 = top1;
              top1 = margin;
            } else if (margin > top2) {
              top2 = margin;
            }
          }
          if (cosm.cols >= 2 && top1 - top2 < kink_margin)
            fail(Errc::KinkTooClose, "pair (" + std::to_string(b) + "," + std::to_string(c) +
                                         ") word " + std::to_string(i) + " has a near-tie argmax");
        }
      }
    }
  }

  auto picks = pnaa::pick_negatives(sval, pnaa::Mining::hardest, nullptr);
  for (int b = 0; b < nb; ++b) {
    for (double hinge : {cfg.gamma - sval.at(b, b) + sval.at(b, picks[b].v_neg),
                         cfg.gamma - sval.at(b, b) + sval.at(picks[b].u_neg, b)}) {
      if (std::abs(hinge) < kink_margin)
        fail(Errc::KinkTooClose, "pair " + std::to_string(b) + " hinge near the margin");
    }
    if (nb >= 3 && cfg.mining == pnaa::Mining::hardest) {
      double best_v = sval.at(b, picks[b].v_neg), second_v = -1e300;
      double best_u = sval.at(picks[b].u_neg, b), second_u = -1e300;
      for (int c = 0; c < nb; ++c) {
        if (c == b) continue;
        if (c != picks[b].v_neg) second_v = std::max(second_v, sval.at(b, c));
        if (c != picks[b].u_neg) second_u = std::max(second_u, sval.at(c, b));
      }
      if (best_v - second_v < kink_margin || best_u - second_u < kink_margin)
        fail(Errc::KinkTooClose, "pair " + std::to_string(b) + " has a near-tie hardest negative");
    }
  }
}

}  // namespace

GradCheckReport grad_check(const TrainState& state, const std::vector<const PairRecord*>& batch,
                           const TrainConfig& cfg, double epsilon, double kink_margin) {
  cfg.validate();
  audit_kinks(batch, state, cfg, kink_margin);

  // Analytic gradients: one tape, three backward sweeps.
  ad::Tape tape;
  std::vector<std::vector<int>> leaves;
  std::vector<double> g_ia, g_pa, g_total;
  {
    ad::TapeScope scope(tape);
    Lifted lp = lift(state);
    leaves = lp.leaves;
    Rng mining_rng(cfg.seed);
    auto l = batch_loss<Var>(batch, lp.p, state.boundary.t, anchor_filter_threshold(state), cfg,
                             &mining_rng);
    g_ia = l.ia.i >= 0 ? tape.backward(l.ia.i) : std::vector<double>(tape.size(), 0.0);
    g_pa = l.pa.i >= 0 ? tape.backward(l.pa.i) : std::vector<double>(tape.size(), 0.0);
    g_total = l.total.i >= 0 ? tape.backward(l.total.i) : std::vector<double>(tape.size(), 0.0);
  }

  // Finite differences: one perturbed forward yields all three losses.
  TrainState probe = state;
  auto views = param_views(probe);
  auto eval = [&]() {
    ParamsT<double> p = lower(probe);
    Rng mining_rng(cfg.seed);
    return batch_loss<double>(batch, p, state.boundary.t, anchor_filter_threshold(state), cfg,
                              &mining_rng);
  };

  static const char* kNames[] = {"w_a",   "w_g_u",     "b_g_u",    "w_g_v",
                                 "b_g_v", "proj_text", "proj_img", "log_tau"};
  // The denominator floor absorbs central-difference noise on near-zero
  // gradient coordinates: the FD quotient carries absolute noise around
  // eps_machine * |loss| / (2 * epsilon) ~ 1e-10, which would otherwise
  // dominate the relative error whenever the true gradient is tiny (empirically the noise reaches ~1e-9).
  auto rel = [](double fd, double a) {
    return std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-5});
  };

  GradCheckReport report;
  for (size_t ti = 0; ti < views.size(); ++ti) {
    GradCheckEntry entry{kNames[ti], 0.0, 0.0, 0.0};
    for (size_t i = 0; i < views[ti].n; ++i) {
      double saved = views[ti].data[i];
      views[ti].data[i] = saved + epsilon;
      auto lp = eval();
      views[ti].data[i] = saved - epsilon;
      auto lm = eval();
      views[ti].data[i] = saved;
      int li = leaves[ti][i];
      entry.ia = std::max(entry.ia, rel((lp.ia - lm.ia) / (2 * epsilon), g_ia[li]));
      entry.pa = std::max(entry.pa, rel((lp.pa - lm.pa) / (2 * epsilon), g_pa[li]));
      entry.total = std::max(entry.total, rel((lp.total - lm.total) / (2 * epsilon), g_total[li]));
    }
    report.max_rel = std::max({report.max_rel, entry.ia, entry.pa, entry.total});
    report.entries.push_back(std::move(entry));
  }
  return report;
}

namespace {

constexpr char kCkptMagic[4] = {'P', 'M', 'P', 'W'};

template <class T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  std::string out;
  out.append(kCkptMagic, 4);
  put(out, uint32_t{1});
  TrainState& mut = const_cast<TrainState&>(state);
  auto tensors = mut.params.flat_tensors();
  put(out, static_cast<uint32_t>(tensors.size() + 1));
  auto put_tensor = [&](const std::string& name, const double* data, size_t n, int rows, int cols) {
    put(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    put(out, static_cast<uint32_t>(rows));
    put(out, static_cast<uint32_t>(cols));
    out.append(reinterpret_cast<const char*>(data), n * sizeof(double));
  };
  for (const auto& t : tensors) put_tensor(t.name, t.data, t.n, t.rows, t.cols);
  put_tensor("log_tau", &state.log_tau, 1, 1, 1);

  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
  }
  std::filesystem::rename(tmp, path);

  nlohmann::json meta;
  meta["d"] = state.params.d;
  meta["d_text"] = state.params.d_text;
  meta["d_img"] = state.params.d_img;
  meta["tau"] = state.tau();
  meta["epoch"] = state.epoch;
  meta["pnaa_input"] = state.pnaa_input == PnaaInput::gated ? "gated" : "projected";
  meta["ablation"] = ablation_name(state.ablation);
  meta["boundary"] = {{"mu_pos", state.fit.mu_pos},       {"sigma_pos", state.fit.sigma_pos},
                      {"mu_neg", state.fit.mu_neg},       {"sigma_neg", state.fit.sigma_neg},
                      {"t", state.boundary.t},            {"alpha", state.boundary.alpha_penalty},
                      {"objective", state.boundary.objective_at_t}, {"fitted", state.boundary.fitted}};
  std::string jtmp = path + ".json.tmp";
  {
    std::ofstream f(jtmp, std::ios::trunc);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + jtmp);
    f << meta.dump(2) << "\n";
  }
  std::filesystem::rename(jtmp, path + ".json");
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::IoError, "cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();
  size_t off = 0;
  auto need = [&](size_t n, const char* what) {
    if (off + n > buf.size())
      fail(Errc::CorruptCorpusFile, std::string("checkpoint truncated at ") + what);
  };
  need(4, "magic");
  if (std::memcmp(buf.data(), kCkptMagic, 4) != 0)
    fail(Errc::CorruptCorpusFile, "bad checkpoint magic");
  off = 4;
  auto get_u32 = [&](const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, buf.data() + off, 4);
    off += 4;
    return v;
  };
  uint32_t version = get_u32("version");
  if (version != 1) fail(Errc::CorruptCorpusFile, "unsupported checkpoint version");
  uint32_t count = get_u32("tensor count");

  std::map<std::string, Matrix> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nlen = get_u32("name length");
    need(nlen, "name");
    std::string name(buf.data() + off, nlen);
    off += nlen;
    uint32_t rows = get_u32("rows"), cols = get_u32("cols");
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    need(m.data.size() * sizeof(double), "payload");
    std::memcpy(m.data.data(), buf.data() + off, m.data.size() * sizeof(double));
    off += m.data.size() * sizeof(double);
    tensors[name] = std::move(m);
  }
  auto take = [&](const char* name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail(Errc::CorruptCorpusFile, std::string("missing tensor ") + name);
    return it->second;
  };

  TrainState st;
  st.params.w_a = take("w_a");
  st.params.w_g_u = take("w_g_u");
  st.params.w_g_v = take("w_g_v");
  st.params.proj_text = take("proj_text");
  st.params.proj_img = take("proj_img");
  st.params.b_g_u = take("b_g_u").data;
  st.params.b_g_v = take("b_g_v").data;
  st.log_tau = take("log_tau").data.at(0);
  st.params.d = st.params.w_a.rows;
  st.params.d_text = st.params.proj_text.rows;
  st.params.d_img = st.params.proj_img.rows;

  std::ifstream jf(path + ".json");
  if (jf) {
    nlohmann::json meta = nlohmann::json::parse(jf, nullptr, false);
    if (!meta.is_discarded()) {
      st.epoch = meta.value("epoch", 0);
      st.pnaa_input =
          meta.value("pnaa_input", "gated") == std::string("gated") ? PnaaInput::gated : PnaaInput::projected;
      st.ablation = ablation_from_name(meta.value("ablation", "full"));
      if (meta.contains("boundary")) {
        const auto& b = meta["boundary"];
        st.fit = {b.value("mu_pos", 0.0), b.value("sigma_pos", 0.0), b.value("mu_neg", 0.0),
                  b.value("sigma_neg", 0.0)};
        st.boundary.t = b.value("t", 0.0);
        st.boundary.alpha_penalty = b.value("alpha", 1.0);
        st.boundary.objective_at_t = b.value("objective", 0.0);
        st.boundary.fitted = b.value("fitted", false);
      }
    }
  }
  return st;
}

void write_loss_csv(const std::vector<LossRecord>& history, const std::string& path) {
  std::string out = "epoch,L_IA,L_PA,L_total\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", r.epoch, r.ia, r.pa, r.total);
    out += buf;
  }
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + tmp);
    f << out;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace pmpguard::train
