#pragma once

#include <string>
#include <vector>

#include "pmpguard/corpus.hpp"
#include "pmpguard/trainer.hpp"

namespace pmpguard::eval {

struct RecallTriple {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
};

struct RetrievalReport {
  RecallTriple sentence_retrieval;  // image query ranking texts
  RecallTriple image_retrieval;     // text query ranking images
  double mr = 0.0;
  double mrate = 0.0;
  int n_queries = 0;
};

enum class Direction { text_query, image_query };

// S[i][j] scores image i against text j, under the state's boundary.
Matrix similarity_matrix(const train::TrainState& state, const PairCorpus& corpus);

// Same, scored at threshold 0. The boundary is fitted to similarities on
// this reference scale, so detection (S < t) must read from it too.
Matrix reference_similarity_matrix(const train::TrainState& state, const PairCorpus& corpus);

// Percentage of queries whose true counterpart ranks in the top k.
// Descending similarity; ties break toward the lower candidate index.
double recall_at_k(const Matrix& s, int k, Direction direction,
                   const std::vector<int>& ground_truth);

double mean_recall(const RecallTriple& sentence, const RecallTriple& image);

// R@{1,5,10} in both directions plus mR, with identity ground truth.
RetrievalReport evaluate_matrix(const Matrix& s, double mrate);

struct RematchEntry {
  int64_t pair_id;
  bool flagged;
  double similarity;
  int64_t proposed_text_id;
  bool correct_after_rematch;
  bool truth_known;
};

struct RematchReport {
  std::vector<RematchEntry> entries;
};

// Flags pair (i, i) when S[i][i] < t and proposes the row argmax as the
// replacement text. Correctness is judged against latent topics when the
// corpus carries them.
RematchReport detect_and_rematch(const Matrix& s, double t, const PairCorpus* corpus);

struct SweepCell {
  double rate;
  train::Ablation ablation;
  RetrievalReport mean_report;
  std::vector<RetrievalReport> per_seed;
};

struct SweepTable {
  std::vector<SweepCell> cells;
};

// For each rate x ablation: inject noise into the training split with a
// derived seed, train, evaluate on the clean test split, average over
// `repeats` seeds. PMPGUARD_THREADS caps cell parallelism.
SweepTable run_robustness_sweep(const PairCorpus& train_clean, const PairCorpus& test_clean,
                                const std::vector<double>& rates,
                                const std::vector<train::Ablation>& ablations,
                                const train::TrainConfig& cfg, int repeats);

uint64_t sweep_cell_seed(uint64_t base_seed, double rate, train::Ablation ablation, int repeat);

// CSV with the column order: mrate,method,sr_r1,sr_r5,sr_r10,ir_r1,ir_r5,ir_r10,mr
void write_sweep_csv(const SweepTable& table, const std::string& path);
void write_sweep_json(const SweepTable& table, const std::string& path);
void write_report_json(const RetrievalReport& report, const std::string& path);
void write_rematch_jsonl(const RematchReport& report, const std::string& path);

}  // namespace pmpguard::eval
