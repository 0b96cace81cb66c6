#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pmpguard/matrix.hpp"
#include "pmpguard/rng.hpp"

namespace pmpguard {

struct PairRecord {
  int64_t pair_id = 0;
  Matrix words;    // m x d_text
  Matrix regions;  // n x d_img
  int match_flag = 1;
  int64_t topic_id = -1;          // synthetic latent; -1 when unknown
  int64_t original_text_id = 0;   // provenance of caption swaps
};

struct PairCorpus {
  std::vector<PairRecord> records;
  int d_text = 0;
  int d_img = 0;
  double mismatch_rate = 0.0;

  int size() const { return static_cast<int>(records.size()); }
};

struct NoiseConfig {
  double rate_x = 0.0;
  double filter_threshold_tau = 0.5;  // reference-similarity cap for accepted swaps
  uint64_t seed = 0;
};

// Scores a candidate swap: higher = more similar. Arguments are the record
// providing the regions (the target) and the record providing the words
// (the swap source).
using RefScorer = std::function<double(const PairRecord& target, const PairRecord& source)>;

// Synthetic corpus: each pair draws a latent topic anchor; word and region
// rows are the anchor pushed through two fixed random modality maps plus
// Gaussian noise. All pairs start matched.
PairCorpus generate_corpus(int n_pairs, int n_topics, int d_text, int d_img, int m_words,
                           int n_regions, double noise_std, uint64_t seed);

// Replaces the words of round(rate_x * N) records with another record's
// words (j != i), keeping only swaps the reference scorer rates below the
// filter threshold. Regions are never touched.
PairCorpus inject_mismatch(const PairCorpus& corpus, const NoiseConfig& cfg,
                           const RefScorer& ref_scorer);

// Default scorers: topic agreement (1 if same latent topic, 0 otherwise)
// for synthetic corpora; pooled-feature cosine for arbitrary ones.
RefScorer topic_scorer();
RefScorer pooled_cosine_scorer();
// topic_scorer when every record carries a topic, else pooled cosine.
RefScorer default_scorer(const PairCorpus& corpus);

void write_corpus(const PairCorpus& corpus, const std::string& path);
PairCorpus read_corpus(const std::string& path);

// JSON-lines interoperability path (same fields, floats as arrays).
void write_corpus_jsonl(const PairCorpus& corpus, const std::string& path);
PairCorpus read_corpus_jsonl(const std::string& path);

// Serialized byte size of a corpus in the binary format.
size_t corpus_file_size(const PairCorpus& corpus);

uint64_t corpus_hash(const PairCorpus& corpus);

// First N - n_test records become the training split, the rest the test
// split; pair ids are re-densified within each split.
std::pair<PairCorpus, PairCorpus> split_corpus(const PairCorpus& corpus, int n_test);

}  // namespace pmpguard
