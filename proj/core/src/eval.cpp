#include "pmpguard/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace pmpguard::eval {

Matrix similarity_matrix(const train::TrainState& state, const PairCorpus& corpus) {
  if (corpus.records.empty()) fail(Errc::EmptyInput, "empty corpus");
  const int n = corpus.size();
  std::vector<train::RecordFeatures> feats;
  feats.reserve(n);
  for (const auto& rec : corpus.records) feats.push_back(train::record_features(rec, state));
  Matrix s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s.at(i, j) = train::score_records(feats[j], feats[i], state);
  return s;
}

Matrix reference_similarity_matrix(const train::TrainState& state, const PairCorpus& corpus) {
  train::TrainState ref = state;
  ref.boundary.t = 0.0;
  return similarity_matrix(ref, corpus);
}

double recall_at_k(const Matrix& s, int k, Direction direction,
                   const std::vector<int>& ground_truth) {
  if (k < 1) fail(Errc::InvalidArgument, "k must be at least 1");
  const int n_query = direction == Direction::image_query ? s.rows : s.cols;
  const int n_cand = direction == Direction::image_query ? s.cols : s.rows;
  if (k > n_cand) fail(Errc::KTooLarge, "k exceeds candidate count");
  if (static_cast<int>(ground_truth.size()) < n_query)
    fail(Errc::InvalidArgument, "ground truth does not cover all queries");

  auto score = [&](int q, int c) {
    return direction == Direction::image_query ? s.at(q, c) : s.at(c, q);
  };
  int hits = 0;
  for (int q = 0; q < n_query; ++q) {
    int truth = ground_truth[q];
    double sv = score(q, truth);
    // rank = 1 + candidates strictly better + equal candidates with lower index
    int rank = 1;
    for (int c = 0; c < n_cand; ++c) {
      if (c == truth) continue;
      if (score(q, c) > sv || (score(q, c) == sv && c < truth)) rank++;
    }
    if (rank <= k) hits++;
  }
  return 100.0 * hits / n_query;
}

double mean_recall(const RecallTriple& sentence, const RecallTriple& image) {
  return (sentence.r1 + sentence.r5 + sentence.r10 + image.r1 + image.r5 + image.r10) / 6.0;
}

RetrievalReport evaluate_matrix(const Matrix& s, double mrate) {
  std::vector<int> identity(std::max(s.rows, s.cols));
  for (size_t i = 0; i < identity.size(); ++i) identity[i] = static_cast<int>(i);
  RetrievalReport rep;
  auto r_at = [&](int k, Direction d) {
    int cand = d == Direction::image_query ? s.cols : s.rows;
    return recall_at_k(s, std::min(k, cand), d, identity);
  };
  rep.sentence_retrieval = {r_at(1, Direction::image_query), r_at(5, Direction::image_query),
                            r_at(10, Direction::image_query)};
  rep.image_retrieval = {r_at(1, Direction::text_query), r_at(5, Direction::text_query),
                         r_at(10, Direction::text_query)};
  rep.mr = mean_recall(rep.sentence_retrieval, rep.image_retrieval);
  rep.mrate = mrate;
  rep.n_queries = s.rows;
  return rep;
}

RematchReport detect_and_rematch(const Matrix& s, double t, const PairCorpus* corpus) {
  RematchReport out;
  const int n = std::min(s.rows, s.cols);
  for (int i = 0; i < n; ++i) {
    RematchEntry e;
    e.pair_id = corpus ? corpus->records[i].pair_id : i;
    e.similarity = s.at(i, i);
    e.flagged = s.at(i, i) < t;
    int best = 0;
    for (int j = 1; j < s.cols; ++j)
      if (s.at(i, j) > s.at(i, best)) best = j;
    e.proposed_text_id = best;
    e.truth_known = false;
    e.correct_after_rematch = false;
    if (corpus && corpus->records[i].topic_id >= 0) {
      // the words of record j originate from record original_text_id
      int64_t src = corpus->records[best].original_text_id;
      if (src >= 0 && src < corpus->size()) {
        e.truth_known = true;
        e.correct_after_rematch =
            corpus->records[static_cast<size_t>(src)].topic_id == corpus->records[i].topic_id;
      }
    }
    out.entries.push_back(e);
  }
  return out;
}

uint64_t sweep_cell_seed(uint64_t base_seed, double rate, train::Ablation ablation, int repeat) {
  uint64_t h = fnv1a64(&rate, sizeof(rate));
  const char* name = train::ablation_name(ablation);
  h = fnv1a64(name, std::strlen(name), h);
  h = fnv1a64(&repeat, sizeof(repeat), h);
  return base_seed ^ h;
}

SweepTable run_robustness_sweep(const PairCorpus& train_clean, const PairCorpus& test_clean,
                                const std::vector<double>& rates,
                                const std::vector<train::Ablation>& ablations,
                                const train::TrainConfig& cfg, int repeats) {
  if (repeats < 1) fail(Errc::InvalidArgument, "repeats must be at least 1");
  for (double r : rates)
    if (r < 0.0 || r >= 1.0) fail(Errc::InvalidArgument, "rates must lie in [0, 1)");

  struct Job {
    size_t cell;
    double rate;
    train::Ablation ablation;
    int repeat;
  };
  std::vector<Job> jobs;
  SweepTable table;
  for (double rate : rates)
    for (auto abl : ablations) {
      SweepCell cell;
      cell.rate = rate;
      cell.ablation = abl;
      cell.per_seed.resize(repeats);
      for (int rep = 0; rep < repeats; ++rep)
        jobs.push_back({table.cells.size(), rate, abl, rep});
      table.cells.push_back(std::move(cell));
    }

  int n_threads = 1;
  if (const char* env = std::getenv("PMPGUARD_THREADS")) {
    n_threads = std::max(1, std::atoi(env));
  } else {
    n_threads = std::max(1u, std::min(4u, std::thread::hardware_concurrency()));
  }
  n_threads = std::min<int>(n_threads, static_cast<int>(jobs.size()));

  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&]() {
    for (;;) {
      size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      try {
        uint64_t seed = sweep_cell_seed(cfg.seed, job.rate, job.ablation, job.repeat);
        PairCorpus noisy = train_clean;
        if (job.rate > 0.0) {
          NoiseConfig nc;
          nc.rate_x = job.rate;
          nc.seed = seed;
          noisy = inject_mismatch(train_clean, nc, default_scorer(train_clean));
        }
        train::TrainConfig cell_cfg = cfg;
        cell_cfg.seed = seed;
        cell_cfg.ablation = job.ablation;
        auto st = train::train(noisy, cell_cfg);
        Matrix s = similarity_matrix(st, test_clean);
        table.cells[job.cell].per_seed[job.repeat] = evaluate_matrix(s, job.rate);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (auto& cell : table.cells) {
    RetrievalReport mean;
    mean.mrate = cell.rate;
    for (const auto& rep : cell.per_seed) {
      mean.sentence_retrieval.r1 += rep.sentence_retrieval.r1;
      mean.sentence_retrieval.r5 += rep.sentence_retrieval.r5;
      mean.sentence_retrieval.r10 += rep.sentence_retrieval.r10;
      mean.image_retrieval.r1 += rep.image_retrieval.r1;
      mean.image_retrieval.r5 += rep.image_retrieval.r5;
      mean.image_retrieval.r10 += rep.image_retrieval.r10;
      mean.n_queries = rep.n_queries;
    }
    double inv = 1.0 / repeats;
    mean.sentence_retrieval.r1 *= inv;
    mean.sentence_retrieval.r5 *= inv;
    mean.sentence_retrieval.r10 *= inv;
    mean.image_retrieval.r1 *= inv;
    mean.image_retrieval.r5 *= inv;
    mean.image_retrieval.r10 *= inv;
    mean.mr = mean_recall(mean.sentence_retrieval, mean.image_retrieval);
    cell.mean_report = mean;
  }
  return table;
}

namespace {

void write_atomic_text(const std::string& path, const std::string& text) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + tmp);
    f << text;
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json report_json(const RetrievalReport& r) {
  return {{"mrate", r.mrate},
          {"sentence_retrieval", {{"r1", r.sentence_retrieval.r1},
                                  {"r5", r.sentence_retrieval.r5},
                                  {"r10", r.sentence_retrieval.r10}}},
          {"image_retrieval", {{"r1", r.image_retrieval.r1},
                               {"r5", r.image_retrieval.r5},
                               {"r10", r.image_retrieval.r10}}},
          {"mr", r.mr},
          {"n_queries", r.n_queries}};
}

}  // namespace

void write_sweep_csv(const SweepTable& table, const std::string& path) {
  std::string out = "mrate,method,sr_r1,sr_r5,sr_r10,ir_r1,ir_r5,ir_r10,mr\n";
  char buf[256];
  for (const auto& c : table.cells) {
    const auto& r = c.mean_report;
    std::snprintf(buf, sizeof(buf), "%g,%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", c.rate,
                  train::ablation_name(c.ablation), r.sentence_retrieval.r1,
                  r.sentence_retrieval.r5, r.sentence_retrieval.r10, r.image_retrieval.r1,
                  r.image_retrieval.r5, r.image_retrieval.r10, r.mr);
    out += buf;
  }
  write_atomic_text(path, out);
}

void write_sweep_json(const SweepTable& table, const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : table.cells) {
    nlohmann::json cell;
    cell["mrate"] = c.rate;
    cell["method"] = train::ablation_name(c.ablation);
    cell["mean"] = report_json(c.mean_report);
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& r : c.per_seed) seeds.push_back(report_json(r));
    cell["per_seed"] = seeds;
    arr.push_back(std::move(cell));
  }
  write_atomic_text(path, arr.dump(2) + "\n");
}

void write_report_json(const RetrievalReport& report, const std::string& path) {
  write_atomic_text(path, report_json(report).dump(2) + "\n");
}

void write_rematch_jsonl(const RematchReport& report, const std::string& path) {
  std::string out;
  for (const auto& e : report.entries) {
    nlohmann::json j = {{"pair_id", e.pair_id},
                        {"flagged", e.flagged},
                        {"similarity", e.similarity},
                        {"proposed_text_id", e.proposed_text_id}};
    if (e.truth_known) j["correct_after_rematch"] = e.correct_after_rematch;
    out += j.dump();
    out += '\n';
  }
  write_atomic_text(path, out);
}

}  // namespace pmpguard::eval
