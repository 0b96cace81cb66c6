#include "pmpguard/corpus.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pmpguard/numeric.hpp"

namespace pmpguard {

namespace {

constexpr char kMagic[4] = {'P', 'M', 'P', 'C'};
constexpr uint32_t kVersion = 1;
constexpr int kLatentDim = 16;
// Spread of per-pair anchors around their topic anchor: small enough that
// nearest-anchor topic recovery stays exact, large enough to identify pairs.
constexpr double kPairJitterStd = 0.1;

std::vector<double> pooled(const Matrix& m) {
  std::vector<double> out(m.cols, 0.0);
  for (int i = 0; i < m.rows; ++i)
    for (int k = 0; k < m.cols; ++k) out[k] += m.at(i, k);
  for (auto& x : out) x /= m.rows;
  return out;
}

double recompute_rate(const PairCorpus& c) {
  if (c.records.empty()) return 0.0;
  int flagged = 0;
  for (const auto& r : c.records) flagged += (r.match_flag == 0);
  return static_cast<double>(flagged) / c.size();
}

void write_atomic(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(Errc::IoError, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

struct ByteReader {
  const std::string& buf;
  size_t off = 0;

  void read(void* dst, size_t n, const char* what) {
    if (off + n > buf.size())
      fail(Errc::CorruptCorpusFile,
           std::string("truncated while reading ") + what + " at offset " + std::to_string(off));
    std::memcpy(dst, buf.data() + off, n);
    off += n;
  }
  template <class T>
  T get(const char* what) {
    T v;
    read(&v, sizeof(T), what);
    return v;
  }
};

template <class T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::string serialize(const PairCorpus& c) {
  std::string out;
  out.reserve(corpus_file_size(c));
  out.append(kMagic, 4);
  put(out, kVersion);
  put(out, static_cast<uint64_t>(c.records.size()));
  put(out, static_cast<uint32_t>(c.d_text));
  put(out, static_cast<uint32_t>(c.d_img));
  for (const auto& r : c.records) {
    put(out, static_cast<uint64_t>(r.pair_id));
    put(out, static_cast<uint8_t>(r.match_flag));
    put(out, static_cast<int64_t>(r.topic_id));
    put(out, static_cast<int64_t>(r.original_text_id));
    put(out, static_cast<uint32_t>(r.words.rows));
    put(out, static_cast<uint32_t>(r.regions.rows));
    out.append(reinterpret_cast<const char*>(r.words.data.data()),
               r.words.data.size() * sizeof(double));
    out.append(reinterpret_cast<const char*>(r.regions.data.data()),
               r.regions.data.size() * sizeof(double));
  }
  return out;
}

PairCorpus deserialize(const std::string& buf) {
  ByteReader rd{buf};
  char magic[4];
  rd.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(Errc::CorruptCorpusFile, "bad magic at offset 0");
  auto version = rd.get<uint32_t>("version");
  if (version != kVersion)
    fail(Errc::CorruptCorpusFile, "unsupported version " + std::to_string(version) + " at offset 4");
  auto n = rd.get<uint64_t>("record count");
  PairCorpus c;
  c.d_text = static_cast<int>(rd.get<uint32_t>("d_text"));
  c.d_img = static_cast<int>(rd.get<uint32_t>("d_img"));
  c.records.reserve(n);
  for (uint64_t idx = 0; idx < n; ++idx) {
    PairRecord r;
    r.pair_id = static_cast<int64_t>(rd.get<uint64_t>("pair_id"));
    r.match_flag = rd.get<uint8_t>("match_flag");
    r.topic_id = rd.get<int64_t>("topic_id");
    r.original_text_id = rd.get<int64_t>("original_text_id");
    auto m = rd.get<uint32_t>("word count");
    auto nr = rd.get<uint32_t>("region count");
    if (m == 0 || nr == 0)
      fail(Errc::CorruptCorpusFile,
           "empty feature block in record " + std::to_string(idx) + " at offset " +
               std::to_string(rd.off));
    r.words = Matrix(static_cast<int>(m), c.d_text);
    rd.read(r.words.data.data(), r.words.data.size() * sizeof(double), "word rows");
    r.regions = Matrix(static_cast<int>(nr), c.d_img);
    rd.read(r.regions.data.data(), r.regions.data.size() * sizeof(double), "region rows");
    c.records.push_back(std::move(r));
  }
  if (rd.off != buf.size())
    fail(Errc::CorruptCorpusFile, "trailing bytes at offset " + std::to_string(rd.off));
  c.mismatch_rate = recompute_rate(c);
  return c;
}

}  // namespace

PairCorpus generate_corpus(int n_pairs, int n_topics, int d_text, int d_img, int m_words,
                           int n_regions, double noise_std, uint64_t seed) {
  if (n_topics < 2) fail(Errc::DegenerateCorpus, "need at least 2 topics for mismatch injection");
  if (n_pairs < 1 || d_text < 1 || d_img < 1 || m_words < 1 || n_regions < 1)
    fail(Errc::InvalidArgument, "all corpus counts must be positive");
  Rng rng(seed);

  // Unit-norm topic anchors in a shared latent space.
  Matrix anchors(n_topics, kLatentDim);
  for (auto& x : anchors.data) x = rng.normal();
  for (int t = 0; t < n_topics; ++t) {
    double nrm = 0.0;
    for (double x : anchors.row(t)) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (auto& x : anchors.row(t)) x /= nrm;
  }

  // Two fixed random modality maps, so text and image spaces are genuinely
  // heterogeneous views of the same latent.
  Matrix map_text(kLatentDim, d_text), map_img(kLatentDim, d_img);
  double scale = 1.0 / std::sqrt(static_cast<double>(kLatentDim));
  for (auto& x : map_text.data) x = rng.normal() * scale;
  for (auto& x : map_img.data) x = rng.normal() * scale;

  auto emit_rows = [&](const std::vector<double>& latent, int rows, const Matrix& map, int dim) {
    Matrix out(rows, dim);
    for (int r = 0; r < rows; ++r) {
      for (int k = 0; k < dim; ++k) {
        double base = 0.0;
        for (int l = 0; l < kLatentDim; ++l) base += latent[l] * map.at(l, k);
        out.at(r, k) = base + noise_std * rng.normal();
      }
      double nrm = 0.0;
      for (double x : out.row(r)) nrm += x * x;
      if (nrm == 0.0) fail(Errc::NumericalFailure, "generated feature row has zero norm");
    }
    return out;
  };

  PairCorpus c;
  c.d_text = d_text;
  c.d_img = d_img;
  c.records.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    PairRecord r;
    r.pair_id = i;
    r.topic_id = rng.index(n_topics);
    r.original_text_id = i;
    r.match_flag = 1;
    // Each pair draws its own anchor: the topic anchor nudged by a pair-level
    // jitter, shared by both modalities. Without this shared component,
    // same-topic records would be statistically interchangeable and identity
    // retrieval within a topic ill-posed.
    std::vector<double> latent(kLatentDim);
    double nrm = 0.0;
    for (int l = 0; l < kLatentDim; ++l) {
      latent[l] = anchors.at(static_cast<int>(r.topic_id), l) + kPairJitterStd * rng.normal();
      nrm += latent[l] * latent[l];
    }
    nrm = std::sqrt(nrm);
    for (auto& x : latent) x /= nrm;
    r.words = emit_rows(latent, m_words, map_text, d_text);
    r.regions = emit_rows(latent, n_regions, map_img, d_img);
    c.records.push_back(std::move(r));
  }
  return c;
}

RefScorer topic_scorer() {
  return [](const PairRecord& target, const PairRecord& source) {
    return target.topic_id == source.topic_id ? 1.0 : 0.0;
  };
}

RefScorer pooled_cosine_scorer() {
  return [](const PairRecord& target, const PairRecord& source) {
    // Modality dimensions differ; compare in the shorter pooled space.
    auto a = pooled(target.regions);
    auto b = pooled(source.words);
    size_t d = std::min(a.size(), b.size());
    return cosine(std::span<const double>(a.data(), d), std::span<const double>(b.data(), d));
  };
}

RefScorer default_scorer(const PairCorpus& corpus) {
  for (const auto& r : corpus.records)
    if (r.topic_id < 0) return pooled_cosine_scorer();
  return topic_scorer();
}

PairCorpus inject_mismatch(const PairCorpus& corpus, const NoiseConfig& cfg,
                           const RefScorer& ref_scorer) {
  if (cfg.rate_x < 0.0 || cfg.rate_x >= 1.0)
    fail(Errc::InvalidArgument, "rate_x must be in [0, 1)");
  for (const auto& r : corpus.records)
    if (r.match_flag == 0) fail(Errc::InvalidArgument, "corpus already contains mismatches");

  const int n = corpus.size();
  // Half-away-from-zero rounding of the flagged count.
  const int k = static_cast<int>(std::llround(cfg.rate_x * n));
  PairCorpus out = corpus;
  out.mismatch_rate = cfg.rate_x;
  if (k == 0) return out;
  if (n < 2) fail(Errc::DegenerateCorpus, "cannot inject mismatches into a single-pair corpus");

  Rng rng(cfg.seed);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  order.resize(k);

  for (int i : order) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      int j = rng.index(n);
      if (j == i) continue;
      // Swap sources come from the original corpus, not already-swapped records.
      if (ref_scorer(corpus.records[i], corpus.records[j]) >= cfg.filter_threshold_tau) continue;
      out.records[i].words = corpus.records[j].words;
      out.records[i].match_flag = 0;
      out.records[i].original_text_id = corpus.records[j].pair_id;
      placed = true;
      break;
    }
    if (!placed)
      fail(Errc::NoiseInjectionStalled,
           "no admissible swap for pair " + std::to_string(i) + " after 1000 attempts");
  }
  return out;
}

size_t corpus_file_size(const PairCorpus& c) {
  size_t sz = 4 + 4 + 8 + 4 + 4;  // magic, version, N, d_text, d_img
  for (const auto& r : c.records)
    sz += 8 + 1 + 8 + 8 + 4 + 4 + sizeof(double) * (r.words.data.size() + r.regions.data.size());
  return sz;
}

void write_corpus(const PairCorpus& corpus, const std::string& path) {
  write_atomic(path, serialize(corpus));
}

PairCorpus read_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::IoError, "cannot open corpus file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

void write_corpus_jsonl(const PairCorpus& corpus, const std::string& path) {
  std::string out;
  for (const auto& r : corpus.records) {
    nlohmann::json j;
    j["pair_id"] = r.pair_id;
    j["match_flag"] = r.match_flag;
    j["topic_id"] = r.topic_id;
    j["original_text_id"] = r.original_text_id;
    auto rows_to_json = [](const Matrix& m) {
      nlohmann::json arr = nlohmann::json::array();
      for (int i = 0; i < m.rows; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (double x : m.row(i)) row.push_back(x);
        arr.push_back(std::move(row));
      }
      return arr;
    };
    j["words"] = rows_to_json(r.words);
    j["regions"] = rows_to_json(r.regions);
    out += j.dump();
    out += '\n';
  }
  write_atomic(path, out);
}

PairCorpus read_corpus_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::IoError, "cannot open corpus file: " + path);
  PairCorpus c;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::CorruptCorpusFile, "line " + std::to_string(lineno) + ": " + e.what());
    }
    PairRecord r;
    r.pair_id = j.at("pair_id").get<int64_t>();
    r.match_flag = j.at("match_flag").get<int>();
    r.topic_id = j.value("topic_id", int64_t(-1));
    r.original_text_id = j.value("original_text_id", r.pair_id);
    auto rows_from_json = [&](const nlohmann::json& arr) {
      int rows = static_cast<int>(arr.size());
      int cols = rows > 0 ? static_cast<int>(arr[0].size()) : 0;
      if (rows == 0 || cols == 0)
        fail(Errc::CorruptCorpusFile, "line " + std::to_string(lineno) + ": empty feature block");
      Matrix m(rows, cols);
      for (int i = 0; i < rows; ++i)
        for (int k = 0; k < cols; ++k) m.at(i, k) = arr[i][k].get<double>();
      return m;
    };
    r.words = rows_from_json(j.at("words"));
    r.regions = rows_from_json(j.at("regions"));
    if (c.records.empty()) {
      c.d_text = r.words.cols;
      c.d_img = r.regions.cols;
    } else if (r.words.cols != c.d_text || r.regions.cols != c.d_img) {
      fail(Errc::CorruptCorpusFile,
           "line " + std::to_string(lineno) + ": inconsistent feature dimensions");
    }
    c.records.push_back(std::move(r));
  }
  c.mismatch_rate = recompute_rate(c);
  return c;
}

uint64_t corpus_hash(const PairCorpus& corpus) {
  std::string bytes = serialize(corpus);
  return fnv1a64(bytes.data(), bytes.size());
}

std::pair<PairCorpus, PairCorpus> split_corpus(const PairCorpus& corpus, int n_test) {
  if (n_test < 1 || n_test >= corpus.size())
    fail(Errc::InvalidArgument, "test split must leave both splits nonempty");
  auto take = [&](int begin, int end) {
    PairCorpus out;
    out.d_text = corpus.d_text;
    out.d_img = corpus.d_img;
    for (int i = begin; i < end; ++i) {
      PairRecord r = corpus.records[i];
      r.pair_id = i - begin;
      r.original_text_id = r.pair_id;
      out.records.push_back(std::move(r));
    }
    out.mismatch_rate = recompute_rate(out);
    return out;
  };
  return {take(0, corpus.size() - n_test), take(corpus.size() - n_test, corpus.size())};
}

}  // namespace pmpguard
