#include "pmpguard/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pmpguard/corpus.hpp"
#include "pmpguard/eval.hpp"
#include "pmpguard/trainer.hpp"

namespace pmpguard::cli {

namespace {

constexpr const char* kToolVersion = "0.1.0";

using nlohmann::json;

json config_to_json(const train::TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"gamma", c.gamma},
          {"tau_init", c.tau_init},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"optimizer", c.optimizer == train::Optimizer::adamw ? "adamw" : "sgd"},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"boundary_alpha", c.boundary_alpha},
          {"mining", c.mining == pnaa::Mining::hardest ? "hardest" : "random"},
          {"pnaa_input", c.pnaa_input == train::PnaaInput::gated ? "gated" : "projected"},
          {"dim", c.d},
          {"ablation", train::ablation_name(c.ablation)}};
}

void config_from_json(const json& j, train::TrainConfig& c) {
  c.lambda = j.value("lambda", c.lambda);
  c.gamma = j.value("gamma", c.gamma);
  c.tau_init = j.value("tau_init", c.tau_init);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("optimizer"))
    c.optimizer = j["optimizer"] == "sgd" ? train::Optimizer::sgd : train::Optimizer::adamw;
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.boundary_alpha = j.value("boundary_alpha", c.boundary_alpha);
  if (j.contains("mining"))
    c.mining = j["mining"] == "random" ? pnaa::Mining::random : pnaa::Mining::hardest;
  if (j.contains("pnaa_input"))
    c.pnaa_input =
        j["pnaa_input"] == "projected" ? train::PnaaInput::projected : train::PnaaInput::gated;
  c.d = j.value("dim", c.d);
  if (j.contains("ablation")) c.ablation = train::ablation_from_name(j["ablation"]);
}

// Accepts either a flat config object or a run manifest carrying one
// under "config", so a manifest can re-drive a run directly.
void load_config_file(const std::string& path, train::TrainConfig& c) {
  std::ifstream f(path);
  if (!f) fail(Errc::IoError, "cannot open config file: " + path);
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) fail(Errc::InvalidArgument, "config file is not valid JSON: " + path);
  if (j.contains("config")) j = j["config"];
  config_from_json(j, c);
}

void write_manifest(const std::string& out_path, const std::string& command, const json& config,
                    const std::vector<std::pair<std::string, uint64_t>>& input_hashes) {
  json m;
  m["tool_version"] = kToolVersion;
  m["command"] = command;
  auto now = std::chrono::system_clock::now();
  m["timestamp_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  m["config"] = config;
  json inputs = json::object();
  for (const auto& [name, hash] : input_hashes) inputs[name] = hash;
  m["input_hashes"] = inputs;
  std::string path = out_path + ".manifest.json";
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) fail(Errc::IoError, "cannot open for writing: " + tmp);
    f << m.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

PairCorpus load_corpus_any(const std::string& path) {
  if (!std::filesystem::exists(path)) fail(Errc::IoError, "input file not found: " + path);
  if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") return read_corpus_jsonl(path);
  return read_corpus(path);
}

void store_corpus_any(const PairCorpus& c, const std::string& path) {
  if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl")
    write_corpus_jsonl(c, path);
  else
    write_corpus(c, path);
}

std::vector<double> parse_rates(const std::string& csv) {
  std::vector<double> rates;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    rates.push_back(std::stod(tok));
  }
  if (rates.empty()) fail(Errc::InvalidArgument, "no rates given");
  return rates;
}

std::vector<train::Ablation> parse_ablations(const std::string& csv) {
  std::vector<train::Ablation> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(train::ablation_from_name(tok));
  }
  if (out.empty()) fail(Errc::InvalidArgument, "no ablations given");
  return out;
}

void print_report(const eval::RetrievalReport& r) {
  std::printf("mrate=%.2f  sentence R@1/5/10 = %.2f/%.2f/%.2f  image R@1/5/10 = %.2f/%.2f/%.2f  mR = %.2f\n",
              r.mrate, r.sentence_retrieval.r1, r.sentence_retrieval.r5, r.sentence_retrieval.r10,
              r.image_retrieval.r1, r.image_retrieval.r5, r.image_retrieval.r10, r.mr);
}

struct GenArgs {
  int pairs = 256, topics = 32, d_text = 32, d_img = 24, words = 5, regions = 7;
  double noise_std = 0.1;
  uint64_t seed = 0;
  std::string out;
};

int run_gen(const GenArgs& a) {
  auto c = generate_corpus(a.pairs, a.topics, a.d_text, a.d_img, a.words, a.regions, a.noise_std,
                           a.seed);
  store_corpus_any(c, a.out);
  json cfg = {{"pairs", a.pairs},     {"topics", a.topics},       {"d_text", a.d_text},
              {"d_img", a.d_img},     {"words", a.words},         {"regions", a.regions},
              {"noise_std", a.noise_std}, {"seed", a.seed}};
  write_manifest(a.out, "gen", cfg, {{"corpus", corpus_hash(c)}});
  std::printf("wrote %d pairs to %s\n", c.size(), a.out.c_str());
  return 0;
}

// Attaches TrainConfig options to a subcommand; config-file values apply
// first, explicit flags override them.
struct TrainOpts {
  train::TrainConfig cfg;
  std::string config_path;
  std::string mining = "hardest";
  std::string pnaa_input = "projected";
  std::string ablation = "full";
  std::string optimizer = "adamw";

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (flags override)");
    app->add_option("--seed", cfg.seed, "random seed");
    app->add_option("--lambda", cfg.lambda, "PA loss weight");
    app->add_option("--gamma", cfg.gamma, "triplet margin");
    app->add_option("--alpha", cfg.boundary_alpha, "boundary penalty alpha");
    app->add_option("--tau-init", cfg.tau_init, "initial temperature");
    app->add_option("--epochs", cfg.epochs, "training epochs");
    app->add_option("--batch", cfg.batch_size, "batch size");
    app->add_option("--lr", cfg.learning_rate, "learning rate");
    app->add_option("--weight-decay", cfg.weight_decay, "AdamW weight decay");
    app->add_option("--dim", cfg.d, "shared embedding dimension");
    app->add_option("--mining", mining, "negative mining: hardest|random")
        ->check(CLI::IsMember({"hardest", "random"}));
    app->add_option("--pnaa-input", pnaa_input, "pnaa input features: gated|projected")
        ->check(CLI::IsMember({"gated", "projected"}));
    app->add_option("--ablate-model", ablation, "model variant: full|no_cga|no_pnaa")
        ->check(CLI::IsMember({"full", "no_cga", "no_pnaa"}));
    app->add_option("--optimizer", optimizer, "adamw|sgd")
        ->check(CLI::IsMember({"adamw", "sgd"}));
  }

  train::TrainConfig resolve(const CLI::App* app) {
    train::TrainConfig out = cfg;  // flag values already parsed in
    if (!config_path.empty()) {
      // reapply: file first, then flags that were actually given
      train::TrainConfig base;
      load_config_file(config_path, base);
      auto keep = [&](const char* flag, auto member) {
        if (app->count(flag) == 0) *member(out) = *member(base);
      };
      keep("--seed", [](train::TrainConfig& c) { return &c.seed; });
      keep("--lambda", [](train::TrainConfig& c) { return &c.lambda; });
      keep("--gamma", [](train::TrainConfig& c) { return &c.gamma; });
      keep("--alpha", [](train::TrainConfig& c) { return &c.boundary_alpha; });
      keep("--tau-init", [](train::TrainConfig& c) { return &c.tau_init; });
      keep("--epochs", [](train::TrainConfig& c) { return &c.epochs; });
      keep("--batch", [](train::TrainConfig& c) { return &c.batch_size; });
      keep("--lr", [](train::TrainConfig& c) { return &c.learning_rate; });
      keep("--weight-decay", [](train::TrainConfig& c) { return &c.weight_decay; });
      keep("--dim", [](train::TrainConfig& c) { return &c.d; });
      if (app->count("--mining") == 0) out.mining = base.mining;
      if (app->count("--pnaa-input") == 0) out.pnaa_input = base.pnaa_input;
      if (app->count("--ablate-model") == 0) out.ablation = base.ablation;
      if (app->count("--optimizer") == 0) out.optimizer = base.optimizer;
    }
    if (app->count("--mining")) out.mining = mining == "random" ? pnaa::Mining::random : pnaa::Mining::hardest;
    if (app->count("--pnaa-input"))
      out.pnaa_input = pnaa_input == "projected" ? train::PnaaInput::projected : train::PnaaInput::gated;
    if (app->count("--ablate-model")) out.ablation = train::ablation_from_name(ablation);
    if (app->count("--optimizer"))
      out.optimizer = optimizer == "sgd" ? train::Optimizer::sgd : train::Optimizer::adamw;
    return out;
  }
};

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"PMPGuard: robust cross-modal retrieval experiments"};
  app.require_subcommand(1);

  // gen
  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic paired-feature corpus");
  gen_cmd->add_option("--pairs", gen.pairs, "number of pairs");
  gen_cmd->add_option("--topics", gen.topics, "number of latent topics");
  gen_cmd->add_option("--dtext", gen.d_text, "text feature dimension");
  gen_cmd->add_option("--dimg", gen.d_img, "image feature dimension");
  gen_cmd->add_option("--words", gen.words, "words per caption");
  gen_cmd->add_option("--regions", gen.regions, "regions per image");
  gen_cmd->add_option("--noise-std", gen.noise_std, "feature noise std");
  gen_cmd->add_option("--seed", gen.seed, "random seed");
  gen_cmd->add_option("--out", gen.out, "output corpus path")->required();

  // inject
  std::string inj_in, inj_out, inj_scorer = "auto";
  NoiseConfig inj_cfg;
  auto* inj_cmd = app.add_subcommand("inject", "inject pseudo-matched pairs");
  inj_cmd->add_option("--in", inj_in, "input corpus")->required();
  inj_cmd->add_option("--out", inj_out, "output corpus")->required();
  inj_cmd->add_option("--rate", inj_cfg.rate_x, "mismatch rate x")->required();
  inj_cmd->add_option("--tau", inj_cfg.filter_threshold_tau, "reference-similarity cap");
  inj_cmd->add_option("--seed", inj_cfg.seed, "random seed");
  inj_cmd->add_option("--scorer", inj_scorer, "auto|topic|pooled")
      ->check(CLI::IsMember({"auto", "topic", "pooled"}));

  // train
  std::string train_in, train_out = "model.pmpw", train_csv;
  TrainOpts train_opts;
  auto* train_cmd = app.add_subcommand("train", "train on a corpus");
  train_cmd->add_option("--in", train_in, "training corpus")->required();
  train_cmd->add_option("--out", train_out, "checkpoint path");
  train_cmd->add_option("--loss-csv", train_csv, "loss history CSV (default <out>.losses.csv)");
  train_opts.attach(train_cmd);

  // eval
  std::string eval_in, eval_ckpt, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate retrieval on a corpus");
  eval_cmd->add_option("--in", eval_in, "evaluation corpus")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--out", eval_out, "report JSON path");

  // sweep
  std::string sw_in, sw_test, sw_rates = "0,0.2,0.4,0.6,0.8", sw_ablate = "full";
  std::string sw_out = "sweep.csv", sw_json;
  int sw_repeats = 5;
  TrainOpts sw_opts;
  auto* sw_cmd = app.add_subcommand("sweep", "robustness sweep over mismatch rates");
  sw_cmd->add_option("--in", sw_in, "clean corpus (train split taken from it)")->required();
  sw_cmd->add_option("--test", sw_test, "separate clean test corpus (default: 20% split)");
  sw_cmd->add_option("--rates", sw_rates, "comma-separated mismatch rates");
  sw_cmd->add_option("--ablate", sw_ablate, "comma-separated ablations: full,no_cga,no_pnaa");
  sw_cmd->add_option("--repeats", sw_repeats, "seeds per cell");
  sw_cmd->add_option("--out", sw_out, "output CSV path");
  sw_cmd->add_option("--json", sw_json, "optional JSON mirror path");
  sw_opts.attach(sw_cmd);

  // rematch
  std::string rm_in, rm_ckpt, rm_out = "rematch.jsonl";
  auto* rm_cmd = app.add_subcommand("rematch", "detect and rematch pseudo-matched pairs");
  rm_cmd->add_option("--in", rm_in, "corpus (typically the noisy training set)")->required();
  rm_cmd->add_option("--ckpt", rm_ckpt, "checkpoint path")->required();
  rm_cmd->add_option("--out", rm_out, "output JSON-lines path");

  // gradcheck
  uint64_t gc_seed = 0;
  double gc_eps = 1e-5, gc_margin = 1e-3;
  int gc_dim = 16, gc_dtext = 32, gc_dimg = 24, gc_words = 5, gc_regions = 7, gc_batch = 4;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc_cmd->add_option("--seed", gc_seed, "random seed");
  gc_cmd->add_option("--eps", gc_eps, "finite-difference step");
  gc_cmd->add_option("--kink-margin", gc_margin, "required distance from kinks");
  gc_cmd->add_option("--dim", gc_dim, "shared dimension");
  gc_cmd->add_option("--dtext", gc_dtext, "text dimension");
  gc_cmd->add_option("--dimg", gc_dimg, "image dimension");
  gc_cmd->add_option("--words", gc_words, "words per caption");
  gc_cmd->add_option("--regions", gc_regions, "regions per image");
  gc_cmd->add_option("--batch", gc_batch, "batch size");

  std::vector<std::string> argv_copy(args.rbegin(), args.rend());  // CLI11 wants reversed args
  try {
    app.parse(argv_copy);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen);

    if (inj_cmd->parsed()) {
      auto c = load_corpus_any(inj_in);
      RefScorer scorer;
      if (inj_scorer == "topic")
        scorer = topic_scorer();
      else if (inj_scorer == "pooled")
        scorer = pooled_cosine_scorer();
      else
        scorer = default_scorer(c);
      auto noisy = inject_mismatch(c, inj_cfg, scorer);
      store_corpus_any(noisy, inj_out);
      json cfg = {{"rate", inj_cfg.rate_x},
                  {"tau", inj_cfg.filter_threshold_tau},
                  {"seed", inj_cfg.seed},
                  {"scorer", inj_scorer}};
      write_manifest(inj_out, "inject", cfg,
                     {{"input", corpus_hash(c)}, {"output", corpus_hash(noisy)}});
      int flagged = 0;
      for (const auto& r : noisy.records) flagged += (r.match_flag == 0);
      std::printf("flagged %d of %d pairs (rate %g)\n", flagged, noisy.size(), inj_cfg.rate_x);
      return 0;
    }

    if (train_cmd->parsed()) {
      auto cfg = train_opts.resolve(train_cmd);
      auto corpus = load_corpus_any(train_in);
      auto st = train::train(corpus, cfg);
      train::save_checkpoint(st, train_out);
      std::string csv = train_csv.empty() ? train_out + ".losses.csv" : train_csv;
      train::write_loss_csv(st.history, csv);
      write_manifest(train_out, "train", config_to_json(cfg), {{"corpus", corpus_hash(corpus)}});
      if (!st.history.empty())
        std::printf("trained %d epochs; final L_total %.6f (IA %.6f, PA %.6f); t = %.4f\n",
                    st.epoch, st.history.back().total, st.history.back().ia,
                    st.history.back().pa, st.boundary.t);
      return 0;
    }

    if (eval_cmd->parsed()) {
      auto corpus = load_corpus_any(eval_in);
      auto st = train::load_checkpoint(eval_ckpt);
      Matrix s = eval::similarity_matrix(st, corpus);
      auto report = eval::evaluate_matrix(s, corpus.mismatch_rate);
      print_report(report);
      if (!eval_out.empty()) {
        eval::write_report_json(report, eval_out);
        write_manifest(eval_out, "eval", json{{"ckpt", eval_ckpt}},
                       {{"corpus", corpus_hash(corpus)}});
      }
      return 0;
    }

    if (sw_cmd->parsed()) {
      auto cfg = sw_opts.resolve(sw_cmd);
      auto corpus = load_corpus_any(sw_in);
      PairCorpus train_split, test_split;
      if (!sw_test.empty()) {
        train_split = corpus;
        test_split = load_corpus_any(sw_test);
      } else {
        int n_test = std::max(1, static_cast<int>(std::llround(0.2 * corpus.size())));
        std::tie(train_split, test_split) = split_corpus(corpus, n_test);
      }
      auto rates = parse_rates(sw_rates);
      auto ablations = parse_ablations(sw_ablate);
      auto table = eval::run_robustness_sweep(train_split, test_split, rates, ablations, cfg,
                                              sw_repeats);
      eval::write_sweep_csv(table, sw_out);
      if (!sw_json.empty()) eval::write_sweep_json(table, sw_json);
      json cfg_json = config_to_json(cfg);
      cfg_json["rates"] = rates;
      cfg_json["repeats"] = sw_repeats;
      cfg_json["ablate"] = sw_ablate;
      write_manifest(sw_out, "sweep", cfg_json, {{"corpus", corpus_hash(corpus)}});
      for (const auto& cell : table.cells) {
        std::printf("%-8s ", train::ablation_name(cell.ablation));
        print_report(cell.mean_report);
      }
      return 0;
    }

    if (rm_cmd->parsed()) {
      auto corpus = load_corpus_any(rm_in);
      auto st = train::load_checkpoint(rm_ckpt);
      Matrix s = eval::reference_similarity_matrix(st, corpus);
      auto report = eval::detect_and_rematch(s, st.boundary.t, &corpus);
      eval::write_rematch_jsonl(report, rm_out);
      int flagged = 0;
      for (const auto& e : report.entries) flagged += e.flagged;
      write_manifest(rm_out, "rematch", json{{"ckpt", rm_ckpt}, {"t", st.boundary.t}},
                     {{"corpus", corpus_hash(corpus)}});
      std::printf("flagged %d of %zu pairs at t = %.4f\n", flagged, report.entries.size(),
                  st.boundary.t);
      return 0;
    }

    if (gc_cmd->parsed()) {
      // scan sub-seeds until the batch clears the kink margin
      train::TrainConfig cfg;
      cfg.d = gc_dim;
      train::GradCheckReport report;
      bool done = false;
      for (uint64_t s = gc_seed; s < gc_seed + 64 && !done; ++s) {
        cfg.seed = s;
        auto corpus = generate_corpus(gc_batch, 2 + gc_batch, gc_dtext, gc_dimg, gc_words,
                                      gc_regions, 0.25, s);
        Rng rng(s);
        train::TrainState st;
        st.params = cga::CgaParams::init(gc_dim, gc_dtext, gc_dimg, rng);
        st.log_tau = std::log(cfg.tau_init);
        st.boundary.t = 0.1;
        std::vector<const PairRecord*> batch;
        for (const auto& r : corpus.records) batch.push_back(&r);
        try {
          report = train::grad_check(st, batch, cfg, gc_eps, gc_margin);
          done = true;
        } catch (const Error& e) {
          if (e.code() != Errc::KinkTooClose) throw;
        }
      }
      if (!done) fail(Errc::KinkTooClose, "no kink-safe batch found in 64 seed attempts");
      for (const auto& e : report.entries)
        std::printf("%-10s  ia %.3e  pa %.3e  total %.3e\n", e.tensor.c_str(), e.ia, e.pa,
                    e.total);
      std::printf("max relative error: %.3e\n", report.max_rel);
      if (report.max_rel >= 1e-4) fail(Errc::NumericalFailure, "gradient check failed");
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace pmpguard::cli
