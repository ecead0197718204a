#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "zeroparse/analysis.hpp"
#include "zeroparse/data.hpp"
#include "zeroparse/executor.hpp"
#include "zeroparse/model.hpp"
#include "zeroparse/rng.hpp"
#include "zeroparse/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace zeroparse;

namespace {

constexpr const char* kToolVersion = "1.0.0";

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << v;
  return os.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("short write to " + path);
}

// ---- config file ----------------------------------------------------------
// One JSON file with optional sections {"grammar", "model", "train"}.
// Unknown keys are hard errors so hyperparameter typos cannot silently fall
// back to defaults.

struct CliConfig {
  data::GrammarSpec grammar = data::default_grammar();
  model::ModelConfig model;
  train::TrainConfig train;
  std::string path;        // empty when running on defaults
  std::string text = "{}";  // raw file contents, hashed into manifests
};

std::string field_path(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw std::invalid_argument("config section '" + (where.empty() ? "<root>" : where) +
                                "' must be a JSON object");
  }
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw std::invalid_argument("unknown config field: " + field_path(where, item.key()));
    }
  }
}

template <typename T>
void take(const json& j, const std::string& where, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config field " + field_path(where, key) +
                                " has the wrong type");
  }
}

data::LanguageSpec parse_language(const json& j, const std::string& where) {
  check_keys(j, where,
             {"name", "trained", "cipher_shift", "word_order", "overlap_en", "overlap_with",
              "overlap_frac"});
  data::LanguageSpec lang;
  take(j, where, "name", lang.name);
  if (lang.name.empty()) throw std::invalid_argument("config field " + where + ".name is required");
  take(j, where, "trained", lang.trained);
  take(j, where, "cipher_shift", lang.cipher_shift);
  take(j, where, "word_order", lang.word_order);
  take(j, where, "overlap_en", lang.overlap_en);
  take(j, where, "overlap_with", lang.overlap_with);
  take(j, where, "overlap_frac", lang.overlap_frac);
  return lang;
}

CliConfig load_cli_config(const std::string& path) {
  CliConfig cfg;
  if (path.empty()) return cfg;
  cfg.path = path;
  cfg.text = read_file(path);
  json root;
  try {
    root = json::parse(cfg.text);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path + " is not valid JSON: " + std::string(e.what()));
  }
  check_keys(root, "", {"grammar", "model", "train"});

  if (root.contains("grammar")) {
    const json& g = root.at("grammar");
    check_keys(g, "grammar",
               {"cities", "airlines", "days", "max_number", "kb_flight_rows", "train_size",
                "val_size", "test_size", "nl_extra_size", "languages"});
    take(g, "grammar", "cities", cfg.grammar.cities);
    take(g, "grammar", "airlines", cfg.grammar.airlines);
    take(g, "grammar", "days", cfg.grammar.days);
    take(g, "grammar", "max_number", cfg.grammar.max_number);
    take(g, "grammar", "kb_flight_rows", cfg.grammar.kb_flight_rows);
    take(g, "grammar", "train_size", cfg.grammar.train_size);
    take(g, "grammar", "val_size", cfg.grammar.val_size);
    take(g, "grammar", "test_size", cfg.grammar.test_size);
    take(g, "grammar", "nl_extra_size", cfg.grammar.nl_extra_size);
    if (g.contains("languages")) {
      const json& langs = g.at("languages");
      if (!langs.is_array()) {
        throw std::invalid_argument("config field grammar.languages must be an array");
      }
      cfg.grammar.languages.clear();
      for (std::size_t i = 0; i < langs.size(); ++i) {
        cfg.grammar.languages.push_back(
            parse_language(langs[i], "grammar.languages[" + std::to_string(i) + "]"));
      }
    }
  }

  if (root.contains("model")) {
    const json& m = root.at("model");
    check_keys(m, "model",
               {"d_model", "n_heads", "enc_layers", "dec_layers", "d_ff", "max_len", "dropout"});
    take(m, "model", "d_model", cfg.model.d_model);
    take(m, "model", "n_heads", cfg.model.n_heads);
    take(m, "model", "enc_layers", cfg.model.enc_layers);
    take(m, "model", "dec_layers", cfg.model.dec_layers);
    take(m, "model", "d_ff", cfg.model.d_ff);
    take(m, "model", "max_len", cfg.model.max_len);
    take(m, "model", "dropout", cfg.model.dropout);
  }

  if (root.contains("train")) {
    const json& t = root.at("train");
    check_keys(t, "train",
               {"base_lr", "warmup_steps", "weight_decay", "batch_size", "max_epochs", "patience",
                "alpha_lp", "alpha_nl", "gamma", "tau", "mask_v", "beam", "val_beam", "seed",
                "ablation"});
    take(t, "train", "base_lr", cfg.train.base_lr);
    take(t, "train", "warmup_steps", cfg.train.warmup_steps);
    take(t, "train", "weight_decay", cfg.train.weight_decay);
    take(t, "train", "batch_size", cfg.train.batch_size);
    take(t, "train", "max_epochs", cfg.train.max_epochs);
    take(t, "train", "patience", cfg.train.patience);
    take(t, "train", "alpha_lp", cfg.train.alpha_lp);
    take(t, "train", "alpha_nl", cfg.train.alpha_nl);
    take(t, "train", "gamma", cfg.train.gamma);
    take(t, "train", "tau", cfg.train.tau);
    take(t, "train", "mask_v", cfg.train.mask_v);
    take(t, "train", "beam", cfg.train.beam);
    take(t, "train", "val_beam", cfg.train.val_beam);
    take(t, "train", "seed", cfg.train.seed);
    take(t, "train", "ablation", cfg.train.ablation);
  }
  return cfg;
}

// Flags shared by the training-flavored commands. Each flag only overrides
// the config when the user actually passed it.
struct TrainFlags {
  std::uint64_t seed = 1;
  std::string ablation = "d";
  double tau = 0.5;
  double gamma = 40.0;
  double alpha_lp = 0.33;
  double alpha_nl = 0.1;
  int mask_v = 3;
  int beam = 5;
  CLI::Option* seed_o = nullptr;
  CLI::Option* ablation_o = nullptr;
  CLI::Option* tau_o = nullptr;
  CLI::Option* gamma_o = nullptr;
  CLI::Option* alpha_lp_o = nullptr;
  CLI::Option* alpha_nl_o = nullptr;
  CLI::Option* mask_v_o = nullptr;
  CLI::Option* beam_o = nullptr;

  void attach(CLI::App* cmd, bool with_ablation) {
    seed_o = cmd->add_option("--seed", seed, "Run seed (overrides the config)");
    if (with_ablation) {
      ablation_o = cmd->add_option("--ablation", ablation, "Objective set: a|b|c|d")
                       ->check(CLI::IsMember({"a", "b", "c", "d"}));
    }
    tau_o = cmd->add_option("--tau", tau, "Probability the denoising target is the English parallel");
    gamma_o = cmd->add_option("--gamma", gamma, "Reversal-ramp steepness");
    alpha_lp_o = cmd->add_option("--alpha-lp", alpha_lp, "Language-prediction loss weight");
    alpha_nl_o = cmd->add_option("--alpha-nl", alpha_nl, "Reconstruction loss weight");
    mask_v_o = cmd->add_option("--mask-v", mask_v, "Max masked tokens per noised utterance");
    beam_o = cmd->add_option("--beam", beam, "Beam width for test-time decoding");
  }

  void apply(train::TrainConfig& tc) const {
    if (seed_o && seed_o->count()) tc.seed = seed;
    if (ablation_o && ablation_o->count()) tc.ablation = ablation;
    if (tau_o && tau_o->count()) tc.tau = tau;
    if (gamma_o && gamma_o->count()) tc.gamma = gamma;
    if (alpha_lp_o && alpha_lp_o->count()) tc.alpha_lp = alpha_lp;
    if (alpha_nl_o && alpha_nl_o->count()) tc.alpha_nl = alpha_nl;
    if (mask_v_o && mask_v_o->count()) tc.mask_v = mask_v;
    if (beam_o && beam_o->count()) tc.beam = beam;
  }
};

json make_manifest(const std::string& command, const CliConfig& cfg, std::uint64_t seed,
                   const std::vector<std::string>& inputs, const std::string& out_dir) {
  return json{{"command", command},
              {"config_path", cfg.path.empty() ? "<defaults>" : cfg.path},
              {"config_hash", hex64(fnv1a64(cfg.text))},
              {"seed", seed},
              {"inputs", inputs},
              {"out_dir", out_dir},
              {"tool_version", kToolVersion}};
}

void write_manifest(const std::string& dir, const json& manifest) {
  write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

std::string resolve_model_prefix(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("--model is required for this command");
  if (fs::is_directory(path)) return path + "/model";  // run directory layout
  return path;
}

// "en" first, the rest in name order, so tables read the same everywhere.
std::vector<std::string> language_names(const data::GeneratedData& corpus) {
  std::vector<std::string> names{"en"};
  for (const auto& [name, lex] : corpus.lexicons) {
    if (name != "en") names.push_back(name);
  }
  return names;
}

std::vector<const data::ParallelExample*> split_examples(const data::GeneratedData& corpus,
                                                         const std::string& split,
                                                         const std::string& lang = "") {
  std::vector<const data::ParallelExample*> out;
  for (const auto& ex : corpus.examples) {
    if (ex.split == split && (lang.empty() || ex.lang == lang)) out.push_back(&ex);
  }
  return out;
}

std::string fmt4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

void print_accuracy_table(const std::vector<std::string>& langs,
                          const std::map<std::string, train::LanguageEval>& by_language) {
  std::cout << std::left << std::setw(10) << "language" << std::right << std::setw(6) << "n"
            << std::setw(9) << "correct" << std::setw(10) << "accuracy" << "\n";
  for (const auto& lang : langs) {
    const auto it = by_language.find(lang);
    if (it == by_language.end()) continue;
    std::cout << std::left << std::setw(10) << lang << std::right << std::setw(6) << it->second.n
              << std::setw(9) << it->second.correct << std::setw(10)
              << fmt4(it->second.accuracy()) << "\n";
  }
}

// ---- gen-data ---------------------------------------------------------------

int cmd_gen_data(const CliConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  const data::GeneratedData corpus = data::generate_corpus(cfg.grammar, seed);
  fs::create_directories(out_dir);
  data::save_corpus(out_dir, corpus);
  write_manifest(out_dir, make_manifest("gen-data", cfg, seed, {}, out_dir));

  int trained = 0;
  for (const auto& [name, lex] : corpus.lexicons) trained += lex.trained ? 1 : 0;
  std::cout << "corpus: " << corpus.lexicons.size() << " languages (" << trained << " trained, "
            << (corpus.lexicons.size() - trained) << " held out), " << corpus.examples.size()
            << " examples, vocab " << corpus.vocab.size() << " -> " << out_dir << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const CliConfig& cfg, const std::string& corpus_dir, const std::string& out_dir) {
  const data::GeneratedData corpus = data::load_corpus(corpus_dir);
  const train::TrainResult result = train::run_training(cfg.model, cfg.train, corpus);

  fs::create_directories(out_dir);
  const std::string run_dir = train::save_run(out_dir, result);
  write_manifest(run_dir, make_manifest("train", cfg, cfg.train.seed, {corpus_dir}, run_dir));
  write_file(out_dir + "/latest_run.txt", run_dir + "\n");

  const train::ExperimentRecord& rec = result.record;
  std::cout << "run dir: " << run_dir << "\n";
  std::cout << "epochs " << rec.epochs.size() << "/" << rec.train_cfg.max_epochs << ", best epoch "
            << rec.best_epoch << ", val acc " << fmt4(rec.best_val_acc) << ", wall clock "
            << std::fixed << std::setprecision(1) << rec.wall_clock_seconds << "s\n";
  if (rec.diverged) {
    std::cerr << "error: training diverged: " << rec.divergence_note << "\n";
    return 2;
  }
  return 0;
}

// ---- eval ---------------------------------------------------------------------

std::vector<std::vector<std::string>> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<std::vector<std::string>> preds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::invalid_argument("predictions line " + std::to_string(preds.size() + 1) +
                                  " is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object() || !j.contains("lf") || !j.at("lf").is_array()) {
      throw std::invalid_argument("predictions line " + std::to_string(preds.size() + 1) +
                                  " must be an object with an \"lf\" token array");
    }
    preds.push_back(j.at("lf").get<std::vector<std::string>>());
  }
  return preds;
}

int cmd_eval(const CliConfig& cfg, const std::string& corpus_dir, const std::string& model_path,
             const std::string& predictions_path, const std::string& split, int beam,
             const std::string& out_dir) {
  const data::GeneratedData corpus = data::load_corpus(corpus_dir);
  train::EvalReport report;
  if (!predictions_path.empty()) {
    const auto examples = split_examples(corpus, split);
    report = train::evaluate_predictions(examples, load_predictions(predictions_path), corpus.kb);
  } else {
    const model::ModelParams params = model::load_checkpoint(resolve_model_prefix(model_path));
    report = train::evaluate(params, corpus, split, beam);
  }

  print_accuracy_table(language_names(corpus), report.by_language);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    json out{{"split", split},
             {"beam", beam},
             {"corpus", corpus_dir},
             {"by_language", train::eval_to_json(report)}};
    write_file(out_dir + "/eval.json", out.dump(2) + "\n");
    std::vector<std::string> inputs{corpus_dir};
    if (!model_path.empty()) inputs.push_back(model_path);
    if (!predictions_path.empty()) inputs.push_back(predictions_path);
    write_manifest(out_dir, make_manifest("eval", cfg, 0, inputs, out_dir));
    std::cout << "wrote " << out_dir << "/eval.json\n";
  }
  return 0;
}

// ---- ablate -------------------------------------------------------------------

int cmd_ablate(const CliConfig& cfg, const std::string& corpus_dir, const std::string& out_dir) {
  const data::GeneratedData corpus = data::load_corpus(corpus_dir);
  const std::vector<std::string> langs = language_names(corpus);
  fs::create_directories(out_dir);

  json ablations = json::object();
  std::vector<std::pair<std::string, train::EvalReport>> table;
  for (const std::string tag : {"a", "b", "c", "d"}) {
    train::TrainConfig tc = cfg.train;
    tc.ablation = tag;
    const train::TrainResult result = train::run_training(cfg.model, tc, corpus);
    const std::string run_dir = train::save_run(out_dir, result);
    if (result.record.diverged) {
      std::cerr << "error: ablation " << tag
                << " diverged: " << result.record.divergence_note << "\n";
      return 2;
    }
    const train::EvalReport report = train::evaluate(result.best, corpus, "test", tc.beam);
    ablations[tag] = json{{"run_dir", run_dir},
                          {"best_val_acc", result.record.best_val_acc},
                          {"eval", train::eval_to_json(report)}};
    table.emplace_back(tag, report);
  }

  json out{{"seed", cfg.train.seed}, {"beam", cfg.train.beam}, {"ablations", ablations}};
  write_file(out_dir + "/ablate.json", out.dump(2) + "\n");
  write_manifest(out_dir, make_manifest("ablate", cfg, cfg.train.seed, {corpus_dir}, out_dir));

  std::cout << std::left << std::setw(9) << "ablation";
  for (const auto& lang : langs) std::cout << std::right << std::setw(9) << lang;
  std::cout << "\n";
  for (const auto& [tag, report] : table) {
    std::cout << std::left << std::setw(9) << tag;
    for (const auto& lang : langs) {
      const auto it = report.by_language.find(lang);
      std::cout << std::right << std::setw(9)
                << (it == report.by_language.end() ? "-" : fmt4(it->second.accuracy()));
    }
    std::cout << "\n";
  }
  std::cout << "wrote " << out_dir << "/ablate.json\n";
  return 0;
}

// ---- analyze ------------------------------------------------------------------

int cmd_analyze(const CliConfig& cfg, const std::string& corpus_dir, const std::string& model_path,
                const std::string& split, bool include_specials, const std::string& ground_name,
                const std::string& out_dir) {
  const data::GeneratedData corpus = data::load_corpus(corpus_dir);
  const model::ModelParams params = model::load_checkpoint(resolve_model_prefix(model_path));
  const analysis::Ground ground =
      ground_name == "euclidean" ? analysis::Ground::kEuclidean : analysis::Ground::kCosine;
  const bool exclude_specials = !include_specials;
  const std::vector<std::string> langs = language_names(corpus);

  // distances between each language's test encodings and the encodings of
  // the same examples' English parallels
  json pairs = json::object();
  std::vector<std::string> metric_lines{"pair\tmetric\tvalue"};
  std::ostringstream num;
  num << std::setprecision(17);
  for (const auto& lang : langs) {
    if (lang == "en") continue;
    const auto examples = split_examples(corpus, split, lang);
    if (examples.empty()) throw std::invalid_argument("no '" + split + "' examples for " + lang);
    std::vector<std::vector<std::string>> utts, en_utts;
    for (const auto* ex : examples) {
      utts.push_back(ex->tokens);
      en_utts.push_back(ex->english_tokens);
    }
    const analysis::EncodingSet own =
        analysis::build_encoding_set(params, corpus.vocab, lang, utts, exclude_specials);
    const analysis::EncodingSet parallel =
        analysis::build_encoding_set(params, corpus.vocab, "en", en_utts, exclude_specials);
    const double cos = analysis::mean_cosine_distance(own, parallel);
    const double haus = analysis::mean_hausdorff(own, parallel, ground);
    const std::string pair = "en-" + lang;
    pairs[pair] = json{{"mean_cosine", cos}, {"mean_hausdorff", haus}};
    num.str("");
    num << pair << "\tmean_cosine\t" << cos;
    metric_lines.push_back(num.str());
    num.str("");
    num << pair << "\tmean_hausdorff\t" << haus;
    metric_lines.push_back(num.str());
  }

  // language-prediction probe over mean-pooled encodings of the trained
  // languages: the trained head frozen, and a fresh head fit on the train
  // split and scored on `split`
  const std::map<std::string, int> labels = data::language_labels(corpus.lexicons);
  std::vector<std::string> trained_langs;
  for (const auto& [name, label] : labels) trained_langs.push_back(name);

  const auto gather = [&](const std::string& which_split, ad::Matrix& means,
                          std::vector<int>& label_vec) {
    std::vector<ad::Matrix> blocks;
    for (const auto& lang : trained_langs) {
      const auto examples = split_examples(corpus, which_split, lang);
      if (examples.empty()) {
        throw std::invalid_argument("no '" + which_split + "' examples for " + lang);
      }
      std::vector<std::vector<std::string>> utts;
      for (const auto* ex : examples) utts.push_back(ex->tokens);
      const analysis::EncodingSet set =
          analysis::build_encoding_set(params, corpus.vocab, lang, utts, exclude_specials);
      blocks.push_back(set.means);
      label_vec.insert(label_vec.end(), static_cast<std::size_t>(set.means.rows()),
                       labels.at(lang));
    }
    Eigen::Index rows = 0;
    for (const auto& b : blocks) rows += b.rows();
    means.resize(rows, blocks.front().cols());
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
      means.middleRows(at, b.rows()) = b;
      at += b.rows();
    }
  };

  ad::Matrix probe_means, train_means;
  std::vector<int> probe_labels, train_labels;
  gather(split, probe_means, probe_labels);
  gather("train", train_means, train_labels);

  const int n_classes = static_cast<int>(labels.size());
  const double frozen = analysis::lp_probe_accuracy(probe_means, probe_labels,
                                                    params.tensors.at("lp.w"),
                                                    params.tensors.at("lp.b"));
  const analysis::ProbeHead refit =
      analysis::fit_probe(train_means, train_labels, n_classes);
  const double retrained =
      analysis::lp_probe_accuracy(probe_means, probe_labels, refit.w, refit.b);
  const double chance = 1.0 / n_classes;
  for (const auto& [name, value] : std::initializer_list<std::pair<const char*, double>>{
           {"lp_probe_frozen", frozen},
           {"lp_probe_retrained", retrained},
           {"lp_probe_chance", chance}}) {
    num.str("");
    num << "all\t" << name << "\t" << value;
    metric_lines.push_back(num.str());
  }

  // 2-D projection of every language's mean encodings on `split`
  std::vector<std::string> proj_lines{"lang\texample_id\tx\ty"};
  std::vector<ad::Matrix> proj_blocks;
  std::vector<std::pair<std::string, int>> proj_index;
  for (const auto& lang : langs) {
    const auto examples = split_examples(corpus, split, lang);
    std::vector<std::vector<std::string>> utts;
    for (const auto* ex : examples) utts.push_back(ex->tokens);
    const analysis::EncodingSet set =
        analysis::build_encoding_set(params, corpus.vocab, lang, utts, exclude_specials);
    proj_blocks.push_back(set.means);
    for (int i = 0; i < set.means.rows(); ++i) proj_index.emplace_back(lang, i);
  }
  Eigen::Index total = 0;
  for (const auto& b : proj_blocks) total += b.rows();
  ad::Matrix pooled(total, proj_blocks.front().cols());
  Eigen::Index at = 0;
  for (const auto& b : proj_blocks) {
    pooled.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  const analysis::Projection projection = analysis::project_2d(pooled);
  for (Eigen::Index i = 0; i < projection.coords.rows(); ++i) {
    num.str("");
    num << proj_index[static_cast<std::size_t>(i)].first << "\t"
        << proj_index[static_cast<std::size_t>(i)].second << "\t" << projection.coords(i, 0)
        << "\t" << projection.coords(i, 1);
    proj_lines.push_back(num.str());
  }

  fs::create_directories(out_dir);
  std::string metrics_text;
  for (const auto& line : metric_lines) metrics_text += line + "\n";
  write_file(out_dir + "/metrics.tsv", metrics_text);
  std::string proj_text;
  for (const auto& line : proj_lines) proj_text += line + "\n";
  write_file(out_dir + "/projection.tsv", proj_text);

  json out{{"split", split},
           {"ground", ground_name},
           {"exclude_special_tokens", exclude_specials},
           {"pairs", pairs},
           {"probe",
            json{{"frozen", frozen},
                 {"retrained", retrained},
                 {"chance", chance},
                 {"n_classes", n_classes}}}};
  write_file(out_dir + "/analyze.json", out.dump(2) + "\n");
  write_manifest(out_dir, make_manifest("analyze", cfg, 0, {corpus_dir, model_path}, out_dir));

  for (const auto& line : metric_lines) std::cout << line << "\n";
  std::cout << "wrote " << out_dir << "/{metrics.tsv,projection.tsv,analyze.json}\n";
  return 0;
}

// ---- baseline -----------------------------------------------------------------

// Forward word-by-word translation out of English: per-word mapping commutes
// with the word-order permutation, so applying the order rule afterwards
// reproduces the generator's surface exactly. Each content word is then
// corrupted with probability error_rate by a different surface word type;
// digits are exempt.
std::vector<std::string> translate_from_english(const data::Lexicon& lex,
                                                const std::vector<std::string>& en_tokens,
                                                double error_rate,
                                                const std::vector<std::string>& surface_types,
                                                Rng& rng) {
  std::vector<std::string> out;
  out.reserve(en_tokens.size());
  for (const auto& w : en_tokens) out.push_back(lex.translate_word(w));
  out = data::apply_word_order(out, lex.word_order);
  if (error_rate > 0.0) {
    const auto digits = [](const std::string& w) {
      return std::all_of(w.begin(), w.end(),
                         [](unsigned char c) { return std::isdigit(c); });
    };
    for (auto& w : out) {
      if (digits(w) || !rng.bernoulli(error_rate)) continue;
      std::string pick = w;
      while (pick == w) {
        pick = surface_types[static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(surface_types.size())))];
      }
      w = pick;
    }
  }
  return out;
}

int cmd_baseline_translate_test(const CliConfig& cfg, const data::GeneratedData& corpus,
                                const std::string& corpus_dir, const std::string& model_path,
                                double mt_error_rate, int beam, std::uint64_t seed,
                                const std::string& out_dir) {
  const model::ModelParams params = model::load_checkpoint(resolve_model_prefix(model_path));
  Rng mt_rng = Rng(seed).fork(rng_stream::kMt);

  const std::vector<std::string> langs = language_names(corpus);
  std::map<std::string, train::LanguageEval> by_language;
  double english_reference = 0.0;
  for (const auto& lang : langs) {
    const auto examples = split_examples(corpus, "test", lang);
    if (examples.empty()) throw std::invalid_argument("no test examples for " + lang);
    std::vector<std::vector<std::string>> preds;
    preds.reserve(examples.size());
    for (const auto* ex : examples) {
      const std::vector<std::string> input =
          lang == "en" ? ex->tokens
                       : data::simulated_mt(ex->tokens, lang, corpus.lexicons, mt_error_rate,
                                            mt_rng);
      preds.push_back(model::decode_lf(params, corpus.vocab, input, beam));
    }
    const train::EvalReport rep = train::evaluate_predictions(examples, preds, corpus.kb);
    by_language[lang] = rep.by_language.at(lang);
    if (lang == "en") english_reference = rep.by_language.at(lang).accuracy();
  }

  print_accuracy_table(langs, by_language);
  fs::create_directories(out_dir);
  json langs_json = json::object();
  for (const auto& [lang, ev] : by_language) {
    langs_json[lang] = json{{"n", ev.n}, {"correct", ev.correct}, {"accuracy", ev.accuracy()}};
  }
  json out{{"kind", "translate_test"},
           {"mt_error_rate", mt_error_rate},
           {"beam", beam},
           {"seed", seed},
           {"english_reference", english_reference},
           {"by_language", langs_json}};
  write_file(out_dir + "/baseline.json", out.dump(2) + "\n");
  write_manifest(out_dir,
                 make_manifest("baseline", cfg, seed, {corpus_dir, model_path}, out_dir));
  std::cout << "wrote " << out_dir << "/baseline.json\n";
  return 0;
}

int cmd_baseline_translate_train(const CliConfig& cfg, const data::GeneratedData& corpus,
                                 const std::string& corpus_dir, double mt_error_rate, int beam,
                                 std::uint64_t seed, const std::string& out_dir) {
  Rng mt_rng = Rng(seed).fork(rng_stream::kMt);
  fs::create_directories(out_dir);

  std::map<std::string, train::LanguageEval> by_language;
  json langs_json = json::object();
  for (const auto& lang : language_names(corpus)) {
    if (lang == "en") continue;
    const data::Lexicon& lex = corpus.lexicons.at(lang);
    std::vector<std::string> surface_types;
    for (const auto& [en_word, surface] : lex.to_surface) surface_types.push_back(surface);

    // The translated utterances occupy the supervised slot of the training
    // loop, which reserves logical-form batches for the "en" tag; the rows
    // are therefore tagged "en" even though they carry `lang` surfaces.
    data::GeneratedData translated = corpus;
    translated.examples.clear();
    for (const auto& ex : corpus.examples) {
      if (ex.lang != "en" || (ex.split != "train" && ex.split != "val")) continue;
      data::ParallelExample copy = ex;
      copy.tokens = translate_from_english(lex, ex.tokens, mt_error_rate, surface_types, mt_rng);
      copy.english_tokens = ex.tokens;
      translated.examples.push_back(copy);
    }

    train::TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.ablation = "a";  // per-language parsers train on the supervised objective alone
    const train::TrainResult result = train::run_training(cfg.model, tc, translated);
    const std::string run_dir = train::save_run(out_dir + "/" + lang, result);
    if (result.record.diverged) {
      std::cerr << "error: translate_train for " << lang
                << " diverged: " << result.record.divergence_note << "\n";
      return 2;
    }

    const auto examples = split_examples(corpus, "test", lang);
    std::vector<std::vector<std::string>> preds;
    preds.reserve(examples.size());
    for (const auto* ex : examples) {
      preds.push_back(model::decode_lf(result.best, corpus.vocab, ex->tokens, beam));
    }
    const train::EvalReport rep = train::evaluate_predictions(examples, preds, corpus.kb);
    by_language[lang] = rep.by_language.at(lang);
    langs_json[lang] = json{{"n", rep.by_language.at(lang).n},
                            {"correct", rep.by_language.at(lang).correct},
                            {"accuracy", rep.by_language.at(lang).accuracy()},
                            {"run_dir", run_dir}};
  }

  std::vector<std::string> shown;
  for (const auto& [lang, ev] : by_language) shown.push_back(lang);
  print_accuracy_table(shown, by_language);
  json out{{"kind", "translate_train"},
           {"mt_error_rate", mt_error_rate},
           {"beam", beam},
           {"seed", seed},
           {"by_language", langs_json}};
  write_file(out_dir + "/baseline.json", out.dump(2) + "\n");
  write_manifest(out_dir, make_manifest("baseline", cfg, seed, {corpus_dir}, out_dir));
  std::cout << "wrote " << out_dir << "/baseline.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilingual semantic-parsing experiments: corpus generation, multi-task "
               "training, ablations, simulated-MT baselines, evaluation, and encoder analysis"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, out_dir, model_path, predictions_path;
  std::string split = "test", ground = "cosine", kind;
  bool include_specials = false;
  double mt_error_rate = 0.0;
  int eval_beam = 5;
  std::uint64_t gen_seed = 1, baseline_seed = 1;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic multilingual corpus");
  gen->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--out", out_dir, "Corpus directory to create")->required();

  CLI::App* tr = app.add_subcommand("train", "Train one model on a generated corpus");
  tr->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  tr->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  tr->add_option("--out", out_dir, "Directory that will hold the run directory")->required();
  TrainFlags train_flags;
  train_flags.attach(tr, true);

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint or a predictions file");
  ev->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  ev->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  ev->add_option("--model", model_path, "Run directory or checkpoint prefix");
  ev->add_option("--predictions", predictions_path,
                 "JSONL file of {\"lf\": [tokens]} rows aligned with the split")
      ->check(CLI::ExistingFile);
  ev->add_option("--split", split, "Corpus split to score");
  ev->add_option("--beam", eval_beam, "Beam width");
  ev->add_option("--out", out_dir, "Optional output directory for eval.json");

  CLI::App* ab = app.add_subcommand("ablate", "Train and evaluate all four objective sets");
  ab->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  ab->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  ab->add_option("--out", out_dir, "Output directory")->required();
  TrainFlags ablate_flags;
  ablate_flags.attach(ab, false);

  CLI::App* an = app.add_subcommand("analyze", "Encoder-geometry diagnostics for a checkpoint");
  an->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  an->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  an->add_option("--model", model_path, "Run directory or checkpoint prefix")->required();
  an->add_option("--split", split, "Corpus split to encode");
  an->add_flag("--include-specials", include_specials,
               "Keep mask/bos/eos rows in token encoding sets");
  an->add_option("--ground", ground, "Hausdorff ground distance")
      ->check(CLI::IsMember({"cosine", "euclidean"}));
  an->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* bl = app.add_subcommand("baseline", "Simulated-MT baselines");
  bl->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  bl->add_option("--kind", kind, "translate_test or translate_train")
      ->required()
      ->check(CLI::IsMember({"translate_test", "translate_train"}));
  bl->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  bl->add_option("--model", model_path, "Checkpoint for translate_test");
  bl->add_option("--mt-error-rate", mt_error_rate, "Per-word corruption probability");
  bl->add_option("--beam", eval_beam, "Beam width");
  bl->add_option("--seed", baseline_seed, "Seed for MT corruption and translate_train runs");
  bl->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const CliConfig cfg = load_cli_config(config_path);
    if (gen->parsed()) return cmd_gen_data(cfg, gen_seed, out_dir);
    if (tr->parsed()) {
      CliConfig run_cfg = cfg;
      train_flags.apply(run_cfg.train);
      return cmd_train(run_cfg, corpus_dir, out_dir);
    }
    if (ev->parsed()) {
      if (model_path.empty() && predictions_path.empty()) {
        throw std::invalid_argument("eval needs --model or --predictions");
      }
      return cmd_eval(cfg, corpus_dir, model_path, predictions_path, split, eval_beam, out_dir);
    }
    if (ab->parsed()) {
      CliConfig run_cfg = cfg;
      ablate_flags.apply(run_cfg.train);
      return cmd_ablate(run_cfg, corpus_dir, out_dir);
    }
    if (an->parsed()) {
      return cmd_analyze(cfg, corpus_dir, model_path, split, include_specials, ground, out_dir);
    }
    if (bl->parsed()) {
      const data::GeneratedData corpus = data::load_corpus(corpus_dir);
      if (kind == "translate_test") {
        return cmd_baseline_translate_test(cfg, corpus, corpus_dir, model_path, mt_error_rate,
                                           eval_beam, baseline_seed, out_dir);
      }
      return cmd_baseline_translate_train(cfg, corpus, corpus_dir, mt_error_rate, eval_beam,
                                          baseline_seed, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
