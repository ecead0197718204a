#include "zeroparse/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <stdexcept>

#include "zeroparse/io.hpp"

namespace zeroparse::train {

using model::ModelConfig;
using model::ModelParams;

void TrainConfig::validate() const {
  const auto bad = [](const std::string& why) {
    throw std::invalid_argument("train config: " + why);
  };
  if (base_lr <= 0.0) bad("base_lr must be positive");
  if (warmup_steps < 0) bad("warmup_steps must be non-negative (0 = auto)");
  if (weight_decay < 0.0) bad("weight_decay must be non-negative");
  if (batch_size <= 0) bad("batch_size must be positive");
  if (max_epochs <= 0) bad("max_epochs must be positive");
  if (patience <= 0 || patience > max_epochs) bad("patience must be in [1, max_epochs]");
  if (alpha_lp < 0.0 || alpha_nl < 0.0) bad("loss weights must be non-negative");
  if (gamma < 0.0) bad("gamma must be non-negative");
  if (tau < 0.0 || tau > 1.0) bad("tau must be in [0, 1]");
  if (mask_v < 0) bad("mask_v must be non-negative");
  if (beam <= 0 || val_beam <= 0) bad("beam widths must be positive");
  if (ablation != "a" && ablation != "b" && ablation != "c" && ablation != "d")
    bad("ablation must be one of a, b, c, d");
}

double noam_lr(long step, int d_model, int warmup, double base_lr) {
  (void)d_model;  // cancels under the peak-at-base_lr normalization
  if (step < 1) throw std::invalid_argument("noam_lr: step must be >= 1");
  if (warmup < 1) throw std::invalid_argument("noam_lr: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return base_lr * std::sqrt(w) * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

AdamState AdamState::init(const ModelParams& params) {
  AdamState st;
  for (const auto& [name, mat] : params.tensors) {
    st.m.emplace(name, ad::Matrix::Zero(mat.rows(), mat.cols()));
    st.v.emplace(name, ad::Matrix::Zero(mat.rows(), mat.cols()));
  }
  return st;
}

void adam_step(ModelParams& params, const std::map<std::string, ad::Matrix>& grads,
               AdamState& state, double lr, double weight_decay, double beta1, double beta2,
               double eps) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (auto& [name, theta] : params.tensors) {
    const auto git = grads.find(name);
    if (git == grads.end())
      throw std::invalid_argument("adam_step: missing gradient for '" + name + "'");
    const ad::Matrix& g = git->second;
    if (g.rows() != theta.rows() || g.cols() != theta.cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" + name + "'");
    if (!g.allFinite())
      throw std::runtime_error("adam_step: non-finite gradient for '" + name + "'");

    if (weight_decay != 0.0) theta *= (1.0 - lr * weight_decay);  // decoupled decay first

    ad::Matrix& m = state.m.at(name);
    ad::Matrix& v = state.v.at(name);
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v.array().matrix() + (1.0 - beta2) * g.array().square().matrix();
    theta.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
}

model::StepBatch make_step_batch(const data::Batch& batch, const data::Vocabulary& vocab,
                                 const std::map<std::string, int>& labels,
                                 const std::string& ablation, double tau, int mask_v,
                                 Rng& noise_rng, Rng& tau_rng) {
  const bool use_nl = ablation == "b" || ablation == "d";
  const bool use_lp = ablation == "c" || ablation == "d";
  if (batch.has_lf && batch.lang != "en")
    throw std::logic_error("supervised batch in '" + batch.lang +
                           "': only English carries logical forms");
  model::StepBatch out;
  for (const data::ParallelExample* ex : batch.items) {
    if (batch.has_lf) {
      if (ex->lf.empty())
        throw std::invalid_argument("supervised example without a logical form");
      out.lf_examples.push_back({vocab.encode(ex->tokens), vocab.encode(ex->lf)});
    }
    if (use_nl) {
      const std::vector<std::string> noised = data::noise(ex->tokens, mask_v, noise_rng);
      const bool to_english = tau_rng.bernoulli(tau);
      const std::vector<std::string>& tgt = to_english ? ex->english_tokens : ex->tokens;
      out.nl_examples.push_back({vocab.encode(noised), vocab.encode(tgt)});
    }
    if (use_lp) {
      const auto it = labels.find(ex->lang);
      if (it == labels.end())
        throw std::invalid_argument("no language label for '" + ex->lang + "'");
      out.lp_srcs.push_back(vocab.encode(ex->tokens));
      out.lp_labels.push_back(it->second);
    }
  }
  return out;
}

double lp_batch_accuracy(const ModelParams& params, const std::vector<std::vector<int>>& srcs,
                         const std::vector<int>& labels) {
  if (srcs.empty() || srcs.size() != labels.size())
    throw std::invalid_argument("lp_batch_accuracy: need one label per source");
  const model::Bound b = model::bind(nullptr, params);
  const ad::Matrix& w = params.tensors.at("lp.w");
  const ad::Matrix& bias = params.tensors.at("lp.b");
  Rng no_drop(0);
  int correct = 0;
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    const ad::Matrix enc = model::encode(b, srcs[i], false, no_drop).val();
    const ad::Matrix logits = enc.colwise().mean() * w + bias;
    Eigen::Index best = 0;
    logits.row(0).maxCoeff(&best);  // ties resolve to the lowest index
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(srcs.size());
}

namespace {

long batches_for(std::size_t n, int batch_size) {
  return static_cast<long>((n + static_cast<std::size_t>(batch_size) - 1) /
                           static_cast<std::size_t>(batch_size));
}

long planned_batches_per_epoch(const std::vector<const data::ParallelExample*>& lf_pool,
                               const std::vector<const data::ParallelExample*>& nl_pool,
                               int batch_size) {
  std::map<std::string, std::size_t> lf_by_lang, nl_by_lang;
  for (const auto* ex : lf_pool) ++lf_by_lang[ex->lang];
  for (const auto* ex : nl_pool) ++nl_by_lang[ex->lang];
  long total = 0;
  for (const auto& [lang, n] : lf_by_lang) total += batches_for(n, batch_size);
  for (const auto& [lang, n] : nl_by_lang) total += batches_for(n, batch_size);
  return total;
}

struct ValScore {
  double acc = 0.0;
  double loss = 0.0;
};

ValScore validate_english(const ModelParams& params, const data::GeneratedData& corpus,
                          const std::vector<const data::ParallelExample*>& val_set,
                          int val_beam) {
  std::vector<std::vector<std::string>> preds;
  preds.reserve(val_set.size());
  for (const auto* ex : val_set)
    preds.push_back(model::decode_lf(params, corpus.vocab, ex->tokens, val_beam));
  const EvalReport rep = evaluate_predictions(val_set, preds, corpus.kb);

  std::vector<model::SeqPair> pairs;
  pairs.reserve(val_set.size());
  for (const auto* ex : val_set)
    pairs.push_back({corpus.vocab.encode(ex->tokens), corpus.vocab.encode(ex->lf)});
  const model::Bound b = model::bind(nullptr, params);
  Rng no_drop(0);
  ValScore s;
  s.acc = rep.by_language.at("en").accuracy();
  s.loss = model::lf_loss(b, pairs, false, no_drop).item();
  return s;
}

}  // namespace

TrainResult run_training(const ModelConfig& base_model_cfg, const TrainConfig& cfg,
                         const data::GeneratedData& corpus) {
  cfg.validate();
  const auto labels = data::language_labels(corpus.lexicons);

  ModelConfig mc = base_model_cfg;
  mc.vocab_size = corpus.vocab.size();
  mc.n_languages = static_cast<int>(labels.size());
  mc.alpha_lp = cfg.alpha_lp;
  mc.alpha_nl = cfg.alpha_nl;
  mc.gamma = cfg.gamma;
  mc.tau = cfg.tau;
  mc.mask_cap = cfg.mask_v;
  mc.validate();

  std::vector<const data::ParallelExample*> lf_pool, nl_pool, val_set;
  for (const auto& ex : corpus.examples) {
    if (ex.split == "train") {
      if (ex.lang == "en") {
        lf_pool.push_back(&ex);
      } else if (cfg.ablation != "a") {
        nl_pool.push_back(&ex);
      }
    } else if (ex.split == "nl") {
      if (cfg.ablation != "a") nl_pool.push_back(&ex);
    } else if (ex.split == "val" && ex.lang == "en") {
      val_set.push_back(&ex);
    }
  }
  if (lf_pool.empty()) throw std::invalid_argument("corpus has no English supervised examples");
  if (val_set.empty()) throw std::invalid_argument("corpus has no English validation examples");

  TrainResult result;
  ExperimentRecord& rec = result.record;
  rec.train_cfg = cfg;
  rec.total_planned_steps =
      static_cast<long>(cfg.max_epochs) * planned_batches_per_epoch(lf_pool, nl_pool,
                                                                    cfg.batch_size);
  rec.resolved_warmup = cfg.warmup_steps > 0 ? cfg.warmup_steps
                        : rec.total_planned_steps < 5000 ? 300
                                                         : 5000;

  Rng master(cfg.seed);
  Rng init_rng = master.fork(rng_stream::kInit);
  Rng drop_rng = master.fork(rng_stream::kDropout);
  Rng noise_rng = master.fork(rng_stream::kNoise);
  Rng batch_rng = master.fork(rng_stream::kBatch);
  Rng tau_rng = master.fork(rng_stream::kTau);

  ModelParams params = ModelParams::init(mc, init_rng);
  rec.model_cfg = mc;
  AdamState adam = AdamState::init(params);
  result.best = params;

  const auto t0 = std::chrono::steady_clock::now();
  long steps_done = 0;
  int epochs_without_improvement = 0;
  double best_acc = -1.0, best_loss = 0.0;

  for (int epoch = 1; epoch <= cfg.max_epochs && !rec.diverged; ++epoch) {
    const std::vector<data::Batch> batches =
        data::sample_batches(lf_pool, nl_pool, cfg.batch_size, batch_rng);

    EpochMetrics em;
    em.epoch = epoch;
    double lf_sum = 0.0, nl_sum = 0.0, lp_sum = 0.0, lp_acc_sum = 0.0;
    long lf_n = 0, nl_n = 0, lp_n = 0;
    double lambda = 0.0, lr = 0.0;

    try {
      for (const data::Batch& batch : batches) {
        const model::StepBatch sb = make_step_batch(batch, corpus.vocab, labels, cfg.ablation,
                                                    cfg.tau, cfg.mask_v, noise_rng, tau_rng);
        const double progress = rec.total_planned_steps > 0
                                    ? static_cast<double>(steps_done) /
                                          static_cast<double>(rec.total_planned_steps)
                                    : 1.0;
        lambda = model::lambda_schedule(progress, cfg.gamma);

        if (!sb.lp_srcs.empty()) {
          const double acc = lp_batch_accuracy(params, sb.lp_srcs, sb.lp_labels);
          rec.lp_trace.push_back({steps_done + 1, acc});
          lp_acc_sum += acc;
        }

        ad::Tape tape;
        const model::Bound bound = model::bind(&tape, params);
        model::StepLossValues values;
        const ad::Tensor loss =
            model::combined_step_loss(bound, sb, lambda, true, drop_rng, &values);
        const ad::Gradients grads = ad::backward(loss);
        const auto gm = model::grad_map(bound, grads);

        lr = noam_lr(steps_done + 1, mc.d_model, rec.resolved_warmup, cfg.base_lr);
        adam_step(params, gm, adam, lr, cfg.weight_decay);
        ++steps_done;

        if (values.lf) { lf_sum += *values.lf; ++lf_n; }
        if (values.nl) { nl_sum += *values.nl; ++nl_n; }
        if (values.lp) { lp_sum += *values.lp; ++lp_n; }
      }

      const ValScore val = validate_english(params, corpus, val_set, cfg.val_beam);
      if (!std::isfinite(val.loss)) throw std::runtime_error("validation loss is not finite");

      em.steps_done = steps_done;
      em.lambda_end = lambda;
      em.lr_end = lr;
      if (lf_n > 0) em.lf_loss = lf_sum / static_cast<double>(lf_n);
      if (nl_n > 0) em.nl_loss = nl_sum / static_cast<double>(nl_n);
      if (lp_n > 0) em.lp_loss = lp_sum / static_cast<double>(lp_n);
      if (lp_n > 0) em.lp_train_acc = lp_acc_sum / static_cast<double>(lp_n);
      em.val_acc = val.acc;
      em.val_loss = val.loss;
      // a new best checkpoint means higher accuracy, or equal accuracy at
      // lower loss; either resets patience, so flat-zero-accuracy warmup
      // epochs with falling loss do not exhaust it
      em.improved = val.acc > best_acc || (val.acc == best_acc && val.loss < best_loss);
      rec.epochs.push_back(em);

      if (em.improved) {
        best_acc = val.acc;
        best_loss = val.loss;
        rec.best_epoch = epoch;
        result.best = params;
        epochs_without_improvement = 0;
      } else if (++epochs_without_improvement >= cfg.patience) {
        break;
      }
    } catch (const std::runtime_error& e) {
      // non-finite loss, gradient, or validation: keep the record, stop here
      rec.diverged = true;
      rec.divergence_note = e.what();
    }
  }

  rec.best_val_acc = std::max(best_acc, 0.0);
  rec.best_val_loss = best_loss;
  rec.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

EvalReport evaluate_predictions(const std::vector<const data::ParallelExample*>& examples,
                                const std::vector<std::vector<std::string>>& predictions,
                                const exec::KnowledgeBase& kb) {
  if (examples.size() != predictions.size())
    throw std::invalid_argument("evaluate_predictions: one prediction per example required");
  EvalReport rep;
  rep.predictions = predictions;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const data::ParallelExample* ex = examples[i];
    if (ex->lf.empty())
      throw std::invalid_argument("example without a gold logical form cannot be scored");
    const exec::ErrorClass cls = exec::classify_error(predictions[i], ex->lf, kb);
    LanguageEval& le = rep.by_language[ex->lang];
    ++le.n;
    if (cls == exec::ErrorClass::kCorrect) ++le.correct;
    ++le.error_counts[exec::error_class_name(cls)];
  }
  return rep;
}

EvalReport evaluate(const ModelParams& params, const data::GeneratedData& corpus,
                    const std::string& split, int beam) {
  if (params.config.vocab_size != corpus.vocab.size())
    throw std::invalid_argument("checkpoint and corpus vocabularies disagree");
  std::vector<const data::ParallelExample*> examples;
  for (const auto& ex : corpus.examples)
    if (ex.split == split) examples.push_back(&ex);
  if (examples.empty()) throw std::invalid_argument("no examples in split '" + split + "'");
  std::vector<std::vector<std::string>> preds;
  preds.reserve(examples.size());
  for (const auto* ex : examples)
    preds.push_back(model::decode_lf(params, corpus.vocab, ex->tokens, beam));
  return evaluate_predictions(examples, preds, corpus.kb);
}

namespace {

nlohmann::json train_cfg_json(const TrainConfig& c, bool with_seed) {
  nlohmann::json j;
  j["base_lr"] = c.base_lr;
  j["warmup_steps"] = c.warmup_steps;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["alpha_lp"] = c.alpha_lp;
  j["alpha_nl"] = c.alpha_nl;
  j["gamma"] = c.gamma;
  j["tau"] = c.tau;
  j["mask_v"] = c.mask_v;
  j["beam"] = c.beam;
  j["val_beam"] = c.val_beam;
  j["ablation"] = c.ablation;
  if (with_seed) j["seed"] = c.seed;
  return j;
}

nlohmann::json model_cfg_json(const ModelConfig& c) {
  nlohmann::json j;
  j["vocab_size"] = c.vocab_size;
  j["n_languages"] = c.n_languages;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["enc_layers"] = c.enc_layers;
  j["dec_layers"] = c.dec_layers;
  j["d_ff"] = c.d_ff;
  j["max_len"] = c.max_len;
  j["dropout"] = c.dropout;
  return j;
}

nlohmann::json epoch_json(const EpochMetrics& em) {
  nlohmann::json j;
  j["epoch"] = em.epoch;
  j["steps"] = em.steps_done;
  j["lambda"] = em.lambda_end;
  j["lr"] = em.lr_end;
  if (em.lf_loss) j["lf_loss"] = *em.lf_loss;
  if (em.nl_loss) j["nl_loss"] = *em.nl_loss;
  if (em.lp_loss) j["lp_loss"] = *em.lp_loss;
  if (em.lp_train_acc) j["lp_train_acc"] = *em.lp_train_acc;
  j["val_acc"] = em.val_acc;
  j["val_loss"] = em.val_loss;
  j["improved"] = em.improved;
  return j;
}

}  // namespace

std::string config_hash(const ModelConfig& mc, const TrainConfig& tc) {
  nlohmann::json j;
  j["model"] = model_cfg_json(mc);
  j["train"] = train_cfg_json(tc, false);  // the seed names the run instead
  return io::hex64(io::fnv1a64(j.dump()));
}

std::string run_dir_name(const ModelConfig& mc, const TrainConfig& tc) {
  return "run_" + config_hash(mc, tc) + "_s" + std::to_string(tc.seed);
}

nlohmann::json record_to_json(const ExperimentRecord& rec) {
  nlohmann::json j;
  j["model_config"] = model_cfg_json(rec.model_cfg);
  j["model_config"]["alpha_lp"] = rec.model_cfg.alpha_lp;
  j["model_config"]["alpha_nl"] = rec.model_cfg.alpha_nl;
  j["model_config"]["gamma"] = rec.model_cfg.gamma;
  j["model_config"]["tau"] = rec.model_cfg.tau;
  j["model_config"]["mask_cap"] = rec.model_cfg.mask_cap;
  j["train_config"] = train_cfg_json(rec.train_cfg, true);
  j["total_planned_steps"] = rec.total_planned_steps;
  j["resolved_warmup"] = rec.resolved_warmup;
  j["best_epoch"] = rec.best_epoch;
  j["best_val_acc"] = rec.best_val_acc;
  j["best_val_loss"] = rec.best_val_loss;
  j["diverged"] = rec.diverged;
  if (!rec.divergence_note.empty()) j["divergence_note"] = rec.divergence_note;
  j["wall_clock_seconds"] = rec.wall_clock_seconds;
  j["epochs"] = nlohmann::json::array();
  for (const auto& em : rec.epochs) j["epochs"].push_back(epoch_json(em));
  j["lp_trace"] = nlohmann::json::array();
  for (const auto& pt : rec.lp_trace)
    j["lp_trace"].push_back({{"step", pt.step}, {"acc", pt.acc}});
  return j;
}

nlohmann::json eval_to_json(const EvalReport& rep) {
  nlohmann::json j;
  for (const auto& [lang, le] : rep.by_language) {
    nlohmann::json e;
    e["n"] = le.n;
    e["correct"] = le.correct;
    e["accuracy"] = le.accuracy();
    e["errors"] = le.error_counts;
    j[lang] = std::move(e);
  }
  return j;
}

std::string save_run(const std::string& out_dir, const TrainResult& result) {
  namespace fs = std::filesystem;
  const fs::path dir =
      fs::path(out_dir) / run_dir_name(result.record.model_cfg, result.record.train_cfg);
  fs::create_directories(dir);

  std::string metrics;
  for (const auto& em : result.record.epochs) metrics += epoch_json(em).dump() + "\n";
  io::write_file((dir / "metrics.jsonl").string(), metrics);
  io::write_file((dir / "record.json").string(), record_to_json(result.record).dump(2));
  model::save_checkpoint((dir / "model").string(), result.best);
  return dir.string();
}

}  // namespace zeroparse::train
