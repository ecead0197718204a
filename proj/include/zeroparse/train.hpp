#pragma once

#include <cstdint>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zeroparse/data.hpp"
#include "zeroparse/executor.hpp"
#include "zeroparse/model.hpp"
#include "zeroparse/rng.hpp"

namespace zeroparse::train {

// Optimization recipe. The multi-task weights live here and are copied into
// the model config before training, so one struct drives a whole run.
struct TrainConfig {
  double base_lr = 1e-4;
  int warmup_steps = 0;  // 0 = auto: 5000 at full scale, 300 for short runs
  double weight_decay = 0.1;
  int batch_size = 50;
  int max_epochs = 100;
  int patience = 10;
  double alpha_lp = 0.33;
  double alpha_nl = 0.1;
  double gamma = 40.0;
  double tau = 0.5;
  int mask_v = 3;
  int beam = 5;      // test-time beam width
  int val_beam = 1;  // validation decodes greedily to stay cheap
  std::uint64_t seed = 1;
  // a: supervised parser only; b: + reconstruction; c: + language
  // prediction; d: all objectives
  std::string ablation = "d";

  void validate() const;  // throws std::invalid_argument
};

// lr(step) = base_lr * sqrt(warmup) * min(step^-1/2, step * warmup^-3/2):
// linear ramp to exactly base_lr at step = warmup, then inverse-sqrt decay.
// d_model is accepted for signature compatibility with the classic schedule
// but cancels under this normalization. step must be >= 1.
double noam_lr(long step, int d_model, int warmup, double base_lr);

struct AdamState {
  std::map<std::string, ad::Matrix> m;
  std::map<std::string, ad::Matrix> v;
  long t = 0;

  static AdamState init(const model::ModelParams& params);
};

// Adam with bias correction; weight decay is decoupled and applied as
// theta *= (1 - lr * wd) before the moment update. Throws on non-finite
// gradients, naming the parameter.
void adam_step(model::ModelParams& params, const std::map<std::string, ad::Matrix>& grads,
               AdamState& state, double lr, double weight_decay, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// Expands one homogeneous batch into the per-objective inputs:
//   logical-form batches (English only): parses + denoising + language label
//   reconstruction batches: denoising + language label
// The denoising target is the English parallel with probability tau,
// otherwise the clean utterance itself. Which parts are populated follows
// the ablation tag. Throws if a logical-form batch is not English.
model::StepBatch make_step_batch(const data::Batch& batch, const data::Vocabulary& vocab,
                                 const std::map<std::string, int>& labels,
                                 const std::string& ablation, double tau, int mask_v,
                                 Rng& noise_rng, Rng& tau_rng);

// Accuracy of the language-prediction head over clean encodings, no
// recording. Used for the per-step probe trace.
double lp_batch_accuracy(const model::ModelParams& params,
                         const std::vector<std::vector<int>>& srcs,
                         const std::vector<int>& labels);

struct EpochMetrics {
  int epoch = 0;
  long steps_done = 0;
  double lambda_end = 0.0;
  double lr_end = 0.0;
  std::optional<double> lf_loss;  // absent when the objective never fired
  std::optional<double> nl_loss;
  std::optional<double> lp_loss;
  std::optional<double> lp_train_acc;
  double val_acc = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};

struct LpTracePoint {
  long step = 0;
  double acc = 0.0;
};

struct ExperimentRecord {
  model::ModelConfig model_cfg;
  TrainConfig train_cfg;
  long total_planned_steps = 0;
  int resolved_warmup = 0;
  std::vector<EpochMetrics> epochs;
  std::vector<LpTracePoint> lp_trace;  // one point per step with an LP term
  int best_epoch = -1;
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;
  bool diverged = false;
  std::string divergence_note;
  double wall_clock_seconds = 0.0;  // never part of hashed artifacts
};

struct TrainResult {
  model::ModelParams best;
  ExperimentRecord record;
};

// Appendix-style loop: homogeneous batches over the union of both pools,
// reversal strength ramped by optimizer progress, English-only validation
// with early stopping, best checkpoint kept by accuracy (ties break toward
// lower validation loss). Divergence stops training and flags the record
// instead of discarding it. Deterministic given cfg.seed.
TrainResult run_training(const model::ModelConfig& base_model_cfg, const TrainConfig& cfg,
                         const data::GeneratedData& corpus);

struct LanguageEval {
  int n = 0;
  int correct = 0;
  std::map<std::string, int> error_counts;  // by error-category name

  double accuracy() const { return n == 0 ? 0.0 : static_cast<double>(correct) / n; }
};

struct EvalReport {
  std::map<std::string, LanguageEval> by_language;
  // predictions aligned with the evaluated examples, for audits
  std::vector<std::vector<std::string>> predictions;
};

// Scores already-decoded predictions against gold logical forms.
EvalReport evaluate_predictions(const std::vector<const data::ParallelExample*>& examples,
                                const std::vector<std::vector<std::string>>& predictions,
                                const exec::KnowledgeBase& kb);

// Decodes every test example with the logical-form head (any input
// language) and scores the results. Throws if the checkpoint and corpus
// vocabularies disagree.
EvalReport evaluate(const model::ModelParams& params, const data::GeneratedData& corpus,
                    const std::string& split, int beam);

// ---- run artifacts -------------------------------------------------------
// Everything for one run lives under <out>/run_<confighash>_s<seed>/:
// metrics.jsonl (one epoch per line), record.json (full record, includes
// wall clock), model.bin + model.manifest.json (best checkpoint).

std::string config_hash(const model::ModelConfig& mc, const TrainConfig& tc);
std::string run_dir_name(const model::ModelConfig& mc, const TrainConfig& tc);
std::string save_run(const std::string& out_dir, const TrainResult& result);

nlohmann::json record_to_json(const ExperimentRecord& record);
nlohmann::json eval_to_json(const EvalReport& report);

}  // namespace zeroparse::train
