#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zeroparse/autodiff.hpp"
#include "zeroparse/data.hpp"
#include "zeroparse/rng.hpp"

namespace zeroparse::model {

// Dimensions and multi-task weights. Defaults are the desk-scale setup; the
// weights (alpha_*, gamma, tau, mask_cap) follow the training recipe the
// benchmark is built around.
struct ModelConfig {
  int vocab_size = 0;   // filled in from the vocabulary
  int n_languages = 0;  // language-prediction classes (trained languages)
  int d_model = 64;
  int n_heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int d_ff = 256;
  int max_len = 32;
  double dropout = 0.1;

  double alpha_lp = 0.33;
  double alpha_nl = 0.1;
  double gamma = 40.0;
  double tau = 0.5;
  int mask_cap = 3;

  void validate() const;  // throws std::invalid_argument on nonsense
};

// All learnable state, keyed by stable names. Map order defines the
// checkpoint layout; the initializer draws in a fixed structural order so
// the same seed always gives the same weights.
struct ModelParams {
  ModelConfig config;
  std::map<std::string, ad::Matrix> tensors;

  static ModelParams init(const ModelConfig& config, Rng& rng);
  std::size_t parameter_count() const;
};

// Parameters interned on a tape (recording) or as constants (inference).
struct Bound {
  ad::Tape* tape = nullptr;
  const ModelConfig* config = nullptr;
  std::map<std::string, ad::Tensor> leaves;

  const ad::Tensor& at(const std::string& name) const;
};

Bound bind(ad::Tape* tape, const ModelParams& params);

// Gradients for every parameter, in parameter order. Params the loss never
// touched come back as zeros.
std::map<std::string, ad::Matrix> grad_map(const Bound& bound, const ad::Gradients& grads);

// ---- forward pieces ------------------------------------------------------

// Shared encoder: token + position embeddings into a pre-LN transformer
// stack. Returns the T x d_model encoding. Length must fit max_len.
ad::Tensor encode(const Bound& b, const std::vector<int>& src, bool train, Rng& drop_rng);

// Teacher-forced decoder logits for one target sequence: input is
// BOS + target, output rows score target[0..n] followed by EOS. `which`
// selects the decoder stack: "lf" or "nl".
ad::Tensor decoder_logits(const Bound& b, const std::string& which,
                          const std::vector<int>& target, const ad::Tensor& enc_out,
                          bool train, Rng& drop_rng);

// ---- losses --------------------------------------------------------------
// All losses are means over the predicted tokens (or examples) in the
// batch, so magnitudes are comparable across batch shapes.

struct SeqPair {
  std::vector<int> src;  // encoder input ids
  std::vector<int> tgt;  // decoder target ids (no BOS/EOS; added internally)
};

// Logical-form generation loss (shared encoder -> lf decoder).
ad::Tensor lf_loss(const Bound& b, const std::vector<SeqPair>& batch, bool train,
                   Rng& drop_rng);

// Reconstruction loss (shared encoder over a noised source -> nl decoder).
// Targets are the clean surface or its English translation; the caller
// decides which per example.
ad::Tensor nl_loss(const Bound& b, const std::vector<SeqPair>& batch, bool train,
                   Rng& drop_rng);

// Language-prediction loss over clean encodings: time-mean of the encoding
// through a gradient reversal (factor lambda) into one linear layer.
ad::Tensor lp_loss(const Bound& b, const std::vector<std::vector<int>>& srcs,
                   const std::vector<int>& labels, double lambda, bool train, Rng& drop_rng);

// Reversal strength ramp: 2 / (1 + exp(-gamma p)) - 1 for progress p in
// [0, 1] (inputs are clamped). Zero at p = 0, monotone, saturating at 1.
double lambda_schedule(double progress, double gamma);

// One optimization step's loss, all terms on one tape:
//   lf + alpha_nl * nl + alpha_lp * lp(lambda)
// Empty parts contribute nothing. LP labels pair with lp_srcs.
struct StepBatch {
  std::vector<SeqPair> lf_examples;
  std::vector<SeqPair> nl_examples;
  std::vector<std::vector<int>> lp_srcs;
  std::vector<int> lp_labels;
};

// Unweighted per-objective values, for logging; absent parts stay empty.
struct StepLossValues {
  std::optional<double> lf;
  std::optional<double> nl;
  std::optional<double> lp;
};

ad::Tensor combined_step_loss(const Bound& b, const StepBatch& batch, double lambda,
                              bool train, Rng& drop_rng, StepLossValues* values = nullptr);

// ---- decoding --------------------------------------------------------------

struct BeamHyp {
  std::vector<int> tokens;  // emitted ids, terminating EOS included
  double logp = 0.0;
};

// Scores the next token: log-probabilities over the vocabulary given the
// emitted prefix (without BOS/EOS).
using StepScorer = std::function<std::vector<double>(const std::vector<int>& prefix)>;

// Standard beam search over log-prob sums, no length normalization.
// Deterministic tie-breaking: higher score first, then lexicographically
// smaller token sequence. Hypotheses end on EOS; at max_len EOS is forced
// with its actual score. Returns hypotheses best-first.
std::vector<BeamHyp> beam_search(const StepScorer& scorer, int beam, int max_len, int eos_id);

// Greedy = beam_search with beam 1; exposed for the equivalence check.
BeamHyp greedy_decode(const StepScorer& scorer, int max_len, int eos_id);

// Parses an utterance into logical-form tokens with the lf decoder. This is
// the only inference entry point; predictions always come from the lf head.
std::vector<std::string> decode_lf(const ModelParams& params, const data::Vocabulary& vocab,
                                   const std::vector<std::string>& tokens, int beam);

// ---- checkpointing ---------------------------------------------------------
// Two files: <path>.bin holds the raw little-endian doubles back to back;
// <path>.manifest.json records the config and each tensor's name, shape,
// and byte offset. Loading validates both.

void save_checkpoint(const std::string& path_prefix, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path_prefix);

}  // namespace zeroparse::model
