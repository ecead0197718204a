#include "zeroparse/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "zeroparse/io.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

namespace zeroparse::model {

using ad::Matrix;
using ad::Tensor;

void ModelConfig::validate() const {
  const auto bad = [](const std::string& why) {
    throw std::invalid_argument("model config: " + why);
  };
  if (vocab_size < 5) bad("vocab_size must cover the special tokens");
  if (n_languages < 1) bad("n_languages must be positive");
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
    bad("d_model must be a positive multiple of n_heads");
  if (enc_layers <= 0 || dec_layers <= 0) bad("layer counts must be positive");
  if (d_ff <= 0) bad("d_ff must be positive");
  if (max_len < 4) bad("max_len too small to fit any sequence");
  if (dropout < 0.0 || dropout >= 1.0) bad("dropout must be in [0, 1)");
  if (alpha_lp < 0.0 || alpha_nl < 0.0) bad("loss weights must be non-negative");
  if (gamma < 0.0) bad("gamma must be non-negative");
  if (tau < 0.0 || tau > 1.0) bad("tau must be in [0, 1]");
  if (mask_cap < 0) bad("mask_cap must be non-negative");
}

namespace {

enum class Init { kNormal, kZero, kOne };

struct TensorSpec {
  std::string name;
  Eigen::Index rows, cols;
  Init init;
};

void add_layer_norm(std::vector<TensorSpec>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".g", 1, d, Init::kOne});
  out.push_back({prefix + ".b", 1, d, Init::kZero});
}

void add_attention(std::vector<TensorSpec>& out, const std::string& prefix, int d) {
  for (const char* p : {"q", "k", "v", "o"}) {
    out.push_back({prefix + ".w" + p, d, d, Init::kNormal});
    out.push_back({prefix + ".b" + p, 1, d, Init::kZero});
  }
}

void add_ff(std::vector<TensorSpec>& out, const std::string& prefix, int d, int d_ff) {
  out.push_back({prefix + ".w1", d, d_ff, Init::kNormal});
  out.push_back({prefix + ".b1", 1, d_ff, Init::kZero});
  out.push_back({prefix + ".w2", d_ff, d, Init::kNormal});
  out.push_back({prefix + ".b2", 1, d, Init::kZero});
}

std::vector<TensorSpec> param_spec(const ModelConfig& c) {
  std::vector<TensorSpec> out;
  out.push_back({"embed.tok", c.vocab_size, c.d_model, Init::kNormal});
  out.push_back({"embed.pos", c.max_len, c.d_model, Init::kNormal});
  for (int i = 0; i < c.enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    add_layer_norm(out, p + ".ln1", c.d_model);
    add_attention(out, p + ".attn", c.d_model);
    add_layer_norm(out, p + ".ln2", c.d_model);
    add_ff(out, p + ".ff", c.d_model, c.d_ff);
  }
  add_layer_norm(out, "enc.final", c.d_model);
  for (const char* which : {"lf", "nl"}) {
    const std::string base = std::string("dec.") + which;
    for (int i = 0; i < c.dec_layers; ++i) {
      const std::string p = base + "." + std::to_string(i);
      add_layer_norm(out, p + ".ln1", c.d_model);
      add_attention(out, p + ".self", c.d_model);
      add_layer_norm(out, p + ".ln2", c.d_model);
      add_attention(out, p + ".cross", c.d_model);
      add_layer_norm(out, p + ".ln3", c.d_model);
      add_ff(out, p + ".ff", c.d_model, c.d_ff);
    }
    add_layer_norm(out, base + ".final", c.d_model);
    out.push_back({base + ".out.w", c.d_model, c.vocab_size, Init::kNormal});
    out.push_back({base + ".out.b", 1, c.vocab_size, Init::kZero});
  }
  out.push_back({"lp.w", c.d_model, c.n_languages, Init::kNormal});
  out.push_back({"lp.b", 1, c.n_languages, Init::kZero});
  return out;
}

constexpr double kInitStd = 0.02;

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
  return ids;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  // draws happen in spec order, never map order, so the layout of the map
  // cannot change the weights
  for (const TensorSpec& spec : param_spec(config)) {
    Matrix m(spec.rows, spec.cols);
    switch (spec.init) {
      case Init::kNormal:
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, kInitStd);
        break;
      case Init::kZero:
        m.setZero();
        break;
      case Init::kOne:
        m.setOnes();
        break;
    }
    p.tensors.emplace(spec.name, std::move(m));
  }
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : tensors) n += static_cast<std::size_t>(m.size());
  return n;
}

const Tensor& Bound::at(const std::string& name) const {
  const auto it = leaves.find(name);
  if (it == leaves.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return it->second;
}

Bound bind(ad::Tape* tape, const ModelParams& params) {
  Bound b;
  b.tape = tape;
  b.config = &params.config;
  for (const auto& [name, m] : params.tensors)
    b.leaves.emplace(name, tape ? tape->leaf(m) : ad::constant(m));
  return b;
}

std::map<std::string, Matrix> grad_map(const Bound& bound, const ad::Gradients& grads) {
  std::map<std::string, Matrix> out;
  for (const auto& [name, leaf] : bound.leaves) out.emplace(name, grads.at(leaf));
  return out;
}

namespace {

Tensor layer_norm_at(const Bound& b, const std::string& prefix, const Tensor& x) {
  return ad::layer_norm(x, b.at(prefix + ".g"), b.at(prefix + ".b"));
}

Tensor feed_forward(const Bound& b, const std::string& prefix, const Tensor& x) {
  Tensor h = ad::gelu(ad::add(ad::matmul(x, b.at(prefix + ".w1")), b.at(prefix + ".b1")));
  return ad::add(ad::matmul(h, b.at(prefix + ".w2")), b.at(prefix + ".b2"));
}

Matrix causal_bias(Eigen::Index n) {
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -1e9;
  return m;
}

Tensor attention(const Bound& b, const std::string& prefix, const Tensor& q_in,
                 const Tensor& kv_in, bool causal, bool train, Rng& drop_rng) {
  const ModelConfig& c = *b.config;
  const int dh = c.d_model / c.n_heads;
  Tensor q = ad::add(ad::matmul(q_in, b.at(prefix + ".wq")), b.at(prefix + ".bq"));
  Tensor k = ad::add(ad::matmul(kv_in, b.at(prefix + ".wk")), b.at(prefix + ".bk"));
  Tensor v = ad::add(ad::matmul(kv_in, b.at(prefix + ".wv")), b.at(prefix + ".bv"));
  Tensor bias;
  if (causal) bias = ad::constant(causal_bias(q.rows()));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(c.n_heads));
  for (int h = 0; h < c.n_heads; ++h) {
    Tensor qh = ad::slice(q, 1, h * dh, dh);
    Tensor kh = ad::slice(k, 1, h * dh, dh);
    Tensor vh = ad::slice(v, 1, h * dh, dh);
    Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(dh));
    if (causal) scores = ad::add(scores, bias);
    Tensor weights = ad::dropout(ad::softmax_rows(scores), c.dropout, train, drop_rng);
    heads.push_back(ad::matmul(weights, vh));
  }
  Tensor merged = ad::concat(heads, 1);
  return ad::add(ad::matmul(merged, b.at(prefix + ".wo")), b.at(prefix + ".bo"));
}

Tensor embed_sequence(const Bound& b, const std::vector<int>& ids, bool train, Rng& drop_rng) {
  const ModelConfig& c = *b.config;
  if (ids.empty()) throw std::invalid_argument("cannot embed an empty sequence");
  if (static_cast<int>(ids.size()) > c.max_len) {
    std::ostringstream os;
    os << "sequence length " << ids.size() << " exceeds max_len " << c.max_len;
    throw std::invalid_argument(os.str());
  }
  Tensor tok = ad::embedding_gather(b.at("embed.tok"), ids);
  Tensor pos = ad::embedding_gather(b.at("embed.pos"), iota_ids(ids.size()));
  return ad::dropout(ad::add(tok, pos), c.dropout, train, drop_rng);
}

}  // namespace

Tensor encode(const Bound& b, const std::vector<int>& src, bool train, Rng& drop_rng) {
  const ModelConfig& c = *b.config;
  Tensor x = embed_sequence(b, src, train, drop_rng);
  for (int i = 0; i < c.enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    Tensor n1 = layer_norm_at(b, p + ".ln1", x);
    Tensor h = attention(b, p + ".attn", n1, n1, false, train, drop_rng);
    x = ad::add(x, ad::dropout(h, c.dropout, train, drop_rng));
    Tensor f = feed_forward(b, p + ".ff", layer_norm_at(b, p + ".ln2", x));
    x = ad::add(x, ad::dropout(f, c.dropout, train, drop_rng));
  }
  return layer_norm_at(b, "enc.final", x);
}

Tensor decoder_logits(const Bound& b, const std::string& which, const std::vector<int>& target,
                      const ad::Tensor& enc_out, bool train, Rng& drop_rng) {
  if (which != "lf" && which != "nl")
    throw std::invalid_argument("decoder_logits: unknown decoder '" + which + "'");
  const ModelConfig& c = *b.config;
  std::vector<int> input;
  input.reserve(target.size() + 1);
  input.push_back(data::Vocabulary::kBos);
  input.insert(input.end(), target.begin(), target.end());

  const std::string base = "dec." + which;
  Tensor x = embed_sequence(b, input, train, drop_rng);
  for (int i = 0; i < c.dec_layers; ++i) {
    const std::string p = base + "." + std::to_string(i);
    Tensor n1 = layer_norm_at(b, p + ".ln1", x);
    Tensor h = attention(b, p + ".self", n1, n1, true, train, drop_rng);
    x = ad::add(x, ad::dropout(h, c.dropout, train, drop_rng));
    Tensor cr = attention(b, p + ".cross", layer_norm_at(b, p + ".ln2", x), enc_out, false,
                          train, drop_rng);
    x = ad::add(x, ad::dropout(cr, c.dropout, train, drop_rng));
    Tensor f = feed_forward(b, p + ".ff", layer_norm_at(b, p + ".ln3", x));
    x = ad::add(x, ad::dropout(f, c.dropout, train, drop_rng));
  }
  x = layer_norm_at(b, base + ".final", x);
  return ad::add(ad::matmul(x, b.at(base + ".out.w")), b.at(base + ".out.b"));
}

namespace {

// Pools every timestep of the batch into one cross-entropy so the loss is
// the mean over predicted tokens.
Tensor sequence_loss(const Bound& b, const std::string& which, const std::vector<SeqPair>& batch,
                     bool train, Rng& drop_rng) {
  if (batch.empty()) throw std::invalid_argument("sequence loss over an empty batch");
  std::vector<Tensor> logit_blocks;
  std::vector<int> targets;
  for (const SeqPair& ex : batch) {
    Tensor enc = encode(b, ex.src, train, drop_rng);
    logit_blocks.push_back(decoder_logits(b, which, ex.tgt, enc, train, drop_rng));
    targets.insert(targets.end(), ex.tgt.begin(), ex.tgt.end());
    targets.push_back(data::Vocabulary::kEos);
  }
  Tensor logits = logit_blocks.size() == 1 ? logit_blocks[0] : ad::concat(logit_blocks, 0);
  return ad::masked_cross_entropy(logits, targets,
                                  std::vector<double>(targets.size(), 1.0), true);
}

}  // namespace

Tensor lf_loss(const Bound& b, const std::vector<SeqPair>& batch, bool train, Rng& drop_rng) {
  return sequence_loss(b, "lf", batch, train, drop_rng);
}

Tensor nl_loss(const Bound& b, const std::vector<SeqPair>& batch, bool train, Rng& drop_rng) {
  return sequence_loss(b, "nl", batch, train, drop_rng);
}

Tensor lp_loss(const Bound& b, const std::vector<std::vector<int>>& srcs,
               const std::vector<int>& labels, double lambda, bool train, Rng& drop_rng) {
  if (srcs.empty() || srcs.size() != labels.size())
    throw std::invalid_argument("lp_loss: need one label per source");
  std::vector<Tensor> means;
  means.reserve(srcs.size());
  for (const auto& src : srcs) means.push_back(ad::mean_axis(encode(b, src, train, drop_rng), 0));
  Tensor pooled = means.size() == 1 ? means[0] : ad::concat(means, 0);
  Tensor reversed = ad::grad_reverse(pooled, lambda);
  Tensor logits = ad::add(ad::matmul(reversed, b.at("lp.w")), b.at("lp.b"));
  return ad::masked_cross_entropy(logits, labels, std::vector<double>(labels.size(), 1.0), true);
}

double lambda_schedule(double progress, double gamma) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return 2.0 / (1.0 + std::exp(-gamma * p)) - 1.0;
}

Tensor combined_step_loss(const Bound& b, const StepBatch& batch, double lambda, bool train,
                          Rng& drop_rng, StepLossValues* values) {
  const ModelConfig& c = *b.config;
  std::vector<Tensor> terms;
  if (!batch.lf_examples.empty()) {
    Tensor t = lf_loss(b, batch.lf_examples, train, drop_rng);
    if (values) values->lf = t.item();
    terms.push_back(t);
  }
  if (!batch.nl_examples.empty()) {
    Tensor t = nl_loss(b, batch.nl_examples, train, drop_rng);
    if (values) values->nl = t.item();
    terms.push_back(ad::scale(t, c.alpha_nl));
  }
  if (!batch.lp_srcs.empty()) {
    Tensor t = lp_loss(b, batch.lp_srcs, batch.lp_labels, lambda, train, drop_rng);
    if (values) values->lp = t.item();
    terms.push_back(ad::scale(t, c.alpha_lp));
  }
  if (terms.empty()) throw std::invalid_argument("combined_step_loss: empty step batch");
  Tensor total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return total;
}

std::vector<BeamHyp> beam_search(const StepScorer& scorer, int beam, int max_len, int eos_id) {
  if (beam <= 0) throw std::invalid_argument("beam_search: beam must be positive");
  if (max_len <= 0) throw std::invalid_argument("beam_search: max_len must be positive");

  struct Hyp {
    std::vector<int> tokens;  // no EOS while alive
    double logp = 0.0;
    bool done = false;
  };
  const auto better = [](const Hyp& a, const Hyp& b) {
    if (a.logp != b.logp) return a.logp > b.logp;
    return a.tokens < b.tokens;  // deterministic tie-break
  };

  std::vector<Hyp> beams = {Hyp{}};
  for (int step = 0; step < max_len; ++step) {
    std::vector<Hyp> candidates;
    bool any_alive = false;
    for (const Hyp& h : beams) {
      if (h.done) {
        candidates.push_back(h);
        continue;
      }
      any_alive = true;
      const std::vector<double> scores = scorer(h.tokens);
      for (int v = 0; v < static_cast<int>(scores.size()); ++v) {
        Hyp next = h;
        next.logp += scores[static_cast<std::size_t>(v)];
        if (v == eos_id) {
          next.done = true;
        } else {
          next.tokens.push_back(v);
        }
        candidates.push_back(std::move(next));
      }
    }
    if (!any_alive) break;
    std::stable_sort(candidates.begin(), candidates.end(), better);
    if (static_cast<int>(candidates.size()) > beam)
      candidates.resize(static_cast<std::size_t>(beam));
    beams = std::move(candidates);
  }
  // sequences still open at the length limit close with their real EOS score
  for (Hyp& h : beams) {
    if (!h.done) {
      h.logp += scorer(h.tokens)[static_cast<std::size_t>(eos_id)];
      h.done = true;
    }
  }
  std::stable_sort(beams.begin(), beams.end(), better);

  std::vector<BeamHyp> out;
  out.reserve(beams.size());
  for (Hyp& h : beams) {
    h.tokens.push_back(eos_id);
    out.push_back(BeamHyp{std::move(h.tokens), h.logp});
  }
  return out;
}

BeamHyp greedy_decode(const StepScorer& scorer, int max_len, int eos_id) {
  return beam_search(scorer, 1, max_len, eos_id)[0];
}

std::vector<std::string> decode_lf(const ModelParams& params, const data::Vocabulary& vocab,
                                   const std::vector<std::string>& tokens, int beam) {
  const Bound b = bind(nullptr, params);
  Rng no_drop(0);  // inference never draws from it
  const Tensor enc_out = encode(b, vocab.encode(tokens), false, no_drop);

  const StepScorer scorer = [&](const std::vector<int>& prefix) {
    Tensor logits = decoder_logits(b, "lf", prefix, enc_out, false, no_drop);
    Tensor lp = ad::log_softmax_rows(ad::slice(logits, 0, logits.rows() - 1, 1));
    std::vector<double> out(static_cast<std::size_t>(lp.cols()));
    for (Eigen::Index j = 0; j < lp.cols(); ++j) out[static_cast<std::size_t>(j)] = lp.val()(0, j);
    return out;
  };

  // leave room for BOS and the forced EOS inside the decoder window
  const int max_out = params.config.max_len - 2;
  const std::vector<BeamHyp> hyps = beam_search(scorer, beam, max_out, data::Vocabulary::kEos);
  std::vector<int> ids = hyps[0].tokens;
  if (!ids.empty() && ids.back() == data::Vocabulary::kEos) ids.pop_back();
  return vocab.decode(ids);
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
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
  j["alpha_lp"] = c.alpha_lp;
  j["alpha_nl"] = c.alpha_nl;
  j["gamma"] = c.gamma;
  j["tau"] = c.tau;
  j["mask_cap"] = c.mask_cap;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.n_languages = j.at("n_languages").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.alpha_lp = j.at("alpha_lp").get<double>();
  c.alpha_nl = j.at("alpha_nl").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.tau = j.at("tau").get<double>();
  c.mask_cap = j.at("mask_cap").get<int>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path_prefix, const ModelParams& params) {
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, m] : params.tensors) {
    nlohmann::json t;
    t["name"] = name;
    t["rows"] = m.rows();
    t["cols"] = m.cols();
    t["byte_offset"] = blob.size();
    tensors.push_back(std::move(t));
    const auto bytes = static_cast<std::size_t>(m.size()) * sizeof(double);
    const auto at = blob.size();
    blob.resize(blob.size() + bytes);
    std::memcpy(blob.data() + at, m.data(), bytes);  // row-major doubles
  }
  nlohmann::json manifest;
  manifest["config"] = config_to_json(params.config);
  manifest["tensors"] = std::move(tensors);
  io::write_file(path_prefix + ".bin", blob);
  io::write_file(path_prefix + ".manifest.json", manifest.dump(2));
}

ModelParams load_checkpoint(const std::string& path_prefix) {
  const std::string blob = io::read_file(path_prefix + ".bin");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(path_prefix + ".manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint manifest is malformed: ") + e.what());
  }
  ModelParams p;
  p.config = config_from_json(manifest.at("config"));
  p.config.validate();
  std::size_t expected_end = 0;
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto offset = t.at("byte_offset").get<std::size_t>();
    const auto bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (offset + bytes > blob.size())
      throw std::runtime_error("checkpoint tensor '" + name + "' runs past the blob");
    Matrix m(rows, cols);
    std::memcpy(m.data(), blob.data() + offset, bytes);
    if (!p.tensors.emplace(name, std::move(m)).second)
      throw std::runtime_error("checkpoint repeats tensor '" + name + "'");
    expected_end = std::max(expected_end, offset + bytes);
  }
  if (expected_end != blob.size())
    throw std::runtime_error("checkpoint blob size does not match its manifest");

  // the tensor set must be exactly what the config dictates
  const auto spec = param_spec(p.config);
  if (spec.size() != p.tensors.size())
    throw std::runtime_error("checkpoint tensor count does not match its config");
  for (const TensorSpec& s : spec) {
    const auto it = p.tensors.find(s.name);
    if (it == p.tensors.end())
      throw std::runtime_error("checkpoint is missing tensor '" + s.name + "'");
    if (it->second.rows() != s.rows || it->second.cols() != s.cols)
      throw std::runtime_error("checkpoint tensor '" + s.name + "' has the wrong shape");
  }
  return p;
}

}  // namespace zeroparse::model
