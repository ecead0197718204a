#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "zeroparse/data.hpp"
#include "zeroparse/io.hpp"
#include "zeroparse/model.hpp"
#include "zeroparse/train.hpp"

using namespace zeroparse;

namespace {

double max_abs_diff(const ad::Matrix& a, const ad::Matrix& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

bool params_equal(const model::ModelParams& a, const model::ModelParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (const auto& [name, m] : a.tensors) {
    const auto it = b.tensors.find(name);
    if (it == b.tensors.end()) return false;
    if (max_abs_diff(m, it->second) != 0.0) return false;
  }
  return true;
}

data::GrammarSpec micro_grammar() {
  data::GrammarSpec g = data::default_grammar();
  g.train_size = 40;
  g.val_size = 12;
  g.test_size = 15;
  g.nl_extra_size = 12;
  return g;
}

model::ModelConfig micro_model() {
  model::ModelConfig mc;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.d_ff = 32;
  mc.max_len = 32;
  mc.dropout = 0.1;
  return mc;
}

train::TrainConfig micro_train(const std::string& ablation, std::uint64_t seed) {
  train::TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 3;
  tc.patience = 3;
  tc.base_lr = 3e-4;
  tc.warmup_steps = 20;
  tc.beam = 2;
  tc.seed = seed;
  tc.ablation = ablation;
  return tc;
}

std::string metrics_text(const train::ExperimentRecord& rec) {
  std::string out;
  const nlohmann::json j = train::record_to_json(rec);
  for (const auto& e : j.at("epochs")) out += e.dump() + "\n";
  for (const auto& p : j.at("lp_trace")) out += p.dump() + "\n";
  return out;
}

// One English utterance-LF pair serving as train, val, and test at once.
data::GeneratedData single_example_corpus() {
  data::GeneratedData d;
  exec::Table flights;
  flights.columns = {"id", "from", "to"};
  flights.rows = {
      {0L, std::string("rome"), std::string("paris")},
      {1L, std::string("rome"), std::string("oslo")},
      {2L, std::string("lima"), std::string("paris")},
  };
  d.kb.tables["flights"] = flights;

  data::ParallelExample ex;
  ex.lang = "en";
  ex.tokens = {"flights", "to", "paris"};
  ex.english_tokens = ex.tokens;
  ex.lf = {"filter", "(", "query", "(", "flights", ")", ",", "to", "=", "paris", ")"};

  ex.split = "train";
  d.examples.push_back(ex);
  ex.split = "val";
  d.examples.push_back(ex);
  ex.split = "test";
  d.examples.push_back(ex);

  data::Lexicon en;
  en.trained = true;
  en.word_order = "identity";
  d.lexicons["en"] = en;

  std::vector<std::string> universe = ex.tokens;
  universe.insert(universe.end(), ex.lf.begin(), ex.lf.end());
  d.vocab = data::Vocabulary::build(universe);
  return d;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("zp_train_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("noam schedule ramps to base_lr and decays as inverse square root") {
  const double base = 1e-4;
  const int warmup = 400;
  CHECK(train::noam_lr(warmup, 64, warmup, base) == doctest::Approx(base).epsilon(1e-12));
  CHECK(train::noam_lr(warmup / 2, 64, warmup, base) ==
        doctest::Approx(base / 2).epsilon(1e-12));
  CHECK(train::noam_lr(2 * warmup, 64, warmup, base) / train::noam_lr(warmup, 64, warmup, base) ==
        doctest::Approx(0.707106781186548).epsilon(1e-12));

  // the peak sits exactly at the warmup boundary
  const double peak = train::noam_lr(warmup, 64, warmup, base);
  for (long s : {1L, 10L, 399L, 401L, 1000L, 100000L}) {
    CHECK(train::noam_lr(s, 64, warmup, base) <= peak);
  }
  // d_model cancels under the normalization
  CHECK(train::noam_lr(123, 16, warmup, base) == train::noam_lr(123, 512, warmup, base));

  CHECK_THROWS_AS(train::noam_lr(0, 64, warmup, base), std::invalid_argument);
  CHECK_THROWS_AS(train::noam_lr(5, 64, 0, base), std::invalid_argument);
}

TEST_CASE("adam applies decoupled decay and bias-corrected moments") {
  model::ModelConfig mc;
  mc.vocab_size = 6;
  mc.n_languages = 2;
  mc.d_model = 4;
  mc.n_heads = 2;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.d_ff = 8;
  mc.max_len = 4;
  Rng r(1);
  model::ModelParams params = model::ModelParams::init(mc, r);
  const model::ModelParams before = params;

  std::map<std::string, ad::Matrix> zero_grads;
  for (const auto& [name, m] : params.tensors)
    zero_grads.emplace(name, ad::Matrix::Zero(m.rows(), m.cols()));

  train::AdamState st = train::AdamState::init(params);
  train::adam_step(params, zero_grads, st, 0.01, 0.0);
  CHECK(params_equal(params, before));  // zero gradient, zero decay: frozen
  CHECK(st.t == 1);

  train::adam_step(params, zero_grads, st, 0.01, 0.1);
  for (const auto& [name, m] : params.tensors) {
    CHECK(max_abs_diff(m, before.tensors.at(name) * 0.999) <= 1e-18);
  }

  // single scalar step with g = 1: update is m_hat / (sqrt(v_hat) + eps)
  model::ModelParams scalar;
  scalar.config = mc;
  scalar.tensors.emplace("x", ad::Matrix::Constant(1, 1, 2.0));
  train::AdamState sst = train::AdamState::init(scalar);
  std::map<std::string, ad::Matrix> g1;
  g1.emplace("x", ad::Matrix::Constant(1, 1, 1.0));
  train::adam_step(scalar, g1, sst, 0.5, 0.0);
  CHECK(scalar.tensors.at("x")(0, 0) ==
        doctest::Approx(2.0 - 0.5 * 0.999999990000001).epsilon(1e-15));

  std::map<std::string, ad::Matrix> missing = zero_grads;
  missing.erase("lp.w");
  CHECK_THROWS_AS(train::adam_step(params, missing, st, 0.01, 0.0), std::invalid_argument);

  std::map<std::string, ad::Matrix> misshapen = zero_grads;
  misshapen.at("lp.w") = ad::Matrix::Zero(1, 1);
  CHECK_THROWS_AS(train::adam_step(params, misshapen, st, 0.01, 0.0), std::invalid_argument);

  std::map<std::string, ad::Matrix> infected = zero_grads;
  infected.at("lp.b")(0, 0) = std::nan("");
  CHECK_THROWS_WITH_AS(train::adam_step(params, infected, st, 0.01, 0.0),
                       doctest::Contains("lp.b"), std::runtime_error);
}

TEST_CASE("step batches follow the ablation switches") {
  const data::Vocabulary vocab =
      data::Vocabulary::build({"a", "b", "c", "x", "y", "z", "LF1", "LF2"});
  const std::map<std::string, int> labels = {{"en", 0}, {"l1", 1}};

  data::ParallelExample en;
  en.lang = "en";
  en.split = "train";
  en.tokens = {"a", "b", "c"};
  en.english_tokens = en.tokens;
  en.lf = {"LF1", "LF2"};

  data::ParallelExample l1;
  l1.lang = "l1";
  l1.split = "nl";
  l1.tokens = {"x", "y", "z"};
  l1.english_tokens = {"a", "b", "c"};

  data::Batch lf_batch{"en", true, {&en}};
  data::Batch nl_batch{"l1", false, {&l1}};

  Rng noise(1), tau(2);
  const auto a = train::make_step_batch(lf_batch, vocab, labels, "a", 0.5, 2, noise, tau);
  CHECK(a.lf_examples.size() == 1);
  CHECK(a.nl_examples.empty());
  CHECK(a.lp_srcs.empty());
  CHECK(a.lf_examples[0].src == vocab.encode(en.tokens));
  CHECK(a.lf_examples[0].tgt == vocab.encode(en.lf));

  const auto b = train::make_step_batch(lf_batch, vocab, labels, "b", 0.5, 2, noise, tau);
  CHECK(b.lf_examples.size() == 1);
  CHECK(b.nl_examples.size() == 1);
  CHECK(b.lp_srcs.empty());

  const auto c = train::make_step_batch(lf_batch, vocab, labels, "c", 0.5, 2, noise, tau);
  CHECK(c.lf_examples.size() == 1);
  CHECK(c.nl_examples.empty());
  CHECK(c.lp_srcs.size() == 1);
  CHECK(c.lp_labels == std::vector<int>{0});

  const auto d = train::make_step_batch(nl_batch, vocab, labels, "d", 0.5, 2, noise, tau);
  CHECK(d.lf_examples.empty());
  CHECK(d.nl_examples.size() == 1);
  CHECK(d.lp_srcs.size() == 1);
  CHECK(d.lp_labels == std::vector<int>{1});
  CHECK(d.lp_srcs[0] == vocab.encode(l1.tokens));  // clean input feeds the probe

  data::Batch bad{"l1", true, {&l1}};
  CHECK_THROWS_AS(train::make_step_batch(bad, vocab, labels, "d", 0.5, 2, noise, tau),
                  std::logic_error);

  const std::map<std::string, int> no_l1 = {{"en", 0}};
  CHECK_THROWS_AS(train::make_step_batch(nl_batch, vocab, no_l1, "d", 0.5, 2, noise, tau),
                  std::invalid_argument);
}

TEST_CASE("the tau coin picks English targets at the configured rate") {
  const data::Vocabulary vocab = data::Vocabulary::build({"a", "b", "c", "x", "y", "z"});
  const std::map<std::string, int> labels = {{"l1", 1}};

  data::ParallelExample l1;
  l1.lang = "l1";
  l1.split = "nl";
  l1.tokens = {"x", "y", "z"};
  l1.english_tokens = {"a", "b", "c"};
  const data::Batch batch{"l1", false, {&l1}};

  const std::vector<int> self_ids = vocab.encode(l1.tokens);
  const std::vector<int> english_ids = vocab.encode(l1.english_tokens);

  const double tau = 0.3;
  const int n = 10000;
  Rng noise(11), coin(12);
  int english = 0;
  int masked_total = 0;
  for (int i = 0; i < n; ++i) {
    const auto sb = train::make_step_batch(batch, vocab, labels, "d", tau, 2, noise, coin);
    REQUIRE(sb.nl_examples.size() == 1);
    const auto& pair = sb.nl_examples[0];
    if (pair.tgt == english_ids) {
      ++english;
    } else {
      CHECK(pair.tgt == self_ids);
    }
    REQUIRE(pair.src.size() == 3);
    int masked = 0;
    for (int id : pair.src) {
      if (id == data::Vocabulary::kMask) ++masked;
    }
    CHECK(masked <= 2);
    masked_total += masked;
  }
  // Binomial(10000, 0.3): mean 3000, sigma ~45.8
  CHECK(std::abs(english - 3000) <= 3 * std::sqrt(n * 0.3 * 0.7));
  // u ~ U{0,1,2} over 3 positions: mean masked per draw = 1
  CHECK(std::abs(masked_total - n) <= 3 * std::sqrt(n * 2.0 / 3.0));

  // tau 0 never translates; tau 1 always does
  Rng n0(1), c0(2);
  for (int i = 0; i < 50; ++i) {
    CHECK(train::make_step_batch(batch, vocab, labels, "d", 0.0, 0, n0, c0)
              .nl_examples[0]
              .tgt == self_ids);
    CHECK(train::make_step_batch(batch, vocab, labels, "d", 1.0, 0, n0, c0)
              .nl_examples[0]
              .tgt == english_ids);
  }
}

TEST_CASE("lp batch accuracy matches a by-hand head evaluation") {
  model::ModelConfig mc;
  mc.vocab_size = 12;
  mc.n_languages = 3;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.d_ff = 16;
  mc.max_len = 8;
  mc.dropout = 0.0;
  Rng r(4);
  const model::ModelParams params = model::ModelParams::init(mc, r);

  const std::vector<std::vector<int>> srcs = {{4, 5, 6}, {7, 8}, {9, 10, 11}};
  std::vector<int> expected;
  const model::Bound b = model::bind(nullptr, params);
  Rng no_drop(0);
  for (const auto& src : srcs) {
    const ad::Matrix enc = model::encode(b, src, false, no_drop).val();
    const ad::Matrix logits =
        enc.colwise().mean() * params.tensors.at("lp.w") + params.tensors.at("lp.b");
    Eigen::Index best = 0;
    logits.row(0).maxCoeff(&best);
    expected.push_back(static_cast<int>(best));
  }

  CHECK(train::lp_batch_accuracy(params, srcs, expected) == 1.0);
  std::vector<int> off = expected;
  off[0] = (off[0] + 1) % 3;
  CHECK(train::lp_batch_accuracy(params, srcs, off) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(train::lp_batch_accuracy(params, {}, {}), std::invalid_argument);
}

TEST_CASE("training is deterministic and ignores test-split contents") {
  const data::GeneratedData corpus = data::generate_corpus(micro_grammar(), 404);
  const model::ModelConfig mc = micro_model();
  const train::TrainConfig tc = micro_train("d", 7);

  train::TrainResult r1 = train::run_training(mc, tc, corpus);
  train::TrainResult r2 = train::run_training(mc, tc, corpus);
  CHECK(metrics_text(r1.record) == metrics_text(r2.record));
  CHECK(params_equal(r1.best, r2.best));
  CHECK_FALSE(r1.record.diverged);

  // scrambling what only evaluation reads cannot move training
  data::GeneratedData mangled = corpus;
  for (auto& ex : mangled.examples) {
    if (ex.split == "test" && ex.lang != "en") {
      ex.tokens = {"paris", "paris", "paris"};
      ex.lf = {"count", "(", "query", "(", "flights", ")", ")"};
    }
  }
  train::TrainResult r3 = train::run_training(mc, tc, mangled);
  CHECK(metrics_text(r1.record) == metrics_text(r3.record));
  CHECK(params_equal(r1.best, r3.best));

  train::TrainConfig other = tc;
  other.seed = 8;
  train::TrainResult r4 = train::run_training(mc, other, corpus);
  CHECK_FALSE(params_equal(r1.best, r4.best));

  // record bookkeeping invariants
  const auto& rec = r1.record;
  REQUIRE(!rec.epochs.empty());
  CHECK(rec.best_epoch >= 1);
  CHECK(rec.total_planned_steps > 0);
  CHECK(rec.resolved_warmup == 20);
  long prev_steps = 0;
  for (const auto& em : rec.epochs) {
    CHECK(em.steps_done > prev_steps);
    prev_steps = em.steps_done;
    CHECK(em.lambda_end >= 0.0);
    CHECK(em.lambda_end <= 1.0);  // the ramp saturates at exactly 1.0 in doubles
    CHECK(em.val_acc >= 0.0);
    CHECK(em.val_acc <= 1.0);
    REQUIRE(em.lf_loss.has_value());
    CHECK(std::isfinite(*em.lf_loss));
    REQUIRE(em.nl_loss.has_value());  // full model logs every objective
    REQUIRE(em.lp_loss.has_value());
    REQUIRE(em.lp_train_acc.has_value());
  }
  CHECK(rec.epochs.front().improved);    // the first epoch always improves
  CHECK(!rec.lp_trace.empty());

  // the supervised-only ablation never touches the auxiliary objectives
  train::TrainConfig ta = micro_train("a", 7);
  ta.max_epochs = 1;
  ta.patience = 1;
  const train::TrainResult ra = train::run_training(mc, ta, corpus);
  for (const auto& em : ra.record.epochs) {
    CHECK_FALSE(em.nl_loss.has_value());
    CHECK_FALSE(em.lp_loss.has_value());
  }
  CHECK(ra.record.lp_trace.empty());
  // fewer planned steps: reconstruction pools are excluded entirely
  CHECK(ra.record.total_planned_steps * tc.max_epochs <
        rec.total_planned_steps * ta.max_epochs);
}

TEST_CASE("early stopping leaves exactly patience trailing non-improvements") {
  const data::GeneratedData corpus = data::generate_corpus(micro_grammar(), 405);
  train::TrainConfig tc = micro_train("a", 3);
  tc.max_epochs = 12;
  tc.patience = 2;
  const train::TrainResult r = train::run_training(micro_model(), tc, corpus);
  const auto& epochs = r.record.epochs;
  REQUIRE(!epochs.empty());

  int trailing = 0;
  for (auto it = epochs.rbegin(); it != epochs.rend() && !it->improved; ++it) ++trailing;
  CHECK(trailing <= tc.patience);
  if (static_cast<int>(epochs.size()) < tc.max_epochs && !r.record.diverged) {
    CHECK(trailing == tc.patience);
  }
  // improvement means a new best checkpoint: higher accuracy, or equal
  // accuracy at lower loss, so best_epoch is the last improved epoch and
  // carries the peak accuracy
  CHECK(r.record.best_epoch == epochs[epochs.size() - 1 - trailing].epoch);
  double peak = 0.0;
  for (const auto& em : epochs) peak = std::max(peak, em.val_acc);
  for (const auto& em : epochs) {
    if (em.epoch == r.record.best_epoch) CHECK(em.val_acc == peak);
  }
}

TEST_CASE("a single example is memorized to perfect validation accuracy") {
  const data::GeneratedData corpus = single_example_corpus();
  model::ModelConfig mc = micro_model();
  mc.dropout = 0.0;
  train::TrainConfig tc;
  tc.ablation = "a";
  tc.batch_size = 1;
  tc.max_epochs = 200;
  tc.patience = 200;
  tc.base_lr = 1e-3;
  tc.warmup_steps = 30;
  tc.val_beam = 1;
  tc.seed = 2;

  const train::TrainResult r = train::run_training(mc, tc, corpus);
  CHECK_FALSE(r.record.diverged);
  CHECK(r.record.best_val_acc == 1.0);

  long first_perfect = -1;
  for (const auto& em : r.record.epochs) {
    if (em.val_acc == 1.0) {
      first_perfect = em.steps_done;
      break;
    }
  }
  REQUIRE(first_perfect > 0);
  CHECK(first_perfect <= 2000);  // well inside the promised budget

  // the memorizing checkpoint really decodes the right logical form
  const auto pred = model::decode_lf(r.best, corpus.vocab, {"flights", "to", "paris"}, 1);
  CHECK(pred == corpus.examples[0].lf);
}

TEST_CASE("dropping the auxiliary pools with zero weights reduces to the plain parser") {
  data::GrammarSpec g = data::default_grammar();
  g.languages = {g.languages[0]};  // English only: the auxiliary pools vanish
  g.train_size = 10;
  g.val_size = 4;
  g.test_size = 4;
  g.nl_extra_size = 0;
  const data::GeneratedData corpus = data::generate_corpus(g, 99);

  model::ModelConfig mc = micro_model();
  // dropout draws are a single stream; the zero-weighted graph parts would
  // shift it, so the bitwise reduction claim is made noise-free
  mc.dropout = 0.0;
  train::TrainConfig plain = micro_train("a", 5);
  plain.max_epochs = 2;
  plain.patience = 2;
  train::TrainConfig zeroed = micro_train("d", 5);
  zeroed.max_epochs = 2;
  zeroed.patience = 2;
  zeroed.alpha_lp = 0.0;
  zeroed.alpha_nl = 0.0;

  const train::TrainResult ra = train::run_training(mc, plain, corpus);
  const train::TrainResult rd = train::run_training(mc, zeroed, corpus);
  CHECK(params_equal(ra.best, rd.best));
  REQUIRE(ra.record.epochs.size() == rd.record.epochs.size());
  for (std::size_t i = 0; i < ra.record.epochs.size(); ++i) {
    CHECK(ra.record.epochs[i].val_acc == rd.record.epochs[i].val_acc);
    CHECK(ra.record.epochs[i].val_loss == rd.record.epochs[i].val_loss);
  }
}

TEST_CASE("divergence is reported in the record instead of thrown") {
  const data::GeneratedData corpus = single_example_corpus();
  model::ModelConfig mc = micro_model();
  train::TrainConfig tc;
  tc.ablation = "a";
  tc.batch_size = 1;
  tc.max_epochs = 5;
  tc.patience = 5;
  tc.base_lr = 1e300;  // guaranteed overflow on the next forward pass
  tc.warmup_steps = 1;
  tc.seed = 3;

  const train::TrainResult r = train::run_training(mc, tc, corpus);
  CHECK(r.record.diverged);
  CHECK_FALSE(r.record.divergence_note.empty());
  CHECK(r.record.epochs.size() < 5);  // stopped at the blow-up, record intact
}

TEST_CASE("prediction scoring matches the standalone denotation metric") {
  const data::GeneratedData corpus = data::generate_corpus(micro_grammar(), 406);
  std::vector<const data::ParallelExample*> test_en;
  for (const auto& ex : corpus.examples)
    if (ex.split == "test" && ex.lang == "en") test_en.push_back(&ex);
  REQUIRE(test_en.size() >= 4);

  std::vector<std::vector<std::string>> gold_preds;
  for (const auto* ex : test_en) gold_preds.push_back(ex->lf);
  const train::EvalReport perfect = train::evaluate_predictions(test_en, gold_preds, corpus.kb);
  CHECK(perfect.by_language.at("en").accuracy() == 1.0);
  CHECK(perfect.by_language.at("en").error_counts.at("correct") ==
        static_cast<int>(test_en.size()));

  // break half the predictions and cross-check the headline number
  std::vector<std::vector<std::string>> mixed = gold_preds;
  std::vector<std::vector<std::string>> gold_lfs;
  for (const auto* ex : test_en) gold_lfs.push_back(ex->lf);
  for (std::size_t i = 0; i < mixed.size(); i += 2) mixed[i] = {"query", "("};
  const train::EvalReport rep = train::evaluate_predictions(test_en, mixed, corpus.kb);
  CHECK(rep.by_language.at("en").accuracy() ==
        doctest::Approx(exec::denotation_accuracy(mixed, gold_lfs, corpus.kb)));
  CHECK(rep.by_language.at("en").error_counts.at("ill_formed") ==
        static_cast<int>((mixed.size() + 1) / 2));

  std::vector<std::vector<std::string>> short_preds(test_en.size() - 1);
  CHECK_THROWS_AS(train::evaluate_predictions(test_en, short_preds, corpus.kb),
                  std::invalid_argument);
}

TEST_CASE("full evaluation covers every language and checks the vocabulary") {
  const data::GeneratedData corpus = data::generate_corpus(micro_grammar(), 407);
  model::ModelConfig mc = micro_model();
  train::TrainConfig tc = micro_train("a", 11);
  tc.max_epochs = 1;
  tc.patience = 1;
  const train::TrainResult r = train::run_training(mc, tc, corpus);

  const train::EvalReport rep = train::evaluate(r.best, corpus, "test", 1);
  REQUIRE(rep.by_language.size() == 5);
  for (const char* lang : {"en", "l1", "l2", "l3", "l4"}) {
    REQUIRE(rep.by_language.count(lang) == 1);
    const auto& le = rep.by_language.at(lang);
    CHECK(le.n == 15);
    CHECK(le.accuracy() >= 0.0);
    CHECK(le.accuracy() <= 1.0);
    int total = 0;
    for (const auto& [cat, n] : le.error_counts) total += n;
    CHECK(total == le.n);
  }
  CHECK(rep.predictions.size() == 75);

  model::ModelParams wrong = r.best;
  wrong.config.vocab_size += 1;
  CHECK_THROWS_AS(train::evaluate(wrong, corpus, "test", 1), std::invalid_argument);
  CHECK_THROWS_AS(train::evaluate(r.best, corpus, "nope", 1), std::invalid_argument);
}

TEST_CASE("run directories carry reproducible artifacts") {
  TempDir tmp;
  const data::GeneratedData corpus = single_example_corpus();
  model::ModelConfig mc = micro_model();
  mc.dropout = 0.0;
  train::TrainConfig tc;
  tc.ablation = "a";
  tc.batch_size = 1;
  tc.max_epochs = 4;
  tc.patience = 4;
  tc.warmup_steps = 10;
  tc.seed = 6;

  const train::TrainResult r = train::run_training(mc, tc, corpus);
  const std::string dir = train::save_run(tmp.path.string(), r);
  CHECK(dir.find("_s6") != std::string::npos);

  const std::string metrics = io::read_file(dir + "/metrics.jsonl");
  int lines = 0;
  for (char c : metrics)
    if (c == '\n') ++lines;
  CHECK(lines == static_cast<int>(r.record.epochs.size()));

  const nlohmann::json rec = nlohmann::json::parse(io::read_file(dir + "/record.json"));
  CHECK(rec.at("train_config").at("seed") == 6);
  CHECK(rec.contains("wall_clock_seconds"));
  CHECK(rec.at("epochs").size() == r.record.epochs.size());

  const model::ModelParams loaded = model::load_checkpoint(dir + "/model");
  CHECK(params_equal(loaded, r.best));

  // hashes key the configuration, seeds only rename the directory
  train::TrainConfig other_seed = tc;
  other_seed.seed = 7;
  CHECK(train::config_hash(r.record.model_cfg, tc) ==
        train::config_hash(r.record.model_cfg, other_seed));
  train::TrainConfig other_abl = tc;
  other_abl.ablation = "d";
  CHECK(train::config_hash(r.record.model_cfg, tc) !=
        train::config_hash(r.record.model_cfg, other_abl));
  CHECK(train::run_dir_name(r.record.model_cfg, other_seed) !=
        train::run_dir_name(r.record.model_cfg, tc));
}

TEST_CASE("train config validation rejects nonsense") {
  train::TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  auto expect_bad = [](train::TrainConfig bad) {
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  };
  { auto b = tc; b.base_lr = 0.0; expect_bad(b); }
  { auto b = tc; b.warmup_steps = -1; expect_bad(b); }
  { auto b = tc; b.batch_size = 0; expect_bad(b); }
  { auto b = tc; b.patience = 0; expect_bad(b); }
  { auto b = tc; b.patience = b.max_epochs + 1; expect_bad(b); }
  { auto b = tc; b.tau = -0.1; expect_bad(b); }
  { auto b = tc; b.tau = 1.1; expect_bad(b); }
  { auto b = tc; b.ablation = "e"; expect_bad(b); }
  { auto b = tc; b.beam = 0; expect_bad(b); }
  { auto b = tc; b.mask_v = -1; expect_bad(b); }
}
