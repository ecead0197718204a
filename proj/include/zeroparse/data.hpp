#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zeroparse/executor.hpp"
#include "zeroparse/rng.hpp"

namespace zeroparse::data {

// One synthetic language. Surface forms derive from English by a bijective
// letter-shift cipher applied per word (digits pass through), plus an
// invertible word-order rule. Lexical overlap knobs let a language keep
// some English spellings or borrow another language's cipher for a slice
// of its vocabulary, which is what gives unseen languages a foothold.
struct LanguageSpec {
  std::string name;
  bool trained = true;        // false: excluded from all training pools
  int cipher_shift = 0;
  std::string word_order = "identity";  // identity | rotate_left | reverse | swap_pairs
  double overlap_en = 0.0;    // fraction of word types spelled as in English
  std::string overlap_with;   // optional language whose cipher is borrowed
  double overlap_frac = 0.0;  // fraction of word types using that cipher
};

struct GrammarSpec {
  std::vector<std::string> cities;
  std::vector<std::string> airlines;
  std::vector<std::string> days;
  int max_number = 3;  // numeric slot values are 0..max_number
  std::vector<LanguageSpec> languages;  // [0] must be English ("en")

  int kb_flight_rows = 150;

  // split sizes counted in (template, entity-assignment) combinations;
  // their sum must not exceed the combination universe
  int train_size = 400;
  int val_size = 60;
  int test_size = 120;
  int nl_extra_size = 100;
};

// The benchmark used throughout: 5 languages, two of them held out, over a
// flights/airlines domain.
GrammarSpec default_grammar();

struct ParallelExample {
  std::string lang;
  std::string split;  // train | val | test | nl
  std::vector<std::string> tokens;          // surface form in `lang`
  std::vector<std::string> english_tokens;  // same meaning, English surface
  std::vector<std::string> lf;              // empty when the split carries none
};

struct Lexicon {
  bool trained = true;
  std::string word_order = "identity";
  std::map<std::string, std::string> to_surface;  // english word -> surface word

  std::string translate_word(const std::string& en_word) const;
  // inverse lookup; nullopt for surface forms this language cannot produce
  std::optional<std::string> english_word(const std::string& surface) const;
};

// Token/id mapping with fixed special slots. Ids are assigned by sorting
// the token universe, so equal universes give equal tables.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kMask = 3;
  static const char* pad_token();
  static const char* bos_token();
  static const char* eos_token();
  static const char* mask_token();

  static Vocabulary build(const std::vector<std::string>& tokens);

  int id(const std::string& token) const;  // throws on unknown token
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(const std::string& token) const;

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  std::vector<std::string> lines() const { return id_to_token_; }
  static Vocabulary from_lines(const std::vector<std::string>& lines);

 private:
  std::vector<std::string> id_to_token_;
  std::map<std::string, int> token_to_id_;
};

struct GeneratedData {
  exec::KnowledgeBase kb;
  std::vector<ParallelExample> examples;
  std::map<std::string, Lexicon> lexicons;  // keyed by language name
  Vocabulary vocab;
};

// Deterministically builds the knowledge base, the lexicons, and all splits
// for every language. Same spec and seed give byte-identical artifacts.
// Split combinations are mutually disjoint; test combinations are shared
// across languages so per-language scores are comparable. Logical forms are
// attached to English train/val rows and to test rows of every language;
// nl rows and non-English train rows are utterance-only.
GeneratedData generate_corpus(const GrammarSpec& grammar, std::uint64_t seed);

// Masks u positions chosen without replacement, u drawn uniformly from
// {0, ..., max_masked}. Length is preserved.
std::vector<std::string> noise(const std::vector<std::string>& tokens, int max_masked, Rng& rng);

// Word-by-word translation into English: undoes the word-order rule, then
// maps each word through the inverse lexicon. Each translated word is then
// independently corrupted with probability error_rate by substituting a
// uniformly random English word type. error_rate 0 reproduces the English
// source exactly.
std::vector<std::string> simulated_mt(const std::vector<std::string>& tokens,
                                      const std::string& lang,
                                      const std::map<std::string, Lexicon>& lexicons,
                                      double error_rate, Rng& rng);

// Homogeneous batching: every batch holds examples of one pool and one
// language. Each pool is shuffled and chunked per epoch, then the batch
// order itself is shuffled. Short tails are kept as smaller batches.
struct Batch {
  std::string lang;
  bool has_lf = false;  // true: logical-form batch, false: reconstruction batch
  std::vector<const ParallelExample*> items;
};

std::vector<Batch> sample_batches(const std::vector<const ParallelExample*>& lf_pool,
                                  const std::vector<const ParallelExample*>& nl_pool,
                                  int batch_size, Rng& rng);

// Word-order helpers (exposed for tests; apply/invert are exact inverses).
std::vector<std::string> apply_word_order(const std::vector<std::string>& tokens,
                                          const std::string& rule);
std::vector<std::string> invert_word_order(const std::vector<std::string>& tokens,
                                           const std::string& rule);

// Label ids for the language-prediction task: trained languages ranked by
// name. Held-out languages have no label.
std::map<std::string, int> language_labels(const std::map<std::string, Lexicon>& lexicons);

// ---- corpus directory IO ------------------------------------------------
// Layout: corpus.jsonl, kb.json, vocab.txt, lexicons.json
void save_corpus(const std::string& dir, const GeneratedData& data);
GeneratedData load_corpus(const std::string& dir);

}  // namespace zeroparse::data
