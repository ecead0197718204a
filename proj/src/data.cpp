#include "zeroparse/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>

#include "zeroparse/io.hpp"

namespace zeroparse::data {

namespace {

bool is_digit_token(const std::string& t) {
  return !t.empty() &&
         std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string cipher_word(const std::string& w, int shift) {
  std::string out = w;
  for (char& c : out)
    if (c >= 'a' && c <= 'z') c = static_cast<char>('a' + (c - 'a' + shift) % 26);
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

struct Template {
  std::vector<std::string> utterance;  // with {slot} placeholders
  std::vector<std::string> lf;
};

// Placeholders: {city} {city2} {airline} {n} (0..max) {n1} (1..max) {day}.
// {city2} is always distinct from {city}. Logical forms use English entity
// names in every language; only utterances are translated.
const std::vector<Template>& templates() {
  static const std::vector<Template> kTemplates = [] {
    const std::vector<std::pair<const char*, const char*>> raw = {
        {"list flights from {city} to {city2}",
         "filter ( query ( flights ) , from = {city} and to = {city2} )"},
        {"flights from {city}", "filter ( query ( flights ) , from = {city} )"},
        {"show flights to {city}", "filter ( query ( flights ) , to = {city} )"},
        {"how many flights from {city} to {city2}",
         "count ( filter ( query ( flights ) , from = {city} and to = {city2} ) )"},
        {"how many flights leave {city}",
         "count ( filter ( query ( flights ) , from = {city} ) )"},
        {"how many flights on {airline}",
         "count ( filter ( query ( flights ) , airline = {airline} ) )"},
        {"which airlines fly from {city}",
         "project ( filter ( query ( flights ) , from = {city} ) , airline )"},
        {"which airlines fly from {city} to {city2}",
         "project ( filter ( query ( flights ) , from = {city} and to = {city2} ) , airline )"},
        {"cheapest flight from {city}",
         "argmin ( filter ( query ( flights ) , from = {city} ) , price )"},
        {"cheapest flight from {city} to {city2}",
         "argmin ( filter ( query ( flights ) , from = {city} and to = {city2} ) , price )"},
        {"most expensive flight to {city}",
         "argmax ( filter ( query ( flights ) , to = {city} ) , price )"},
        {"flights from {city} with {n} stops",
         "filter ( query ( flights ) , from = {city} and stop = {n} )"},
        {"nonstop flights from {city}",
         "filter ( query ( flights ) , from = {city} and stop = 0 )"},
        {"flights from {city} with fewer than {n1} stops",
         "filter ( query ( flights ) , from = {city} and stop < {n1} )"},
        {"flights with more than {n} stops", "filter ( query ( flights ) , stop > {n} )"},
        {"flights on {airline}", "filter ( query ( flights ) , airline = {airline} )"},
        {"flights on {airline} from {city}",
         "filter ( query ( flights ) , airline = {airline} and from = {city} )"},
        {"flights on {day}", "filter ( query ( flights ) , day = {day} )"},
        {"flights from {city} on {day}",
         "filter ( query ( flights ) , from = {city} and day = {day} )"},
        {"flights to {city} on {day}",
         "filter ( query ( flights ) , to = {city} and day = {day} )"},
        {"how many flights on {day}", "count ( filter ( query ( flights ) , day = {day} ) )"},
        {"where is the hub of {airline}",
         "project ( filter ( query ( airlines ) , airline = {airline} ) , hub )"},
        {"which airline has the most planes", "argmax ( query ( airlines ) , planes )"},
        {"which airline has the fewest planes", "argmin ( query ( airlines ) , planes )"},
        {"how many planes does {airline} have",
         "project ( filter ( query ( airlines ) , airline = {airline} ) , planes )"},
        {"list all airlines", "query ( airlines )"},
        {"cheapest flight on {airline}",
         "argmin ( filter ( query ( flights ) , airline = {airline} ) , price )"},
        {"which days have flights from {city}",
         "project ( filter ( query ( flights ) , from = {city} ) , day )"},
    };
    std::vector<Template> out;
    out.reserve(raw.size());
    for (const auto& [u, l] : raw) out.push_back(Template{split_ws(u), split_ws(l)});
    return out;
  }();
  return kTemplates;
}

bool is_slot(const std::string& t) { return t.size() > 2 && t.front() == '{' && t.back() == '}'; }

// Slot names used by a template, in canonical order.
std::vector<std::string> template_slots(const Template& tpl) {
  std::set<std::string> seen;
  for (const auto& side : {tpl.utterance, tpl.lf})
    for (const auto& t : side)
      if (is_slot(t)) seen.insert(t);
  static const std::vector<std::string> kOrder = {"{city}", "{city2}", "{airline}",
                                                  "{n}",    "{n1}",    "{day}"};
  std::vector<std::string> out;
  for (const auto& s : kOrder)
    if (seen.count(s)) out.push_back(s);
  if (out.size() != seen.size()) throw std::logic_error("template uses an unknown slot");
  return out;
}

struct Combo {
  int tpl = 0;
  std::map<std::string, std::string> binding;  // slot -> English value
};

std::vector<std::string> instantiate(const std::vector<std::string>& pattern,
                                     const std::map<std::string, std::string>& binding) {
  std::vector<std::string> out;
  out.reserve(pattern.size());
  for (const auto& t : pattern) out.push_back(is_slot(t) ? binding.at(t) : t);
  return out;
}

std::vector<Combo> enumerate_combos(const GrammarSpec& g) {
  std::vector<Combo> all;
  std::vector<std::string> numbers, numbers1;
  for (int n = 0; n <= g.max_number; ++n) numbers.push_back(std::to_string(n));
  for (int n = 1; n <= g.max_number; ++n) numbers1.push_back(std::to_string(n));

  const auto domain = [&](const std::string& slot) -> const std::vector<std::string>& {
    if (slot == "{city}" || slot == "{city2}") return g.cities;
    if (slot == "{airline}") return g.airlines;
    if (slot == "{n}") return numbers;
    if (slot == "{n1}") return numbers1;
    if (slot == "{day}") return g.days;
    throw std::logic_error("unknown slot " + slot);
  };

  for (std::size_t ti = 0; ti < templates().size(); ++ti) {
    const auto slots = template_slots(templates()[ti]);
    std::vector<std::size_t> idx(slots.size(), 0);
    while (true) {
      Combo c;
      c.tpl = static_cast<int>(ti);
      bool valid = true;
      for (std::size_t s = 0; s < slots.size(); ++s)
        c.binding[slots[s]] = domain(slots[s])[idx[s]];
      if (c.binding.count("{city2}") && c.binding["{city2}"] == c.binding["{city}"])
        valid = false;
      if (valid) all.push_back(std::move(c));
      // odometer; a slotless template falls out after its single combo
      std::size_t s = 0;
      for (; s < slots.size(); ++s) {
        if (++idx[s] < domain(slots[s]).size()) break;
        idx[s] = 0;
      }
      if (s == slots.size()) break;
    }
  }
  return all;
}

std::vector<std::string> content_words(const GrammarSpec& g) {
  std::set<std::string> words;
  for (const auto& tpl : templates())
    for (const auto& t : tpl.utterance)
      if (!is_slot(t) && !is_digit_token(t)) words.insert(t);
  for (const auto& c : g.cities) words.insert(c);
  for (const auto& a : g.airlines) words.insert(a);
  for (const auto& d : g.days) words.insert(d);
  return {words.begin(), words.end()};
}

const LanguageSpec& find_language(const GrammarSpec& g, const std::string& name) {
  for (const auto& l : g.languages)
    if (l.name == name) return l;
  throw std::invalid_argument("grammar references unknown language '" + name + "'");
}

std::map<std::string, Lexicon> build_lexicons(const GrammarSpec& g, Rng& rng) {
  const std::vector<std::string> words = content_words(g);
  const auto n = words.size();
  std::map<std::string, Lexicon> out;
  for (const auto& lang : g.languages) {
    Lexicon lex;
    lex.trained = lang.trained;
    lex.word_order = lang.word_order;
    if (lang.name == "en") {
      for (const auto& w : words) lex.to_surface[w] = w;
    } else {
      std::vector<std::string> pool = words;
      rng.shuffle(pool);
      const auto n_en = static_cast<std::size_t>(lang.overlap_en * static_cast<double>(n) + 0.5);
      const auto n_shared =
          static_cast<std::size_t>(lang.overlap_frac * static_cast<double>(n) + 0.5);
      if (n_en + n_shared > n)
        throw std::invalid_argument("language '" + lang.name + "': overlap fractions exceed 1");
      int shared_shift = 0;
      if (n_shared > 0) {
        if (lang.overlap_with.empty())
          throw std::invalid_argument("language '" + lang.name +
                                      "': overlap_frac without overlap_with");
        shared_shift = find_language(g, lang.overlap_with).cipher_shift;
      }
      for (std::size_t i = 0; i < n; ++i) {
        const std::string& w = pool[i];
        if (i < n_en)
          lex.to_surface[w] = w;
        else if (i < n_en + n_shared)
          lex.to_surface[w] = cipher_word(w, shared_shift);
        else
          lex.to_surface[w] = cipher_word(w, lang.cipher_shift);
      }
    }
    // surface forms must stay pairwise distinct or the mapping loses meaning
    std::set<std::string> surfaces;
    for (const auto& [en, sf] : lex.to_surface) surfaces.insert(sf);
    if (surfaces.size() != lex.to_surface.size())
      throw std::runtime_error("language '" + lang.name + "': lexicon is not injective");
    out.emplace(lang.name, std::move(lex));
  }
  return out;
}

exec::KnowledgeBase build_kb(const GrammarSpec& g, Rng& rng) {
  exec::KnowledgeBase kb;
  exec::Table flights;
  flights.columns = {"from", "to", "airline", "price", "stop", "day"};
  const auto pick = [&rng](const std::vector<std::string>& v) {
    return v[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(v.size())))];
  };
  for (int i = 0; i < g.kb_flight_rows; ++i) {
    const std::string from = pick(g.cities);
    std::string to = pick(g.cities);
    while (to == from) to = pick(g.cities);
    flights.rows.push_back({from, to, pick(g.airlines), 100 + 10 * rng.uniform_int(61),
                            rng.uniform_int(g.max_number + 1), pick(g.days)});
  }
  exec::Table airlines;
  airlines.columns = {"airline", "hub", "planes"};
  std::vector<std::string> hubs = g.cities;
  rng.shuffle(hubs);
  for (std::size_t i = 0; i < g.airlines.size(); ++i)
    airlines.rows.push_back(
        {g.airlines[i], hubs[i % hubs.size()], 5 * (1 + rng.uniform_int(10))});
  kb.tables.emplace("flights", std::move(flights));
  kb.tables.emplace("airlines", std::move(airlines));
  return kb;
}

std::vector<std::string> translate_tokens(const std::vector<std::string>& english,
                                          const Lexicon& lex) {
  std::vector<std::string> mapped;
  mapped.reserve(english.size());
  for (const auto& w : english) mapped.push_back(lex.translate_word(w));
  return apply_word_order(mapped, lex.word_order);
}

std::set<std::string> lf_token_universe(const GrammarSpec& g) {
  std::set<std::string> out = {"query", "filter", "count",   "argmax", "argmin",
                               "project", "and",  "(",       ")",      ",",
                               "=",       "<",    ">",       "flights", "airlines",
                               "from",    "to",   "airline", "price",  "stop",
                               "day",     "hub",  "planes"};
  for (const auto& c : g.cities) out.insert(c);
  for (const auto& a : g.airlines) out.insert(a);
  for (const auto& d : g.days) out.insert(d);
  for (int n = 0; n <= g.max_number; ++n) out.insert(std::to_string(n));
  return out;
}

}  // namespace

GrammarSpec default_grammar() {
  GrammarSpec g;
  g.cities = {"paris", "tokyo", "london", "madrid", "berlin",
              "oslo",  "rome",  "cairo",  "lima",   "delhi"};
  g.airlines = {"arrow", "nimbus", "zephyr", "falcon", "comet"};
  g.days = {"monday", "tuesday", "wednesday", "friday", "sunday"};
  g.max_number = 3;
  g.kb_flight_rows = 150;
  // Two held-out languages never seen in training. They stay reachable
  // because a share of their vocabulary is spelled like English and another
  // share like a trained language, while the rest is entirely novel.
  g.languages = {
      {"en", true, 0, "identity", 1.0, "", 0.0},
      {"l1", true, 5, "identity", 0.0, "", 0.0},
      {"l2", true, 9, "rotate_left", 0.0, "", 0.0},
      {"l3", false, 13, "identity", 0.35, "l1", 0.35},
      {"l4", false, 17, "rotate_left", 0.35, "l2", 0.35},
  };
  return g;
}

std::string Lexicon::translate_word(const std::string& en_word) const {
  if (is_digit_token(en_word)) return en_word;
  const auto it = to_surface.find(en_word);
  if (it == to_surface.end())
    throw std::invalid_argument("word '" + en_word + "' is outside the lexicon");
  return it->second;
}

std::optional<std::string> Lexicon::english_word(const std::string& surface) const {
  if (is_digit_token(surface)) return surface;
  // lexicons are small; a scan keeps the struct trivially serializable
  for (const auto& [en, sf] : to_surface)
    if (sf == surface) return en;
  return std::nullopt;
}

const char* Vocabulary::pad_token() { return "<pad>"; }
const char* Vocabulary::bos_token() { return "<bos>"; }
const char* Vocabulary::eos_token() { return "<eos>"; }
const char* Vocabulary::mask_token() { return "<mask>"; }

Vocabulary Vocabulary::build(const std::vector<std::string>& tokens) {
  std::set<std::string> unique(tokens.begin(), tokens.end());
  unique.erase(pad_token());
  unique.erase(bos_token());
  unique.erase(eos_token());
  unique.erase(mask_token());
  std::vector<std::string> lines = {pad_token(), bos_token(), eos_token(), mask_token()};
  lines.insert(lines.end(), unique.begin(), unique.end());
  return from_lines(lines);
}

Vocabulary Vocabulary::from_lines(const std::vector<std::string>& lines) {
  Vocabulary v;
  v.id_to_token_ = lines;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!v.token_to_id_.emplace(lines[i], static_cast<int>(i)).second)
      throw std::invalid_argument("duplicate vocabulary token '" + lines[i] + "'");
  }
  if (v.size() < 4 || v.id_to_token_[0] != pad_token() || v.id_to_token_[1] != bos_token() ||
      v.id_to_token_[2] != eos_token() || v.id_to_token_[3] != mask_token())
    throw std::invalid_argument("vocabulary must start with the four special tokens");
  return v;
}

int Vocabulary::id(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  if (it == token_to_id_.end())
    throw std::invalid_argument("token '" + token + "' is not in the vocabulary");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("token id out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) != 0;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::vector<std::string> apply_word_order(const std::vector<std::string>& tokens,
                                          const std::string& rule) {
  std::vector<std::string> out = tokens;
  if (rule == "identity") return out;
  if (rule == "rotate_left") {
    if (out.size() > 1) std::rotate(out.begin(), out.begin() + 1, out.end());
    return out;
  }
  if (rule == "reverse") {
    std::reverse(out.begin(), out.end());
    return out;
  }
  if (rule == "swap_pairs") {
    for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
    return out;
  }
  throw std::invalid_argument("unknown word-order rule '" + rule + "'");
}

std::vector<std::string> invert_word_order(const std::vector<std::string>& tokens,
                                           const std::string& rule) {
  std::vector<std::string> out = tokens;
  if (rule == "identity") return out;
  if (rule == "rotate_left") {
    if (out.size() > 1) std::rotate(out.begin(), out.end() - 1, out.end());
    return out;
  }
  if (rule == "reverse" || rule == "swap_pairs") return apply_word_order(tokens, rule);
  throw std::invalid_argument("unknown word-order rule '" + rule + "'");
}

GeneratedData generate_corpus(const GrammarSpec& grammar, std::uint64_t seed) {
  if (grammar.languages.empty() || grammar.languages[0].name != "en")
    throw std::invalid_argument("grammar.languages[0] must be English ('en')");

  Rng master(seed);
  Rng corpus_rng = master.fork(rng_stream::kCorpus);
  Rng kb_rng = corpus_rng.fork(1);
  Rng lex_rng = corpus_rng.fork(2);
  Rng split_rng = corpus_rng.fork(3);

  GeneratedData out;
  out.kb = build_kb(grammar, kb_rng);
  out.lexicons = build_lexicons(grammar, lex_rng);

  std::vector<Combo> combos = enumerate_combos(grammar);
  const std::size_t need = static_cast<std::size_t>(grammar.test_size) +
                           static_cast<std::size_t>(grammar.val_size) +
                           static_cast<std::size_t>(grammar.train_size) +
                           static_cast<std::size_t>(grammar.nl_extra_size);
  if (need > combos.size()) {
    std::ostringstream os;
    os << "split sizes need " << need << " combinations but the grammar only has "
       << combos.size();
    throw std::invalid_argument(os.str());
  }
  split_rng.shuffle(combos);

  struct Slice {
    const char* split;
    std::size_t begin, end;
  };
  const auto t = static_cast<std::size_t>(grammar.test_size);
  const auto v = static_cast<std::size_t>(grammar.val_size);
  const auto tr = static_cast<std::size_t>(grammar.train_size);
  const std::vector<Slice> slices = {
      {"test", 0, t},
      {"val", t, t + v},
      {"train", t + v, t + v + tr},
      {"nl", t + v + tr, need},
  };

  for (const auto& slice : slices) {
    for (std::size_t i = slice.begin; i < slice.end; ++i) {
      const Combo& combo = combos[i];
      const Template& tpl = templates()[static_cast<std::size_t>(combo.tpl)];
      const std::vector<std::string> english = instantiate(tpl.utterance, combo.binding);
      const std::vector<std::string> lf = instantiate(tpl.lf, combo.binding);
      for (const auto& lang : grammar.languages) {
        const std::string split = slice.split;
        const bool emit = split == "test" ||
                          (split == "val" && lang.name == "en") ||
                          ((split == "train" || split == "nl") && lang.trained);
        if (!emit) continue;
        ParallelExample ex;
        ex.lang = lang.name;
        ex.split = split;
        ex.english_tokens = english;
        ex.tokens = translate_tokens(english, out.lexicons.at(lang.name));
        // Logical forms ride along only where training or scoring needs
        // them: English supervision rows and every test row. Training never
        // reads a non-English logical form.
        const bool with_lf =
            split == "test" || (lang.name == "en" && (split == "train" || split == "val"));
        if (with_lf) ex.lf = lf;
        out.examples.push_back(std::move(ex));
      }
    }
  }

  std::vector<std::string> universe;
  for (const auto& t2 : lf_token_universe(grammar)) universe.push_back(t2);
  for (const auto& [name, lex] : out.lexicons) {
    for (const auto& [en, sf] : lex.to_surface) universe.push_back(sf);
  }
  for (int n = 0; n <= grammar.max_number; ++n) universe.push_back(std::to_string(n));
  out.vocab = Vocabulary::build(universe);
  return out;
}

std::vector<std::string> noise(const std::vector<std::string>& tokens, int max_masked,
                               Rng& rng) {
  if (max_masked < 0) throw std::invalid_argument("noise: max_masked must be >= 0");
  std::vector<std::string> out = tokens;
  const auto n = static_cast<std::int64_t>(tokens.size());
  auto u = static_cast<std::int64_t>(rng.uniform_int(max_masked + 1));
  u = std::min(u, n);
  // partial Fisher-Yates over the index vector: first u entries are the
  // masked positions, drawn without replacement
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = 0; i < u; ++i) {
    const std::int64_t j = i + rng.uniform_int(n - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    out[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = Vocabulary::mask_token();
  }
  return out;
}

std::vector<std::string> simulated_mt(const std::vector<std::string>& tokens,
                                      const std::string& lang,
                                      const std::map<std::string, Lexicon>& lexicons,
                                      double error_rate, Rng& rng) {
  if (error_rate < 0.0 || error_rate > 1.0)
    throw std::invalid_argument("simulated_mt: error_rate must be in [0, 1]");
  const auto it = lexicons.find(lang);
  if (it == lexicons.end()) throw std::invalid_argument("simulated_mt: unknown language " + lang);
  const Lexicon& lex = it->second;
  const Lexicon& en = lexicons.at("en");
  std::vector<std::string> english_words;
  for (const auto& [w, sf] : en.to_surface) english_words.push_back(w);

  std::vector<std::string> out = invert_word_order(tokens, lex.word_order);
  for (auto& w : out) {
    const auto back = lex.english_word(w);
    if (back) w = *back;  // untranslatable words pass through untouched
  }
  // word-choice errors: content tokens only (digits are never corrupted),
  // and a corrupted token always differs from the exact translation
  for (auto& w : out) {
    if (is_digit_token(w) || !rng.bernoulli(error_rate)) continue;
    std::string pick = w;
    while (pick == w) {
      pick = english_words[static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(english_words.size())))];
    }
    w = pick;
  }
  return out;
}

std::vector<Batch> sample_batches(const std::vector<const ParallelExample*>& lf_pool,
                                  const std::vector<const ParallelExample*>& nl_pool,
                                  int batch_size, Rng& rng) {
  if (batch_size <= 0) throw std::invalid_argument("sample_batches: batch_size must be > 0");
  std::vector<Batch> batches;
  const auto chunk = [&](const std::vector<const ParallelExample*>& pool, bool has_lf) {
    std::map<std::string, std::vector<const ParallelExample*>> by_lang;
    for (const ParallelExample* ex : pool) {
      if (has_lf && ex->lf.empty())
        throw std::invalid_argument("sample_batches: logical-form pool entry without one");
      by_lang[ex->lang].push_back(ex);
    }
    for (auto& [lang, items] : by_lang) {
      rng.shuffle(items);
      for (std::size_t at = 0; at < items.size(); at += static_cast<std::size_t>(batch_size)) {
        Batch b;
        b.lang = lang;
        b.has_lf = has_lf;
        const auto end = std::min(items.size(), at + static_cast<std::size_t>(batch_size));
        b.items.assign(items.begin() + static_cast<std::ptrdiff_t>(at),
                       items.begin() + static_cast<std::ptrdiff_t>(end));
        batches.push_back(std::move(b));
      }
    }
  };
  chunk(lf_pool, true);
  chunk(nl_pool, false);
  rng.shuffle(batches);
  return batches;
}

std::map<std::string, int> language_labels(const std::map<std::string, Lexicon>& lexicons) {
  std::map<std::string, int> labels;
  int next = 0;
  for (const auto& [name, lex] : lexicons) {  // std::map: names in sorted order
    if (lex.trained) labels.emplace(name, next++);
  }
  return labels;
}

void save_corpus(const std::string& dir, const GeneratedData& d) {
  std::filesystem::create_directories(dir);
  std::ostringstream jsonl;
  for (const auto& ex : d.examples) {
    nlohmann::json j;
    j["lang"] = ex.lang;
    j["split"] = ex.split;
    j["tokens"] = ex.tokens;
    j["english_tokens"] = ex.english_tokens;
    if (!ex.lf.empty()) j["lf"] = ex.lf;
    jsonl << j.dump() << "\n";
  }
  io::write_file(dir + "/corpus.jsonl", jsonl.str());
  io::write_file(dir + "/kb.json", exec::kb_to_json(d.kb));

  std::ostringstream vocab;
  for (const auto& line : d.vocab.lines()) vocab << line << "\n";
  io::write_file(dir + "/vocab.txt", vocab.str());

  nlohmann::json langs = nlohmann::json::object();
  for (const auto& [name, lex] : d.lexicons) {
    nlohmann::json lj;
    lj["trained"] = lex.trained;
    lj["word_order"] = lex.word_order;
    lj["map"] = lex.to_surface;
    langs[name] = std::move(lj);
  }
  nlohmann::json top;
  top["languages"] = std::move(langs);
  io::write_file(dir + "/lexicons.json", top.dump(2));
}

GeneratedData load_corpus(const std::string& dir) {
  GeneratedData d;
  d.kb = exec::kb_from_json(io::read_file(dir + "/kb.json"));

  std::istringstream jsonl(io::read_file(dir + "/corpus.jsonl"));
  std::string line;
  while (std::getline(jsonl, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ParallelExample ex;
    ex.lang = j.at("lang").get<std::string>();
    ex.split = j.at("split").get<std::string>();
    ex.tokens = j.at("tokens").get<std::vector<std::string>>();
    ex.english_tokens = j.at("english_tokens").get<std::vector<std::string>>();
    if (j.contains("lf")) ex.lf = j.at("lf").get<std::vector<std::string>>();
    d.examples.push_back(std::move(ex));
  }

  std::vector<std::string> vocab_lines;
  std::istringstream vs(io::read_file(dir + "/vocab.txt"));
  while (std::getline(vs, line))
    if (!line.empty()) vocab_lines.push_back(line);
  d.vocab = Vocabulary::from_lines(vocab_lines);

  nlohmann::json top = nlohmann::json::parse(io::read_file(dir + "/lexicons.json"));
  for (const auto& [name, lj] : top.at("languages").items()) {
    Lexicon lex;
    lex.trained = lj.at("trained").get<bool>();
    lex.word_order = lj.at("word_order").get<std::string>();
    lex.to_surface = lj.at("map").get<std::map<std::string, std::string>>();
    d.lexicons.emplace(name, std::move(lex));
  }
  return d;
}

}  // namespace zeroparse::data
