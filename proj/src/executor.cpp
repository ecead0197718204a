#include "zeroparse/executor.hpp"

#include <algorithm>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace zeroparse::exec {

namespace {

const std::unordered_set<std::string>& reserved_tokens() {
  static const std::unordered_set<std::string> kReserved{
      "count", "argmax", "argmin", "project", "query", "filter",
      "and",   "(",      ")",      ",",       "=",     "<",      ">"};
  return kReserved;
}

bool is_integer_token(const std::string& t) {
  if (t.empty()) return false;
  return std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string value_to_string(const Value& v) {
  if (std::holds_alternative<long>(v)) return std::to_string(std::get<long>(v));
  return std::get<std::string>(v);
}

// Token-stream recursive descent. Every failure path reports what was
// expected and what was seen; callers rely on parse never "repairing".
class Parser {
 public:
  explicit Parser(const std::vector<std::string>& tokens) : tokens_(tokens) {}

  ParseResult run() {
    try {
      LogicalForm lf = expr();
      if (pos_ != tokens_.size()) fail("trailing tokens after a complete expression");
      return {lf, ""};
    } catch (const std::runtime_error& e) {
      return {std::nullopt, e.what()};
    }
  }

 private:
  [[noreturn]] void fail(const std::string& why) {
    std::ostringstream os;
    os << why << " at token " << pos_;
    if (pos_ < tokens_.size()) os << " ('" << tokens_[pos_] << "')";
    throw std::runtime_error(os.str());
  }

  const std::string& peek() {
    if (pos_ >= tokens_.size()) fail("unexpected end of input");
    return tokens_[pos_];
  }

  std::string next() {
    const std::string& t = peek();
    ++pos_;
    return t;
  }

  void expect(const std::string& t) {
    if (pos_ >= tokens_.size() || tokens_[pos_] != t) fail("expected '" + t + "'");
    ++pos_;
  }

  std::string identifier(const char* what) {
    const std::string& t = peek();
    if (reserved_tokens().count(t) || is_integer_token(t))
      fail(std::string("expected ") + what);
    return next();
  }

  LogicalForm expr() {
    const std::string& t = peek();
    LogicalForm lf;
    if (t == "count" || t == "argmax" || t == "argmin" || t == "project") {
      next();
      lf.head = t == "count"    ? LogicalForm::Head::kCount
                : t == "argmax" ? LogicalForm::Head::kArgmax
                : t == "argmin" ? LogicalForm::Head::kArgmin
                                : LogicalForm::Head::kProject;
      expect("(");
      rows(lf);
      if (lf.head != LogicalForm::Head::kCount) {
        expect(",");
        lf.field = identifier("a field name");
      }
      expect(")");
      return lf;
    }
    rows(lf);
    return lf;
  }

  void rows(LogicalForm& lf) {
    const std::string t = next();
    if (t == "query") {
      expect("(");
      lf.table = identifier("a table name");
      expect(")");
      return;
    }
    if (t == "filter") {
      expect("(");
      rows(lf);  // nested row expression first; filters flatten
      expect(",");
      conditions(lf);
      expect(")");
      return;
    }
    --pos_;
    fail("expected 'query' or 'filter'");
  }

  void conditions(LogicalForm& lf) {
    while (true) {
      Condition c;
      c.field = identifier("a field name");
      const std::string op = next();
      if (op != "=" && op != "<" && op != ">") {
        --pos_;
        fail("expected '=', '<' or '>'");
      }
      c.op = op[0];
      const std::string& v = peek();
      if (reserved_tokens().count(v)) fail("expected a value");
      c.value = is_integer_token(v) ? Value(std::stol(v)) : Value(v);
      next();
      lf.conditions.push_back(std::move(c));
      if (pos_ < tokens_.size() && tokens_[pos_] == "and") {
        ++pos_;
        continue;
      }
      return;
    }
  }

  const std::vector<std::string>& tokens_;
  std::size_t pos_ = 0;
};

}  // namespace

std::optional<std::size_t> Table::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  return std::nullopt;
}

std::vector<std::string> LogicalForm::tokens() const {
  std::vector<std::string> out;
  const auto emit = [&out](const std::string& t) { out.push_back(t); };
  switch (head) {
    case Head::kRows: break;
    case Head::kCount: emit("count"); emit("("); break;
    case Head::kArgmax: emit("argmax"); emit("("); break;
    case Head::kArgmin: emit("argmin"); emit("("); break;
    case Head::kProject: emit("project"); emit("("); break;
  }
  if (!conditions.empty()) {
    emit("filter");
    emit("(");
  }
  emit("query");
  emit("(");
  emit(table);
  emit(")");
  if (!conditions.empty()) {
    emit(",");
    for (std::size_t i = 0; i < conditions.size(); ++i) {
      if (i > 0) emit("and");
      emit(conditions[i].field);
      emit(std::string(1, conditions[i].op));
      emit(value_to_string(conditions[i].value));
    }
    emit(")");
  }
  if (head != Head::kRows) {
    if (head != Head::kCount) {
      emit(",");
      emit(field);
    }
    emit(")");
  }
  return out;
}

bool Denotation::operator==(const Denotation& other) const {
  if (kind != other.kind) return false;
  switch (kind) {
    case Kind::kRows: return table == other.table && rows == other.rows;
    case Kind::kValues: return values == other.values;
    case Kind::kNumber: return number == other.number;
  }
  return false;
}

std::string Denotation::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kRows: {
      os << "rows[" << table << "]{";
      bool first = true;
      for (long r : rows) {
        if (!first) os << ",";
        os << r;
        first = false;
      }
      os << "}";
      break;
    }
    case Kind::kValues: {
      os << "values{";
      bool first = true;
      for (const auto& v : values) {
        if (!first) os << ",";
        os << value_to_string(v);
        first = false;
      }
      os << "}";
      break;
    }
    case Kind::kNumber:
      os << "number:" << number;
      break;
  }
  return os.str();
}

ParseResult parse_lf(const std::vector<std::string>& tokens) {
  if (tokens.empty()) return {std::nullopt, "empty input"};
  return Parser(tokens).run();
}

ParseResult parse_lf(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream is(text);
  std::string t;
  while (is >> t) tokens.push_back(t);
  return parse_lf(tokens);
}

ExecResult execute(const LogicalForm& lf, const KnowledgeBase& kb) {
  const auto it = kb.tables.find(lf.table);
  if (it == kb.tables.end()) return {std::nullopt, "unknown table '" + lf.table + "'"};
  const Table& table = it->second;

  // Resolve all referenced columns up front so an unknown field is an error
  // even when no row survives the filter.
  std::vector<std::size_t> cond_cols(lf.conditions.size());
  for (std::size_t i = 0; i < lf.conditions.size(); ++i) {
    const auto col = table.column_index(lf.conditions[i].field);
    if (!col) return {std::nullopt, "unknown field '" + lf.conditions[i].field + "'"};
    cond_cols[i] = *col;
  }
  std::size_t head_col = 0;
  if (lf.head != LogicalForm::Head::kRows && lf.head != LogicalForm::Head::kCount) {
    const auto col = table.column_index(lf.field);
    if (!col) return {std::nullopt, "unknown field '" + lf.field + "'"};
    head_col = *col;
  }

  std::set<long> selected;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    bool keep = true;
    for (std::size_t i = 0; i < lf.conditions.size() && keep; ++i) {
      const Condition& c = lf.conditions[i];
      const Value& cell = table.rows[r][cond_cols[i]];
      if (c.op == '=') {
        if (cell.index() != c.value.index())
          return {std::nullopt, "type mismatch comparing field '" + c.field + "'"};
        keep = cell == c.value;
      } else {
        if (!std::holds_alternative<long>(cell) || !std::holds_alternative<long>(c.value))
          return {std::nullopt, "ordered comparison on non-numeric field '" + c.field + "'"};
        const long a = std::get<long>(cell), b = std::get<long>(c.value);
        keep = (c.op == '<') ? a < b : a > b;
      }
    }
    if (keep) selected.insert(static_cast<long>(r));
  }

  Denotation d;
  switch (lf.head) {
    case LogicalForm::Head::kRows:
      d.kind = Denotation::Kind::kRows;
      d.table = lf.table;
      d.rows = std::move(selected);
      return {d, ""};
    case LogicalForm::Head::kCount:
      d.kind = Denotation::Kind::kNumber;
      d.number = static_cast<long>(selected.size());
      return {d, ""};
    case LogicalForm::Head::kProject:
      d.kind = Denotation::Kind::kValues;
      for (long r : selected) d.values.insert(table.rows[static_cast<std::size_t>(r)][head_col]);
      return {d, ""};
    case LogicalForm::Head::kArgmax:
    case LogicalForm::Head::kArgmin: {
      d.kind = Denotation::Kind::kRows;
      d.table = lf.table;
      std::optional<long> best;
      for (long r : selected) {
        const Value& cell = table.rows[static_cast<std::size_t>(r)][head_col];
        if (!std::holds_alternative<long>(cell))
          return {std::nullopt, "aggregation over non-numeric field '" + lf.field + "'"};
        const long v = std::get<long>(cell);
        const bool better =
            !best || (lf.head == LogicalForm::Head::kArgmax ? v > *best : v < *best);
        if (better) {
          best = v;
          d.rows.clear();
        }
        if (v == *best) d.rows.insert(r);
      }
      return {d, ""};  // empty selection yields an empty row set
    }
  }
  return {std::nullopt, "unreachable"};
}

double denotation_accuracy(const std::vector<std::vector<std::string>>& predicted,
                           const std::vector<std::vector<std::string>>& gold,
                           const KnowledgeBase& kb) {
  if (predicted.size() != gold.size())
    throw std::invalid_argument("denotation_accuracy: prediction/gold size mismatch");
  if (gold.empty()) throw std::invalid_argument("denotation_accuracy: empty evaluation set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const ParseResult gp = parse_lf(gold[i]);
    if (!gp.ok())
      throw std::invalid_argument("denotation_accuracy: gold does not parse: " + gp.error);
    const ExecResult ge = execute(*gp.lf, kb);
    if (!ge.ok())
      throw std::invalid_argument("denotation_accuracy: gold does not execute: " + ge.error);
    const ParseResult pp = parse_lf(predicted[i]);
    if (!pp.ok()) continue;
    const ExecResult pe = execute(*pp.lf, kb);
    if (!pe.ok()) continue;
    if (*pe.denotation == *ge.denotation) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

const char* error_class_name(ErrorClass c) {
  switch (c) {
    case ErrorClass::kCorrect: return "correct";
    case ErrorClass::kIllFormed: return "ill_formed";
    case ErrorClass::kWrongEntity: return "wrong_entity";
    case ErrorClass::kExtraneousRelation: return "extraneous_relation";
    case ErrorClass::kWrongStructure: return "wrong_structure";
  }
  return "?";
}

namespace {

using CondKey = std::pair<std::string, char>;

std::vector<CondKey> shape_multiset(const LogicalForm& lf) {
  std::vector<CondKey> keys;
  keys.reserve(lf.conditions.size());
  for (const auto& c : lf.conditions) keys.emplace_back(c.field, c.op);
  std::sort(keys.begin(), keys.end());
  return keys;
}

std::vector<std::tuple<std::string, char, Value>> full_multiset(const LogicalForm& lf) {
  std::vector<std::tuple<std::string, char, Value>> keys;
  keys.reserve(lf.conditions.size());
  for (const auto& c : lf.conditions) keys.emplace_back(c.field, c.op, c.value);
  std::sort(keys.begin(), keys.end());
  return keys;
}

// True when every gold condition appears in pred (with value), counted with
// multiplicity.
bool contains_all(const LogicalForm& pred, const LogicalForm& gold) {
  auto p = full_multiset(pred);
  auto g = full_multiset(gold);
  return std::includes(p.begin(), p.end(), g.begin(), g.end());
}

}  // namespace

ErrorClass classify_error(const std::vector<std::string>& predicted,
                          const std::vector<std::string>& gold, const KnowledgeBase& kb) {
  const ParseResult gp = parse_lf(gold);
  if (!gp.ok()) throw std::invalid_argument("classify_error: gold does not parse: " + gp.error);
  const ExecResult ge = execute(*gp.lf, kb);
  if (!ge.ok())
    throw std::invalid_argument("classify_error: gold does not execute: " + ge.error);

  const ParseResult pp = parse_lf(predicted);
  if (!pp.ok()) return ErrorClass::kIllFormed;
  const ExecResult pe = execute(*pp.lf, kb);
  if (!pe.ok()) return ErrorClass::kIllFormed;

  if (*pe.denotation == *ge.denotation) return ErrorClass::kCorrect;

  const LogicalForm& p = *pp.lf;
  const LogicalForm& g = *gp.lf;
  const bool same_frame = p.head == g.head && p.table == g.table && p.field == g.field;
  if (same_frame && shape_multiset(p) == shape_multiset(g)) return ErrorClass::kWrongEntity;
  if (same_frame && p.conditions.size() > g.conditions.size() && contains_all(p, g))
    return ErrorClass::kExtraneousRelation;
  return ErrorClass::kWrongStructure;
}

KnowledgeBase kb_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("knowledge base JSON is malformed: ") + e.what());
  }
  if (!j.is_object() || !j.contains("tables") || !j["tables"].is_object())
    throw std::runtime_error("knowledge base JSON must be {\"tables\": {...}}");
  KnowledgeBase kb;
  for (const auto& [name, tj] : j["tables"].items()) {
    if (!tj.contains("columns") || !tj["columns"].is_array() || !tj.contains("rows") ||
        !tj["rows"].is_array())
      throw std::runtime_error("table '" + name + "' must have columns[] and rows[]");
    Table t;
    for (const auto& c : tj["columns"]) {
      if (!c.is_string()) throw std::runtime_error("table '" + name + "': non-string column");
      t.columns.push_back(c.get<std::string>());
    }
    for (const auto& rj : tj["rows"]) {
      if (!rj.is_array() || rj.size() != t.columns.size())
        throw std::runtime_error("table '" + name + "': row width differs from columns");
      std::vector<Value> row;
      for (const auto& cell : rj) {
        if (cell.is_number_integer())
          row.emplace_back(cell.get<long>());
        else if (cell.is_string())
          row.emplace_back(cell.get<std::string>());
        else
          throw std::runtime_error("table '" + name + "': cells must be ints or strings");
      }
      t.rows.push_back(std::move(row));
    }
    kb.tables.emplace(name, std::move(t));
  }
  return kb;
}

std::string kb_to_json(const KnowledgeBase& kb) {
  nlohmann::json tables = nlohmann::json::object();
  for (const auto& [name, t] : kb.tables) {
    nlohmann::json tj;
    tj["columns"] = t.columns;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : t.rows) {
      nlohmann::json rj = nlohmann::json::array();
      for (const auto& cell : row) {
        if (std::holds_alternative<long>(cell))
          rj.push_back(std::get<long>(cell));
        else
          rj.push_back(std::get<std::string>(cell));
      }
      rows.push_back(std::move(rj));
    }
    tj["rows"] = std::move(rows);
    tables[name] = std::move(tj);
  }
  nlohmann::json j;
  j["tables"] = std::move(tables);
  return j.dump(2);
}

}  // namespace zeroparse::exec
