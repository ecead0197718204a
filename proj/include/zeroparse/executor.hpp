#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace zeroparse::exec {

// Cell values are either integers or symbols. Comparisons across the two
// kinds are type errors at execution time, not silent falsehoods.
using Value = std::variant<long, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Value>> rows;

  std::optional<std::size_t> column_index(const std::string& name) const;
};

struct KnowledgeBase {
  // ordered by name so serialization and iteration are deterministic
  std::map<std::string, Table> tables;
};

// One and-composed comparison inside a filter.
struct Condition {
  std::string field;
  char op = '=';  // '=', '<', '>'
  Value value;

  bool operator==(const Condition&) const = default;
};

// Normalized form of the query language:
//
//   expr  := head | rows
//   head  := count ( rows )
//          | argmax ( rows , field ) | argmin ( rows , field )
//          | project ( rows , field )
//   rows  := query ( table ) | filter ( rows , cond (and cond)* )
//
// Nested filters flatten into one condition list; conjunction order carries
// no meaning.
struct LogicalForm {
  enum class Head { kRows, kCount, kArgmax, kArgmin, kProject };
  Head head = Head::kRows;
  std::string table;
  std::vector<Condition> conditions;
  std::string field;  // aggregation / projection column

  std::vector<std::string> tokens() const;  // canonical token sequence
};

struct Denotation {
  enum class Kind { kRows, kValues, kNumber };
  Kind kind = Kind::kRows;
  std::string table;        // kRows only; row ids are table-relative
  std::set<long> rows;      // kRows
  std::set<Value> values;   // kValues
  long number = 0;          // kNumber

  bool operator==(const Denotation& other) const;
  std::string to_string() const;
};

struct ParseResult {
  std::optional<LogicalForm> lf;
  std::string error;  // set iff !lf
  bool ok() const { return lf.has_value(); }
};

struct ExecResult {
  std::optional<Denotation> denotation;
  std::string error;  // set iff !denotation
  bool ok() const { return denotation.has_value(); }
};

// Parses a token sequence. Any violation (arity, stray tokens, reserved
// words in value position, unbalanced parens) yields an error, never a
// best-effort tree.
ParseResult parse_lf(const std::vector<std::string>& tokens);

// Convenience for literals in tests and tools: whitespace-delimited tokens.
ParseResult parse_lf(const std::string& text);

// Evaluates against the knowledge base. Unknown tables or fields, ordered
// comparisons on symbol columns, and type-mismatched equality are errors.
// Aggregations over an empty row set return an empty row set.
ExecResult execute(const LogicalForm& lf, const KnowledgeBase& kb);

// Fraction of predictions whose denotation equals the gold denotation.
// Unparseable or unexecutable predictions count as wrong. Gold entries must
// parse and execute; anything else throws.
double denotation_accuracy(const std::vector<std::vector<std::string>>& predicted,
                           const std::vector<std::vector<std::string>>& gold,
                           const KnowledgeBase& kb);

// First matching bucket wins, in this order.
enum class ErrorClass {
  kCorrect,              // denotations match
  kIllFormed,            // prediction does not parse or execute
  kWrongEntity,          // same shape, same (field, op) pairs, values differ
  kExtraneousRelation,   // all gold conditions present plus extras
  kWrongStructure,       // anything else
};

const char* error_class_name(ErrorClass c);

ErrorClass classify_error(const std::vector<std::string>& predicted,
                          const std::vector<std::string>& gold, const KnowledgeBase& kb);

// JSON (de)serialization of knowledge bases; schema:
// {"tables": {name: {"columns": [...], "rows": [[...], ...]}}}
std::string kb_to_json(const KnowledgeBase& kb);
KnowledgeBase kb_from_json(const std::string& json_text);

}  // namespace zeroparse::exec
