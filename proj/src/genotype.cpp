#include "rnas/genotype.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>

#include "rnas/error.hpp"

namespace rnas {

namespace {

constexpr std::array<std::string_view, 7> kOpNames = {
    "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5", "max_pool_3x3", "avg_pool_3x3", "skip_connect",
};

constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "max_pool", "avg_pool", "skip", "sep_conv", "dil_conv",
};

struct Builtin {
  std::string_view name;
  std::string_view text;
};

// Searched cells as published with their respective methods.
constexpr std::array<Builtin, 3> kBuiltins = {{
    {"darts_v2",
     "normal: (sep_conv_3x3,0) (sep_conv_3x3,1) (sep_conv_3x3,0) (sep_conv_3x3,1) (sep_conv_3x3,1) (skip_connect,0) "
     "(skip_connect,0) (dil_conv_3x3,2) | concat: 2,3,4,5\n"
     "reduce: (max_pool_3x3,0) (max_pool_3x3,1) (skip_connect,2) (max_pool_3x3,1) (max_pool_3x3,0) (skip_connect,2) "
     "(skip_connect,2) (max_pool_3x3,1) | concat: 2,3,4,5\n"},
    {"pdarts",
     "normal: (skip_connect,0) (dil_conv_3x3,1) (skip_connect,0) (sep_conv_3x3,1) (sep_conv_3x3,1) (sep_conv_3x3,3) "
     "(sep_conv_3x3,0) (dil_conv_5x5,4) | concat: 2,3,4,5\n"
     "reduce: (avg_pool_3x3,0) (sep_conv_5x5,1) (sep_conv_3x3,0) (dil_conv_5x5,2) (max_pool_3x3,0) (dil_conv_3x3,1) "
     "(dil_conv_3x3,1) (dil_conv_5x5,3) | concat: 2,3,4,5\n"},
    {"pc_darts",
     "normal: (sep_conv_3x3,1) (skip_connect,0) (sep_conv_3x3,0) (dil_conv_3x3,1) (sep_conv_5x5,0) (sep_conv_3x3,1) "
     "(avg_pool_3x3,0) (dil_conv_3x3,1) | concat: 2,3,4,5\n"
     "reduce: (sep_conv_5x5,1) (max_pool_3x3,0) (sep_conv_5x5,1) (sep_conv_5x5,2) (sep_conv_3x3,0) (sep_conv_3x3,3) "
     "(sep_conv_3x3,1) (sep_conv_3x3,2) | concat: 2,3,4,5\n"},
}};

void validate_cell(const CellGenotype& cell, const char* which) {
  for (int k = 0; k < kCellSteps; ++k) {
    const int node = k + kCellInputs;
    const Edge& a = cell.edges[std::size_t(2 * k)];
    const Edge& b = cell.edges[std::size_t(2 * k + 1)];
    for (const Edge* e : {&a, &b}) {
      if (e->from < 0 || e->from >= node) {
        throw DataError(std::string(which) + " cell: node " + std::to_string(node) + " reads from node " +
                        std::to_string(e->from) + ", must be in [0, " + std::to_string(node) + ")");
      }
    }
    if (a.from == b.from) {
      throw DataError(std::string(which) + " cell: node " + std::to_string(node) + " has two edges from node " +
                      std::to_string(a.from));
    }
  }
  if (cell.concat.empty()) throw DataError(std::string(which) + " cell: empty concat list");
  std::set<int> seen;
  for (int c : cell.concat) {
    if (c < kCellInputs || c >= kCellInputs + kCellSteps) {
      throw DataError(std::string(which) + " cell: concat index " + std::to_string(c) +
                      " is not an intermediate node (2..5)");
    }
    if (!seen.insert(c).second) throw DataError(std::string(which) + " cell: concat index " + std::to_string(c) + " repeated");
  }
}

// Position-tracking reader over one genotype text.
class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError("genotype parse error at line " + std::to_string(line_) + ", column " + std::to_string(col_) +
                    ": " + msg);
  }

  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }

  void advance(std::size_t n = 1) {
    for (std::size_t i = 0; i < n && !at_end(); ++i) {
      if (text_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else {
        ++col_;
      }
      ++pos_;
    }
  }

  void skip_blanks() {
    while (peek() == ' ' || peek() == '\t') advance();
  }

  void expect(std::string_view lit) {
    if (text_.substr(pos_, lit.size()) != lit) {
      fail("expected '" + std::string(lit) + "', found '" + std::string(text_.substr(pos_, lit.size())) + "'");
    }
    advance(lit.size());
  }

  std::string_view word() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) advance();
    return text_.substr(start, pos_ - start);
  }

  int integer() {
    const std::size_t start = pos_;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) advance();
    if (start == pos_) fail("expected a node index");
    if (pos_ - start > 6) fail("node index too long");
    return std::stoi(std::string(text_.substr(start, pos_ - start)));
  }

  std::size_t line() const { return line_; }
  std::size_t col() const { return col_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

CellGenotype parse_cell(Reader& r, std::string_view label) {
  r.expect(label);
  r.expect(":");
  CellGenotype cell;
  std::size_t count = 0;
  r.skip_blanks();
  while (r.peek() == '(') {
    const std::size_t line = r.line(), col = r.col();
    r.advance();
    r.skip_blanks();
    const std::size_t op_col = r.col();
    const std::string_view name = r.word();
    const auto op = op_from_name(name);
    if (!op) {
      throw DataError("genotype parse error at line " + std::to_string(line) + ", column " + std::to_string(op_col) +
                      ": unknown operation '" + std::string(name) + "'");
    }
    r.skip_blanks();
    r.expect(",");
    r.skip_blanks();
    const std::size_t from_col = r.col();
    const int from = r.integer();
    r.skip_blanks();
    r.expect(")");
    if (count >= std::size_t(kCellEdges)) {
      throw DataError("genotype parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                      ": " + std::string(label) + " cell has more than " + std::to_string(kCellEdges) + " edges");
    }
    const int node = int(count / 2) + kCellInputs;
    if (from >= node) {
      throw DataError("genotype parse error at line " + std::to_string(line) + ", column " + std::to_string(from_col) +
                      ": edge into node " + std::to_string(node) + " reads from node " + std::to_string(from) +
                      " (must be < " + std::to_string(node) + ")");
    }
    cell.edges[count++] = Edge{*op, from};
    r.skip_blanks();
  }
  if (count != std::size_t(kCellEdges)) {
    r.fail(std::string(label) + " cell has " + std::to_string(count) + " edges, expected " +
           std::to_string(kCellEdges));
  }
  r.expect("|");
  r.skip_blanks();
  r.expect("concat:");
  r.skip_blanks();
  cell.concat.clear();
  cell.concat.push_back(r.integer());
  while (r.peek() == ',') {
    r.advance();
    r.skip_blanks();
    cell.concat.push_back(r.integer());
  }
  r.skip_blanks();
  if (r.peek() == '\r') r.fail("CR line endings are not accepted");
  if (!r.at_end()) r.expect("\n");
  return cell;
}

void append_cell(std::string& out, std::string_view label, const CellGenotype& cell) {
  out += label;
  out += ":";
  for (const Edge& e : cell.edges) {
    out += " (";
    out += op_name(e.op);
    out += ",";
    out += std::to_string(e.from);
    out += ")";
  }
  out += " | concat: ";
  for (std::size_t i = 0; i < cell.concat.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(cell.concat[i]);
  }
  out += "\n";
}

CellGenotype sample_cell(std::mt19937_64& rng) {
  CellGenotype cell;
  std::uniform_int_distribution<std::size_t> pick_op(0, kAllOps.size() - 1);
  for (int k = 0; k < kCellSteps; ++k) {
    const int node = k + kCellInputs;
    std::uniform_int_distribution<int> first(0, node - 1);
    std::uniform_int_distribution<int> second(0, node - 2);
    const int a = first(rng);
    int b = second(rng);
    if (b >= a) ++b;
    cell.edges[std::size_t(2 * k)] = Edge{kAllOps[pick_op(rng)], a};
    cell.edges[std::size_t(2 * k + 1)] = Edge{kAllOps[pick_op(rng)], b};
  }
  return cell;
}

}  // namespace

std::string_view op_name(OpKind op) { return kOpNames[static_cast<std::size_t>(op)]; }

std::optional<OpKind> op_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i)
    if (kOpNames[i] == name) return kAllOps[i];
  return std::nullopt;
}

OpCategory op_category(OpKind op) {
  switch (op) {
    case OpKind::sep_conv_3x3:
    case OpKind::sep_conv_5x5:
      return OpCategory::sep_conv;
    case OpKind::dil_conv_3x3:
    case OpKind::dil_conv_5x5:
      return OpCategory::dil_conv;
    case OpKind::max_pool_3x3:
      return OpCategory::max_pool;
    case OpKind::avg_pool_3x3:
      return OpCategory::avg_pool;
    case OpKind::skip_connect:
      return OpCategory::skip;
  }
  return OpCategory::skip;
}

std::string_view category_name(OpCategory c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

void validate(const Genotype& g) {
  validate_cell(g.normal, "normal");
  validate_cell(g.reduce, "reduce");
}

Genotype parse_genotype(std::string_view text) {
  Reader r(text);
  Genotype g;
  g.normal = parse_cell(r, "normal");
  g.reduce = parse_cell(r, "reduce");
  if (!r.at_end()) r.fail("trailing content after reduce cell");
  validate(g);
  return g;
}

std::string serialize_genotype(const Genotype& g) {
  std::string out;
  append_cell(out, "normal", g.normal);
  append_cell(out, "reduce", g.reduce);
  return out;
}

Genotype sample_random(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Genotype g;
  g.normal = sample_cell(rng);
  g.reduce = sample_cell(rng);
  return g;
}

OpStats op_stats(const Genotype& g, CellKind cell) {
  const CellGenotype& c = cell == CellKind::normal ? g.normal : g.reduce;
  OpStats stats;
  for (const Edge& e : c.edges) ++stats.counts[static_cast<std::size_t>(op_category(e.op))];
  stats.unique_operations = int(std::count_if(stats.counts.begin(), stats.counts.end(), [](int n) { return n > 0; }));
  return stats;
}

Genotype builtin_genotype(std::string_view name) {
  for (const auto& b : kBuiltins)
    if (b.name == name) return parse_genotype(b.text);
  throw UsageError("unknown builtin genotype '" + std::string(name) + "'");
}

std::vector<std::string> builtin_genotype_names() {
  std::vector<std::string> names;
  for (const auto& b : kBuiltins) names.emplace_back(b.name);
  return names;
}

}  // namespace rnas
