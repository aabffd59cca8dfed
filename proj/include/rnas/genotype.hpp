#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rnas {

/// The seven sampleable operations of the DARTS cell search space.
enum class OpKind : std::uint8_t {
  sep_conv_3x3,
  sep_conv_5x5,
  dil_conv_3x3,
  dil_conv_5x5,
  max_pool_3x3,
  avg_pool_3x3,
  skip_connect,
};

inline constexpr std::array<OpKind, 7> kAllOps = {
    OpKind::sep_conv_3x3, OpKind::sep_conv_5x5, OpKind::dil_conv_3x3, OpKind::dil_conv_5x5,
    OpKind::max_pool_3x3, OpKind::avg_pool_3x3, OpKind::skip_connect,
};

/// Operation families with both kernel sizes of each conv merged.
enum class OpCategory : std::uint8_t { max_pool, avg_pool, skip, sep_conv, dil_conv };
inline constexpr std::size_t kNumCategories = 5;

std::string_view op_name(OpKind op);
std::optional<OpKind> op_from_name(std::string_view name);
OpCategory op_category(OpKind op);
std::string_view category_name(OpCategory c);

inline constexpr int kCellInputs = 2;
inline constexpr int kCellSteps = 4;
inline constexpr int kCellEdges = 2 * kCellSteps;

struct Edge {
  OpKind op = OpKind::skip_connect;
  int from = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Edges 2k and 2k+1 feed intermediate node k+2.
struct CellGenotype {
  std::array<Edge, kCellEdges> edges{};
  std::vector<int> concat{2, 3, 4, 5};
  friend bool operator==(const CellGenotype&, const CellGenotype&) = default;
};

struct Genotype {
  CellGenotype normal;
  CellGenotype reduce;
  friend bool operator==(const Genotype&, const Genotype&) = default;
};

enum class CellKind { normal, reduce };

/// Throws DataError when edges are cyclic, a node's two inputs coincide, or
/// the concat list is empty, repeated, or references a non-intermediate node.
void validate(const Genotype& g);

/// Canonical text form:
///   normal: (op,from) x8 | concat: 2,3,4,5\n
///   reduce: (op,from) x8 | concat: 2,3,4,5\n
Genotype parse_genotype(std::string_view text);
std::string serialize_genotype(const Genotype& g);

/// Uniform sample: per intermediate node, two distinct predecessors and an
/// independent uniform operation per edge. Deterministic per seed.
Genotype sample_random(std::uint64_t seed);

struct OpStats {
  std::array<int, kNumCategories> counts{};  // indexed by OpCategory
  int unique_operations = 0;
  int count(OpCategory c) const { return counts[static_cast<std::size_t>(c)]; }
  friend bool operator==(const OpStats&, const OpStats&) = default;
};

OpStats op_stats(const Genotype& g, CellKind cell);

/// Published searched cells: "darts_v2", "pdarts", "pc_darts".
Genotype builtin_genotype(std::string_view name);
std::vector<std::string> builtin_genotype_names();

}  // namespace rnas
