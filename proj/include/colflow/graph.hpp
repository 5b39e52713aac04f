#pragma once

// Pipeline specs and the validated computation graph built from them.
//
// A spec is a JSON document:
//   { "dataset": ["uri", ...],
//     "stages": [ {"op": "define",   "name": ..., "expr": ...},
//                 {"op": "filter",   "expr": ..., "label": ...},
//                 {"op": "vary",     "column": ..., "kind": "weight"|"topology",
//                                    "tags": [...], "exprs": [...]},
//                 {"op": "histo1d",  "name": ..., "column": ..., "weight"?: ...,
//                                    "nbins": ..., "xmin": ..., "xmax": ...},
//                 {"op": "sum",      "name": ..., "column": ...},
//                 {"op": "count",    "name": ...},
//                 {"op": "snapshot", "columns": [...], "out": ...} ] }
//
// Stages form one linear chain: a filter applies to every stage after it.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "colflow/colstore.hpp"
#include "colflow/expr.hpp"

namespace colflow {

enum class StageKind { Define, Filter, Vary, Histo1D, Sum, Count, Snapshot };
enum class VariationKind { Weight, Topology };

std::string_view stage_kind_name(StageKind k);

struct StageSpec {
  StageKind kind = StageKind::Define;
  std::string name;    // define, histo1d, sum, count
  std::string expr;    // define, filter
  std::string label;   // filter
  std::string column;  // vary target, histo1d/sum input
  std::optional<std::string> weight;
  VariationKind variation = VariationKind::Weight;
  std::vector<std::string> tags;
  std::vector<std::string> exprs;  // vary
  std::uint32_t nbins = 0;
  double xmin = 0.0;
  double xmax = 0.0;
  std::vector<std::string> columns;  // snapshot
  std::string out;                   // snapshot prefix

  // Parsed bodies: one for define/filter, one per tag for vary.
  std::vector<expr::Expr> parsed;
};

struct PipelineSpec {
  std::vector<std::string> dataset;
  std::vector<StageSpec> stages;

  bool has_snapshot() const;
};

PipelineSpec load_spec(std::string_view document);
PipelineSpec load_spec_file(const std::filesystem::path& path);
// Canonical JSON text; load_spec(dump_spec(s)) reproduces s.
std::string dump_spec(const PipelineSpec& spec);

struct Node {
  StageKind kind = StageKind::Define;
  std::size_t stage = 0;
  std::string name;
  std::string label;
  std::vector<expr::Expr> exprs;  // typechecked
  std::size_t output_slot = 0;    // define
  std::size_t target_slot = 0;    // vary
  VariationKind variation = VariationKind::Weight;
  std::vector<std::string> tags;
  std::size_t column_slot = 0;    // histo1d, sum
  std::optional<std::size_t> weight_slot;
  std::uint32_t nbins = 0;
  double xmin = 0.0;
  double xmax = 0.0;
  std::size_t result_index = 0;   // position among actions
  std::vector<std::size_t> snapshot_slots;
  std::vector<std::string> snapshot_columns;
  std::string out;
  std::set<std::size_t> deps;  // slots read directly

  bool operator==(const Node&) const = default;
};

struct Universe {
  std::string label;
  // Unset for nominal.
  std::optional<std::size_t> vary_node;
  std::size_t tag_index = 0;
  std::size_t target_slot = 0;
  VariationKind kind = VariationKind::Weight;

  bool operator==(const Universe&) const = default;
};

class ComputationGraph {
 public:
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<ColumnSchema>& schema() const { return schema_; }
  const expr::Scope& scope() const { return scope_; }
  const std::vector<Universe>& universe_list() const { return universes_; }
  std::optional<std::size_t> universe_index(std::string_view label) const;

  // Base columns some stage reads, in schema order.
  const std::vector<std::string>& required_columns() const { return required_; }
  std::size_t base_slot_count() const { return schema_.size(); }
  bool is_base_slot(std::size_t slot) const { return slot < schema_.size(); }
  // Node that defines a non-base slot.
  std::size_t defining_node(std::size_t slot) const { return slot_node_[slot]; }
  // affected(u)[n]: node n must be recomputed in universe u.
  const std::vector<bool>& affected(std::size_t universe) const { return affected_[universe]; }

  // Action nodes (histo1d/sum/count) in declaration order.
  const std::vector<std::size_t>& actions() const { return actions_; }
  std::optional<std::size_t> snapshot_node() const { return snapshot_; }

  bool operator==(const ComputationGraph& o) const;

 private:
  friend ComputationGraph build(const PipelineSpec& spec, std::span<const ColumnSchema> schema);

  std::vector<ColumnSchema> schema_;
  expr::Scope scope_;
  std::vector<Node> nodes_;
  std::vector<Universe> universes_;
  std::vector<std::string> required_;
  std::vector<std::size_t> slot_node_;
  std::vector<std::vector<bool>> affected_;
  std::vector<std::size_t> actions_;
  std::optional<std::size_t> snapshot_;
};

ComputationGraph build(const PipelineSpec& spec, std::span<const ColumnSchema> schema);

// "nominal" followed by every variation tag in declaration order.
std::vector<std::string> universes(const ComputationGraph& g);

// Nodes that must be re-evaluated in `universe`; empty for "nominal".
std::set<std::size_t> affected_nodes(const ComputationGraph& g, std::string_view universe);

}  // namespace colflow
