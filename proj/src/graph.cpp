#include "colflow/graph.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unordered_set>

#include "colflow/error.hpp"
#include "colflow/hist.hpp"

namespace colflow {

namespace {

using json = nlohmann::ordered_json;

struct StageContext {
  std::size_t index;
  const json& obj;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError("stage " + std::to_string(index) + ": " + msg);
  }

  const json& field(const char* key) const {
    auto it = obj.find(key);
    if (it == obj.end()) fail(std::string("missing required field '") + key + "'");
    return *it;
  }

  std::string str(const char* key) const {
    const auto& v = field(key);
    if (!v.is_string()) fail(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
  }

  double number(const char* key) const {
    const auto& v = field(key);
    if (!v.is_number()) fail(std::string("field '") + key + "' must be a number");
    return v.get<double>();
  }

  std::vector<std::string> strings(const char* key) const {
    const auto& v = field(key);
    if (!v.is_array()) fail(std::string("field '") + key + "' must be a list of strings");
    std::vector<std::string> out;
    for (const auto& item : v) {
      if (!item.is_string()) fail(std::string("field '") + key + "' must be a list of strings");
      out.push_back(item.get<std::string>());
    }
    return out;
  }

  expr::Expr parse(const std::string& text) const {
    try {
      return expr::parse(text);
    } catch (const expr::ParseError& e) {
      fail(e.what());
    }
  }
};

StageKind parse_kind(const StageContext& ctx) {
  auto op = ctx.str("op");
  if (op == "define") return StageKind::Define;
  if (op == "filter") return StageKind::Filter;
  if (op == "vary") return StageKind::Vary;
  if (op == "histo1d") return StageKind::Histo1D;
  if (op == "sum") return StageKind::Sum;
  if (op == "count") return StageKind::Count;
  if (op == "snapshot") return StageKind::Snapshot;
  ctx.fail("unknown stage kind '" + op + "'");
}

void collect_slots(const expr::Expr& e, std::set<std::size_t>& out) {
  if (e.kind == expr::Expr::Kind::Column) out.insert(e.slot);
  for (const auto& a : e.args) collect_slots(a, out);
}

bool is_result(StageKind k) { return k == StageKind::Histo1D || k == StageKind::Sum || k == StageKind::Count; }

}  // namespace

std::string_view stage_kind_name(StageKind k) {
  switch (k) {
    case StageKind::Define: return "define";
    case StageKind::Filter: return "filter";
    case StageKind::Vary: return "vary";
    case StageKind::Histo1D: return "histo1d";
    case StageKind::Sum: return "sum";
    case StageKind::Count: return "count";
    case StageKind::Snapshot: return "snapshot";
  }
  return "?";
}

bool PipelineSpec::has_snapshot() const {
  return std::any_of(stages.begin(), stages.end(), [](const StageSpec& s) { return s.kind == StageKind::Snapshot; });
}

PipelineSpec load_spec(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("spec is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("spec must be a JSON object");

  PipelineSpec spec;
  auto ds = doc.find("dataset");
  if (ds == doc.end() || !ds->is_array()) throw ValidationError("spec needs a 'dataset' list");
  for (const auto& uri : *ds) {
    if (!uri.is_string()) throw ValidationError("'dataset' entries must be strings");
    spec.dataset.push_back(uri.get<std::string>());
  }
  if (spec.dataset.empty()) throw ValidationError("spec 'dataset' must name at least one file");

  auto stages = doc.find("stages");
  if (stages == doc.end() || !stages->is_array()) throw ValidationError("spec needs a 'stages' list");

  std::unordered_set<std::string> result_names;
  bool has_result = false;
  for (std::size_t i = 0; i < stages->size(); ++i) {
    const auto& obj = (*stages)[i];
    if (!obj.is_object()) throw ValidationError("stage " + std::to_string(i) + ": must be an object");
    StageContext ctx{i, obj};
    StageSpec st;
    st.kind = parse_kind(ctx);
    switch (st.kind) {
      case StageKind::Define:
        st.name = ctx.str("name");
        if (!valid_column_name(st.name)) ctx.fail("invalid column name '" + st.name + "'");
        st.expr = ctx.str("expr");
        st.parsed.push_back(ctx.parse(st.expr));
        break;
      case StageKind::Filter:
        st.expr = ctx.str("expr");
        st.label = obj.contains("label") ? ctx.str("label") : "filter" + std::to_string(i);
        st.parsed.push_back(ctx.parse(st.expr));
        break;
      case StageKind::Vary: {
        st.column = ctx.str("column");
        auto kind = ctx.str("kind");
        if (kind == "weight") {
          st.variation = VariationKind::Weight;
        } else if (kind == "topology") {
          st.variation = VariationKind::Topology;
        } else {
          ctx.fail("vary kind must be \"weight\" or \"topology\", got '" + kind + "'");
        }
        st.tags = ctx.strings("tags");
        st.exprs = ctx.strings("exprs");
        if (st.tags.empty()) ctx.fail("vary needs at least one tag");
        if (st.tags.size() != st.exprs.size()) ctx.fail("vary needs exactly one expression per tag");
        for (const auto& e : st.exprs) st.parsed.push_back(ctx.parse(e));
        break;
      }
      case StageKind::Histo1D: {
        st.name = ctx.str("name");
        st.column = ctx.str("column");
        if (obj.contains("weight")) st.weight = ctx.str("weight");
        const auto& nb = ctx.field("nbins");
        if (!nb.is_number_integer() || nb.get<std::int64_t>() < 1 || nb.get<std::int64_t>() > 100000000) {
          ctx.fail("nbins must be a positive integer");
        }
        st.nbins = nb.get<std::uint32_t>();
        st.xmin = ctx.number("xmin");
        st.xmax = ctx.number("xmax");
        if (!(st.xmin < st.xmax)) ctx.fail("histogram needs xmin < xmax");
        break;
      }
      case StageKind::Sum:
        st.name = ctx.str("name");
        st.column = ctx.str("column");
        break;
      case StageKind::Count:
        st.name = ctx.str("name");
        break;
      case StageKind::Snapshot:
        st.columns = ctx.strings("columns");
        st.out = ctx.str("out");
        if (st.columns.empty()) ctx.fail("snapshot needs at least one column");
        if (st.out.empty()) ctx.fail("snapshot needs a non-empty 'out' prefix");
        if (spec.has_snapshot()) ctx.fail("only one snapshot stage is supported");
        break;
    }
    if (is_result(st.kind)) {
      if (!result_names.insert(st.name).second) ctx.fail("duplicate result name '" + st.name + "'");
    }
    has_result = has_result || is_result(st.kind) || st.kind == StageKind::Snapshot;
    spec.stages.push_back(std::move(st));
  }
  if (!has_result) throw ValidationError("spec needs at least one histo1d, sum, count or snapshot stage");

  std::unordered_set<std::string> tags;
  for (const auto& st : spec.stages) {
    for (const auto& t : st.tags) {
      if (t == "nominal") throw ValidationError("variation tag 'nominal' is reserved");
      if (!tags.insert(t).second) throw ValidationError("duplicate variation tag '" + t + "'");
    }
  }
  return spec;
}

PipelineSpec load_spec_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read spec file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_spec(ss.str());
}

std::string dump_spec(const PipelineSpec& spec) {
  json doc;
  doc["dataset"] = spec.dataset;
  json stages = json::array();
  for (const auto& st : spec.stages) {
    json s;
    s["op"] = std::string(stage_kind_name(st.kind));
    switch (st.kind) {
      case StageKind::Define:
        s["name"] = st.name;
        s["expr"] = st.expr;
        break;
      case StageKind::Filter:
        s["expr"] = st.expr;
        s["label"] = st.label;
        break;
      case StageKind::Vary:
        s["column"] = st.column;
        s["kind"] = st.variation == VariationKind::Weight ? "weight" : "topology";
        s["tags"] = st.tags;
        s["exprs"] = st.exprs;
        break;
      case StageKind::Histo1D:
        s["name"] = st.name;
        s["column"] = st.column;
        if (st.weight) s["weight"] = *st.weight;
        s["nbins"] = st.nbins;
        s["xmin"] = st.xmin;
        s["xmax"] = st.xmax;
        break;
      case StageKind::Sum:
        s["name"] = st.name;
        s["column"] = st.column;
        break;
      case StageKind::Count:
        s["name"] = st.name;
        break;
      case StageKind::Snapshot:
        s["columns"] = st.columns;
        s["out"] = st.out;
        break;
    }
    stages.push_back(std::move(s));
  }
  doc["stages"] = std::move(stages);
  return doc.dump(2);
}

// ---------------------------------------------------------------------------

std::optional<std::size_t> ComputationGraph::universe_index(std::string_view label) const {
  for (std::size_t i = 0; i < universes_.size(); ++i) {
    if (universes_[i].label == label) return i;
  }
  return std::nullopt;
}

bool ComputationGraph::operator==(const ComputationGraph& o) const {
  if (scope_.size() != o.scope_.size()) return false;
  for (std::size_t i = 0; i < scope_.size(); ++i) {
    if (scope_.name(i) != o.scope_.name(i) || scope_.type(i) != o.scope_.type(i)) return false;
  }
  return schema_ == o.schema_ && nodes_ == o.nodes_ && universes_ == o.universes_ && required_ == o.required_ &&
         slot_node_ == o.slot_node_ && affected_ == o.affected_ && actions_ == o.actions_ &&
         snapshot_ == o.snapshot_;
}

ComputationGraph build(const PipelineSpec& spec, std::span<const ColumnSchema> schema) {
  using expr::ValueType;
  ComputationGraph g;
  g.schema_.assign(schema.begin(), schema.end());
  for (const auto& c : schema) g.scope_.add(c.name, expr::from_dtype(c.dtype));
  g.slot_node_.assign(schema.size(), static_cast<std::size_t>(-1));
  g.universes_.push_back(Universe{"nominal", std::nullopt, 0, 0, VariationKind::Weight});

  std::size_t result_index = 0;
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& st = spec.stages[i];
    auto fail = [&](const std::string& msg) -> void {
      throw ValidationError("stage " + std::to_string(i) + " (" + std::string(stage_kind_name(st.kind)) +
                            "): " + msg);
    };
    auto check = [&](expr::Expr e) {
      try {
        expr::typecheck(e, g.scope_);
      } catch (const ValidationError& err) {
        fail(err.what());
      }
      return e;
    };
    auto lookup = [&](const std::string& name) {
      auto b = g.scope_.find(name);
      if (!b) fail("unknown column '" + name + "'");
      return *b;
    };

    Node n;
    n.kind = st.kind;
    n.stage = i;
    n.name = st.name;
    n.label = st.label;
    switch (st.kind) {
      case StageKind::Define: {
        if (g.scope_.find(st.name)) fail("define '" + st.name + "' shadows an existing column");
        n.exprs.push_back(check(st.parsed.at(0)));
        collect_slots(n.exprs[0], n.deps);
        n.output_slot = g.scope_.add(st.name, n.exprs[0].type);
        g.slot_node_.push_back(g.nodes_.size());
        break;
      }
      case StageKind::Filter:
        n.exprs.push_back(check(st.parsed.at(0)));
        if (n.exprs[0].type != ValueType::BOOL) {
          fail("filter must be boolean, got " + std::string(expr::type_name(n.exprs[0].type)));
        }
        collect_slots(n.exprs[0], n.deps);
        break;
      case StageKind::Vary: {
        auto target = g.scope_.find(st.column);
        if (!target) fail("vary target '" + st.column + "' is not a column");
        n.target_slot = target->slot;
        n.variation = st.variation;
        n.tags = st.tags;
        for (std::size_t k = 0; k < st.parsed.size(); ++k) {
          n.exprs.push_back(check(st.parsed[k]));
          if (n.exprs.back().type != target->type) {
            fail("variation '" + st.tags[k] + "' yields " + std::string(expr::type_name(n.exprs.back().type)) +
                 " but '" + st.column + "' is " + std::string(expr::type_name(target->type)));
          }
          collect_slots(n.exprs.back(), n.deps);
        }
        for (std::size_t k = 0; k < st.tags.size(); ++k) {
          g.universes_.push_back(Universe{st.tags[k], g.nodes_.size(), k, n.target_slot, st.variation});
        }
        break;
      }
      case StageKind::Histo1D: {
        auto col = lookup(st.column);
        if (!expr::is_numeric(col.type)) {
          fail("histogram column '" + st.column + "' must be numeric, got " + std::string(expr::type_name(col.type)));
        }
        n.column_slot = col.slot;
        n.deps.insert(col.slot);
        if (st.weight) {
          auto w = lookup(*st.weight);
          if (!expr::is_numeric(w.type) || expr::is_vector(w.type)) {
            fail("histogram weight '" + *st.weight + "' must be a numeric scalar");
          }
          n.weight_slot = w.slot;
          n.deps.insert(w.slot);
        }
        try {
          Histo1D probe(st.name, st.nbins, st.xmin, st.xmax);
        } catch (const ValidationError& e) {
          fail(e.what());
        }
        n.nbins = st.nbins;
        n.xmin = st.xmin;
        n.xmax = st.xmax;
        n.result_index = result_index++;
        break;
      }
      case StageKind::Sum: {
        auto col = lookup(st.column);
        if (!expr::is_numeric(col.type) || expr::is_vector(col.type)) {
          fail("sum column '" + st.column + "' must be a numeric scalar");
        }
        n.column_slot = col.slot;
        n.deps.insert(col.slot);
        n.result_index = result_index++;
        break;
      }
      case StageKind::Count:
        n.result_index = result_index++;
        break;
      case StageKind::Snapshot:
        for (const auto& c : st.columns) {
          auto b = lookup(c);
          if (!expr::to_dtype(b.type)) fail("column '" + c + "' of type VEC_BOOL cannot be stored");
          n.snapshot_slots.push_back(b.slot);
          n.snapshot_columns.push_back(c);
          n.deps.insert(b.slot);
        }
        n.out = st.out;
        g.snapshot_ = g.nodes_.size();
        break;
    }
    if (is_result(st.kind)) g.actions_.push_back(g.nodes_.size());
    g.nodes_.push_back(std::move(n));
  }

  // Per-universe closure over dependency edges starting at the varied column,
  // restricted to nodes after the vary stage.
  g.affected_.assign(g.universes_.size(), std::vector<bool>(g.nodes_.size(), false));
  for (std::size_t u = 1; u < g.universes_.size(); ++u) {
    const auto& uni = g.universes_[u];
    std::set<std::size_t> varied{uni.target_slot};
    for (std::size_t k = *uni.vary_node + 1; k < g.nodes_.size(); ++k) {
      const auto& n = g.nodes_[k];
      if (n.kind == StageKind::Vary) continue;
      bool hit = std::any_of(n.deps.begin(), n.deps.end(), [&](std::size_t s) { return varied.count(s) > 0; });
      if (!hit) continue;
      g.affected_[u][k] = true;
      if (n.kind == StageKind::Define) varied.insert(n.output_slot);
      if (n.kind == StageKind::Filter && uni.kind == VariationKind::Weight) {
        throw ValidationError("weight variation '" + uni.label + "' changes filter at stage " +
                              std::to_string(n.stage) + "; declare it as topology");
      }
    }
  }

  std::set<std::size_t> base_used;
  for (const auto& n : g.nodes_) {
    for (auto s : n.deps) {
      if (g.is_base_slot(s)) base_used.insert(s);
    }
  }
  for (auto s : base_used) g.required_.push_back(g.schema_[s].name);
  return g;
}

std::vector<std::string> universes(const ComputationGraph& g) {
  std::vector<std::string> out;
  for (const auto& u : g.universe_list()) out.push_back(u.label);
  return out;
}

std::set<std::size_t> affected_nodes(const ComputationGraph& g, std::string_view universe) {
  auto idx = g.universe_index(universe);
  if (!idx) throw ValidationError("unknown universe '" + std::string(universe) + "'");
  std::set<std::size_t> out;
  const auto& flags = g.affected(*idx);
  for (std::size_t k = 0; k < flags.size(); ++k) {
    if (flags[k]) out.insert(k);
  }
  return out;
}

}  // namespace colflow
