#include "colflow/engine.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>

#include "colflow/error.hpp"

namespace colflow {

using expr::Value;
using Clock = std::chrono::steady_clock;

std::string to_string(const RunMode& m) {
  switch (m.kind) {
    case RunModeKind::SinglePass: return "single_pass";
    case RunModeKind::OnlyUniverse: return "only:" + m.universe;
    case RunModeKind::LegacyPasses: return "legacy_passes";
  }
  return "?";
}

const NamedResult* UniverseResult::find(std::string_view name) const {
  for (const auto& r : results) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const UniverseResult* PartialResult::universe(std::string_view label) const {
  for (const auto& u : universes) {
    if (u.label == label) return &u;
  }
  return nullptr;
}

namespace {

const NamedResult& find_result(const PartialResult& p, std::string_view universe, std::string_view name) {
  const auto* u = p.universe(universe);
  if (!u) throw Error("no universe '" + std::string(universe) + "' in result");
  const auto* r = u->find(name);
  if (!r) throw Error("no result '" + std::string(name) + "' in universe '" + std::string(universe) + "'");
  return *r;
}

}  // namespace

const Histo1D& PartialResult::histo(std::string_view universe, std::string_view name) const {
  const auto& r = find_result(*this, universe, name);
  const auto* h = std::get_if<Histo1D>(&r.value);
  if (!h) throw Error("result '" + std::string(name) + "' is not a histogram");
  return *h;
}

const ScalarAccumulator& PartialResult::scalar(std::string_view universe, std::string_view name) const {
  const auto& r = find_result(*this, universe, name);
  const auto* s = std::get_if<ScalarAccumulator>(&r.value);
  if (!s) throw Error("result '" + std::string(name) + "' is not a scalar");
  return *s;
}

void PartialResult::merge(const PartialResult& o) {
  for (const auto& ou : o.universes) {
    auto it = std::find_if(universes.begin(), universes.end(), [&](const auto& u) { return u.label == ou.label; });
    if (it == universes.end()) {
      universes.push_back(ou);
      continue;
    }
    for (const auto& r : ou.results) {
      auto rt = std::find_if(it->results.begin(), it->results.end(), [&](const auto& x) { return x.name == r.name; });
      if (rt == it->results.end()) {
        it->results.push_back(r);
        continue;
      }
      if (rt->value.index() != r.value.index()) throw Error("cannot merge results of different kinds: " + r.name);
      if (auto* h = std::get_if<Histo1D>(&rt->value)) {
        h->merge(std::get<Histo1D>(r.value));
      } else {
        std::get<ScalarAccumulator>(rt->value).merge(std::get<ScalarAccumulator>(r.value));
      }
    }
  }
  snapshot_parts.insert(snapshot_parts.end(), o.snapshot_parts.begin(), o.snapshot_parts.end());
  events_processed += o.events_processed;
  t_loop += o.t_loop;
  t_total += o.t_total;
  bytes_read += o.bytes_read;
  chunk_bytes += o.chunk_bytes;
  read_calls += o.read_calls;
  peak_buffer_bytes = std::max(peak_buffer_bytes, o.peak_buffer_bytes);
}

bool same_results(const PartialResult& a, const PartialResult& b) {
  if (a.universes.size() != b.universes.size()) return false;
  for (const auto& u : a.universes) {
    const auto* v = b.universe(u.label);
    if (!v || !(*v == u)) return false;
  }
  return true;
}

std::filesystem::path snapshot_part_name(const std::string& out, const std::string& range_id) {
  return std::filesystem::path(out + ".part" + range_id + ".col");
}

namespace {

double to_double(const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* b = std::get_if<bool>(&v)) return *b ? 1.0 : 0.0;
  throw EvalError("expected a numeric scalar");
}

class Evaluator;

class UniverseContext final : public expr::RowContext {
 public:
  UniverseContext(Evaluator* ev, std::size_t universe, std::size_t stage) : ev_(ev), universe_(universe), stage_(stage) {}
  const Value& at(std::size_t slot) const override;

 private:
  Evaluator* ev_;
  std::size_t universe_;
  std::size_t stage_;
};

// An evaluation failure tagged with the node whose expression failed. Lazy
// evaluation means that node can be upstream of the stage being executed.
class NodeEvalError : public EvalError {
 public:
  NodeEvalError(const std::string& what, std::size_t node) : EvalError(what), node(node) {}
  std::size_t node;
};

Value eval_node(std::size_t node, const expr::Expr& e, const expr::RowContext& ctx) {
  try {
    return expr::eval(e, ctx);
  } catch (const NodeEvalError&) {
    throw;
  } catch (const EvalError& err) {
    throw NodeEvalError(err.what(), node);
  }
}

// Per-event lazy evaluation. Every memo entry carries the epoch of the event
// it was computed for, so nothing needs clearing between events.
class Evaluator {
 public:
  explicit Evaluator(const ComputationGraph& g)
      : g_(g),
        base_cols_(g.base_slot_count(), nullptr),
        base_(g.base_slot_count()),
        nominal_(g.nodes().size()),
        filter_(g.nodes().size()),
        varied_(g.universe_list().size()),
        per_universe_(g.universe_list().size()) {}

  void bind_base(std::size_t slot, const ColumnData* col) { base_cols_[slot] = col; }

  void begin_event(std::size_t row) {
    row_ = row;
    ++epoch_;
  }

  const Value& lookup(std::size_t slot, std::size_t u, std::size_t stage) {
    if (u != 0) {
      const auto& uni = g_.universe_list()[u];
      if (slot == uni.target_slot && *uni.vary_node < stage) {
        auto& m = varied_[u];
        if (m.stamp != epoch_) {
          const auto& node = g_.nodes()[*uni.vary_node];
          m.value = eval_node(*uni.vary_node, node.exprs[uni.tag_index], UniverseContext(this, 0, *uni.vary_node));
          m.stamp = epoch_;
        }
        return m.value;
      }
    }
    if (g_.is_base_slot(slot)) {
      auto& m = base_[slot];
      if (m.stamp != epoch_) {
        m.value = expr::value_at(*base_cols_[slot], row_);
        m.stamp = epoch_;
      }
      return m.value;
    }
    const std::size_t d = g_.defining_node(slot);
    const bool own = u != 0 && g_.affected(u)[d];
    auto& memo = own ? slot_for(u, d) : nominal_[d];
    if (memo.stamp != epoch_) {
      memo.value = eval_node(d, g_.nodes()[d].exprs[0], UniverseContext(this, own ? u : 0, d));
      memo.stamp = epoch_;
    }
    return memo.value;
  }

  bool filter(std::size_t node, std::size_t u) {
    const bool own = u != 0 && g_.affected(u)[node];
    if (own) return std::get<bool>(eval_node(node, g_.nodes()[node].exprs[0], UniverseContext(this, u, node)));
    auto& m = filter_[node];
    if (m.stamp != epoch_) {
      m.pass = std::get<bool>(eval_node(node, g_.nodes()[node].exprs[0], UniverseContext(this, 0, node)));
      m.stamp = epoch_;
    }
    return m.pass;
  }

 private:
  struct Memo {
    Value value;
    std::uint64_t stamp = 0;
  };
  struct FilterMemo {
    bool pass = false;
    std::uint64_t stamp = 0;
  };

  Memo& slot_for(std::size_t u, std::size_t node) {
    auto& v = per_universe_[u];
    if (v.empty()) v.resize(g_.nodes().size());
    return v[node];
  }

  const ComputationGraph& g_;
  std::vector<const ColumnData*> base_cols_;
  std::size_t row_ = 0;
  std::uint64_t epoch_ = 0;
  std::vector<Memo> base_;
  std::vector<Memo> nominal_;
  std::vector<FilterMemo> filter_;
  std::vector<Memo> varied_;
  std::vector<std::vector<Memo>> per_universe_;
};

const Value& UniverseContext::at(std::size_t slot) const { return ev_->lookup(slot, universe_, stage_); }

// Buffers passing rows and writes them as a colstore part file.
class SnapshotSink {
 public:
  static constexpr std::size_t kClusterRows = 10000;

  SnapshotSink(const ComputationGraph& g, const Node& node, const std::filesystem::path& path) : node_(node) {
    std::vector<ColumnSchema> schema;
    for (std::size_t i = 0; i < node.snapshot_slots.size(); ++i) {
      auto dt = *expr::to_dtype(g.scope().type(node.snapshot_slots[i]));
      schema.push_back({node.snapshot_columns[i], dt});
      buffers_.push_back(empty_column(dt));
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    try {
      writer_.emplace(path, std::move(schema));
    } catch (const std::exception& e) {
      throw Error("cannot write snapshot part " + path.string() + ": " + e.what());
    }
  }

  void append(Evaluator& ev, std::size_t stage) {
    for (std::size_t i = 0; i < node_.snapshot_slots.size(); ++i) {
      expr::append_value(buffers_[i], ev.lookup(node_.snapshot_slots[i], 0, stage));
    }
    if (++rows_ >= kClusterRows) flush();
  }

  void finish() {
    flush();
    writer_->finish();
  }

 private:
  void flush() {
    if (rows_ == 0) return;
    ColumnTable table;
    for (std::size_t i = 0; i < buffers_.size(); ++i) {
      table.push_back(Column{node_.snapshot_columns[i], std::move(buffers_[i])});
      buffers_[i] = empty_column(table.back().dtype());
    }
    writer_->write_cluster(table);
    rows_ = 0;
  }

  const Node& node_;
  std::vector<ColumnData> buffers_;
  std::size_t rows_ = 0;
  std::optional<DatasetWriter> writer_;
};

std::vector<UniverseResult> empty_results(const ComputationGraph& g, const std::vector<std::size_t>& universes) {
  std::vector<UniverseResult> out;
  for (auto u : universes) {
    UniverseResult ur{g.universe_list()[u].label, {}};
    for (auto a : g.actions()) {
      const auto& n = g.nodes()[a];
      switch (n.kind) {
        case StageKind::Histo1D: ur.results.push_back({n.name, Histo1D(n.name, n.nbins, n.xmin, n.xmax)}); break;
        case StageKind::Sum: ur.results.push_back({n.name, ScalarAccumulator{ScalarAccumulator::Kind::Sum, 0.0}}); break;
        default: ur.results.push_back({n.name, ScalarAccumulator{ScalarAccumulator::Kind::Count, 0.0}}); break;
      }
    }
    out.push_back(std::move(ur));
  }
  return out;
}

void check_schema(const ComputationGraph& g, const DatasetInfo& info) {
  for (const auto& name : g.required_columns()) {
    auto idx = info.column_index(name);
    auto want = g.schema()[g.scope().find(name)->slot].dtype;
    if (!idx) throw ValidationError(info.uri + " has no column '" + name + "'");
    if (info.schema[*idx].dtype != want) {
      throw ValidationError(info.uri + ": column '" + name + "' is " + std::string(dtype_name(info.schema[*idx].dtype)) +
                            ", graph expects " + std::string(dtype_name(want)));
    }
  }
}

// One traversal of [begin, end) for the given universes. Appends results and
// adds timing and read counters into `out`.
void run_pass(const ComputationGraph& g, Dataset& ds, std::uint64_t begin, std::uint64_t end,
              const std::vector<std::size_t>& universes, const RangeOptions& opts, PartialResult& out) {
  const auto before = ds.account();
  auto results = empty_results(g, universes);
  const auto& nodes = g.nodes();

  std::optional<SnapshotSink> sink;
  std::filesystem::path part;
  const bool writes_snapshot =
      g.snapshot_node() && std::find(universes.begin(), universes.end(), 0) != universes.end();
  if (writes_snapshot) {
    part = snapshot_part_name(nodes[*g.snapshot_node()].out, opts.range_id);
    sink.emplace(g, nodes[*g.snapshot_node()], opts.write_root / part);
  }

  Evaluator ev(g);
  const auto& required = g.required_columns();
  std::vector<std::size_t> base_slots;
  for (const auto& name : required) base_slots.push_back(g.scope().find(name)->slot);

  auto t0 = Clock::now();
  auto stream = ds.read_range(required, begin, end);
  while (auto batch = stream.next()) {
    out.peak_buffer_bytes = std::max(out.peak_buffer_bytes, batch->byte_size());
    for (std::size_t i = 0; i < base_slots.size(); ++i) ev.bind_base(base_slots[i], &batch->columns[i].data);
    for (std::size_t row = 0; row < batch->entry_count; ++row) {
      ev.begin_event(row);
      for (std::size_t ui = 0; ui < universes.size(); ++ui) {
        const std::size_t u = universes[ui];
        std::size_t k = 0;
        try {
          for (; k < nodes.size(); ++k) {
            const auto& n = nodes[k];
            switch (n.kind) {
              case StageKind::Define:
              case StageKind::Vary:
                break;
              case StageKind::Filter:
                if (!ev.filter(k, u)) k = nodes.size();
                break;
              case StageKind::Histo1D: {
                double w = n.weight_slot ? to_double(ev.lookup(*n.weight_slot, u, k)) : 1.0;
                auto& h = std::get<Histo1D>(results[ui].results[n.result_index].value);
                const Value& x = ev.lookup(n.column_slot, u, k);
                if (const auto* vd = std::get_if<std::vector<double>>(&x)) {
                  for (double e : *vd) h.fill(e, w);
                } else if (const auto* vi = std::get_if<std::vector<std::int64_t>>(&x)) {
                  for (auto e : *vi) h.fill(static_cast<double>(e), w);
                } else {
                  h.fill(to_double(x), w);
                }
                break;
              }
              case StageKind::Sum:
                std::get<ScalarAccumulator>(results[ui].results[n.result_index].value).value +=
                    to_double(ev.lookup(n.column_slot, u, k));
                break;
              case StageKind::Count:
                std::get<ScalarAccumulator>(results[ui].results[n.result_index].value).value += 1.0;
                break;
              case StageKind::Snapshot:
                if (u == 0 && sink) sink->append(ev, k);
                break;
            }
          }
        } catch (const EvalError& e) {
          auto* tagged = dynamic_cast<const NodeEvalError*>(&e);
          const auto& n = nodes[tagged ? tagged->node : std::min(k, nodes.size() - 1)];
          std::string what = std::string(stage_kind_name(n.kind));
          if (!n.name.empty()) what += " '" + n.name + "'";
          throw EvalError("event " + std::to_string(batch->entry_start + row) + ", stage " + std::to_string(n.stage) +
                          " (" + what + "), universe '" + g.universe_list()[u].label + "': " + e.what());
        }
      }
    }
  }
  out.t_loop += std::chrono::duration<double>(Clock::now() - t0).count();

  if (sink) {
    sink->finish();
    out.snapshot_parts.push_back(part.generic_string());
  }
  for (auto& r : results) out.universes.push_back(std::move(r));
  const auto& after = ds.account();
  out.bytes_read += after.bytes_read - before.bytes_read;
  out.chunk_bytes += after.chunk_bytes - before.chunk_bytes;
  out.read_calls += after.read_calls - before.read_calls;
}

}  // namespace

PartialResult run_range(const ComputationGraph& g, Dataset& ds, std::uint64_t begin, std::uint64_t end,
                        const RunMode& mode, const RangeOptions& opts) {
  check_range(ds.info(), EntryRange{ds.info().uri, begin, end});
  check_schema(g, ds.info());

  const std::size_t nuniverses = g.universe_list().size();
  PartialResult out;
  out.events_processed = end - begin;
  switch (mode.kind) {
    case RunModeKind::SinglePass: {
      std::vector<std::size_t> all(nuniverses);
      for (std::size_t u = 0; u < nuniverses; ++u) all[u] = u;
      run_pass(g, ds, begin, end, all, opts, out);
      break;
    }
    case RunModeKind::OnlyUniverse: {
      auto u = g.universe_index(mode.universe);
      if (!u) throw ValidationError("unknown universe '" + mode.universe + "'");
      run_pass(g, ds, begin, end, {*u}, opts, out);
      break;
    }
    case RunModeKind::LegacyPasses: {
      std::vector<std::size_t> first{0};
      std::vector<std::size_t> topology;
      for (std::size_t u = 1; u < nuniverses; ++u) {
        (g.universe_list()[u].kind == VariationKind::Weight ? first : topology).push_back(u);
      }
      run_pass(g, ds, begin, end, first, opts, out);
      for (auto u : topology) {
        // Each extra pass is a fresh job reading the file again.
        auto again = Dataset::open(ds.info().uri);
        out.bytes_read += again.account().bytes_read;
        out.read_calls += again.account().read_calls;
        run_pass(g, again, begin, end, {u}, opts, out);
      }
      break;
    }
  }
  return out;
}

PartialResult run_range(const ComputationGraph& g, const EntryRange& range, const RunMode& mode,
                        const RangeOptions& opts) {
  auto t0 = Clock::now();
  auto ds = Dataset::open(range.uri);
  const auto opened = ds.account();
  auto out = run_range(g, ds, range.begin, range.end, mode, opts);
  out.bytes_read += opened.bytes_read;
  out.read_calls += opened.read_calls;
  out.t_total = std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

PartialResult run_local(const ComputationGraph& g, std::span<const std::string> files, std::size_t nthreads,
                        const RunMode& mode, const RangeOptions& opts, std::size_t factor) {
  if (nthreads < 1) throw ValidationError("run_local: nthreads must be >= 1");
  PartialResult merged;
  if (files.empty()) {
    std::vector<std::size_t> us;
    if (mode.kind == RunModeKind::OnlyUniverse) {
      auto u = g.universe_index(mode.universe);
      if (!u) throw ValidationError("unknown universe '" + mode.universe + "'");
      us.push_back(*u);
    } else {
      for (std::size_t u = 0; u < g.universe_list().size(); ++u) us.push_back(u);
    }
    merged.universes = empty_results(g, us);
    return merged;
  }

  std::vector<DatasetInfo> infos;
  for (const auto& f : files) infos.push_back(Dataset::open(f).info());
  auto ranges = plan_partitions(infos, nthreads, factor);

  std::vector<std::optional<PartialResult>> parts(ranges.size());
  std::vector<std::exception_ptr> errors(ranges.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < ranges.size() && !failed; i = next++) {
      try {
        RangeOptions o = opts;
        o.range_id = std::to_string(i);
        parts[i] = run_range(g, ranges[i], mode, o);
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  auto t0 = Clock::now();
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(nthreads, ranges.size()); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto& p : parts) merged.merge(*p);
  merged.t_total = std::chrono::duration<double>(Clock::now() - t0).count();
  return merged;
}

}  // namespace colflow
