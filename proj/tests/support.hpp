#pragma once

// Shared test helpers: scratch directories, fixture datasets and a naive
// full-recompute oracle.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "colflow/colstore.hpp"
#include "colflow/engine.hpp"
#include "colflow/error.hpp"
#include "colflow/expr.hpp"
#include "colflow/graph.hpp"

namespace colflow::testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "colflow-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  std::string str(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// Small mixed-type table; values derive from `seed` only.
inline ColumnTable mixed_table(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  std::vector<double> x, w;
  std::vector<std::int64_t> k;
  std::vector<std::uint8_t> flag;
  VecColumn<double> v;
  VecColumn<std::int64_t> iv;
  for (std::size_t i = 0; i < n; ++i) {
    x.push_back(200.0 * u() - 20.0);
    w.push_back(0.5 + u());
    k.push_back(static_cast<std::int64_t>(rng() % 7));
    flag.push_back(rng() % 2);
    std::vector<double> row;
    std::vector<std::int64_t> irow;
    auto len = rng() % 5;
    for (std::size_t j = 0; j < len; ++j) {
      row.push_back(100.0 * u());
      irow.push_back(static_cast<std::int64_t>(rng() % 100));
    }
    v.push_back(row);
    iv.push_back(irow);
  }
  return {{"x", std::move(x)}, {"w", std::move(w)}, {"k", std::move(k)},
          {"flag", std::move(flag)}, {"v", std::move(v)}, {"iv", std::move(iv)}};
}

// Event table with the benchmark schema plus Jet_pt_corr (the preselection
// define), so the postselection spec builds against it directly.
inline ColumnTable physics_table(std::size_t n, std::uint64_t seed, bool integer_weights = false) {
  std::mt19937_64 rng(seed);
  auto u = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  std::vector<double> w, met;
  std::vector<std::int64_t> njet;
  VecColumn<double> pt, eta, phi, corr;
  for (std::size_t i = 0; i < n; ++i) {
    w.push_back(integer_weights ? static_cast<double>(1 + rng() % 3) : 0.5 + u());
    met.push_back(80.0 + 300.0 * u());
    auto k = static_cast<std::size_t>(rng() % 6);
    njet.push_back(static_cast<std::int64_t>(k));
    std::vector<double> p, e, f, c;
    for (std::size_t j = 0; j < k; ++j) {
      p.push_back(15.0 + 250.0 * u());
      e.push_back(5.0 * u() - 2.5);
      f.push_back(6.283185307179586 * u() - 3.141592653589793);
      c.push_back(p.back() * (1.0 + 0.01 * std::abs(e.back())));
    }
    std::sort(p.begin(), p.end(), std::greater<>());
    pt.push_back(p);
    eta.push_back(e);
    phi.push_back(f);
    corr.push_back(c);
  }
  return {{"event_weight", std::move(w)}, {"MET_pt", std::move(met)}, {"nJet", std::move(njet)},
          {"Jet_pt", std::move(pt)},      {"Jet_eta", std::move(eta)}, {"Jet_phi", std::move(phi)},
          {"Jet_pt_corr", std::move(corr)}};
}

// Rows [begin, end) of a table.
inline ColumnTable slice_table(const ColumnTable& t, std::size_t begin, std::size_t end) {
  ColumnTable out;
  for (const auto& c : t) out.push_back({c.name, slice_column(c.data, begin, end - begin)});
  return out;
}

inline expr::Value cell_value(const ColumnData& col, std::size_t i) {
  switch (col.index()) {
    case 0: return std::get<0>(col)[i];
    case 1: return std::get<1>(col)[i];
    case 2: return std::get<2>(col)[i] != 0;
    case 3: {
      auto r = std::get<3>(col).row(i);
      return std::vector<double>(r.begin(), r.end());
    }
    default: {
      auto r = std::get<4>(col).row(i);
      return std::vector<std::int64_t>(r.begin(), r.end());
    }
  }
}

// Independent binning: plain arrays, index 0 underflow, nbins+1 overflow.
struct OracleHist {
  std::uint32_t nbins = 1;
  double xmin = 0, xmax = 1;
  std::vector<double> sumw, sumw2;
  std::uint64_t entries = 0;

  OracleHist() = default;
  OracleHist(std::uint32_t n, double lo, double hi) : nbins(n), xmin(lo), xmax(hi), sumw(n + 2), sumw2(n + 2) {}
  void fill(double x, double w) {
    std::size_t b;
    if (std::isnan(x) || x < xmin) {
      b = 0;
    } else if (x >= xmax) {
      b = nbins + 1;
    } else {
      b = 1 + static_cast<std::size_t>((x - xmin) / (xmax - xmin) * nbins);
      if (b > nbins) b = nbins;
    }
    sumw[b] += w;
    sumw2[b] += w * w;
    ++entries;
  }
};

struct OracleUniverse {
  std::map<std::string, OracleHist> hists;
  std::map<std::string, double> scalars;
};

inline double as_double(const expr::Value& v) {
  if (auto* d = std::get_if<double>(&v)) return *d;
  if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  return std::get<bool>(v) ? 1.0 : 0.0;
}

// Evaluates `text` against every name bound in `env`.
inline expr::Value eval_in(const std::string& text, const std::map<std::string, expr::Value>& env) {
  expr::Scope scope;
  for (const auto& [name, v] : env) scope.add(name, expr::type_of(v));
  auto e = expr::parse(text);
  expr::typecheck(e, scope);
  return expr::eval(e, expr::MapRowContext(scope, env));
}

// Every universe is recomputed from scratch for every event by walking the
// stage list with a name -> value map. Defines that fail are left unbound,
// so only a later use of them is an error.
inline std::map<std::string, OracleUniverse> oracle_run(const PipelineSpec& spec, const ColumnTable& table) {
  std::vector<std::string> labels{"nominal"};
  for (const auto& st : spec.stages) {
    for (const auto& t : st.tags) labels.push_back(t);
  }
  const std::size_t n = table.empty() ? 0 : table[0].size();
  std::map<std::string, OracleUniverse> out;
  for (const auto& label : labels) {
    auto& res = out[label];
    for (const auto& st : spec.stages) {
      if (st.kind == StageKind::Histo1D) res.hists[st.name] = OracleHist(st.nbins, st.xmin, st.xmax);
      if (st.kind == StageKind::Sum || st.kind == StageKind::Count) res.scalars[st.name] = 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::map<std::string, expr::Value> env;
      for (const auto& c : table) env[c.name] = cell_value(c.data, i);
      for (const auto& st : spec.stages) {
        bool stop = false;
        switch (st.kind) {
          case StageKind::Define:
            try {
              env[st.name] = eval_in(st.expr, env);
            } catch (const EvalError&) {
              env.erase(st.name);
            }
            break;
          case StageKind::Vary:
            for (std::size_t k = 0; k < st.tags.size(); ++k) {
              if (st.tags[k] == label) env[st.column] = eval_in(st.exprs[k], env);
            }
            break;
          case StageKind::Filter:
            stop = !std::get<bool>(eval_in(st.expr, env));
            break;
          case StageKind::Histo1D: {
            double w = st.weight ? as_double(env.at(*st.weight)) : 1.0;
            const auto& x = env.at(st.column);
            auto& h = res.hists[st.name];
            if (auto* vd = std::get_if<std::vector<double>>(&x)) {
              for (double e : *vd) h.fill(e, w);
            } else if (auto* vi = std::get_if<std::vector<std::int64_t>>(&x)) {
              for (auto e : *vi) h.fill(static_cast<double>(e), w);
            } else {
              h.fill(as_double(x), w);
            }
            break;
          }
          case StageKind::Sum:
            res.scalars[st.name] += as_double(env.at(st.column));
            break;
          case StageKind::Count:
            res.scalars[st.name] += 1.0;
            break;
          case StageKind::Snapshot:
            break;
        }
        if (stop) break;
      }
    }
  }
  return out;
}

inline double rel_diff(double a, double b) {
  double m = std::max(std::abs(a), std::abs(b));
  return m == 0.0 ? 0.0 : std::abs(a - b) / m;
}

// Largest relative difference between engine output and the oracle; +inf
// when their universe or result sets differ.
inline double oracle_difference(const PartialResult& got, const std::map<std::string, OracleUniverse>& want) {
  const double inf = std::numeric_limits<double>::infinity();
  if (got.universes.size() != want.size()) return inf;
  double worst = 0.0;
  for (const auto& [label, u] : want) {
    const auto* gu = got.universe(label);
    if (!gu) return inf;
    for (const auto& [name, h] : u.hists) {
      const auto* r = gu->find(name);
      if (!r || !std::holds_alternative<Histo1D>(r->value)) return inf;
      const auto& gh = std::get<Histo1D>(r->value);
      if (gh.entries() != h.entries || gh.sumw().size() != h.sumw.size()) return inf;
      for (std::size_t b = 0; b < h.sumw.size(); ++b) {
        worst = std::max(worst, rel_diff(gh.sumw()[b], h.sumw[b]));
        worst = std::max(worst, rel_diff(gh.sumw2()[b], h.sumw2[b]));
      }
    }
    for (const auto& [name, v] : u.scalars) {
      const auto* r = gu->find(name);
      if (!r || !std::holds_alternative<ScalarAccumulator>(r->value)) return inf;
      worst = std::max(worst, rel_diff(std::get<ScalarAccumulator>(r->value).value, v));
    }
  }
  return worst;
}

}  // namespace colflow::testing
