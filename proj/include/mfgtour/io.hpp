#ifndef MFGTOUR_IO_HPP_INCLUDED
#define MFGTOUR_IO_HPP_INCLUDED

// Scenario, box and result files (JSON) and time-series exports (CSV).
// Requires nlohmann/json as "json.hpp" on the include path.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfgtour/abm.hpp"
#include "mfgtour/congestion.hpp"
#include "mfgtour/control.hpp"
#include "mfgtour/equilibrium.hpp"
#include "mfgtour/mass.hpp"
#include "mfgtour/network.hpp"
#include "mfgtour/value.hpp"

namespace mfgtour::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "mfgtour 1.0.0";

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that reads back to the same double.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline json parse_json_text(const std::string& text, const std::string& what) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw IoError(what + " is empty");
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(what + " is not valid JSON: " + e.what());
  }
}

namespace detail {

inline void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.count(key)) throw ScenarioError(where.empty() ? key : where + "." + key, "unknown field");
}

inline const json& object_at(const json& parent, const char* key, const std::string& field) {
  const auto& v = parent.at(key);
  if (!v.is_object()) throw ScenarioError(field, "expected an object");
  return v;
}

inline double number_or(const json& obj, const char* key, const std::string& field, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ScenarioError(field, "expected a number");
  return v.get<double>();
}

inline std::vector<double> numbers(const json& v, const std::string& field) {
  if (!v.is_array()) throw ScenarioError(field, "expected an array of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw ScenarioError(field, "expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline std::array<double, 4> four(const json& obj, const char* key, const std::string& field) {
  if (!obj.contains(key)) throw ScenarioError(field, "missing");
  const auto v = numbers(obj.at(key), field);
  if (v.size() != 4) throw ScenarioError(field, "expected 4 entries (11, 01, 10, 00)");
  return {v[0], v[1], v[2], v[3]};
}

inline Coefficients coefficients(const json& obj, const std::string& where) {
  if (!obj.is_object()) throw ScenarioError(where, "expected an object");
  reject_unknown(obj, where, {"alpha", "beta"});
  Coefficients c;
  c.alpha = four(obj, "alpha", where + ".alpha");
  c.beta = four(obj, "beta", where + ".beta");
  return c;
}

inline json coefficients_json(const Coefficients& c) {
  return {{"alpha", std::vector<double>(c.alpha.begin(), c.alpha.end())},
          {"beta", std::vector<double>(c.beta.begin(), c.beta.end())}};
}

}  // namespace detail

/// Constant form {"alpha": [4], "beta": [4]} or piecewise form
/// {"breakpoints": [...], "pieces": [{"alpha", "beta"}, ...]}.
inline CongestionParams parse_congestion(const json& j, double horizon, const std::string& where = "congestion") {
  if (!j.is_object()) throw ScenarioError(where, "expected an object");
  try {
    if (j.contains("pieces") || j.contains("breakpoints")) {
      detail::reject_unknown(j, where, {"breakpoints", "pieces"});
      if (!j.contains("breakpoints")) throw ScenarioError(where + ".breakpoints", "missing");
      if (!j.contains("pieces") || !j.at("pieces").is_array()) throw ScenarioError(where + ".pieces", "expected an array");
      std::vector<Coefficients> pieces;
      for (std::size_t i = 0; i < j.at("pieces").size(); ++i)
        pieces.push_back(detail::coefficients(j.at("pieces")[i], where + ".pieces[" + std::to_string(i) + "]"));
      auto p = CongestionParams::piecewise(detail::numbers(j.at("breakpoints"), where + ".breakpoints"), pieces);
      p.validate(horizon);
      return p;
    }
    auto p = CongestionParams::constant(detail::coefficients(j, where));
    p.validate(horizon);
    return p;
  } catch (const ScenarioError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(where, e.what());
  }
}

inline json congestion_json(const CongestionParams& p) {
  if (p.mode() == CongestionParams::Mode::Constant) return detail::coefficients_json(p.piece(0));
  json pieces = json::array();
  for (const auto& c : p.pieces()) pieces.push_back(detail::coefficients_json(c));
  return {{"breakpoints", p.breakpoints()}, {"pieces", pieces}};
}

struct ScenarioDocument {
  RawScenario raw;
  Scenario scenario;
  std::optional<CongestionParams> congestion;

  /// Congestion of the document, or zero coefficients when absent.
  CongestionParams params() const { return congestion.value_or(CongestionParams{}); }
};

/// Fields: geometry{theta_S, theta_1, theta_2}, costs{c1, c2, cS, T}, grid{n_steps},
/// arrival{kind: "constant-on-interval" (value, start, end) | "samples" (samples)},
/// and an optional congestion block. Absent numbers take the canonical values.
inline ScenarioDocument parse_scenario(const json& j) {
  if (!j.is_object()) throw ScenarioError("scenario", "expected a JSON object");
  detail::reject_unknown(j, "", {"schema_version", "name", "description", "geometry", "costs", "grid", "arrival",
                                 "congestion"});
  ScenarioDocument doc;
  auto& r = doc.raw;
  if (j.contains("geometry")) {
    const auto& g = detail::object_at(j, "geometry", "geometry");
    detail::reject_unknown(g, "geometry", {"theta_S", "theta_1", "theta_2"});
    r.theta_S = detail::number_or(g, "theta_S", "geometry.theta_S", r.theta_S);
    r.theta_1 = detail::number_or(g, "theta_1", "geometry.theta_1", r.theta_1);
    r.theta_2 = detail::number_or(g, "theta_2", "geometry.theta_2", r.theta_2);
  }
  if (j.contains("costs")) {
    const auto& c = detail::object_at(j, "costs", "costs");
    detail::reject_unknown(c, "costs", {"c1", "c2", "cS", "T"});
    r.c1 = detail::number_or(c, "c1", "costs.c1", r.c1);
    r.c2 = detail::number_or(c, "c2", "costs.c2", r.c2);
    r.cS = detail::number_or(c, "cS", "costs.cS", r.cS);
    r.T = detail::number_or(c, "T", "costs.T", r.T);
  }
  if (j.contains("grid")) {
    const auto& g = detail::object_at(j, "grid", "grid");
    detail::reject_unknown(g, "grid", {"n_steps"});
    if (g.contains("n_steps")) {
      if (!g.at("n_steps").is_number_integer()) throw ScenarioError("grid.n_steps", "expected an integer");
      r.n_steps = g.at("n_steps").get<int>();
    }
  }
  if (j.contains("arrival")) {
    const auto& a = detail::object_at(j, "arrival", "arrival");
    const std::string kind = a.value("kind", std::string("constant-on-interval"));
    if (kind == "constant-on-interval") {
      detail::reject_unknown(a, "arrival", {"kind", "value", "start", "end"});
      r.arrival_kind = RawScenario::ArrivalKind::ConstantOnInterval;
      r.arrival_value = detail::number_or(a, "value", "arrival.value", r.arrival_value);
      r.arrival_start = detail::number_or(a, "start", "arrival.start", r.arrival_start);
      r.arrival_end = detail::number_or(a, "end", "arrival.end", r.arrival_end);
    } else if (kind == "samples") {
      detail::reject_unknown(a, "arrival", {"kind", "samples"});
      if (!a.contains("samples")) throw ScenarioError("arrival.samples", "missing");
      r.arrival_kind = RawScenario::ArrivalKind::Samples;
      r.arrival_samples = detail::numbers(a.at("samples"), "arrival.samples");
    } else {
      throw ScenarioError("arrival.kind", "expected \"constant-on-interval\" or \"samples\", got \"" + kind + "\"");
    }
  }
  doc.scenario = validate_scenario(r);
  if (j.contains("congestion")) doc.congestion = parse_congestion(j.at("congestion"), r.T);
  return doc;
}

inline ScenarioDocument load_scenario(const std::filesystem::path& path) {
  return parse_scenario(parse_json_text(read_text(path), "scenario file " + path.string()));
}

inline json scenario_json(const RawScenario& r, const std::optional<CongestionParams>& congestion = std::nullopt) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["geometry"] = {{"theta_S", r.theta_S}, {"theta_1", r.theta_1}, {"theta_2", r.theta_2}};
  j["costs"] = {{"c1", r.c1}, {"c2", r.c2}, {"cS", r.cS}, {"T", r.T}};
  j["grid"] = {{"n_steps", r.n_steps}};
  if (r.arrival_kind == RawScenario::ArrivalKind::ConstantOnInterval)
    j["arrival"] = {{"kind", "constant-on-interval"},
                    {"value", r.arrival_value},
                    {"start", r.arrival_start},
                    {"end", r.arrival_end}};
  else
    j["arrival"] = {{"kind", "samples"}, {"samples", r.arrival_samples}};
  if (congestion) j["congestion"] = congestion_json(*congestion);
  return j;
}

// ---------------------------------------------------------------- parameter box

inline Interval parse_interval(const json& v, const std::string& field) {
  const auto xs = detail::numbers(v, field);
  if (xs.size() != 2) throw ScenarioError(field, "expected [lo, hi]");
  return {xs[0], xs[1]};
}

/// {"lo": a, "hi": b} (uniform), {"alpha": [[lo,hi] x4], "beta": [...]}, or
/// {"breakpoints": [...], "pieces": [{"alpha", "beta"}, ...]}.
inline ParamBox parse_box(const json& j) {
  if (!j.is_object()) throw ScenarioError("box", "expected a JSON object");
  const auto piece = [](const json& o, const std::string& where) {
    if (!o.is_object()) throw ScenarioError(where, "expected an object");
    detail::reject_unknown(o, where, {"alpha", "beta"});
    std::array<Interval, 8> iv;
    for (int part = 0; part < 2; ++part) {
      const char* key = part == 0 ? "alpha" : "beta";
      if (!o.contains(key) || !o.at(key).is_array() || o.at(key).size() != 4)
        throw ScenarioError(where + "." + key, "expected 4 intervals [lo, hi]");
      for (int w = 0; w < 4; ++w)
        iv[part * 4 + w] = parse_interval(o.at(key)[w], where + "." + key + "[" + std::to_string(w) + "]");
    }
    return iv;
  };
  ParamBox box;
  if (j.contains("lo") || j.contains("hi")) {
    detail::reject_unknown(j, "box", {"schema_version", "lo", "hi"});
    if (!j.contains("lo") || !j.contains("hi")) throw ScenarioError("box", "uniform box needs both lo and hi");
    box = ParamBox::uniform(detail::number_or(j, "lo", "box.lo", 0), detail::number_or(j, "hi", "box.hi", 0));
  } else if (j.contains("pieces")) {
    detail::reject_unknown(j, "box", {"schema_version", "breakpoints", "pieces"});
    if (j.contains("breakpoints")) box.breakpoints = detail::numbers(j.at("breakpoints"), "box.breakpoints");
    if (!j.at("pieces").is_array()) throw ScenarioError("box.pieces", "expected an array");
    for (std::size_t i = 0; i < j.at("pieces").size(); ++i)
      box.pieces.push_back(piece(j.at("pieces")[i], "box.pieces[" + std::to_string(i) + "]"));
  } else {
    detail::reject_unknown(j, "box", {"schema_version", "alpha", "beta"});
    box.pieces.push_back(piece(j, "box"));
  }
  try {
    box.validate();
  } catch (const std::invalid_argument& e) {
    throw ScenarioError("box", e.what());
  }
  return box;
}

/// A box file, or the inline form "lo:hi" for a uniform box.
inline ParamBox load_box(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon != std::string::npos && !std::filesystem::exists(spec)) {
    std::optional<ParamBox> box;
    try {
      std::size_t used_lo = 0, used_hi = 0;
      const double lo = std::stod(spec.substr(0, colon), &used_lo);
      const double hi = std::stod(spec.substr(colon + 1), &used_hi);
      if (used_lo == colon && used_hi == spec.size() - colon - 1) box = ParamBox::uniform(lo, hi);
    } catch (const std::logic_error&) {
    }
    if (box) {
      try {
        box->validate();
      } catch (const std::invalid_argument& e) {
        throw ScenarioError("box", e.what());
      }
      return *box;
    }
  }
  return parse_box(parse_json_text(read_text(spec), "box file " + spec));
}

inline json box_json(const ParamBox& box) {
  json pieces = json::array();
  for (const auto& iv : box.pieces) {
    json alpha = json::array(), beta = json::array();
    for (int w = 0; w < 4; ++w) {
      alpha.push_back({iv[w].lo, iv[w].hi});
      beta.push_back({iv[4 + w].lo, iv[4 + w].hi});
    }
    pieces.push_back({{"alpha", alpha}, {"beta", beta}});
  }
  json j{{"schema_version", kSchemaVersion}, {"pieces", pieces}};
  if (!box.breakpoints.empty()) j["breakpoints"] = box.breakpoints;
  return j;
}

// ---------------------------------------------------------------- CSV

inline const std::array<const char*, 4> kMassColumns{"rho11", "rho01", "rho10", "rho00"};

/// Columns t, g, g01, g10, g12, g21, rho11, rho01, rho10, rho00.
inline std::string timeseries_csv(const TimeGrid& grid, const ArrivalFlow& g, const ExitFlows& e,
                                  const MassProfile& rho) {
  std::string out = "t,g,g01,g10,g12,g21,rho11,rho01,rho10,rho00\n";
  for (int k = 0; k < grid.n_nodes(); ++k) {
    out += num(grid.t(k));
    for (double v : {g.samples[k], e.g01[k], e.g10[k], e.g12[k], e.g21[k], rho.rho[0][k], rho.rho[1][k],
                     rho.rho[2][k], rho.rho[3][k]})
      out += "," + num(v);
    out += "\n";
  }
  return out;
}

/// Columns t, rho11, rho01, rho10, rho00.
inline std::string mass_csv(const TimeGrid& grid, const MassProfile& rho) {
  std::string out = "t,rho11,rho01,rho10,rho00\n";
  for (int k = 0; k < grid.n_nodes(); ++k) {
    out += num(grid.t(k));
    for (int w = 0; w < 4; ++w) out += "," + num(rho.rho[w][k]);
    out += "\n";
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto a = cell.find_first_not_of(" \t\r");
    const auto b = cell.find_last_not_of(" \t\r");
    cells.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_cell(const std::string& cell, int line, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::logic_error&) {
    throw IoError("line " + std::to_string(line) + ", column " + column + ": not a number: \"" + cell + "\"");
  }
}

}  // namespace detail

/// Reads a reference mass CSV sampled on exactly the nodes of `grid`. The header
/// must name t, rho11, rho01, rho10 and rho00; other columns are ignored, so a
/// timeseries written by `solve` works as a reference.
inline ReferenceMass parse_mass_csv(const std::string& text, const TimeGrid& grid) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = detail::split_csv_line(line);
    break;
  }
  if (header.empty()) throw IoError("reference mass file is empty");
  const std::vector<std::string> expected{"t", "rho11", "rho01", "rho10", "rho00"};
  std::array<std::size_t, 5> column{};
  for (std::size_t c = 0; c < expected.size(); ++c) {
    const auto it = std::find(header.begin(), header.end(), expected[c]);
    if (it == header.end()) throw IoError("reference mass header lacks column " + expected[c]);
    column[c] = static_cast<std::size_t>(it - header.begin());
  }
  MassProfile m = MassProfile::zeros(grid);
  int k = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw IoError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " columns");
    if (k >= grid.n_nodes())
      throw IoError("reference mass has more rows than the " + std::to_string(grid.n_nodes()) + " grid nodes");
    const double t = detail::parse_cell(cells[column[0]], line_no, "t");
    if (std::abs(t - grid.t(k)) > 1e-9 * std::max(1.0, grid.horizon()))
      throw IoError("line " + std::to_string(line_no) + ": time " + cells[column[0]] + " does not match grid node " +
                    std::to_string(k) + " (t = " + num(grid.t(k)) + ")");
    for (int w = 0; w < 4; ++w) m.rho[w][k] = detail::parse_cell(cells[column[w + 1]], line_no, expected[w + 1]);
    ++k;
  }
  if (k != grid.n_nodes())
    throw IoError("reference mass has " + std::to_string(k) + " rows, grid has " + std::to_string(grid.n_nodes()) +
                  " nodes");
  try {
    return ReferenceMass::checked(std::move(m), grid);
  } catch (const std::invalid_argument& e) {
    throw IoError(e.what());
  }
}

inline ReferenceMass load_mass_csv(const std::filesystem::path& path, const TimeGrid& grid) {
  return parse_mass_csv(read_text(path), grid);
}

/// Columns point, t, V, stay, to_station, to_P1, to_P2, argmin, arrival
/// (empty cells for kinds that are not admissible at the point).
inline std::string value_tables_csv(const ValueTables& vt) {
  std::string out = "point,t,V,stay,to_station,to_P1,to_P2,argmin,arrival\n";
  constexpr std::array<ChoiceKind, 4> kinds{ChoiceKind::Stay, ChoiceKind::ToStation, ChoiceKind::ToP1,
                                            ChoiceKind::ToP2};
  for (Point p : kPoints) {
    const auto& table = vt[p];
    for (int k = 0; k < vt.grid.n_nodes(); ++k) {
      out += std::string(point_name(p)) + "," + num(vt.grid.t(k)) + "," + num(table.value[k]);
      int best = -1;
      for (ChoiceKind kind : kinds) {
        out += ",";
        if (const auto slot = slot_of(p, kind)) {
          out += num(table.candidate[*slot][k]);
          if (best < 0 || table.candidate[*slot][k] < table.candidate[best][k]) best = *slot;
        }
      }
      out += "," + std::string(best >= 0 ? kind_name(table.kind(best)) : "");
      const double arrival = best >= 0 ? table.arrival[best][k] : std::nan("");
      out += "," + (std::isnan(arrival) ? std::string() : num(arrival)) + "\n";
    }
  }
  return out;
}

/// Columns agent_id, time, event, branch.
inline std::string events_csv(const SimulationTrace& trace) {
  std::string out = "agent_id,time,event,branch\n";
  for (const auto& a : trace.agents)
    for (const auto& e : a.events)
      out += std::to_string(e.agent) + "," + num(e.time) + "," + event_name(e.kind) + "," + branch_name(e.branch) +
             "\n";
  return out;
}

// ---------------------------------------------------------------- result files

inline json mass_json(const MassProfile& m) {
  json j;
  for (int w = 0; w < 4; ++w) j[kMassColumns[w]] = m.rho[w];
  return j;
}

inline json fractions_json(const SplitFractions& fr) {
  json j;
  for (Point p : kPoints) {
    json pj;
    const auto a = admissible(p);
    for (int i = 0; i < a.count; ++i) pj[kind_name(a.kinds[i])] = fr.f[index(p)][i];
    j[point_name(p)] = pj;
  }
  return j;
}

inline json solver_json(const SolverConfig& c, double mass_bound) {
  return {{"epsilon", c.epsilon},       {"gamma", c.gamma},
          {"tol_fp", c.fixed_point_tolerance(mass_bound)}, {"max_iters", c.max_iters},
          {"seeds", c.seeds},           {"mix_step", c.mix_step}};
}

/// Bound used by the equilibrium certificate: epsilon + 10 dt L_emp.
inline double residual_bound(const Scenario& sc, const EquilibriumResult& r) {
  return r.epsilon_used + 10 * sc.grid.dt() * r.lipschitz;
}

inline json residual_json(const Scenario& sc, const EquilibriumResult& r) {
  const auto& res = r.residual;
  json j{{"gap", res.gap}, {"bound", residual_bound(sc, r)}, {"epsilon", r.epsilon_used}, {"lipschitz", r.lipschitz},
         {"fixed_point_gap", r.fixed_point_gap}};
  if (res.node >= 0) {
    j["point"] = point_name(res.point);
    j["node"] = res.node;
    j["t"] = sc.grid.t(res.node);
    j["kind"] = kind_name(res.kind);
  }
  return j;
}

inline json equilibrium_json(const ScenarioDocument& doc, const CongestionParams& params, const SolverConfig& cfg,
                             const EquilibriumResult& r) {
  const auto& sc = doc.scenario;
  json splits = json::array();
  for (const auto& s : r.splits)
    splits.push_back({{"point", point_name(s.point)},
                      {"contested_nodes", s.contested_nodes},
                      {"interior_nodes", s.interior_nodes},
                      {"arrival_split_nodes", s.arrival_split_nodes},
                      {"max_violation", s.max_violation}});
  json arrival_splits = json::array();
  if (!r.arrival_splits.empty())
    for (int c = 0; c < kSwitchingCount; ++c) {
      const auto& sp = r.arrival_splits.crossing[c];
      for (int k = 0; k < sc.grid.n_nodes(); ++k)
        if (sp.is_split(k))
          arrival_splits.push_back(
              {{"crossing", crossing_name(c)}, {"node", k}, {"divider", sp.divider[k]}, {"late", sp.late[k]}});
    }
  const auto& d = r.diagnostics;
  std::vector<double> t(sc.grid.n_nodes());
  for (int k = 0; k < sc.grid.n_nodes(); ++k) t[k] = sc.grid.t(k);
  return {{"schema_version", kSchemaVersion},
          {"version", kVersion},
          {"kind", "equilibrium"},
          {"scenario", scenario_json(doc.raw)},
          {"congestion", congestion_json(params)},
          {"solver", solver_json(cfg, sc.mass_bound())},
          {"iterations", r.iterations},
          {"epsilon_used", r.epsilon_used},
          {"seed_used", r.seed_used},
          {"residual", residual_json(sc, r)},
          {"split_active", r.split_active()},
          {"splits", splits},
          {"arrival_splits", arrival_splits},
          {"diagnostics",
           {{"iterates", d.iterates},
            {"max_sum_identity_error", d.max_sum_identity_error},
            {"max_conservation_violation", d.max_conservation_violation},
            {"max_identity_error", d.max_identity_error},
            {"max_raw_identity_error", d.max_raw_identity_error},
            {"max_repair", d.max_repair},
            {"all_in_x", d.all_in_x}}},
          {"t", t},
          {"rho", mass_json(r.rho)},
          {"fractions", fractions_json(r.fractions)}};
}

/// rho, split fractions and arrival splits stored in an equilibrium file,
/// checked against the grid. A file without "arrival_splits" has none.
struct StoredEquilibrium {
  MassProfile rho;
  SplitFractions fractions;
  ArrivalSplits arrival_splits;
};

inline StoredEquilibrium parse_equilibrium(const json& j, const TimeGrid& grid) {
  const auto fail = [](const std::string& what) { throw IoError("equilibrium file: " + what); };
  if (!j.is_object() || j.value("kind", std::string()) != "equilibrium") fail("not an equilibrium result");
  if (j.value("schema_version", 0) != kSchemaVersion) fail("unsupported schema_version");
  StoredEquilibrium s;
  s.rho = MassProfile::zeros(grid);
  s.fractions = SplitFractions::zeros(grid);
  const auto vec = [&](const json& v, const std::string& what) {
    if (!v.is_array() || static_cast<int>(v.size()) != grid.n_nodes())
      fail(what + " must hold " + std::to_string(grid.n_nodes()) + " numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) fail(what + " must hold numbers");
      out.push_back(x.get<double>());
    }
    return out;
  };
  if (!j.contains("rho") || !j.contains("fractions")) fail("missing rho or fractions");
  for (int w = 0; w < 4; ++w) {
    if (!j.at("rho").contains(kMassColumns[w])) fail(std::string("missing rho.") + kMassColumns[w]);
    s.rho.rho[w] = vec(j.at("rho").at(kMassColumns[w]), std::string("rho.") + kMassColumns[w]);
  }
  for (Point p : kPoints) {
    const auto a = admissible(p);
    if (!j.at("fractions").contains(point_name(p))) fail(std::string("missing fractions.") + point_name(p));
    const auto& pj = j.at("fractions").at(point_name(p));
    for (int i = 0; i < a.count; ++i) {
      const std::string name = std::string("fractions.") + point_name(p) + "." + kind_name(a.kinds[i]);
      if (!pj.contains(kind_name(a.kinds[i]))) fail("missing " + name);
      s.fractions.f[index(p)][i] = vec(pj.at(kind_name(a.kinds[i])), name);
    }
  }
  s.arrival_splits = ArrivalSplits::none(grid);
  if (j.contains("arrival_splits")) {
    const auto& as = j.at("arrival_splits");
    if (!as.is_array()) fail("arrival_splits must be an array");
    for (const auto& e : as) {
      if (!e.is_object() || !e.contains("crossing") || !e.contains("node") || !e.contains("divider") ||
          !e.contains("late"))
        fail("arrival_splits entries need crossing, node, divider and late");
      int c = 0;
      while (c < kSwitchingCount && e.at("crossing") != crossing_name(c)) ++c;
      if (c == kSwitchingCount) fail("unknown crossing in arrival_splits");
      if (!e.at("node").is_number_integer() || !e.at("divider").is_number_integer() || !e.at("late").is_number())
        fail("arrival_splits entries need integer node and divider and a numeric late share");
      const int k = e.at("node").get<int>(), d = e.at("divider").get<int>();
      if (k < 0 || k >= grid.n_steps() || d <= k || d >= grid.n_steps())
        fail("arrival split at node " + std::to_string(k) + " has no valid divider");
      s.arrival_splits.crossing[c].divider[k] = d;
      s.arrival_splits.crossing[c].late[k] = e.at("late").get<double>();
    }
  }
  return s;
}

inline json control_json(const ControlResult& res, const ParamBox& box, const OptimizerConfig& opt) {
  json log = json::array();
  for (const auto& e : res.log) {
    json item{{"index", e.index}, {"phase", e.phase},         {"x", e.x},
              {"objective", e.objective}, {"worst", e.worst}, {"residual", e.residual},
              {"discovered", e.discovered}};
    if (!e.error.empty()) item["error"] = e.error;
    log.push_back(item);
  }
  json j{{"schema_version", kSchemaVersion},
         {"version", kVersion},
         {"kind", "control"},
         {"box", box_json(box)},
         {"budget", opt.budget},
         {"seed", opt.seed},
         {"sweep_size", res.sweep_size},
         {"final_step", res.final_step},
         {"best_objective", res.best_objective},
         {"best_worst", res.best_worst},
         {"best_x", res.best_x},
         {"log", log}};
  if (!res.best_x.empty()) j["best_congestion"] = congestion_json(res.best_params);
  return j;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace mfgtour::io

#endif  // MFGTOUR_IO_HPP_INCLUDED
