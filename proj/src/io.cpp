#include "entikit/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace entikit {

namespace {

using nlohmann::json;

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// Splits one CSV row; the formats here never quote fields.
std::vector<std::string> split_row(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  for (std::string& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
  }
  return out;
}

double parse_double(const std::string& field, const std::string& path, std::size_t line,
                    const char* column) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw IoError(path, line, std::string("column '") + column + "': not a number: '" + field +
                                  "'");
  return v;
}

int parse_int(const std::string& field, const std::string& path, std::size_t line,
              const char* column) {
  int v = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw IoError(path, line,
                  std::string("column '") + column + "': not an integer: '" + field + "'");
  return v;
}

json load_json(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(path, e.what());
  }
}

void check_format_version(const json& j, const std::string& path) {
  if (!j.is_object()) throw IoError(path, "top level must be an object");
  if (!j.contains("format_version")) throw IoError(path, "missing format_version");
  const auto v = j.at("format_version");
  if (!v.is_number_integer() || v.get<int>() != kFormatVersion)
    throw IoError(path, "unsupported format_version (expected " +
                            std::to_string(kFormatVersion) + ")");
}

json vec2_json(const Vec2& v) { return json::array({v.x, v.y}); }

Vec2 vec2_from(const json& j, const std::string& path, const char* what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw IoError(path, std::string(what) + " must be a [x, y] number pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

json params_json(const MotionParams& p) {
  return {{"neighbor_dist", p.neighbor_dist}, {"max_neighbors", p.max_neighbors},
          {"planning_horizon", p.planning_horizon}, {"radius", p.radius},
          {"pref_speed", p.pref_speed}, {"group_cohesion", p.group_cohesion}};
}

MotionParams params_from(const json& j, const std::string& path) {
  MotionParams p;
  if (j.is_null()) return p;
  if (!j.is_object()) throw IoError(path, "params must be an object");
  p.neighbor_dist = j.value("neighbor_dist", p.neighbor_dist);
  p.max_neighbors = j.value("max_neighbors", p.max_neighbors);
  p.planning_horizon = j.value("planning_horizon", p.planning_horizon);
  p.radius = j.value("radius", p.radius);
  p.pref_speed = j.value("pref_speed", p.pref_speed);
  p.group_cohesion = j.value("group_cohesion", p.group_cohesion);
  return p;
}

// Infinity is not representable in JSON; write it as null.
json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

double number_or_infinity(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

json ols_json(const OlsFit& fit) {
  return {{"coefficients", fit.coefficients},
          {"r_squared", fit.r_squared},
          {"f_statistic", finite_or_null(fit.f_statistic)},
          {"p_value", fit.p_value}};
}

OlsFit ols_from(const json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("coefficients"))
    throw IoError(path, "fit entry must carry coefficients");
  OlsFit fit;
  fit.coefficients = j.at("coefficients").get<std::vector<double>>();
  fit.r_squared = j.value("r_squared", 0.0);
  fit.f_statistic = j.contains("f_statistic") ? number_or_infinity(j.at("f_statistic")) : 0.0;
  fit.p_value = j.value("p_value", 1.0);
  return fit;
}

json range_json(const ParamRange& r) {
  return {{"min", r.min}, {"max", r.max}, {"default", r.def}};
}

ParamRange range_from(const json& j, const std::string& path, const char* name) {
  if (!j.is_object())
    throw IoError(path, std::string("box entry '") + name + "' must be an object");
  ParamRange r;
  r.min = j.value("min", 0.0);
  r.max = j.value("max", 0.0);
  r.def = j.value("default", 0.0);
  return r;
}

}  // namespace

IoError::IoError(std::string path, const std::string& what)
    : std::runtime_error(path + ": " + what), path_(std::move(path)) {}

IoError::IoError(std::string path, std::size_t line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what),
      path_(std::move(path)),
      line_(line) {}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::ostringstream oss;
  oss << in.rdbuf();
  if (in.bad()) throw IoError(path, "read failed");
  return oss.str();
}

void atomic_write_text(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path, "cannot open temp file for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code drop;
      fs::remove(tmp, drop);
      throw IoError(path, "write failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    std::error_code drop;
    fs::remove(tmp, drop);
    throw IoError(path, "rename failed: " + ec.message());
  }
}

std::string trajectory_csv_string(const TrajectorySet& set) {
  std::string out = "agent_id,group_id,frame,t,x,y\n";
  for (const Track& tr : set.tracks) {
    for (std::size_t k = 0; k < tr.samples.size(); ++k) {
      const TrajectorySample& s = tr.samples[k];
      out += std::to_string(tr.agent_id);
      out += ',';
      out += std::to_string(tr.group_id);
      out += ',';
      out += std::to_string(k);
      out += ',';
      out += fixed(s.t, 6);
      out += ',';
      out += fixed(s.position.x, 4);
      out += ',';
      out += fixed(s.position.y, 4);
      out += '\n';
    }
  }
  return out;
}

void write_trajectory_csv(const std::string& path, const TrajectorySet& set) {
  atomic_write_text(path, trajectory_csv_string(set));
}

std::vector<ObservedTrack> parse_trajectory_csv(const std::string& text,
                                                const std::string& path) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;

  if (!std::getline(in, line)) throw IoError(path, 1, "empty file");
  ++lineno;
  {
    const auto header = split_row(line);
    const std::vector<std::string> expected{"agent_id", "group_id", "frame", "t", "x", "y"};
    if (std::vector<std::string>(header.begin(), header.end()) != expected)
      throw IoError(path, 1, "expected header agent_id,group_id,frame,t,x,y");
  }

  std::vector<ObservedTrack> tracks;
  std::map<int, std::size_t> index_of;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") {
      if (in.peek() == EOF) break;  // tolerate one trailing newline
      throw IoError(path, lineno, "empty row");
    }
    const auto fields = split_row(line);
    if (fields.size() != 6)
      throw IoError(path, lineno,
                    "expected 6 columns, got " + std::to_string(fields.size()));
    const int agent_id = parse_int(fields[0], path, lineno, "agent_id");
    const int group_id = parse_int(fields[1], path, lineno, "group_id");
    parse_int(fields[2], path, lineno, "frame");
    const double t = parse_double(fields[3], path, lineno, "t");
    const double x = parse_double(fields[4], path, lineno, "x");
    const double y = parse_double(fields[5], path, lineno, "y");
    if (!std::isfinite(t) || !std::isfinite(x) || !std::isfinite(y))
      throw IoError(path, lineno, "non-finite value");

    auto [it, fresh] = index_of.try_emplace(agent_id, tracks.size());
    if (fresh) {
      ObservedTrack tr;
      tr.agent_id = agent_id;
      tr.group_hint = group_id;
      tracks.push_back(std::move(tr));
    }
    tracks[it->second].samples.push_back({t, {x, y}});
  }
  return tracks;
}

std::vector<ObservedTrack> read_trajectory_csv(const std::string& path) {
  return parse_trajectory_csv(read_text_file(path), path);
}

void write_scenario_json(const std::string& path, const Scenario& scenario) {
  json agents = json::array();
  for (const Agent& a : scenario.agents) {
    agents.push_back({{"id", a.id},
                      {"group_id", a.group_id},
                      {"position", vec2_json(a.state.position)},
                      {"velocity", vec2_json(a.state.velocity)},
                      {"goal", vec2_json(a.goal)},
                      {"params", params_json(a.params)}});
  }
  json obstacles = json::array();
  for (const Segment& s : scenario.obstacles) {
    obstacles.push_back({{"a", vec2_json(s.a)}, {"b", vec2_json(s.b)}});
  }
  const json j = {{"format_version", kFormatVersion}, {"timestep", scenario.timestep},
                  {"duration", scenario.duration},   {"rng_seed", scenario.rng_seed},
                  {"goal_dither", scenario.goal_dither},
                  {"agents", agents},                {"obstacles", obstacles}};
  atomic_write_text(path, j.dump(2) + "\n");
}

Scenario read_scenario_json(const std::string& path) {
  const json j = load_json(path);
  check_format_version(j, path);
  Scenario sc;
  sc.timestep = j.value("timestep", sc.timestep);
  sc.duration = j.value("duration", sc.duration);
  sc.rng_seed = j.value("rng_seed", sc.rng_seed);
  sc.goal_dither = j.value("goal_dither", sc.goal_dither);
  if (j.contains("agents")) {
    if (!j.at("agents").is_array()) throw IoError(path, "agents must be an array");
    for (const json& ja : j.at("agents")) {
      if (!ja.is_object() || !ja.contains("id"))
        throw IoError(path, "each agent needs an integer id");
      Agent a;
      a.id = ja.at("id").get<int>();
      a.group_id = ja.value("group_id", -1);
      if (ja.contains("position")) a.state.position = vec2_from(ja.at("position"), path, "position");
      if (ja.contains("velocity")) a.state.velocity = vec2_from(ja.at("velocity"), path, "velocity");
      if (ja.contains("goal")) a.goal = vec2_from(ja.at("goal"), path, "goal");
      a.params = params_from(ja.contains("params") ? ja.at("params") : json(nullptr), path);
      a.state.preferred_velocity = a.state.velocity;
      sc.agents.push_back(a);
    }
  }
  if (j.contains("obstacles")) {
    if (!j.at("obstacles").is_array()) throw IoError(path, "obstacles must be an array");
    for (const json& jo : j.at("obstacles")) {
      if (!jo.is_object() || !jo.contains("a") || !jo.contains("b"))
        throw IoError(path, "each obstacle needs endpoints a and b");
      sc.obstacles.push_back(
          {vec2_from(jo.at("a"), path, "obstacle a"), vec2_from(jo.at("b"), path, "obstacle b")});
    }
  }
  return sc;
}

void write_report_json(const std::string& path, const std::vector<GroupReport>& groups) {
  json arr = json::array();
  for (const GroupReport& g : groups) {
    json jg = {{"group_id", g.group_id}, {"members", g.members}};
    if (!g.ok()) {
      jg["error"] = g.error;
    } else {
      jg["params"] = params_json(g.params);
      jg["features"] = {{"friendliness", g.features.friendliness},
                        {"creepiness", g.features.creepiness},
                        {"comfort", g.features.comfort},
                        {"unnerving", g.features.unnerving}};
      jg["entitativity"] = {{"raw", g.label.raw}, {"normalized", g.label.normalized}};
      jg["flags"] = g.flags;
    }
    arr.push_back(std::move(jg));
  }
  const json j = {{"format_version", kFormatVersion}, {"groups", arr}};
  atomic_write_text(path, j.dump(2) + "\n");
}

std::vector<GroupReport> read_report_json(const std::string& path) {
  const json j = load_json(path);
  check_format_version(j, path);
  if (!j.contains("groups") || !j.at("groups").is_array())
    throw IoError(path, "missing groups array");
  std::vector<GroupReport> out;
  for (const json& jg : j.at("groups")) {
    GroupReport g;
    g.group_id = jg.value("group_id", -1);
    if (jg.contains("members")) g.members = jg.at("members").get<std::vector<int>>();
    if (jg.contains("error")) {
      g.error = jg.at("error").get<std::string>();
      out.push_back(std::move(g));
      continue;
    }
    g.params = params_from(jg.contains("params") ? jg.at("params") : json(nullptr), path);
    if (jg.contains("features")) {
      const json& f = jg.at("features");
      g.features.friendliness = f.value("friendliness", 0.0);
      g.features.creepiness = f.value("creepiness", 0.0);
      g.features.comfort = f.value("comfort", 0.0);
      g.features.unnerving = f.value("unnerving", 0.0);
    }
    if (jg.contains("entitativity")) {
      g.label.raw = jg.at("entitativity").value("raw", 0.0);
      g.label.normalized = jg.at("entitativity").value("normalized", 0.0);
    }
    if (jg.contains("flags")) g.flags = jg.at("flags").get<std::vector<std::string>>();
    out.push_back(std::move(g));
  }
  return out;
}

void write_study_csv(const std::string& path, const StudyDataset& data) {
  std::string out =
      "participant_id,stimulus_id,neighbor_dist,radius,pref_speed,group_cohesion,"
      "friendliness,creepiness,comfort,unnerving\n";
  for (const StudyRow& r : data.rows) {
    out += std::to_string(r.participant_id);
    out += ',';
    out += std::to_string(r.stimulus_id);
    for (const double v : {r.params.neighbor_dist, r.params.radius, r.params.pref_speed,
                           r.params.group_cohesion, r.ratings.friendliness,
                           r.ratings.creepiness, r.ratings.comfort, r.ratings.unnerving}) {
      out += ',';
      out += shortest(v);
    }
    out += '\n';
  }
  atomic_write_text(path, out);
}

StudyDataset read_study_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;

  if (!std::getline(in, line)) throw IoError(path, 1, "empty file");
  ++lineno;
  {
    const auto header = split_row(line);
    const std::vector<std::string> expected{
        "participant_id", "stimulus_id",  "neighbor_dist", "radius",  "pref_speed",
        "group_cohesion", "friendliness", "creepiness",    "comfort", "unnerving"};
    if (std::vector<std::string>(header.begin(), header.end()) != expected)
      throw IoError(path, 1, "unexpected study header");
  }

  StudyDataset data;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") {
      if (in.peek() == EOF) break;
      throw IoError(path, lineno, "empty row");
    }
    const auto fields = split_row(line);
    if (fields.size() != 10)
      throw IoError(path, lineno,
                    "expected 10 columns, got " + std::to_string(fields.size()));
    StudyRow r;
    r.participant_id = parse_int(fields[0], path, lineno, "participant_id");
    r.stimulus_id = parse_int(fields[1], path, lineno, "stimulus_id");
    r.params.neighbor_dist = parse_double(fields[2], path, lineno, "neighbor_dist");
    r.params.radius = parse_double(fields[3], path, lineno, "radius");
    r.params.pref_speed = parse_double(fields[4], path, lineno, "pref_speed");
    r.params.group_cohesion = parse_double(fields[5], path, lineno, "group_cohesion");
    r.ratings.friendliness = parse_double(fields[6], path, lineno, "friendliness");
    r.ratings.creepiness = parse_double(fields[7], path, lineno, "creepiness");
    r.ratings.comfort = parse_double(fields[8], path, lineno, "comfort");
    r.ratings.unnerving = parse_double(fields[9], path, lineno, "unnerving");
    data.rows.push_back(r);
  }
  return data;
}

void write_bundle_json(const std::string& path, const ModelBundle& bundle) {
  json feature_fits = json::array();
  for (const OlsFit& f : bundle.feature_fits) feature_fits.push_back(ols_json(f));
  const json j = {
      {"format_version", kFormatVersion},
      {"pca_loadings", bundle.model.pca_loadings},
      {"entitativity_coeffs", bundle.model.entitativity_coeffs},
      {"feature_matrix", bundle.model.feature_matrix},
      {"box",
       {{"neighbor_dist", range_json(bundle.box.neighbor_dist)},
        {"radius", range_json(bundle.box.radius)},
        {"pref_speed", range_json(bundle.box.pref_speed)},
        {"group_cohesion", range_json(bundle.box.group_cohesion)}}},
      {"range", {{"min", bundle.range.min}, {"max", bundle.range.max}}},
      {"alpha", bundle.alpha},
      {"pca_explained", bundle.pca_explained},
      {"n_stimuli", bundle.n_stimuli},
      {"entitativity_fit", ols_json(bundle.entitativity_fit)},
      {"feature_fits", feature_fits}};
  atomic_write_text(path, j.dump(2) + "\n");
}

ModelBundle read_bundle_json(const std::string& path) {
  const json j = load_json(path);
  check_format_version(j, path);
  ModelBundle b;
  try {
    b.model.pca_loadings = j.at("pca_loadings").get<std::array<double, 4>>();
    b.model.entitativity_coeffs = j.at("entitativity_coeffs").get<std::array<double, 5>>();
    b.model.feature_matrix = j.at("feature_matrix").get<std::array<std::array<double, 5>, 4>>();
  } catch (const json::exception& e) {
    throw IoError(path, std::string("bad coefficient block: ") + e.what());
  }
  if (j.contains("box")) {
    const json& box = j.at("box");
    b.box.neighbor_dist = range_from(box.at("neighbor_dist"), path, "neighbor_dist");
    b.box.radius = range_from(box.at("radius"), path, "radius");
    b.box.pref_speed = range_from(box.at("pref_speed"), path, "pref_speed");
    b.box.group_cohesion = range_from(box.at("group_cohesion"), path, "group_cohesion");
  } else {
    b.box = ParamBox::study();
  }
  if (j.contains("range")) {
    b.range.min = j.at("range").value("min", 0.0);
    b.range.max = j.at("range").value("max", 0.0);
  } else {
    b.range = entitativity_extremes(b.box, b.model);
  }
  b.alpha = j.value("alpha", 0.0);
  b.pca_explained = j.value("pca_explained", 0.0);
  b.n_stimuli = j.value("n_stimuli", 0);
  if (j.contains("entitativity_fit")) b.entitativity_fit = ols_from(j.at("entitativity_fit"), path);
  if (j.contains("feature_fits")) {
    const json& ff = j.at("feature_fits");
    if (!ff.is_array() || ff.size() != 4) throw IoError(path, "feature_fits must hold 4 fits");
    for (std::size_t i = 0; i < 4; ++i) b.feature_fits[i] = ols_from(ff[i], path);
  }
  return b;
}

void write_labels_csv(const std::string& path, const std::map<int, double>& labels) {
  std::string out = "group_id,entitativity\n";
  for (const auto& [gid, value] : labels) {
    out += std::to_string(gid);
    out += ',';
    out += shortest(value);
    out += '\n';
  }
  atomic_write_text(path, out);
}

std::map<int, double> read_labels_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;

  if (!std::getline(in, line)) throw IoError(path, 1, "empty file");
  ++lineno;
  {
    const auto header = split_row(line);
    if (header != std::vector<std::string>{"group_id", "entitativity"})
      throw IoError(path, 1, "expected header group_id,entitativity");
  }
  std::map<int, double> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") {
      if (in.peek() == EOF) break;
      throw IoError(path, lineno, "empty row");
    }
    const auto fields = split_row(line);
    if (fields.size() != 2)
      throw IoError(path, lineno, "expected 2 columns, got " + std::to_string(fields.size()));
    const int gid = parse_int(fields[0], path, lineno, "group_id");
    const double v = parse_double(fields[1], path, lineno, "entitativity");
    if (!out.emplace(gid, v).second)
      throw IoError(path, lineno, "duplicate group_id " + std::to_string(gid));
  }
  return out;
}

}  // namespace entikit
