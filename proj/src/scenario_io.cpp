#include "grbo/scenario_io.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace grbo {

using nlohmann::json;

double round_sig9(double value) {
  if (!std::isfinite(value) || value == 0.0) return value == 0.0 ? 0.0 : value;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return std::strtod(buf, nullptr);
}

void quantize_for_storage(Scenario& sc) {
  const auto q = [](AgentState& s) {
    s.x = round_sig9(s.x);
    s.y = round_sig9(s.y);
    s.heading = round_sig9(s.heading);
    s.speed = round_sig9(s.speed);
    s.length = round_sig9(s.length);
    s.width = round_sig9(s.width);
  };
  sc.dt = round_sig9(sc.dt);
  for (Lane& l : sc.map.lanes) {
    l.width = round_sig9(l.width);
    for (Vec2& p : l.centerline) p = Vec2(round_sig9(p.x()), round_sig9(p.y()));
  }
  for (Trajectory& h : sc.initial_history)
    for (AgentState& s : h) q(s);
  for (Goal& g : sc.goals) {
    g.point = Vec2(round_sig9(g.point.x()), round_sig9(g.point.y()));
    g.heading = round_sig9(g.heading);
  }
  if (sc.demo)
    for (Trajectory& tr : *sc.demo)
      for (AgentState& s : tr) q(s);
}

namespace {

json state_row(const AgentState& s) {
  return json::array({round_sig9(s.x), round_sig9(s.y), round_sig9(s.heading),
                      round_sig9(s.speed)});
}

AgentState state_from_row(const json& row, int id, double length, double width) {
  if (!row.is_array() || row.size() != 4) throw FormatError("state row must have 4 numbers");
  AgentState s;
  s.x = row[0].get<double>();
  s.y = row[1].get<double>();
  s.heading = row[2].get<double>();
  s.speed = row[3].get<double>();
  s.length = length;
  s.width = width;
  s.agent_id = id;
  return s;
}

json to_json(const Scenario& sc) {
  json lanes = json::array();
  for (const Lane& l : sc.map.lanes) {
    json pts = json::array();
    for (const Vec2& p : l.centerline) pts.push_back({round_sig9(p.x()), round_sig9(p.y())});
    lanes.push_back({{"id", l.id},
                     {"width", round_sig9(l.width)},
                     {"successors", l.successors},
                     {"centerline", std::move(pts)}});
  }
  json routes = json::object();
  for (const auto& [agent, ids] : sc.map.routes) routes[std::to_string(agent)] = ids;

  json agents = json::array();
  for (const Trajectory& h : sc.initial_history) {
    json hist = json::array();
    for (const AgentState& s : h) hist.push_back(state_row(s));
    agents.push_back({{"agent_id", h.back().agent_id},
                      {"length", round_sig9(h.back().length)},
                      {"width", round_sig9(h.back().width)},
                      {"history", std::move(hist)}});
  }
  json goals = json::array();
  for (const Goal& g : sc.goals)
    goals.push_back({round_sig9(g.point.x()), round_sig9(g.point.y()), round_sig9(g.heading)});

  json demo = nullptr;
  if (sc.demo) {
    demo = json::array();
    for (const Trajectory& tr : *sc.demo) {
      json rows = json::array();
      for (const AgentState& s : tr) rows.push_back(state_row(s));
      demo.push_back(std::move(rows));
    }
  }
  return {{"scenario_id", sc.scenario_id},
          {"rng_seed", sc.rng_seed},
          {"family", std::string(to_string(sc.family))},
          {"dt", round_sig9(sc.dt)},
          {"horizon", sc.horizon},
          {"map", {{"lanes", std::move(lanes)}, {"routes", std::move(routes)}}},
          {"agents", std::move(agents)},
          {"goals", std::move(goals)},
          {"demo", std::move(demo)},
          {"inattentive_agents", sc.inattentive_agents}};
}

Scenario from_json(const json& j) {
  Scenario sc;
  sc.scenario_id = j.at("scenario_id").get<std::string>();
  sc.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  sc.family = family_from_string(j.at("family").get<std::string>());
  sc.dt = j.at("dt").get<double>();
  sc.horizon = j.at("horizon").get<int>();
  for (const json& l : j.at("map").at("lanes")) {
    Lane lane;
    lane.id = l.at("id").get<int>();
    lane.width = l.at("width").get<double>();
    lane.successors = l.at("successors").get<std::vector<int>>();
    for (const json& p : l.at("centerline"))
      lane.centerline.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    sc.map.lanes.push_back(std::move(lane));
  }
  for (const auto& [key, ids] : j.at("map").at("routes").items())
    sc.map.routes[std::stoi(key)] = ids.get<std::vector<int>>();

  std::vector<std::pair<double, double>> footprints;
  for (const json& a : j.at("agents")) {
    const int id = a.at("agent_id").get<int>();
    const double length = a.at("length").get<double>();
    const double width = a.at("width").get<double>();
    footprints.emplace_back(length, width);
    Trajectory h;
    for (const json& row : a.at("history")) h.push_back(state_from_row(row, id, length, width));
    sc.initial_history.push_back(std::move(h));
  }
  for (const json& g : j.at("goals"))
    sc.goals.push_back({Vec2(g.at(0).get<double>(), g.at(1).get<double>()),
                        g.at(2).get<double>()});
  const json& demo = j.at("demo");
  if (!demo.is_null()) {
    if (demo.size() != sc.initial_history.size())
      throw FormatError("scenario " + sc.scenario_id + ": demo agent count mismatch");
    std::vector<Trajectory> d;
    for (std::size_t i = 0; i < demo.size(); ++i) {
      Trajectory tr;
      for (const json& row : demo[i])
        tr.push_back(state_from_row(row, sc.agent_id(i), footprints[i].first,
                                    footprints[i].second));
      d.push_back(std::move(tr));
    }
    sc.demo = std::move(d);
  }
  sc.inattentive_agents = j.at("inattentive_agents").get<std::vector<int>>();
  return sc;
}

}  // namespace

std::string serialize_scenarios(const std::vector<Scenario>& scenarios,
                                const std::string& provenance_json) {
  std::ostringstream out;
  out << "{\"format_version\":" << kScenarioFormatVersion
      << ",\"provenance\":" << json::parse(provenance_json).dump() << ",\"scenarios\":[\n";
  for (std::size_t k = 0; k < scenarios.size(); ++k) {
    out << to_json(scenarios[k]).dump();
    out << (k + 1 < scenarios.size() ? ",\n" : "\n");
  }
  out << "]}\n";
  return out.str();
}

std::vector<Scenario> parse_scenarios(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("scenario file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("format_version"))
    throw FormatError("scenario file lacks format_version");
  if (doc.at("format_version") != kScenarioFormatVersion)
    throw FormatError("unsupported scenario format_version " + doc.at("format_version").dump());
  std::vector<Scenario> out;
  try {
    for (const json& s : doc.at("scenarios")) out.push_back(from_json(s));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed scenario record: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("malformed scenario record: ") + e.what());
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_scenarios(const std::filesystem::path& path, const std::vector<Scenario>& scenarios,
                     const std::string& provenance_json) {
  write_text_file(path, serialize_scenarios(scenarios, provenance_json));
}

std::vector<Scenario> read_scenarios(const std::filesystem::path& path) {
  return parse_scenarios(read_text_file(path));
}

}  // namespace grbo
