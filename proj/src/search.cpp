#include "nasr/search.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <tuple>

#include "nasr/errors.hpp"

namespace nasr {

std::string to_string(HeuristicMode mode) {
  switch (mode) {
    case HeuristicMode::kValueNet: return "value-net";
    case HeuristicMode::kOGat: return "o-GAT";
    case HeuristicMode::kSP: return "SP";
    case HeuristicMode::kED: return "ED";
    case HeuristicMode::kZero: return "zero";
  }
  return "?";
}

HeuristicMode heuristic_mode_from_string(const std::string& s) {
  for (auto m : {HeuristicMode::kValueNet, HeuristicMode::kOGat, HeuristicMode::kSP, HeuristicMode::kED,
                 HeuristicMode::kZero})
    if (to_string(m) == s) return m;
  throw ValidationError("unknown heuristic mode '" + s + "' (expected value-net, o-GAT, SP, ED or zero)");
}

void SearchConfig::validate() const {
  if (max_expansions < 1) throw ValidationError("max_expansions must be >= 1");
  if (!std::isfinite(ed_lambda) || ed_lambda < 0) throw ValidationError("ed_lambda must be finite and >= 0");
}

nlohmann::json to_json(const SearchConfig& cfg) {
  return {{"heuristic_mode", to_string(cfg.mode)}, {"max_expansions", cfg.max_expansions}, {"ed_lambda", cfg.ed_lambda}};
}

SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig base) {
  if (!j.is_object()) throw ValidationError("search config must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "heuristic_mode") base.mode = heuristic_mode_from_string(value.get<std::string>());
      else if (key == "max_expansions") base.max_expansions = value.get<std::size_t>();
      else if (key == "ed_lambda") base.ed_lambda = value.get<double>();
      else throw ValidationError("unknown search key '" + key + "' (valid: heuristic_mode, max_expansions, ed_lambda)");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad search config: ") + e.what());
  }
  base.validate();
  return base;
}

Heuristic::Heuristic(const Model& model, const RoadNetwork& net, HeuristicMode mode, double ed_lambda)
    : model_(&model), net_(&net), mode_(mode), ed_lambda_(ed_lambda) {
  if (mode == HeuristicMode::kValueNet) value_.emplace(model, net);
  if (mode == HeuristicMode::kOGat) value_.emplace(model, net, GatVariant::kOriginal, model.config().value_uses_state);
}

double Heuristic::operator()(const MovingState& state, LocationId dest) const {
  const LocationId at = state.last();
  if (at == dest) return 0.0;
  switch (mode_) {
    case HeuristicMode::kValueNet:
    case HeuristicMode::kOGat: return value_->estimate(state.attended, at, dest).item();
    case HeuristicMode::kSP: return sp_heuristic(*model_, at, dest);
    case HeuristicMode::kED: return ed_lambda_ * net_->euclid(at, dest);
    case HeuristicMode::kZero: return 0.0;
  }
  return 0.0;
}

std::vector<LocationId> SearchResult::route() const {
  std::vector<LocationId> r;
  r.reserve(steps.size());
  for (const auto& s : steps) r.push_back(s.loc);
  return r;
}

namespace {

struct TreeNode {
  MovingState state;
  double h = 0.0;
  double f = 0.0;
  std::size_t parent = 0;
};

struct Entry {
  double f;
  double g;
  std::size_t seq;

  bool operator>(const Entry& o) const { return std::tie(f, g, seq) > std::tie(o.f, o.g, o.seq); }
};

}  // namespace

SearchResult astar(const RoadNetwork& net, const Model& model, const Query& q, const UserHistoryBank& bank,
                   const SearchConfig& cfg) {
  validate_query(net, q);
  cfg.validate();
  if (net.neighbors(q.source).empty())
    throw UnreachableError("source " + std::to_string(q.source) + " has no outgoing edges");
  if (net.hop_distances(q.source)[static_cast<std::size_t>(q.destination)] < 0)
    throw UnreachableError("destination " + std::to_string(q.destination) + " is not reachable from " +
                           std::to_string(q.source));

  ad::NoGradGuard no_grad;
  const ObservableCost oc(model, net, q.user, q.depart, prepare_history(model, bank, q.user));
  const Heuristic heuristic(model, net, cfg.mode, cfg.ed_lambda);

  std::vector<TreeNode> nodes;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier;
  SearchResult result;
  SearchDiagnostics& d = result.diagnostics;

  TreeNode root;
  root.state = oc.start(q.source);
  root.h = heuristic(root.state, q.destination);
  root.f = root.state.g_acc() + root.h;
  nodes.push_back(std::move(root));
  frontier.push({nodes[0].f, 0.0, 0});
  d.pushes = 1;
  d.peak_frontier = 1;

  while (!frontier.empty()) {
    const Entry top = frontier.top();
    frontier.pop();
    const std::size_t idx = top.seq;
    d.explored.push_back(nodes[idx].state.last());
    if (nodes[idx].state.last() == q.destination) {
      d.f = nodes[idx].f;
      for (std::size_t i = idx;; i = nodes[i].parent) {
        const TreeNode& n = nodes[i];
        result.steps.push_back({n.state.last(), n.state.g_acc(), n.h, n.f});
        if (i == 0) break;
      }
      std::reverse(result.steps.begin(), result.steps.end());
      return result;
    }
    if (d.expansions >= cfg.max_expansions)
      throw SearchBudgetError("no route from " + std::to_string(q.source) + " to " + std::to_string(q.destination) +
                              " within " + std::to_string(cfg.max_expansions) + " expansions");
    ++d.expansions;
    if (net.neighbors(nodes[idx].state.last()).empty()) continue;
    Expansion e = oc.expand(nodes[idx].state);
    for (std::size_t k = 0; k < e.next.size(); ++k) {
      const auto& path = nodes[idx].state.path;
      if (std::find(path.begin(), path.end(), e.next[k]) != path.end()) continue;
      TreeNode child;
      child.state = std::move(e.children[k]);
      child.h = heuristic(child.state, q.destination);
      child.f = child.state.g_acc() + child.h;
      child.parent = idx;
      nodes.push_back(std::move(child));
      const TreeNode& c = nodes.back();
      frontier.push({c.f, c.state.g_acc(), nodes.size() - 1});
      ++d.pushes;
    }
    d.peak_frontier = std::max(d.peak_frontier, frontier.size());
  }
  throw UnreachableError("no simple path from " + std::to_string(q.source) + " to " + std::to_string(q.destination));
}

RouteResult recommend(const RoadNetwork& net, const Model& model, const Query& q, const UserHistoryBank& bank,
                      const SearchConfig& cfg) {
  SearchResult s = astar(net, model, q, bank, cfg);
  RouteResult r;
  r.query = q;
  r.mode = cfg.mode;
  r.route = s.route();
  for (std::size_t i = 1; i < s.steps.size(); ++i) r.step_probs.push_back(std::exp(-(s.steps[i].g - s.steps[i - 1].g)));
  r.trace = std::move(s.steps);
  r.diagnostics = std::move(s.diagnostics);
  return r;
}

nlohmann::json route_geojson(const RoadNetwork& net, const RouteResult& r) {
  nlohmann::json coords = nlohmann::json::array();
  for (LocationId l : r.route) coords.push_back({net.coord(l).x, net.coord(l).y});
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : r.trace) trace.push_back({{"location", s.loc}, {"g", s.g}, {"h", s.h}, {"f", s.f}});
  nlohmann::json explored = nlohmann::json::array();
  for (LocationId l : r.diagnostics.explored) explored.push_back({net.coord(l).x, net.coord(l).y});
  return {
      {"type", "Feature"},
      {"geometry", {{"type", "LineString"}, {"coordinates", std::move(coords)}}},
      {"properties",
       {{"source", r.query.source},
        {"destination", r.query.destination},
        {"depart", r.query.depart},
        {"user", r.query.user},
        {"heuristic_mode", to_string(r.mode)},
        {"route", r.route},
        {"step_probs", r.step_probs},
        {"f_trace", std::move(trace)},
        {"diagnostics",
         {{"expansions", r.diagnostics.expansions},
          {"pushes", r.diagnostics.pushes},
          {"peak_frontier", r.diagnostics.peak_frontier},
          {"f", r.diagnostics.f},
          {"explored", std::move(explored)}}}}},
  };
}

}  // namespace nasr
