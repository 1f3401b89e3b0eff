#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nasr/graph.hpp"
#include "nasr/model.hpp"
#include "nasr/observable_cost.hpp"
#include "nasr/trajectory.hpp"
#include "nasr/value_net.hpp"

namespace nasr {

enum class HeuristicMode { kValueNet, kOGat, kSP, kED, kZero };

std::string to_string(HeuristicMode mode);
HeuristicMode heuristic_mode_from_string(const std::string& s);

struct SearchConfig {
  HeuristicMode mode = HeuristicMode::kValueNet;
  std::size_t max_expansions = 10000;
  double ed_lambda = 1.0;  // cost per meter for ED

  void validate() const;
};

nlohmann::json to_json(const SearchConfig& cfg);
SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig base = {});

// Remaining-cost estimate for one query and one mode.
class Heuristic {
 public:
  Heuristic(const Model& model, const RoadNetwork& net, HeuristicMode mode, double ed_lambda);

  HeuristicMode mode() const { return mode_; }
  // Zero at the destination itself.
  double operator()(const MovingState& state, LocationId dest) const;

 private:
  const Model* model_;
  const RoadNetwork* net_;
  HeuristicMode mode_;
  double ed_lambda_;
  std::optional<ValueNet> value_;
};

struct SearchDiagnostics {
  std::size_t expansions = 0;
  std::size_t pushes = 0;
  std::size_t peak_frontier = 0;
  double f = 0.0;
  std::vector<LocationId> explored;  // last location of every popped prefix
};

struct SearchStep {
  LocationId loc = 0;
  double g = 0.0;
  double h = 0.0;
  double f = 0.0;
};

struct SearchResult {
  std::vector<SearchStep> steps;  // along the returned route, source first
  SearchDiagnostics diagnostics;

  std::vector<LocationId> route() const;
  double cost() const { return steps.back().g; }
};

// Best-first search over simple-path prefixes ordered by (f, g, insertion).
// Throws SearchBudgetError after max_expansions expansions without reaching
// the destination and UnreachableError when no simple path exists.
SearchResult astar(const RoadNetwork& net, const Model& model, const Query& q, const UserHistoryBank& bank,
                   const SearchConfig& cfg);

struct RouteResult {
  Query query;
  HeuristicMode mode = HeuristicMode::kValueNet;
  std::vector<LocationId> route;
  std::vector<double> step_probs;  // probability of each transition, route.size() - 1 entries
  std::vector<SearchStep> trace;
  SearchDiagnostics diagnostics;
};

RouteResult recommend(const RoadNetwork& net, const Model& model, const Query& q, const UserHistoryBank& bank,
                      const SearchConfig& cfg);

// Feature with a LineString geometry and the trace in its properties.
nlohmann::json route_geojson(const RoadNetwork& net, const RouteResult& r);

}  // namespace nasr
