#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <vector>

#include "json.hpp"

namespace nasr {

using LocationId = std::int32_t;

enum class EdgeClass { kMain, kSide };

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Edge {
  LocationId from = 0;
  LocationId to = 0;
  EdgeClass cls = EdgeClass::kSide;
};

// Directed road graph over planar locations (meters). Immutable after
// construction; out-edge lists are kept sorted by target id so every
// iteration order downstream is deterministic.
class RoadNetwork {
 public:
  RoadNetwork() = default;
  // Validates ids and coordinates; throws ValidationError on dangling
  // endpoints, duplicate edges, self loops or non-finite coordinates.
  RoadNetwork(std::vector<Point> coords, std::vector<Edge> edges);

  std::size_t size() const { return coords_.size(); }
  std::size_t edge_count() const { return targets_.size(); }
  bool valid(LocationId l) const { return l >= 0 && static_cast<std::size_t>(l) < coords_.size(); }

  std::span<const LocationId> neighbors(LocationId l) const;
  bool has_edge(LocationId from, LocationId to) const;
  EdgeClass edge_class(LocationId from, LocationId to) const;
  const Point& coord(LocationId l) const;
  double euclid(LocationId a, LocationId b) const;

  // All edges in canonical (from, to) order.
  std::vector<Edge> edges() const;

  // Hop counts from `source` following edge direction; -1 when unreachable.
  std::vector<int> hop_distances(LocationId source) const;

 private:
  void check(LocationId l) const;

  std::vector<Point> coords_;
  std::vector<std::size_t> offsets_;
  std::vector<LocationId> targets_;
  std::vector<EdgeClass> classes_;
};

// w x h lattice with node id = row * w + col at (col * spacing, row * spacing).
// Each 4-neighbour pair gets one directed edge per direction. A horizontal
// edge on row r is main when r is in `main_lines`; a vertical edge on column
// c is main when c is in `main_lines`.
RoadNetwork grid_network(int w, int h, double spacing, const std::set<int>& main_lines);

nlohmann::json network_to_json(const RoadNetwork& net);
RoadNetwork network_from_json(const nlohmann::json& j);

RoadNetwork load_network(const std::filesystem::path& path);
void save_network(const RoadNetwork& net, const std::filesystem::path& path);

}  // namespace nasr
