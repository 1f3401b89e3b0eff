#include "nasr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include "nasr/errors.hpp"

namespace nasr {

RoadNetwork::RoadNetwork(std::vector<Point> coords, std::vector<Edge> edges)
    : coords_(std::move(coords)) {
  for (std::size_t i = 0; i < coords_.size(); ++i) {
    if (!std::isfinite(coords_[i].x) || !std::isfinite(coords_[i].y)) {
      throw ValidationError("location " + std::to_string(i) + " has a non-finite coordinate");
    }
  }
  for (const Edge& e : edges) {
    if (!valid(e.from) || !valid(e.to)) {
      throw ValidationError("edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                            " references a location outside 0.." +
                            std::to_string(static_cast<long>(coords_.size()) - 1));
    }
    if (e.from == e.to) {
      throw ValidationError("self loop at location " + std::to_string(e.from));
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return a.from != b.from ? a.from < b.from : a.to < b.to;
  });
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (edges[i].from == edges[i - 1].from && edges[i].to == edges[i - 1].to) {
      throw ValidationError("duplicate edge " + std::to_string(edges[i].from) + "->" +
                            std::to_string(edges[i].to));
    }
  }
  offsets_.assign(coords_.size() + 1, 0);
  for (const Edge& e : edges) ++offsets_[static_cast<std::size_t>(e.from) + 1];
  for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
  targets_.reserve(edges.size());
  classes_.reserve(edges.size());
  for (const Edge& e : edges) {
    targets_.push_back(e.to);
    classes_.push_back(e.cls);
  }
}

void RoadNetwork::check(LocationId l) const {
  if (!valid(l)) {
    throw ValidationError("invalid location id " + std::to_string(l) + " (network has " +
                          std::to_string(coords_.size()) + " locations)");
  }
}

std::span<const LocationId> RoadNetwork::neighbors(LocationId l) const {
  check(l);
  const auto i = static_cast<std::size_t>(l);
  return {targets_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
}

bool RoadNetwork::has_edge(LocationId from, LocationId to) const {
  auto n = neighbors(from);
  return std::binary_search(n.begin(), n.end(), to);
}

EdgeClass RoadNetwork::edge_class(LocationId from, LocationId to) const {
  auto n = neighbors(from);
  auto it = std::lower_bound(n.begin(), n.end(), to);
  if (it == n.end() || *it != to) {
    throw ValidationError("no edge " + std::to_string(from) + "->" + std::to_string(to));
  }
  return classes_[offsets_[static_cast<std::size_t>(from)] + static_cast<std::size_t>(it - n.begin())];
}

const Point& RoadNetwork::coord(LocationId l) const {
  check(l);
  return coords_[static_cast<std::size_t>(l)];
}

double RoadNetwork::euclid(LocationId a, LocationId b) const {
  const Point& p = coord(a);
  const Point& q = coord(b);
  return std::hypot(p.x - q.x, p.y - q.y);
}

std::vector<Edge> RoadNetwork::edges() const {
  std::vector<Edge> out;
  out.reserve(targets_.size());
  for (std::size_t from = 0; from < coords_.size(); ++from) {
    for (std::size_t k = offsets_[from]; k < offsets_[from + 1]; ++k) {
      out.push_back({static_cast<LocationId>(from), targets_[k], classes_[k]});
    }
  }
  return out;
}

std::vector<int> RoadNetwork::hop_distances(LocationId source) const {
  check(source);
  std::vector<int> dist(coords_.size(), -1);
  std::deque<LocationId> queue{source};
  dist[static_cast<std::size_t>(source)] = 0;
  while (!queue.empty()) {
    LocationId cur = queue.front();
    queue.pop_front();
    for (LocationId nxt : neighbors(cur)) {
      auto& d = dist[static_cast<std::size_t>(nxt)];
      if (d < 0) {
        d = dist[static_cast<std::size_t>(cur)] + 1;
        queue.push_back(nxt);
      }
    }
  }
  return dist;
}

RoadNetwork grid_network(int w, int h, double spacing, const std::set<int>& main_lines) {
  if (w < 2 || h < 2) {
    throw ValidationError("grid dimensions must be at least 2x2, got " + std::to_string(w) + "x" +
                          std::to_string(h));
  }
  if (!(spacing > 0.0) || !std::isfinite(spacing)) {
    throw ValidationError("grid spacing must be positive");
  }
  std::vector<Point> coords;
  coords.reserve(static_cast<std::size_t>(w * h));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) coords.push_back({c * spacing, r * spacing});
  }
  std::vector<Edge> edges;
  auto id = [w](int r, int c) { return static_cast<LocationId>(r * w + c); };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (c + 1 < w) {
        EdgeClass cls = main_lines.contains(r) ? EdgeClass::kMain : EdgeClass::kSide;
        edges.push_back({id(r, c), id(r, c + 1), cls});
        edges.push_back({id(r, c + 1), id(r, c), cls});
      }
      if (r + 1 < h) {
        EdgeClass cls = main_lines.contains(c) ? EdgeClass::kMain : EdgeClass::kSide;
        edges.push_back({id(r, c), id(r + 1, c), cls});
        edges.push_back({id(r + 1, c), id(r, c), cls});
      }
    }
  }
  return RoadNetwork(std::move(coords), std::move(edges));
}

nlohmann::json network_to_json(const RoadNetwork& net) {
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Point& p = net.coord(static_cast<LocationId>(i));
    nodes.push_back({{"id", i}, {"x", p.x}, {"y", p.y}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const Edge& e : net.edges()) {
    edges.push_back({{"from", e.from}, {"to", e.to}, {"class", e.cls == EdgeClass::kMain ? "main" : "side"}});
  }
  return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

RoadNetwork network_from_json(const nlohmann::json& j) {
  try {
    const auto& nodes = j.at("nodes");
    std::vector<Point> coords(nodes.size());
    std::vector<bool> seen(nodes.size(), false);
    for (const auto& n : nodes) {
      const auto id = n.at("id").get<long long>();
      if (id < 0 || static_cast<std::size_t>(id) >= nodes.size() || seen[static_cast<std::size_t>(id)]) {
        throw ValidationError("node ids must be unique and cover 0.." + std::to_string(nodes.size() - 1) +
                              ", got " + std::to_string(id));
      }
      seen[static_cast<std::size_t>(id)] = true;
      coords[static_cast<std::size_t>(id)] = {n.at("x").get<double>(), n.at("y").get<double>()};
    }
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      const std::string cls = e.value("class", "side");
      if (cls != "main" && cls != "side") throw ValidationError("unknown edge class '" + cls + "'");
      edges.push_back({e.at("from").get<LocationId>(), e.at("to").get<LocationId>(),
                       cls == "main" ? EdgeClass::kMain : EdgeClass::kSide});
    }
    return RoadNetwork(std::move(coords), std::move(edges));
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed network json: ") + ex.what());
  }
}

RoadNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open network file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError("cannot parse network file " + path.string() + ": " + ex.what());
  }
  return network_from_json(j);
}

void save_network(const RoadNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write network file " + path.string());
  out << network_to_json(net).dump() << '\n';
}

}  // namespace nasr
