#include "nasr/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "nasr/errors.hpp"
#include "nasr/rng.hpp"

namespace nasr {

std::vector<LocationId> Trajectory::locations() const {
  std::vector<LocationId> out;
  out.reserve(steps.size());
  for (const Step& s : steps) out.push_back(s.loc);
  return out;
}

std::size_t Dataset::num_users() const {
  UserId max_user = -1;
  for (const auto& t : trajectories) max_user = std::max(max_user, t.user);
  return static_cast<std::size_t>(max_user + 1);
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    if (trajectories[i].split == split) out.push_back(i);
  }
  return out;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split label '" + s + "'");
}

std::string to_string(Bucket bucket) {
  switch (bucket) {
    case Bucket::kShort: return "short";
    case Bucket::kMedium: return "medium";
    case Bucket::kLong: return "long";
    case Bucket::kExcluded: return "excluded";
  }
  return "excluded";
}

void validate_trajectory(const RoadNetwork& net, const Trajectory& t) {
  if (t.steps.size() < 2) {
    throw ValidationError("trajectory of user " + std::to_string(t.user) + " has fewer than 2 steps");
  }
  if (t.user < 0) throw ValidationError("negative user id " + std::to_string(t.user));
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (!net.valid(t.steps[i].loc)) {
      throw ValidationError("trajectory step " + std::to_string(i) + " has invalid location " +
                            std::to_string(t.steps[i].loc));
    }
    if (t.steps[i].time < 0) throw ValidationError("negative timestamp at step " + std::to_string(i));
    if (i == 0) continue;
    const LocationId a = t.steps[i - 1].loc;
    const LocationId b = t.steps[i].loc;
    if (!net.has_edge(a, b)) {
      throw ValidationError("trajectory pair (" + std::to_string(a) + ", " + std::to_string(b) +
                            ") at step " + std::to_string(i) + " is not a road-network edge");
    }
    if (t.steps[i].time < t.steps[i - 1].time) {
      throw ValidationError("timestamps decrease at step " + std::to_string(i));
    }
  }
}

void validate_query(const RoadNetwork& net, const Query& q) {
  if (!net.valid(q.source) || !net.valid(q.destination)) {
    throw ValidationError("query endpoints must be valid location ids");
  }
  if (q.source == q.destination) throw ValidationError("query source equals destination");
  if (q.user < 0) throw ValidationError("query user must be non-negative");
  if (q.depart < 0) throw ValidationError("query departure time must be non-negative");
}

void canonicalize(Dataset& data) {
  std::stable_sort(data.trajectories.begin(), data.trajectories.end(),
                   [](const Trajectory& a, const Trajectory& b) {
                     if (a.user != b.user) return a.user < b.user;
                     if (a.depart() != b.depart()) return a.depart() < b.depart();
                     return std::lexicographical_compare(
                         a.steps.begin(), a.steps.end(), b.steps.begin(), b.steps.end(),
                         [](const Step& x, const Step& y) {
                           return x.loc != y.loc ? x.loc < y.loc : x.time < y.time;
                         });
                   });
}

SplitResult split_dataset(Dataset data, std::uint64_t seed) {
  if (data.empty()) throw ValidationError("cannot split an empty dataset");
  canonicalize(data);
  std::map<UserId, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    by_user[data.trajectories[i].user].push_back(i);
  }
  Rng rng(seed);
  SplitResult result;
  for (auto& [user, idx] : by_user) {
    if (idx.size() < 10) {
      ++result.dropped_users;
      continue;
    }
    rng.shuffle(std::span<std::size_t>(idx));
    const std::size_t n_val = idx.size() / 10;
    const std::size_t n_test = idx.size() / 5;
    const std::size_t n_train = idx.size() - n_val - n_test;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Trajectory t = data.trajectories[idx[k]];
      t.split = k < n_train ? Split::kTrain : (k < n_train + n_val ? Split::kVal : Split::kTest);
      result.data.trajectories.push_back(std::move(t));
    }
  }
  canonicalize(result.data);
  return result;
}

std::pair<Query, std::vector<LocationId>> make_query(const Trajectory& t) {
  if (t.steps.size() < 3) {
    throw ValidationError("a query needs a trajectory of at least 3 locations, got " +
                          std::to_string(t.steps.size()));
  }
  Query q{t.steps.front().loc, t.steps.back().loc, t.steps.front().time, t.user};
  return {q, t.locations()};
}

Bucket bucket(std::size_t m) {
  if (m < 10) return Bucket::kExcluded;
  if (m <= 20) return Bucket::kShort;
  if (m <= 30) return Bucket::kMedium;
  return Bucket::kLong;
}

namespace {

double mean_edge_length(const RoadNetwork& net) {
  double total = 0.0;
  std::size_t count = 0;
  for (const Edge& e : net.edges()) {
    total += net.euclid(e.from, e.to);
    ++count;
  }
  return count == 0 ? 1.0 : total / static_cast<double>(count);
}

// One goal-biased self-avoiding walk; empty on failure.
std::vector<LocationId> biased_walk(const RoadNetwork& net, LocationId source, LocationId goal,
                                    double beta, double scale, double temperature,
                                    std::size_t max_steps, Rng& rng) {
  std::vector<LocationId> path{source};
  std::vector<bool> visited(net.size(), false);
  visited[static_cast<std::size_t>(source)] = true;
  std::vector<LocationId> cand;
  std::vector<double> weight;
  LocationId cur = source;
  while (cur != goal) {
    if (path.size() - 1 >= max_steps) return {};
    cand.clear();
    weight.clear();
    const double here = net.euclid(cur, goal);
    for (LocationId nxt : net.neighbors(cur)) {
      if (visited[static_cast<std::size_t>(nxt)]) continue;
      const double delta = (net.euclid(nxt, goal) - here) / scale;
      const double side = net.edge_class(cur, nxt) == EdgeClass::kSide ? beta : 0.0;
      cand.push_back(nxt);
      weight.push_back(-(delta + side) / temperature);
    }
    if (cand.empty()) return {};
    const double top = *std::max_element(weight.begin(), weight.end());
    double total = 0.0;
    for (double& w : weight) total += (w = std::exp(w - top));
    double pick = rng.uniform() * total;
    std::size_t k = 0;
    while (k + 1 < cand.size() && pick >= weight[k]) pick -= weight[k++];
    cur = cand[k];
    visited[static_cast<std::size_t>(cur)] = true;
    path.push_back(cur);
  }
  return path;
}

}  // namespace

Dataset synth_generate(const RoadNetwork& net, std::size_t n_users, std::size_t per_user,
                       std::uint64_t seed, const SynthConfig& cfg) {
  if (n_users == 0 || per_user == 0) throw ValidationError("user and trajectory counts must be >= 1");
  if (net.size() < 2) throw ValidationError("network needs at least 2 locations");
  Rng rng(seed);
  const double scale = mean_edge_length(net);
  double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
  double min_y = min_x, max_y = -min_x;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Point& p = net.coord(static_cast<LocationId>(i));
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double radius = cfg.home_radius * std::max(max_x - min_x, max_y - min_y);

  Dataset data;
  for (std::size_t u = 0; u < n_users; ++u) {
    const double beta = cfg.fixed_beta ? *cfg.fixed_beta : rng.uniform(0.0, 2.0);
    const auto home = static_cast<LocationId>(rng.below(net.size()));
    std::vector<LocationId> home_region;
    for (std::size_t i = 0; i < net.size(); ++i) {
      if (net.euclid(home, static_cast<LocationId>(i)) <= radius) {
        home_region.push_back(static_cast<LocationId>(i));
      }
    }
    for (std::size_t k = 0; k < per_user; ++k) {
      std::vector<LocationId> path;
      for (int attempt = 0; attempt < cfg.max_attempts && path.empty(); ++attempt) {
        const LocationId source = home_region[rng.below(home_region.size())];
        auto goal = static_cast<LocationId>(rng.below(net.size() - 1));
        if (goal >= source) ++goal;
        const int hops = net.hop_distances(source)[static_cast<std::size_t>(goal)];
        if (hops < 0) continue;
        path = biased_walk(net, source, goal, beta, scale, cfg.temperature,
                           4 * static_cast<std::size_t>(hops), rng);
      }
      if (path.empty()) {
        throw ValidationError("no reachable destination for user " + std::to_string(u) + " after " +
                              std::to_string(cfg.max_attempts) + " resamples");
      }
      Trajectory t;
      t.user = static_cast<UserId>(u);
      const Timestamp start =
          cfg.window_start + static_cast<Timestamp>(rng.below(static_cast<std::size_t>(cfg.window_length)));
      double travelled = 0.0;
      for (std::size_t i = 0; i < path.size(); ++i) {
        if (i > 0) travelled += net.euclid(path[i - 1], path[i]);
        t.steps.push_back({path[i], start + static_cast<Timestamp>(std::floor(travelled / cfg.speed))});
      }
      data.trajectories.push_back(std::move(t));
    }
  }
  canonicalize(data);
  return data;
}

std::string dataset_to_jsonl(const Dataset& data) {
  std::string out;
  for (const Trajectory& t : data.trajectories) {
    nlohmann::json steps = nlohmann::json::array();
    for (const Step& s : t.steps) steps.push_back({s.loc, s.time});
    nlohmann::json line = {{"user", t.user}, {"steps", std::move(steps)}, {"split", to_string(t.split)}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(const std::string& text, const RoadNetwork& net) {
  Dataset data;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Trajectory t;
    try {
      auto j = nlohmann::json::parse(line);
      t.user = j.at("user").get<UserId>();
      for (const auto& s : j.at("steps")) {
        if (!s.is_array() || s.size() != 2) throw ValidationError("step must be [loc, ts]");
        t.steps.push_back({s[0].get<LocationId>(), s[1].get<Timestamp>()});
      }
      t.split = split_from_string(j.value("split", "train"));
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + ex.what());
    }
    try {
      validate_trajectory(net, t);
    } catch (const ValidationError& ex) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + ex.what());
    }
    data.trajectories.push_back(std::move(t));
  }
  canonicalize(data);
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write dataset file " + path.string());
  out << dataset_to_jsonl(data);
}

Dataset load_dataset(const std::filesystem::path& path, const RoadNetwork& net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return dataset_from_jsonl(buf.str(), net);
}

}  // namespace nasr
