#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nasr/graph.hpp"

namespace nasr {

using UserId = std::int32_t;
using Timestamp = std::int64_t;  // seconds since the Unix epoch, UTC

struct Step {
  LocationId loc = 0;
  Timestamp time = 0;
};

enum class Split { kTrain, kVal, kTest };

struct Trajectory {
  UserId user = 0;
  std::vector<Step> steps;
  Split split = Split::kTrain;

  std::size_t length() const { return steps.size(); }
  Timestamp depart() const { return steps.front().time; }
  std::vector<LocationId> locations() const;
};

struct Query {
  LocationId source = 0;
  LocationId destination = 0;
  Timestamp depart = 0;
  UserId user = 0;
};

enum class Bucket { kShort, kMedium, kLong, kExcluded };

// Trajectories kept in canonical order: user ascending, then start time,
// then step sequence.
struct Dataset {
  std::vector<Trajectory> trajectories;

  bool empty() const { return trajectories.empty(); }
  std::size_t num_users() const;  // max user id + 1
  std::vector<std::size_t> indices(Split split) const;
};

std::string to_string(Split split);
Split split_from_string(const std::string& s);
std::string to_string(Bucket bucket);

// Throws ValidationError naming the offending pair or step.
void validate_trajectory(const RoadNetwork& net, const Trajectory& t);
void validate_query(const RoadNetwork& net, const Query& q);

void canonicalize(Dataset& data);

struct SplitResult {
  Dataset data;
  std::size_t dropped_users = 0;
};

// Per-user seeded shuffle partitioned 70/10/20: val and test get the floor of
// their share, train the remainder. Users with fewer than 10 trajectories are
// dropped and counted.
SplitResult split_dataset(Dataset data, std::uint64_t seed);

// Query from first/last location and departure time, plus the hidden route.
std::pair<Query, std::vector<LocationId>> make_query(const Trajectory& t);

Bucket bucket(std::size_t location_count);
inline Bucket bucket(const Trajectory& t) { return bucket(t.length()); }

struct SynthConfig {
  double temperature = 1.0;
  double speed = 8.0;                    // m/s
  Timestamp window_start = 1564963200;   // 2019-08-05 00:00 UTC, a Monday
  Timestamp window_length = 28 * 86400;
  double home_radius = 0.25;             // fraction of the network extent
  int max_attempts = 100;
  std::optional<double> fixed_beta;      // overrides the per-user draw
};

// Goal-biased self-avoiding walks; a pure function of its arguments.
Dataset synth_generate(const RoadNetwork& net, std::size_t n_users, std::size_t per_user,
                       std::uint64_t seed, const SynthConfig& cfg = {});

// JSON Lines, one trajectory per line.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path, const RoadNetwork& net);
std::string dataset_to_jsonl(const Dataset& data);
Dataset dataset_from_jsonl(const std::string& text, const RoadNetwork& net);

}  // namespace nasr
