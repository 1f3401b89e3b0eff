#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nasr/autodiff.hpp"
#include "nasr/graph.hpp"
#include "nasr/model.hpp"
#include "nasr/trajectory.hpp"

namespace nasr {

// Encoded prefix l_s -> ... -> l_i of one route under one query.
struct MovingState {
  std::vector<LocationId> path;
  std::vector<ad::Var> hiddens;  // GRU state per prefix location
  std::vector<ad::Var> keys;     // prefix-attention key projection per hidden
  ad::Var summary;               // after prefix attention
  ad::Var attended;              // after history attention; feeds both costs
  ad::Var g;                     // accumulated -log probability (scalar)

  LocationId last() const { return path.back(); }
  double g_acc() const { return g.item(); }
};

// Detached end-of-trajectory summaries of each user's training trajectories,
// most recent `cap` per user.
class UserHistoryBank {
 public:
  struct Entry {
    std::size_t trajectory = 0;  // index into the owning dataset
    Timestamp depart = 0;
    std::vector<double> summary;
  };

  explicit UserHistoryBank(std::size_t cap = 32) : cap_(cap) {}

  std::size_t cap() const { return cap_; }
  bool empty() const { return by_user_.empty(); }
  std::span<const Entry> entries(UserId u) const;
  // Keeps entries ordered by departure and trims to the most recent `cap`.
  void add(UserId u, Entry e);

  nlohmann::json to_json() const;
  static UserHistoryBank from_json(const nlohmann::json& j);

 private:
  std::size_t cap_;
  std::map<UserId, std::vector<Entry>> by_user_;
};

// History entries of one user, projected for attention under the current
// parameters.
struct HistoryView {
  std::vector<ad::Var> values;
  std::vector<ad::Var> keys;

  bool empty() const { return values.empty(); }
};

HistoryView prepare_history(const Model& model, const UserHistoryBank& bank, UserId user,
                            std::optional<std::size_t> exclude_trajectory = std::nullopt);

// Attention of the last hidden over the whole prefix.
ad::Var intra_attention(const Model& model, std::span<const ad::Var> hiddens);
// Attention of a prefix summary over history entries; the summary itself when
// there is no history. The moving state is summary + this result when history
// exists.
ad::Var inter_attention(const Model& model, const ad::Var& summary, const HistoryView& history);

struct Expansion {
  std::vector<LocationId> next;     // successors of the expanded location, ascending
  std::vector<MovingState> children;
  ad::Var probs;                    // one probability per successor
};

// The observable-cost component bound to one (user, departure time, history).
// Every step of a prefix reuses the departure time's weekday/hour indices.
class ObservableCost {
 public:
  ObservableCost(const Model& model, const RoadNetwork& net, UserId user, Timestamp depart,
                 HistoryView history);

  const Model& model() const { return *model_; }
  const RoadNetwork& network() const { return *net_; }

  MovingState start(LocationId source) const;
  // Encoding of the prefix extended by `next`; g is left unchanged.
  MovingState extend(const MovingState& state, LocationId next) const;
  // Successor distribution of the road-network-constrained softmax, with each
  // child's g increased by its -log probability. Throws DeadEndError when the
  // last location has no successors.
  Expansion expand(const MovingState& state) const;

  // States for every prefix of `path`, first = [path[0]]. Throws
  // ValidationError on a non-adjacent pair.
  std::vector<MovingState> walk(std::span<const LocationId> path) const;
  MovingState encode_prefix(std::span<const LocationId> prefix) const;

  std::vector<std::pair<LocationId, double>> transition_probs(const MovingState& state) const;
  double g_cost(std::span<const LocationId> path) const;

  // Summary vector of a whole route (prefix attention only, no probabilities).
  ad::Var summarize(std::span<const LocationId> path) const;

 private:
  ad::Var context(LocationId l) const;
  void attend(MovingState& s) const;

  const Model* model_;
  const RoadNetwork* net_;
  UserId user_;
  Timestamp depart_;
  HistoryView history_;
  ad::Var time_user_[3];  // user, weekday and hour rows, fixed for the query
};

// Receives every successor distribution computed by expand() on this thread.
// An empty function removes the probe.
void set_transition_probe(std::function<void(std::span<const double>)> probe);

// Loss term of one route: its g under the route's own query.
ad::Var route_nll(const Model& model, const RoadNetwork& net, const Trajectory& t,
                  const UserHistoryBank& bank, std::optional<std::size_t> self_index);

// Sum of route_nll over the given trajectories.
ad::Var rnn_loss(const Model& model, const RoadNetwork& net, const Dataset& data,
                 std::span<const std::size_t> indices, const UserHistoryBank& bank);

// Summaries of the given (training) trajectories under current parameters.
// Empty unless the model uses history attention.
UserHistoryBank build_history(const Model& model, const RoadNetwork& net, const Dataset& data,
                              std::span<const std::size_t> indices);

}  // namespace nasr
