#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nasr/autodiff.hpp"
#include "nasr/graph.hpp"
#include "nasr/model.hpp"
#include "nasr/observable_cost.hpp"
#include "nasr/search.hpp"
#include "nasr/trajectory.hpp"

namespace nasr {

enum class TrainMode {
  kTD,  // n-step bootstrapped targets
  kMC,  // full discounted return
  kSL,  // undiscounted remaining cost
};

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kTD;
  std::size_t n = 5;
  double gamma = 0.9;
  std::size_t pretrain_epochs = 40;
  std::size_t joint_epochs = 10;
  double lr = 8e-3;
  double lr_decay = 0.95;  // multiplies the learning rate after every epoch
  std::uint64_t seed = 0;
  double clip_norm = 5.0;
  // Budget of the searches that score validation queries after each epoch.
  std::size_t val_max_expansions = 1000;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// -log p; p must be in (0, 1].
double immediate_cost(double p);

// costs = c_{i+1}, ..., c_T. Sums the first min(n, |costs|) discounted costs
// and adds gamma^n * bootstrap only when more than n costs remain.
double td_target(std::span<const double> costs, double bootstrap, std::size_t n, double gamma);

// Regression target of every non-terminal position i = 0 .. T-2, given the
// transition costs c_1..c_{T-1} and the current estimates h_0..h_{T-2}.
std::vector<double> training_targets(TrainMode mode, std::span<const double> costs,
                                     std::span<const double> estimates, std::size_t n, double gamma);

// Transition costs of a route under the current transition model (no graph).
std::vector<double> route_costs(const Model& model, const RoadNetwork& net, const Trajectory& t,
                                const UserHistoryBank& bank, std::optional<std::size_t> self_index);

// Detached inputs of the value loss for one route: the moving state at each
// non-terminal position, the transition costs and the regression targets.
struct ValueTargets {
  std::vector<ad::Var> states;
  std::vector<double> costs;
  std::vector<double> targets;
};

ValueTargets value_targets(const Model& model, const RoadNetwork& net, const Trajectory& t,
                           const UserHistoryBank& bank, std::optional<std::size_t> self_index,
                           const TrainConfig& cfg);

// Sum over positions of (h(l_i -> l_d) - y_i)^2. Targets and moving states are
// constants; gradients reach the value network and the tables it reads.
ad::Var value_loss(const Model& model, const RoadNetwork& net, const Trajectory& t, const ValueTargets& vt);
ad::Var value_loss(const Model& model, const RoadNetwork& net, const Trajectory& t, const UserHistoryBank& bank,
                   std::optional<std::size_t> self_index, const TrainConfig& cfg);

// Mean transition cost over mean traversed edge length on the given
// trajectories: the cost-per-meter scale of the ED heuristic.
double ed_lambda(const Model& model, const RoadNetwork& net, const Dataset& data,
                 std::span<const std::size_t> indices, const UserHistoryBank& bank);

struct EpochLog {
  std::size_t epoch = 0;
  bool joint = false;
  double loss1 = 0.0;
  double loss2 = 0.0;  // joint epochs only
  double val_precision = 0.0;
  double val_recall = 0.0;
  double val_f1 = 0.0;
  double val_edt = 0.0;
};

struct TrainResult {
  Model model;
  UserHistoryBank bank;
  double ed_lambda = 1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

// Pretraining epochs of the route likelihood, then epochs alternating one pass
// of it with one pass of the value loss. Every pass updates after each
// training trajectory, in a seeded order. Returns the parameters of the epoch
// with the best validation F1 (the last one when there are no validation
// queries). Throws NumericError if a loss diverges.
TrainResult train(const RoadNetwork& net, const Dataset& data, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {});

// epoch,loss1,loss2,val_precision,val_recall,val_f1,val_edt
void write_training_log(std::ostream& out, const std::vector<EpochLog>& log);

}  // namespace nasr
