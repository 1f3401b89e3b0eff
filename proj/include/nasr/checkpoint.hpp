#pragma once

#include <filesystem>

#include "json.hpp"
#include "nasr/graph.hpp"
#include "nasr/model.hpp"
#include "nasr/observable_cost.hpp"
#include "nasr/td_train.hpp"

namespace nasr {

// Everything a search needs: parameters, history bank, ED scale and the road
// network they were trained on.
struct Checkpoint {
  Model model;
  UserHistoryBank bank;
  double ed_lambda = 1.0;
  TrainConfig train;
  RoadNetwork network;
};

nlohmann::json checkpoint_to_json(const Model& model, const UserHistoryBank& bank, double ed_lambda,
                                  const TrainConfig& train, const RoadNetwork& net);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const UserHistoryBank& bank,
                     double ed_lambda, const TrainConfig& train, const RoadNetwork& net);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nasr
