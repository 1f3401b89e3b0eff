#include "nasr/checkpoint.hpp"

#include <fstream>

#include "nasr/errors.hpp"

namespace nasr {

nlohmann::json checkpoint_to_json(const Model& model, const UserHistoryBank& bank, double ed_lambda,
                                  const TrainConfig& train, const RoadNetwork& net) {
  return {{"format", "nasr-checkpoint"},
          {"version", 1},
          {"model_config", to_json(model.config())},
          {"users", model.users()},
          {"locations", model.locations()},
          {"seed", model.seed()},
          {"train_config", to_json(train)},
          {"ed_lambda", ed_lambda},
          {"network", network_to_json(net)},
          {"history", bank.to_json()},
          {"params", model.store().to_json()}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "nasr-checkpoint") throw ValidationError("not a checkpoint file");
    if (j.at("version") != 1) throw ValidationError("unsupported checkpoint version");
    const ModelConfig cfg = model_config_from_json(j.at("model_config"));
    Model model = Model::create(cfg, j.at("users").get<std::size_t>(), j.at("locations").get<std::size_t>(),
                                j.at("seed").get<std::uint64_t>());
    model.store().load_json(j.at("params"));
    RoadNetwork net = network_from_json(j.at("network"));
    if (net.size() != model.locations()) throw ValidationError("checkpoint network does not match the model");
    return Checkpoint{std::move(model), UserHistoryBank::from_json(j.at("history")), j.at("ed_lambda").get<double>(),
                      train_config_from_json(j.at("train_config")), std::move(net)};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const UserHistoryBank& bank,
                     double ed_lambda, const TrainConfig& train, const RoadNetwork& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(model, bank, ed_lambda, train, net).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("cannot parse checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace nasr
