#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "json.hpp"
#include "nasr/autodiff.hpp"
#include "nasr/graph.hpp"
#include "nasr/trajectory.hpp"

namespace nasr {

// Which attention stages feed the moving state.
enum class AttentionMode {
  kNone,   // GRU state only
  kIntra,  // attention over the current prefix
  kBoth,   // prefix attention, then attention over the user's history
};

enum class GatVariant {
  kContext,   // scores see the moving state and the distance embedding
  kOriginal,  // scores from node representations only
};

std::string to_string(AttentionMode mode);
AttentionMode attention_mode_from_string(const std::string& s);
std::string to_string(GatVariant variant);
GatVariant gat_variant_from_string(const std::string& s);

struct ModelConfig {
  std::size_t user_dim = 16;
  std::size_t loc_dim = 32;
  std::size_t weekday_dim = 4;
  std::size_t hour_dim = 8;
  std::size_t state_dim = 64;
  std::size_t gat_dim = 32;
  std::size_t dist_dim = 8;
  std::size_t heads = 4;
  std::size_t gat_layers = 2;
  std::size_t distance_bins = 16;
  std::size_t mlp_hidden = 64;
  std::size_t history_cap = 32;
  double prob_floor = 1e-8;
  double init_scale = 0.08;
  AttentionMode attention = AttentionMode::kBoth;
  GatVariant gat_variant = GatVariant::kContext;
  bool value_uses_state = true;

  std::size_t context_dim() const { return user_dim + loc_dim + weekday_dim + hour_dim; }
  // Throws ValidationError when an invariant does not hold.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Reads the keys present in `j` over `base`; unknown keys are an error that
// lists the valid ones.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

struct TimeIndices {
  int weekday = 1;  // 1 = Monday .. 7 = Sunday
  int hour = 1;     // 1 = 00:00-00:59 .. 24 = 23:00-23:59
};

// UTC calendar decomposition.
TimeIndices time_indices(Timestamp t);

// min(floor(log2(1 + meters / 50)), bins - 1).
std::size_t distance_bin(double meters, std::size_t bins);

// Views onto the shared embedding tables inside a ParamStore.
struct EmbeddingTables {
  const ad::Param* user = nullptr;     // users x user_dim
  const ad::Param* loc = nullptr;      // locations x loc_dim
  const ad::Param* weekday = nullptr;  // 7 x weekday_dim
  const ad::Param* hour = nullptr;     // 24 x hour_dim
  const ad::Param* dist = nullptr;     // bins x dist_dim

  static EmbeddingTables create(ad::ParamStore& store, const ModelConfig& cfg, std::size_t users,
                                std::size_t locations, Rng& rng);
  static EmbeddingTables bind(const ad::ParamStore& store);

  // v_user || v_loc || v_weekday || v_hour.
  ad::Var context_vector(UserId u, LocationId l, Timestamp t) const;
  ad::Var distance_embedding(double meters) const;
};

}  // namespace nasr
