#include "nasr/embeddings.hpp"

#include <cmath>

#include "nasr/errors.hpp"

namespace nasr {

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::kNone: return "NA";
    case AttentionMode::kIntra: return "IA";
    case AttentionMode::kBoth: return "BA";
  }
  return "BA";
}

AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "NA") return AttentionMode::kNone;
  if (s == "IA") return AttentionMode::kIntra;
  if (s == "BA") return AttentionMode::kBoth;
  throw ValidationError("unknown attention mode '" + s + "' (expected NA, IA or BA)");
}

std::string to_string(GatVariant variant) {
  return variant == GatVariant::kContext ? "i-GAT" : "o-GAT";
}

GatVariant gat_variant_from_string(const std::string& s) {
  if (s == "i-GAT") return GatVariant::kContext;
  if (s == "o-GAT") return GatVariant::kOriginal;
  throw ValidationError("unknown GAT variant '" + s + "' (expected i-GAT or o-GAT)");
}

void ModelConfig::validate() const {
  for (std::size_t d : {user_dim, loc_dim, weekday_dim, hour_dim, state_dim, gat_dim, dist_dim, heads,
                        distance_bins, mlp_hidden, history_cap}) {
    if (d < 1) throw ValidationError("model dimensions must all be >= 1");
  }
  if (gat_dim % heads != 0) throw ValidationError("gat_dim must be divisible by heads");
  if (!(prob_floor > 0.0 && prob_floor < 1.0)) throw ValidationError("prob_floor must lie in (0, 1)");
  if (!(init_scale >= 0.0)) throw ValidationError("init_scale must be non-negative");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"user_dim", c.user_dim},       {"loc_dim", c.loc_dim},
          {"weekday_dim", c.weekday_dim}, {"hour_dim", c.hour_dim},
          {"state_dim", c.state_dim},     {"gat_dim", c.gat_dim},
          {"dist_dim", c.dist_dim},       {"heads", c.heads},
          {"gat_layers", c.gat_layers},   {"distance_bins", c.distance_bins},
          {"mlp_hidden", c.mlp_hidden},   {"history_cap", c.history_cap},
          {"prob_floor", c.prob_floor},   {"init_scale", c.init_scale},
          {"attention", to_string(c.attention)},
          {"gat_variant", to_string(c.gat_variant)},
          {"value_uses_state", c.value_uses_state}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  const nlohmann::json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) {
      std::string valid;
      for (auto k = known.begin(); k != known.end(); ++k) valid += (valid.empty() ? "" : ", ") + k.key();
      throw ValidationError("unknown model config key '" + it.key() + "'; valid keys: " + valid);
    }
  }
  try {
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    read("user_dim", c.user_dim);
    read("loc_dim", c.loc_dim);
    read("weekday_dim", c.weekday_dim);
    read("hour_dim", c.hour_dim);
    read("state_dim", c.state_dim);
    read("gat_dim", c.gat_dim);
    read("dist_dim", c.dist_dim);
    read("heads", c.heads);
    read("gat_layers", c.gat_layers);
    read("distance_bins", c.distance_bins);
    read("mlp_hidden", c.mlp_hidden);
    read("history_cap", c.history_cap);
    read("prob_floor", c.prob_floor);
    read("init_scale", c.init_scale);
    read("value_uses_state", c.value_uses_state);
    if (j.contains("attention")) c.attention = attention_mode_from_string(j.at("attention").get<std::string>());
    if (j.contains("gat_variant")) c.gat_variant = gat_variant_from_string(j.at("gat_variant").get<std::string>());
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad model config value: ") + ex.what());
  }
  c.validate();
  return c;
}

TimeIndices time_indices(Timestamp t) {
  if (t < 0) throw ValidationError("timestamps must be non-negative");
  const Timestamp days = t / 86400;
  const Timestamp secs = t % 86400;
  // 1970-01-01 was a Thursday (index 4 with Monday = 1).
  return {static_cast<int>((days + 3) % 7) + 1, static_cast<int>(secs / 3600) + 1};
}

std::size_t distance_bin(double meters, std::size_t bins) {
  if (!(meters >= 0.0)) throw ValidationError("distance must be non-negative");
  if (bins == 0) throw ValidationError("distance bin count must be >= 1");
  const double b = std::floor(std::log2(1.0 + meters / 50.0));
  if (b >= static_cast<double>(bins - 1)) return bins - 1;
  return static_cast<std::size_t>(b);
}

EmbeddingTables EmbeddingTables::create(ad::ParamStore& store, const ModelConfig& cfg, std::size_t users,
                                        std::size_t locations, Rng& rng) {
  const double s = cfg.init_scale;
  EmbeddingTables t;
  t.user = &store.create_uniform("emb.user", std::max<std::size_t>(users, 1), cfg.user_dim, s, rng);
  t.loc = &store.create_uniform("emb.loc", locations, cfg.loc_dim, s, rng);
  t.weekday = &store.create_uniform("emb.weekday", 7, cfg.weekday_dim, s, rng);
  t.hour = &store.create_uniform("emb.hour", 24, cfg.hour_dim, s, rng);
  t.dist = &store.create_uniform("emb.dist", cfg.distance_bins, cfg.dist_dim, s, rng);
  return t;
}

EmbeddingTables EmbeddingTables::bind(const ad::ParamStore& store) {
  EmbeddingTables t;
  t.user = &store.get("emb.user");
  t.loc = &store.get("emb.loc");
  t.weekday = &store.get("emb.weekday");
  t.hour = &store.get("emb.hour");
  t.dist = &store.get("emb.dist");
  return t;
}

ad::Var EmbeddingTables::context_vector(UserId u, LocationId l, Timestamp t) const {
  if (u < 0) throw ValidationError("negative user id");
  if (l < 0) throw ValidationError("negative location id");
  const TimeIndices ti = time_indices(t);
  return ad::concat({ad::row(*user, static_cast<std::size_t>(u)), ad::row(*loc, static_cast<std::size_t>(l)),
                     ad::row(*weekday, static_cast<std::size_t>(ti.weekday - 1)),
                     ad::row(*hour, static_cast<std::size_t>(ti.hour - 1))});
}

ad::Var EmbeddingTables::distance_embedding(double meters) const {
  return ad::row(*dist, distance_bin(meters, dist->rows()));
}

}  // namespace nasr
