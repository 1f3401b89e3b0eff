#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nasr/autodiff.hpp"
#include "nasr/embeddings.hpp"

namespace nasr {

// Additive attention: score = w . tanh(key_proj h_k + query_proj h_q).
struct AttentionParams {
  const ad::Param* key = nullptr;
  const ad::Param* query = nullptr;
  const ad::Param* score = nullptr;
};

struct GatLayerParams {
  const ad::Param* center = nullptr;    // applied to the node being updated
  const ad::Param* neighbor = nullptr;  // applied to the attended neighbour
  const ad::Param* state = nullptr;     // applied to the moving state
  const ad::Param* dist = nullptr;      // applied to the distance embedding
  const ad::Param* score = nullptr;     // per-head score vectors, concatenated
  const ad::Param* value = nullptr;     // per-head value maps stacked by rows
};

struct ValueNetParams {
  const ad::Param* proj = nullptr;  // loc_dim -> gat_dim; null when equal
  std::vector<GatLayerParams> layers;
  const ad::Param* w1 = nullptr;
  const ad::Param* b1 = nullptr;
  const ad::Param* w2 = nullptr;
  const ad::Param* b2 = nullptr;
  const ad::Param* w3 = nullptr;
  const ad::Param* b3 = nullptr;
};

// Every learnable array of both cost components, in one store. The embedding
// tables are shared: the transition model and the value network read the
// same rows.
class Model {
 public:
  static Model create(const ModelConfig& cfg, std::size_t users, std::size_t locations,
                      std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& store() { return store_; }
  const ad::ParamStore& store() const { return store_; }
  std::size_t users() const { return users_; }
  std::size_t locations() const { return locations_; }
  std::uint64_t seed() const { return seed_; }

  const EmbeddingTables& embeddings() const { return emb_; }
  const ad::GruParams& gru() const { return gru_; }
  const AttentionParams& intra() const { return intra_; }
  const AttentionParams& inter() const { return inter_; }
  const ad::Param& output() const { return *output_; }
  const ValueNetParams& value() const { return value_; }

 private:
  Model() = default;

  ModelConfig cfg_;
  std::size_t users_ = 0;
  std::size_t locations_ = 0;
  std::uint64_t seed_ = 0;
  ad::ParamStore store_;
  EmbeddingTables emb_;
  ad::GruParams gru_;
  AttentionParams intra_;
  AttentionParams inter_;
  const ad::Param* output_ = nullptr;
  ValueNetParams value_;
};

}  // namespace nasr
