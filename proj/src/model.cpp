#include "nasr/model.hpp"

#include <string>

namespace nasr {

namespace {

AttentionParams make_attention(ad::ParamStore& store, const std::string& prefix, std::size_t dim,
                               double scale, Rng& rng) {
  AttentionParams a;
  a.key = &store.create_uniform(prefix + ".key", dim, dim, scale, rng);
  a.query = &store.create_uniform(prefix + ".query", dim, dim, scale, rng);
  a.score = &store.create_uniform(prefix + ".score", dim, 1, scale, rng);
  return a;
}

}  // namespace

Model Model::create(const ModelConfig& cfg, std::size_t users, std::size_t locations, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  m.users_ = users;
  m.locations_ = locations;
  m.seed_ = seed;
  Rng rng(seed);
  const double s = cfg.init_scale;
  ad::ParamStore& st = m.store_;

  m.emb_ = EmbeddingTables::create(st, cfg, users, locations, rng);
  m.gru_ = ad::GruParams::create(st, "gru", cfg.context_dim(), cfg.state_dim, s, rng);
  m.intra_ = make_attention(st, "intra", cfg.state_dim, s, rng);
  m.inter_ = make_attention(st, "inter", cfg.state_dim, s, rng);
  m.output_ = &st.create_uniform("out.score", cfg.state_dim, 1, s, rng);

  ValueNetParams& v = m.value_;
  if (cfg.loc_dim != cfg.gat_dim) v.proj = &st.create_uniform("gat.proj", cfg.gat_dim, cfg.loc_dim, s, rng);
  for (std::size_t z = 0; z < cfg.gat_layers; ++z) {
    const std::string p = "gat" + std::to_string(z + 1);
    GatLayerParams layer;
    layer.center = &st.create_uniform(p + ".center", cfg.gat_dim, cfg.gat_dim, s, rng);
    layer.neighbor = &st.create_uniform(p + ".neighbor", cfg.gat_dim, cfg.gat_dim, s, rng);
    layer.state = &st.create_uniform(p + ".state", cfg.gat_dim, cfg.state_dim, s, rng);
    layer.dist = &st.create_uniform(p + ".dist", cfg.gat_dim, cfg.dist_dim, s, rng);
    layer.score = &st.create_uniform(p + ".score", cfg.gat_dim, 1, s, rng);
    layer.value = &st.create_uniform(p + ".value", cfg.gat_dim, cfg.gat_dim, s, rng);
    v.layers.push_back(layer);
  }
  const std::size_t mlp_in = cfg.state_dim + 2 * cfg.gat_dim + cfg.dist_dim;
  v.w1 = &st.create_uniform("mlp.w1", cfg.mlp_hidden, mlp_in, s, rng);
  v.b1 = &st.create("mlp.b1", cfg.mlp_hidden, 1);
  v.w2 = &st.create_uniform("mlp.w2", cfg.mlp_hidden, cfg.mlp_hidden, s, rng);
  v.b2 = &st.create("mlp.b2", cfg.mlp_hidden, 1);
  v.w3 = &st.create_uniform("mlp.w3", 1, cfg.mlp_hidden, s, rng);
  v.b3 = &st.create("mlp.b3", 1, 1);
  return m;
}

}  // namespace nasr
