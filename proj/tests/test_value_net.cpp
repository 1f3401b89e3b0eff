#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "nasr/errors.hpp"
#include "nasr/grad_check.hpp"
#include "nasr/value_net.hpp"
#include "test_util.hpp"

using namespace nasr;
using nasr::testing::fill_param;
using nasr::testing::tiny_config;
using nasr::testing::zero_all;

namespace {

ad::Var random_state(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(dim);
  for (double& x : v) x = rng.uniform(-1, 1);
  return ad::constant(v, dim);
}

// Two nodes joined both ways at the given separation.
RoadNetwork pair_at(double meters) {
  return RoadNetwork({{0, 0}, {meters, 0}}, {{0, 1, EdgeClass::kSide}, {1, 0, EdgeClass::kSide}});
}

}  // namespace

TEST(GatScore, HandCases) {
  const std::vector<double> zero(4, 0.0);
  const std::vector<double> pre{0.3, -1.0, 2.0, 0.0};
  EXPECT_EQ(ValueNet::gat_score(pre, zero), 0.0);
  const std::vector<double> w1{2.0};
  const std::vector<double> p1{0.3};
  EXPECT_NEAR(ValueNet::gat_score(p1, w1), 2.0 * std::tanh(0.3), 1e-15);
  EXPECT_THROW(ValueNet::gat_score(p1, zero), ValidationError);
}

TEST(GatScore, ZeroParametersGiveUniformWeights) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  Model m = Model::create(tiny_config(), 1, net.size(), 1);
  zero_all(m);
  const ValueNet vn(m, net);
  const ad::Var a = vn.attention_weights(random_state(4, 1), 0);
  std::vector<LocationId> all(net.size());
  std::iota(all.begin(), all.end(), 0);
  const Neighborhoods nb = neighborhoods(net, all, 4);
  for (std::size_t t = 0; t < net.size(); ++t)
    for (std::size_t e = nb.offsets[t]; e < nb.offsets[t + 1]; ++e)
      for (std::size_t h = 0; h < 2; ++h)
        EXPECT_NEAR(a[e * 2 + h], 1.0 / static_cast<double>(nb.offsets[t + 1] - nb.offsets[t]), 1e-15);
}

TEST(GatScore, DistanceEntersOnlyThroughItsBin) {
  const ModelConfig cfg = tiny_config();
  const Model m = Model::create(cfg, 1, 2, 2);
  const ad::Var s = random_state(cfg.state_dim, 2);
  ASSERT_EQ(distance_bin(100, cfg.distance_bins), distance_bin(120, cfg.distance_bins));
  ASSERT_NE(distance_bin(100, cfg.distance_bins), distance_bin(400, cfg.distance_bins));
  const RoadNetwork near = pair_at(100), also_near = pair_at(120), far = pair_at(400);
  const auto w = [&](const RoadNetwork& net) { return ValueNet(m, net).attention_weights(s, 0).to_vector(); };
  EXPECT_EQ(w(near), w(also_near));
  EXPECT_NE(w(near), w(far));
}

TEST(GatLayer, ShapesAndNormalization) {
  const RoadNetwork net = grid_network(4, 3, 100, {0});
  const ModelConfig cfg;
  const Model m = Model::create(cfg, 1, net.size(), 3);
  const ValueNet vn(m, net);
  const ad::Var s = random_state(cfg.state_dim, 3);
  const ad::Var reprs = vn.node_representations(s);
  EXPECT_EQ(reprs.rows(), net.size());
  EXPECT_EQ(reprs.cols(), cfg.gat_dim);
  EXPECT_EQ(vn.initial_representations().rows(), net.size());
  EXPECT_EQ(vn.initial_representations().cols(), cfg.gat_dim);

  std::vector<LocationId> all(net.size());
  std::iota(all.begin(), all.end(), 0);
  const Neighborhoods nb = neighborhoods(net, all, cfg.distance_bins);
  for (std::size_t z = 0; z < cfg.gat_layers; ++z) {
    const ad::Var a = vn.attention_weights(s, z);
    ASSERT_EQ(a.rows(), nb.sources.size());
    ASSERT_EQ(a.cols(), cfg.heads);
    for (std::size_t t = 0; t < net.size(); ++t)
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        double sum = 0.0;
        for (std::size_t e = nb.offsets[t]; e < nb.offsets[t + 1]; ++e) sum += a[e * cfg.heads + h];
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
  }
}

TEST(GatLayer, NeighborhoodIsOutNeighborsPlusSelf) {
  const RoadNetwork net({{0, 0}, {1, 0}, {2, 0}}, {{0, 2, EdgeClass::kSide}, {1, 0, EdgeClass::kSide}});
  const std::vector<LocationId> targets{0, 1, 2};
  const Neighborhoods nb = neighborhoods(net, targets, 16);
  EXPECT_EQ(nb.offsets, (std::vector<std::size_t>{0, 2, 4, 5}));
  EXPECT_EQ(nb.sources, (std::vector<LocationId>{0, 2, 0, 1, 2}));
}

TEST(GatLayer, ZeroValueMapsGiveZeroOutput) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  Model m = Model::create(tiny_config(), 1, net.size(), 4);
  fill_param(m, "gat2.value", 0.0);
  const ad::Var r = ValueNet(m, net).node_representations(random_state(4, 4));
  for (double v : r.value()) EXPECT_EQ(v, 0.0);
}

TEST(GatLayer, NoLayersKeepsProjectedEmbeddings) {
  ModelConfig cfg = tiny_config();
  cfg.gat_layers = 0;
  const RoadNetwork net = grid_network(3, 3, 100, {});
  const Model m = Model::create(cfg, 1, net.size(), 5);
  const ValueNet vn(m, net);
  EXPECT_EQ(vn.node_representations(random_state(4, 5)).to_vector(), vn.initial_representations().to_vector());
  const ad::Param& loc = m.store().get("emb.loc");
  const ad::Param& proj = m.store().get("gat.proj");
  const ad::Var l0 = vn.initial_representations();
  for (std::size_t i = 0; i < net.size(); ++i)
    for (std::size_t g = 0; g < cfg.gat_dim; ++g) {
      double s = 0.0;
      for (std::size_t k = 0; k < cfg.loc_dim; ++k) s += proj.row(g)[k] * loc.row(i)[k];
      EXPECT_NEAR(l0[i * cfg.gat_dim + g], s, 1e-15);
    }
  EXPECT_NEAR(vn.estimate(random_state(4, 6), 0, 8).item(),
              vn.estimate_from(random_state(4, 6), vn.node_representations(random_state(4, 6)), 0, 8).item(), 1e-12);
}

TEST(GatLayer, IsolatedNodeSeesOnlyItself) {
  const RoadNetwork net({{0, 0}, {100, 0}, {0, 100}, {500, 500}},
                        {{0, 1, EdgeClass::kSide}, {1, 2, EdgeClass::kSide}, {2, 0, EdgeClass::kSide}});
  Model m = Model::create(tiny_config(), 1, net.size(), 6);
  const ad::Var s = random_state(4, 6);
  const auto row3 = [&] {
    const ad::Var r = ValueNet(m, net).node_representations(s);
    return std::vector<double>(r.value().begin() + 12, r.value().begin() + 16);
  };
  const auto before = row3();
  auto loc = m.store().get("emb.loc").value();
  for (std::size_t i = 0; i < 9; ++i) loc[i] += 0.37;  // rows 0..2
  EXPECT_EQ(row3(), before);
  loc[9] += 0.37;
  EXPECT_NE(row3(), before);
}

TEST(GatLayer, StateSensitivity) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  const Model m = Model::create(tiny_config(), 1, net.size(), 7);
  const ad::Var s1 = random_state(4, 10), s2 = random_state(4, 11);
  const ValueNet ctx(m, net);
  EXPECT_NE(ctx.node_representations(s1).to_vector(), ctx.node_representations(s2).to_vector());
  const ValueNet orig(m, net, GatVariant::kOriginal, true);
  EXPECT_EQ(orig.node_representations(s1).to_vector(), orig.node_representations(s2).to_vector());
  EXPECT_NE(orig.estimate(s1, 0, 8).item(), orig.estimate(s2, 0, 8).item());
  const ValueNet blind(m, net, GatVariant::kContext, false);
  EXPECT_EQ(blind.estimate(s1, 0, 8).item(), blind.estimate(s2, 0, 8).item());
}

TEST(Estimate, ZeroHeadGivesLogTwo) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  Model m = Model::create(tiny_config(), 1, net.size(), 8);
  for (const char* p : {"mlp.w1", "mlp.w2", "mlp.w3", "mlp.b1", "mlp.b2", "mlp.b3"}) fill_param(m, p, 0.0);
  const ValueNet vn(m, net);
  for (LocationId a = 0; a < 9; ++a) EXPECT_NEAR(vn.estimate(random_state(4, 9), a, 4).item(), std::log(2.0), 1e-15);
}

TEST(Estimate, FiniteNonNegativeOnLargeGrid) {
  const RoadNetwork net = grid_network(20, 20, 100, {0, 5, 10, 15});
  const ModelConfig cfg;
  const Model m = Model::create(cfg, 1, net.size(), 9);
  ad::NoGradGuard no_grad;
  const ValueNet vn(m, net);
  const ad::Var s = random_state(cfg.state_dim, 9);
  const ad::Var reprs = vn.node_representations(s);
  for (LocationId a = 0; a < 400; ++a)
    for (LocationId d = 0; d < 400; ++d) {
      const double h = vn.estimate_from(s, reprs, a, d).item();
      ASSERT_TRUE(std::isfinite(h));
      ASSERT_GE(h, 0.0);
    }
  for (LocationId a : {0, 17, 210, 399})
    for (LocationId d : {5, 399, 123})
      EXPECT_NEAR(vn.estimate(s, a, d).item(), vn.estimate_from(s, reprs, a, d).item(), 1e-12);
}

TEST(Estimate, GradientThroughWholeNetwork) {
  for (std::uint64_t seed = 0; seed < 3; ++seed)
    for (const auto& r : loss_grad_checks(seed)) EXPECT_TRUE(r.passed()) << r.name << " " << r.max_rel_error;
}

TEST(Estimate, SpHeuristic) {
  const Model m = Model::create(tiny_config(), 1, 4, 10);
  const ad::Param& loc = m.store().get("emb.loc");
  double dot = 0.0;
  for (std::size_t k = 0; k < loc.cols(); ++k) dot += loc.row(1)[k] * loc.row(3)[k];
  EXPECT_NEAR(sp_heuristic(m, 1, 3), std::log(1.0 + std::exp(dot)), 1e-15);
}

TEST(Association, CsvRows) {
  const RoadNetwork net = grid_network(2, 2, 100, {});
  const ad::Var reprs = ad::constant({1, 0, 0, 1, 1, 1, 2, 0}, 4, 2);
  std::ostringstream out;
  write_association_csv(out, net, reprs, 0, 3);
  EXPECT_EQ(out.str(), "location,x,y,score\n0,0,0,3\n1,100,0,0\n2,0,100,3\n3,100,100,6\n");
}
