#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nasr/errors.hpp"
#include "nasr/observable_cost.hpp"
#include "test_util.hpp"

using namespace nasr;
using nasr::testing::fill_param;
using nasr::testing::tiny_config;
using nasr::testing::zero_all;

namespace {

constexpr Timestamp kT0 = 1564963200;

ObservableCost plain_cost(const Model& m, const RoadNetwork& net, UserId u = 0) {
  return ObservableCost(m, net, u, kT0, HistoryView{});
}

RoadNetwork star3() {
  return RoadNetwork({{0, 0}, {100, 0}, {0, 100}, {-100, 0}},
                     {{0, 1, EdgeClass::kSide}, {0, 2, EdgeClass::kSide}, {0, 3, EdgeClass::kSide}});
}

}  // namespace

TEST(Prefix, SingletonPrefix) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  const Model m = Model::create(tiny_config(), 1, net.size(), 1);
  const MovingState s = plain_cost(m, net).start(4);
  EXPECT_EQ(s.hiddens.size(), 1u);
  EXPECT_EQ(s.path, std::vector<LocationId>{4});
  EXPECT_EQ(s.g_acc(), 0.0);
}

TEST(Prefix, ZeroModelHasZeroHiddens) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  Model m = Model::create(tiny_config(), 1, net.size(), 1);
  zero_all(m);
  const std::vector<LocationId> path{0, 1, 2, 5};
  for (const MovingState& s : plain_cost(m, net).walk(path))
    for (const auto& h : s.hiddens)
      for (double v : h.value()) EXPECT_EQ(v, 0.0);
}

TEST(Prefix, ExtendAndExpandAreIncremental) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  const Model m = Model::create(tiny_config(), 1, net.size(), 2);
  const ObservableCost oc = plain_cost(m, net);
  const MovingState s = oc.encode_prefix(std::vector<LocationId>{0, 1});
  const MovingState e = oc.extend(s, 4);
  EXPECT_EQ(e.hiddens.size(), s.hiddens.size() + 1);
  EXPECT_EQ(e.g_acc(), s.g_acc());

  const Expansion x = oc.expand(s);
  ASSERT_EQ(x.next, (std::vector<LocationId>{0, 2, 4}));
  for (std::size_t k = 0; k < x.next.size(); ++k) {
    EXPECT_EQ(x.children[k].hiddens.size(), s.hiddens.size() + 1);
    EXPECT_NEAR(x.children[k].g_acc(), s.g_acc() - std::log(x.probs[k]), 1e-12);
    const std::vector<LocationId> longer{0, 1, x.next[k]};
    EXPECT_NEAR(oc.g_cost(longer), x.children[k].g_acc(), 1e-12);
  }
}

TEST(Attention, IntraExamples) {
  ModelConfig cfg = tiny_config();
  cfg.state_dim = 1;
  Model m = Model::create(cfg, 1, 4, 3);
  const ad::Var h1 = ad::constant({0.7}, 1);
  const ad::Var h2 = ad::constant({-0.4}, 1);
  const ad::Var h3 = ad::constant({1.3}, 1);

  std::vector<ad::Var> one{h1};
  EXPECT_EQ(intra_attention(m, one)[0], 0.7);

  fill_param(m, "intra.score", 0.0);
  std::vector<ad::Var> three{h1, h2, h3};
  EXPECT_NEAR(intra_attention(m, three)[0], (0.7 - 0.4 + 1.3) / 3.0, 1e-14);

  fill_param(m, "intra.key", 0.5);
  fill_param(m, "intra.query", -1.5);
  fill_param(m, "intra.score", 2.0);
  const double a1 = 2.0 * std::tanh(0.5 * 0.7 + -1.5 * -0.4);
  const double a2 = 2.0 * std::tanh(0.5 * -0.4 + -1.5 * -0.4);
  const double expect = (std::exp(a1) * 0.7 + std::exp(a2) * -0.4) / (std::exp(a1) + std::exp(a2));
  std::vector<ad::Var> two{h1, h2};
  EXPECT_NEAR(intra_attention(m, two)[0], expect, 1e-14);
}

TEST(Attention, InterExamples) {
  ModelConfig cfg = tiny_config();
  const Model m = Model::create(cfg, 1, 4, 4);
  const ad::Var summary = ad::constant({0.1, 0.2, 0.3, 0.4}, 4);
  EXPECT_EQ(inter_attention(m, summary, HistoryView{}).to_vector(), summary.to_vector());

  UserHistoryBank bank;
  bank.add(0, {0, 10, {1, -1, 2, -2}});
  const HistoryView one = prepare_history(m, bank, 0);
  EXPECT_EQ(inter_attention(m, summary, one).to_vector(), (std::vector<double>{1, -1, 2, -2}));

  bank.add(0, {1, 20, {1, -1, 2, -2}});
  const HistoryView two = prepare_history(m, bank, 0);
  ASSERT_EQ(two.values.size(), 2u);
  const ad::Var r = inter_attention(m, summary, two);
  const std::vector<double> expect{1, -1, 2, -2};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r[i], expect[i], 1e-15);

  EXPECT_EQ(prepare_history(m, bank, 0, 1).values.size(), 1u);
  cfg.attention = AttentionMode::kIntra;
  const Model ia = Model::create(cfg, 1, 4, 4);
  EXPECT_TRUE(prepare_history(ia, bank, 0).empty());
}

TEST(Attention, EmptyHistoryLeavesMovingStateAtSummary) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  const Model m = Model::create(tiny_config(), 1, net.size(), 5);
  const MovingState s = plain_cost(m, net).encode_prefix(std::vector<LocationId>{0, 1, 2});
  EXPECT_EQ(s.attended.to_vector(), s.summary.to_vector());
}

TEST(HistoryBank, OrderCapAndJson) {
  UserHistoryBank bank(3);
  for (std::size_t k = 0; k < 5; ++k) bank.add(2, {k, static_cast<Timestamp>(100 - 10 * k), {double(k)}});
  const auto e = bank.entries(2);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].depart, 80);
  EXPECT_EQ(e[2].depart, 100);
  EXPECT_TRUE(bank.entries(7).empty());
  const UserHistoryBank back = UserHistoryBank::from_json(bank.to_json());
  EXPECT_EQ(back.to_json(), bank.to_json());
  EXPECT_EQ(back.cap(), 3u);
}

TEST(Transitions, DistributionOverExactSuccessors) {
  const RoadNetwork net = grid_network(4, 4, 100, {0});
  const Model m = Model::create(ModelConfig{}, 1, net.size(), 6);
  const ObservableCost oc = plain_cost(m, net);
  for (LocationId l = 0; l < static_cast<LocationId>(net.size()); ++l) {
    const auto probs = oc.transition_probs(oc.start(l));
    ASSERT_EQ(probs.size(), net.neighbors(l).size());
    double total = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
      EXPECT_EQ(probs[k].first, net.neighbors(l)[k]);
      EXPECT_GT(probs[k].second, 0.0);
      total += probs[k].second;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Transitions, ZeroOutputWeightsGiveUniform) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  Model m = Model::create(tiny_config(), 1, net.size(), 7);
  fill_param(m, "out.score", 0.0);
  const ObservableCost oc = plain_cost(m, net);
  for (const auto& [loc, p] : oc.transition_probs(oc.start(4))) EXPECT_NEAR(p, 0.25, 1e-15);
  for (const auto& [loc, p] : oc.transition_probs(oc.start(0))) EXPECT_NEAR(p, 0.5, 1e-15);
}

TEST(Transitions, DeadEnd) {
  const RoadNetwork net({{0, 0}, {1, 0}}, {{0, 1, EdgeClass::kSide}});
  const Model m = Model::create(tiny_config(), 1, net.size(), 8);
  const ObservableCost oc = plain_cost(m, net);
  EXPECT_THROW(oc.expand(oc.start(1)), DeadEndError);
}

TEST(GCost, UniformModelSumsLogDegrees) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  Model m = Model::create(tiny_config(), 1, net.size(), 9);
  fill_param(m, "out.score", 0.0);
  const ObservableCost oc = plain_cost(m, net);
  const std::vector<LocationId> single{4};
  EXPECT_EQ(oc.g_cost(single), 0.0);
  const std::vector<LocationId> path{0, 1, 4, 7, 8};
  double expected = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i)
    expected += std::log(static_cast<double>(net.neighbors(path[i]).size()));
  EXPECT_NEAR(oc.g_cost(path), expected, 1e-12);
}

TEST(GCost, AdditiveAndNonDecreasing) {
  const RoadNetwork net = grid_network(4, 4, 100, {1});
  const Model m = Model::create(ModelConfig{}, 2, net.size(), 10);
  const ObservableCost oc = ObservableCost(m, net, 1, kT0 + 5000, HistoryView{});
  const std::vector<LocationId> path{0, 1, 2, 6, 10, 11, 15};
  const auto states = oc.walk(path);
  for (std::size_t i = 1; i < states.size(); ++i) {
    const auto probs = oc.transition_probs(states[i - 1]);
    double p = 0.0;
    for (const auto& [loc, q] : probs)
      if (loc == path[i]) p = q;
    EXPECT_NEAR(states[i].g_acc(), states[i - 1].g_acc() - std::log(p), 1e-12);
    EXPECT_GE(states[i].g_acc(), states[i - 1].g_acc());
    EXPECT_NEAR(oc.g_cost(std::span(path).first(i + 1)), states[i].g_acc(), 1e-12);
  }
  const std::vector<LocationId> broken{0, 5};
  EXPECT_THROW(oc.walk(broken), ValidationError);
  EXPECT_THROW(ObservableCost(m, net, 2, kT0, HistoryView{}), ValidationError);
}

TEST(RnnLoss, DegreeThreeTransition) {
  const RoadNetwork net = star3();
  Model m = Model::create(tiny_config(), 1, net.size(), 11);
  zero_all(m);
  Dataset d;
  d.trajectories.push_back({0, {{0, kT0}, {2, kT0 + 12}}, Split::kTrain});
  const std::vector<std::size_t> idx{0};
  EXPECT_NEAR(rnn_loss(m, net, d, idx, UserHistoryBank{}).item(), std::log(3.0), 1e-12);
}

TEST(RnnLoss, AdditiveOverTrajectories) {
  const RoadNetwork net = grid_network(4, 4, 100, {0});
  const Model m = Model::create(tiny_config(), 2, net.size(), 12);
  const Dataset d = synth_generate(net, 2, 4, 3);
  const UserHistoryBank bank = build_history(m, net, d, d.indices(Split::kTrain));
  std::vector<std::size_t> all(d.trajectories.size());
  std::iota(all.begin(), all.end(), 0);
  double sum = 0.0;
  for (std::size_t i : all) sum += route_nll(m, net, d.trajectories[i], bank, i).item();
  EXPECT_NEAR(rnn_loss(m, net, d, all, bank).item(), sum, 1e-9);
}

TEST(RnnLoss, TrainingHalvesLoss) {
  const RoadNetwork net = grid_network(5, 5, 100, {0});
  ModelConfig cfg;
  cfg.state_dim = 16;
  cfg.loc_dim = 8;
  cfg.gat_dim = 8;
  Model m = Model::create(cfg, 2, net.size(), 13);
  const Dataset d = synth_generate(net, 2, 10, 13);
  std::vector<std::size_t> all(d.trajectories.size());
  std::iota(all.begin(), all.end(), 0);
  ad::AdamConfig adam{0.01, 0.9, 0.999, 1e-8, 5.0};
  std::vector<double> losses;
  for (int epoch = 0; epoch <= 30; ++epoch) {
    const UserHistoryBank bank = build_history(m, net, d, all);
    double total = 0.0;
    for (std::size_t i : all) {
      const ad::Var l = route_nll(m, net, d.trajectories[i], bank, i);
      total += l.item();
      if (epoch == 30) continue;
      l.backward();
      m.store().adam_step(adam);
    }
    losses.push_back(total);
  }
  EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST(History, BuiltOnlyForBothAttentions) {
  const RoadNetwork net = grid_network(4, 4, 100, {0});
  const Dataset d = synth_generate(net, 2, 3, 4);
  const auto idx = std::vector<std::size_t>{0, 1, 2, 3, 4, 5};
  ModelConfig cfg = tiny_config();
  const UserHistoryBank ba = build_history(Model::create(cfg, 2, net.size(), 1), net, d, idx);
  EXPECT_EQ(ba.entries(0).size() + ba.entries(1).size(), 6u);
  cfg.attention = AttentionMode::kNone;
  EXPECT_TRUE(build_history(Model::create(cfg, 2, net.size(), 1), net, d, idx).empty());
}

TEST(Transitions, ProbeSeesEveryExpansion) {
  const RoadNetwork net = grid_network(3, 3, 100, {});
  const Model m = Model::create(tiny_config(), 1, net.size(), 14);
  const ObservableCost oc = plain_cost(m, net);
  std::size_t calls = 0;
  set_transition_probe([&](std::span<const double> p) {
    ++calls;
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
  });
  oc.expand(oc.start(4));
  oc.expand(oc.start(0));
  set_transition_probe({});
  oc.expand(oc.start(0));
  EXPECT_EQ(calls, 2u);
}
