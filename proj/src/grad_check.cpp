#include "nasr/grad_check.hpp"

#include <algorithm>
#include <functional>

#include "nasr/autodiff.hpp"
#include "nasr/model.hpp"
#include "nasr/observable_cost.hpp"
#include "nasr/td_train.hpp"
#include "nasr/value_net.hpp"

namespace nasr {

namespace {

using ad::Var;

constexpr double kPrimitiveTol = 1e-5;
constexpr double kLossTol = 1e-4;

GradCheckResult check(const std::string& name, ad::ParamStore& store, const std::function<Var()>& loss, double tol,
                      std::uint64_t seed) {
  ad::FiniteDiffOptions opts;
  opts.seed = seed;
  const auto rep = ad::finite_diff_check(store, loss, opts);
  return {name, rep.max_rel_error, tol, rep.coords_checked, rep.worst_param};
}

// Random linear read-out so that every output entry matters differently.
Var readout(const Var& y, Rng& rng) {
  std::vector<double> w(y.size());
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  return ad::dot(y, ad::constant(std::move(w), y.size()));
}

RoadNetwork toy_network() {
  std::vector<Point> pts{{0, 0}, {100, 0}, {200, 0}, {200, 100}, {300, 100}};
  std::vector<Edge> edges{{0, 1, EdgeClass::kMain}, {1, 2, EdgeClass::kMain}, {2, 3, EdgeClass::kSide},
                          {0, 2, EdgeClass::kSide}, {1, 3, EdgeClass::kSide}, {3, 4, EdgeClass::kMain},
                          {2, 4, EdgeClass::kSide}, {1, 0, EdgeClass::kMain}, {4, 3, EdgeClass::kMain}};
  return RoadNetwork(std::move(pts), std::move(edges));
}

ModelConfig toy_config() {
  ModelConfig c;
  c.user_dim = 2;
  c.loc_dim = 3;
  c.weekday_dim = 2;
  c.hour_dim = 2;
  c.state_dim = 4;
  c.gat_dim = 4;
  c.dist_dim = 2;
  c.heads = 2;
  c.gat_layers = 2;
  c.distance_bins = 4;
  c.mlp_hidden = 5;
  c.init_scale = 0.5;
  return c;
}

Trajectory toy_route(std::vector<LocationId> locs, Timestamp start) {
  Trajectory t;
  for (std::size_t i = 0; i < locs.size(); ++i) t.steps.push_back({locs[i], start + static_cast<Timestamp>(60 * i)});
  return t;
}

}  // namespace

std::vector<GradCheckResult> primitive_grad_checks(std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  Rng rng(seed);
  auto run = [&](const std::string& name, std::size_t n_params, const std::vector<std::pair<std::size_t, std::size_t>>& shapes,
                 const std::function<Var(const std::vector<const ad::Param*>&, Rng&)>& body) {
    ad::ParamStore store;
    std::vector<const ad::Param*> ps;
    for (std::size_t k = 0; k < n_params; ++k)
      ps.push_back(&store.create_uniform("p" + std::to_string(k), shapes[k].first, shapes[k].second, 1.0, rng));
    const std::uint64_t readout_seed = rng.next();
    auto loss = [&]() {
      Rng r(readout_seed);
      return readout(body(ps, r), r);
    };
    out.push_back(check(name, store, loss, kPrimitiveTol, seed));
  };

  run("affine", 3, {{3, 4}, {3, 1}, {4, 1}}, [](auto& p, Rng&) { return ad::affine(*p[0], p[1], ad::leaf(*p[2])); });
  run("matmul_rows", 2, {{5, 4}, {3, 4}}, [](auto& p, Rng&) { return ad::matmul_rows(ad::leaf(*p[0]), *p[1]); });
  run("dot", 2, {{4, 1}, {4, 1}}, [](auto& p, Rng&) { return ad::dot(ad::leaf(*p[0]), ad::leaf(*p[1])); });
  run("dot_param", 2, {{4, 1}, {4, 1}}, [](auto& p, Rng&) { return ad::dot(*p[0], ad::leaf(*p[1])); });
  run("add_sub_mul", 2, {{4, 1}, {4, 1}}, [](auto& p, Rng&) {
    const Var a = ad::leaf(*p[0]);
    const Var b = ad::leaf(*p[1]);
    return ad::concat({ad::add(a, b), ad::sub(a, b), ad::mul(a, b), ad::scale(a, -1.7)});
  });
  run("add_rows", 2, {{3, 4}, {4, 1}}, [](auto& p, Rng&) { return ad::add_rows(ad::leaf(*p[0]), ad::leaf(*p[1])); });
  run("concat_slice", 2, {{3, 1}, {4, 1}}, [](auto& p, Rng&) {
    return ad::slice(ad::concat({ad::leaf(*p[0]), ad::leaf(*p[1])}), 2, 4);
  });
  run("tanh", 1, {{6, 1}}, [](auto& p, Rng&) { return ad::tanh(ad::scale(ad::leaf(*p[0]), 2.0)); });
  run("sigmoid", 1, {{6, 1}}, [](auto& p, Rng&) { return ad::sigmoid(ad::scale(ad::leaf(*p[0]), 3.0)); });
  run("relu", 1, {{6, 1}}, [](auto& p, Rng&) { return ad::relu(ad::leaf(*p[0])); });
  run("softplus", 1, {{6, 1}}, [](auto& p, Rng&) { return ad::softplus(ad::scale(ad::leaf(*p[0]), 4.0)); });
  run("log", 1, {{6, 1}}, [](auto& p, Rng&) { return ad::log(ad::add(ad::square(ad::leaf(*p[0])), ad::constant(std::vector<double>(6, 0.5), 6))); });
  run("square_sum", 1, {{6, 1}}, [](auto& p, Rng&) { return ad::sum(ad::square(ad::leaf(*p[0]))); });
  run("add_n_pick", 1, {{5, 1}}, [](auto& p, Rng&) {
    const Var a = ad::leaf(*p[0]);
    const Var parts[] = {ad::pick(a, 0), ad::pick(a, 3), ad::pick(a, 3)};
    return ad::add_n(parts);
  });
  run("softmax", 1, {{5, 1}}, [](auto& p, Rng&) { return ad::softmax(ad::scale(ad::leaf(*p[0]), 2.0)); });
  run("floor_renormalize", 1, {{5, 1}}, [](auto& p, Rng&) {
    return ad::floor_renormalize(ad::softmax(ad::scale(ad::leaf(*p[0]), 2.0)), 1e-8);
  });
  run("floor_renormalize_active", 1, {{5, 1}}, [](auto& p, Rng&) {
    // Fixed scores keep every entry far from the floor's kink.
    const Var s = ad::add(ad::scale(ad::leaf(*p[0]), 0.01), ad::constant({4.0, 0.0, -3.0, 1.0, -5.0}, 5));
    return ad::floor_renormalize(ad::softmax(s), 0.02);
  });
  run("row_leaf", 1, {{4, 3}}, [](auto& p, Rng&) { return ad::concat({ad::row(*p[0], 2), ad::leaf(*p[0])}); });
  run("additive_attention", 5, {{4, 1}, {4, 1}, {4, 1}, {4, 1}, {4, 1}}, [](auto& p, Rng&) {
    const Var keys[] = {ad::leaf(*p[0]), ad::leaf(*p[1]), ad::leaf(*p[2])};
    const Var values[] = {ad::tanh(ad::leaf(*p[0])), ad::leaf(*p[1]), ad::leaf(*p[3])};
    return ad::additive_attention(keys, ad::leaf(*p[4]), *p[4], values);
  });
  run("gather_rows", 1, {{4, 3}}, [](auto& p, Rng&) {
    const std::size_t idx[] = {2, 0, 2, 3};
    return ad::gather_rows(ad::leaf(*p[0]), idx);
  });
  run("head_dot", 2, {{5, 6}, {6, 1}}, [](auto& p, Rng&) { return ad::head_dot(ad::leaf(*p[0]), *p[1], 2); });
  run("segment_softmax", 1, {{6, 2}}, [](auto& p, Rng&) {
    const std::size_t offs[] = {0, 2, 5, 6};
    return ad::segment_softmax(ad::scale(ad::leaf(*p[0]), 2.0), offs);
  });
  run("segment_aggregate", 2, {{6, 2}, {6, 4}}, [](auto& p, Rng&) {
    const std::size_t offs[] = {0, 2, 5, 6};
    return ad::segment_aggregate(ad::segment_softmax(ad::leaf(*p[0]), offs), ad::leaf(*p[1]), offs, 2);
  });
  {
    ad::ParamStore store;
    const auto gru = ad::GruParams::create(store, "gru", 3, 4, 0.8, rng);
    const ad::Param& x = store.create_uniform("x", 3, 1, 1.0, rng);
    const ad::Param& h = store.create_uniform("h", 4, 1, 1.0, rng);
    const std::uint64_t rs = rng.next();
    auto loss = [&]() {
      Rng r(rs);
      const Var h1 = ad::gru_step(gru, ad::leaf(x), ad::leaf(h));
      return readout(ad::gru_step(gru, ad::leaf(x), h1), r);
    };
    out.push_back(check("gru_step", store, loss, kPrimitiveTol, seed));
  }
  return out;
}

std::vector<GradCheckResult> loss_grad_checks(std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  const RoadNetwork net = toy_network();
  Model model = Model::create(toy_config(), 1, net.size(), seed);
  // Zero biases can park a ReLU exactly on its kink; check at a generic point.
  Rng bias_rng(seed ^ 0x5eedULL);
  for (ad::Param* p : model.store().params()) {
    if (std::all_of(p->value().begin(), p->value().end(), [](double v) { return v == 0.0; }))
      for (double& v : p->value()) v = bias_rng.uniform(-0.5, 0.5);
  }
  Dataset data;
  data.trajectories.push_back(toy_route({0, 1, 2, 3}, 1564999200));
  data.trajectories.push_back(toy_route({0, 2, 4}, 1565100000));
  const std::size_t train[] = {0, 1};
  const UserHistoryBank bank = build_history(model, net, data, train);
  const Trajectory& t = data.trajectories[0];

  out.push_back(check("route likelihood loss", model.store(),
                      [&]() { return route_nll(model, net, t, bank, 0); }, kLossTol, seed));

  TrainConfig tc;
  tc.n = 2;
  const ValueTargets vt = value_targets(model, net, t, bank, 0, tc);
  out.push_back(check("value loss", model.store(), [&]() { return value_loss(model, net, t, vt); }, kLossTol, seed));

  // A free moving state, so the check also covers the state terms.
  Rng rng(seed);
  const ad::Param& state = model.store().create_uniform("probe.state", model.config().state_dim, 1, 1.0, rng);
  out.push_back(check("value estimate", model.store(),
                      [&]() { return ValueNet(model, net).estimate(ad::leaf(state), 1, 4); }, kLossTol, seed));
  return out;
}

std::vector<GradCheckResult> run_grad_checks(std::uint64_t seed) {
  auto out = primitive_grad_checks(seed);
  for (auto& r : loss_grad_checks(seed)) out.push_back(std::move(r));
  return out;
}

}  // namespace nasr
