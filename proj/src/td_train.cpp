#include "nasr/td_train.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

#include "nasr/errors.hpp"
#include "nasr/metrics.hpp"
#include "nasr/value_net.hpp"

namespace nasr {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kTD: return "n-TD";
    case TrainMode::kMC: return "MC";
    case TrainMode::kSL: return "SL";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  for (auto m : {TrainMode::kTD, TrainMode::kMC, TrainMode::kSL})
    if (to_string(m) == s) return m;
  throw ValidationError("unknown training mode '" + s + "' (expected n-TD, MC or SL)");
}

void TrainConfig::validate() const {
  if (n < 1) throw ValidationError("n must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in [0, 1)");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ValidationError("lr_decay must lie in (0, 1]");
  if (val_max_expansions < 1) throw ValidationError("val_max_expansions must be >= 1");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"mode", to_string(cfg.mode)},
          {"n", cfg.n},
          {"gamma", cfg.gamma},
          {"pretrain_epochs", cfg.pretrain_epochs},
          {"joint_epochs", cfg.joint_epochs},
          {"lr", cfg.lr},
          {"lr_decay", cfg.lr_decay},
          {"seed", cfg.seed},
          {"clip_norm", cfg.clip_norm},
          {"val_max_expansions", cfg.val_max_expansions}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  const nlohmann::json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) {
      std::string valid;
      for (auto k = known.begin(); k != known.end(); ++k) valid += (valid.empty() ? "" : ", ") + k.key();
      throw ValidationError("unknown train config key '" + it.key() + "'; valid keys: " + valid);
    }
  }
  try {
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    read("n", c.n);
    read("gamma", c.gamma);
    read("pretrain_epochs", c.pretrain_epochs);
    read("joint_epochs", c.joint_epochs);
    read("lr", c.lr);
    read("lr_decay", c.lr_decay);
    read("seed", c.seed);
    read("clip_norm", c.clip_norm);
    read("val_max_expansions", c.val_max_expansions);
    if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode").get<std::string>());
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad train config value: ") + ex.what());
  }
  c.validate();
  return c;
}

double immediate_cost(double p) {
  if (!(p > 0.0) || p > 1.0) throw ValidationError("probability must lie in (0, 1]");
  return -std::log(p);
}

double td_target(std::span<const double> costs, double bootstrap, std::size_t n, double gamma) {
  const std::size_t m = std::min(n, costs.size());
  double y = 0.0;
  double discount = 1.0;
  for (std::size_t k = 0; k < m; ++k) {
    y += discount * costs[k];
    discount *= gamma;
  }
  if (costs.size() > n) y += discount * bootstrap;
  return y;
}

std::vector<double> training_targets(TrainMode mode, std::span<const double> costs, std::span<const double> estimates,
                                     std::size_t n, double gamma) {
  if (estimates.size() != costs.size()) throw ValidationError("one estimate per non-terminal position expected");
  std::vector<double> y(costs.size());
  for (std::size_t i = 0; i < costs.size(); ++i) {
    const auto rest = costs.subspan(i);
    switch (mode) {
      case TrainMode::kTD: y[i] = td_target(rest, i + n < costs.size() ? estimates[i + n] : 0.0, n, gamma); break;
      case TrainMode::kMC: y[i] = td_target(rest, 0.0, rest.size(), gamma); break;
      case TrainMode::kSL: y[i] = td_target(rest, 0.0, rest.size(), 1.0); break;
    }
  }
  return y;
}

namespace {

struct Rollout {
  std::vector<ad::Var> states;  // constants, one per non-terminal position
  std::vector<double> costs;
};

Rollout rollout(const Model& model, const RoadNetwork& net, const Trajectory& t, const UserHistoryBank& bank,
                std::optional<std::size_t> self_index) {
  const auto locs = t.locations();
  if (locs.size() < 2) throw ValidationError("trajectory needs at least two locations");
  ad::NoGradGuard no_grad;
  const ObservableCost oc(model, net, t.user, t.depart(), prepare_history(model, bank, t.user, self_index));
  const auto walk = oc.walk(locs);
  Rollout r;
  for (std::size_t j = 1; j < walk.size(); ++j) r.costs.push_back(walk[j].g_acc() - walk[j - 1].g_acc());
  for (std::size_t i = 0; i + 1 < walk.size(); ++i)
    r.states.push_back(ad::constant(walk[i].attended.to_vector(), walk[i].attended.size()));
  return r;
}

}  // namespace

std::vector<double> route_costs(const Model& model, const RoadNetwork& net, const Trajectory& t,
                                const UserHistoryBank& bank, std::optional<std::size_t> self_index) {
  return rollout(model, net, t, bank, self_index).costs;
}

ValueTargets value_targets(const Model& model, const RoadNetwork& net, const Trajectory& t,
                           const UserHistoryBank& bank, std::optional<std::size_t> self_index,
                           const TrainConfig& cfg) {
  Rollout r = rollout(model, net, t, bank, self_index);
  const auto locs = t.locations();
  std::vector<double> h;
  {
    ad::NoGradGuard no_grad;
    const ValueNet vn(model, net);
    for (std::size_t i = 0; i < r.states.size(); ++i) h.push_back(vn.estimate(r.states[i], locs[i], locs.back()).item());
  }
  ValueTargets vt;
  vt.targets = training_targets(cfg.mode, r.costs, h, cfg.n, cfg.gamma);
  vt.states = std::move(r.states);
  vt.costs = std::move(r.costs);
  return vt;
}

ad::Var value_loss(const Model& model, const RoadNetwork& net, const Trajectory& t, const ValueTargets& vt) {
  const auto locs = t.locations();
  if (vt.states.size() + 1 != locs.size() || vt.targets.size() != vt.states.size())
    throw ValidationError("value targets do not match the trajectory");
  const ValueNet vn(model, net);
  std::vector<ad::Var> terms;
  for (std::size_t i = 0; i < vt.states.size(); ++i) {
    const ad::Var h = vn.estimate(vt.states[i], locs[i], locs.back());
    terms.push_back(ad::square(ad::sub(h, ad::scalar(vt.targets[i]))));
  }
  return ad::add_n(terms);
}

ad::Var value_loss(const Model& model, const RoadNetwork& net, const Trajectory& t, const UserHistoryBank& bank,
                   std::optional<std::size_t> self_index, const TrainConfig& cfg) {
  return value_loss(model, net, t, value_targets(model, net, t, bank, self_index, cfg));
}

double ed_lambda(const Model& model, const RoadNetwork& net, const Dataset& data,
                 std::span<const std::size_t> indices, const UserHistoryBank& bank) {
  double cost = 0.0;
  double length = 0.0;
  for (std::size_t i : indices) {
    const Trajectory& t = data.trajectories.at(i);
    for (double c : route_costs(model, net, t, bank, std::nullopt)) cost += c;
    for (std::size_t k = 1; k < t.steps.size(); ++k) length += net.euclid(t.steps[k - 1].loc, t.steps[k].loc);
  }
  return length > 0.0 ? cost / length : 1.0;
}

namespace {

void check_finite(double loss, const char* what, std::size_t epoch) {
  if (!std::isfinite(loss))
    throw NumericError(std::string(what) + " diverged in epoch " + std::to_string(epoch) + " (value " +
                       std::to_string(loss) + ")");
}

}  // namespace

TrainResult train(const RoadNetwork& net, const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  const auto train_idx = data.indices(Split::kTrain);
  const auto val_idx = data.indices(Split::kVal);
  if (train_idx.empty()) throw ValidationError("training split is empty");

  TrainResult result{Model::create(model_cfg, data.num_users(), net.size(), cfg.seed), UserHistoryBank{}, 1.0, 0, {}};
  Model& m = result.model;
  ad::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm};
  Rng rng(cfg.seed ^ 0x5deece66dULL);
  SearchConfig val_search;
  val_search.mode = HeuristicMode::kValueNet;
  val_search.max_expansions = cfg.val_max_expansions;

  std::vector<std::vector<double>> best = m.store().snapshot();
  double best_f1 = -1.0;
  const std::size_t epochs = cfg.pretrain_epochs + cfg.joint_epochs;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    adam.lr = cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch - 1));
    EpochLog row;
    row.epoch = epoch;
    row.joint = epoch > cfg.pretrain_epochs;

    std::vector<std::size_t> order = train_idx;
    UserHistoryBank bank = build_history(m, net, data, train_idx);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i : order) {
      const ad::Var loss = route_nll(m, net, data.trajectories[i], bank, i);
      loss.backward();
      m.store().adam_step(adam);
      row.loss1 += loss.item();
    }
    check_finite(row.loss1, "route likelihood loss", epoch);

    if (row.joint) {
      bank = build_history(m, net, data, train_idx);
      rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t i : order) {
        const ad::Var loss = value_loss(m, net, data.trajectories[i], bank, i, cfg);
        loss.backward();
        m.store().adam_step(adam);
        row.loss2 += loss.item();
      }
      check_finite(row.loss2, "value loss", epoch);

      bank = build_history(m, net, data, train_idx);
      const EvalReport rep = evaluate(net, m, bank, data, val_idx, val_search);
      for (const auto& q : rep.queries) {
        row.val_precision += q.scores.precision;
        row.val_recall += q.scores.recall;
        row.val_f1 += q.scores.f1;
        row.val_edt += static_cast<double>(q.edt);
      }
      if (!rep.queries.empty()) {
        const auto n = static_cast<double>(rep.queries.size());
        row.val_precision /= n;
        row.val_recall /= n;
        row.val_f1 /= n;
        row.val_edt /= n;
      }
      if (row.val_f1 >= best_f1) {
        best_f1 = row.val_f1;
        best = m.store().snapshot();
        result.best_epoch = epoch;
      }
    } else if (cfg.joint_epochs == 0) {
      best = m.store().snapshot();
      result.best_epoch = epoch;
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  m.store().restore(best);
  result.bank = build_history(m, net, data, train_idx);
  result.ed_lambda = ed_lambda(m, net, data, train_idx, result.bank);
  return result;
}

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,loss1,loss2,val_precision,val_recall,val_f1,val_edt\n";
  out << std::setprecision(17);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.loss1 << ',';
    if (r.joint)
      out << r.loss2 << ',' << r.val_precision << ',' << r.val_recall << ',' << r.val_f1 << ',' << r.val_edt;
    else
      out << ",,,,";
    out << '\n';
  }
}

}  // namespace nasr
