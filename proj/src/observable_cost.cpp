#include "nasr/observable_cost.hpp"

#include <algorithm>
#include <string>

#include "nasr/errors.hpp"

namespace nasr {

namespace {
thread_local std::function<void(std::span<const double>)> transition_probe;
}

void set_transition_probe(std::function<void(std::span<const double>)> probe) {
  transition_probe = std::move(probe);
}

std::span<const UserHistoryBank::Entry> UserHistoryBank::entries(UserId u) const {
  auto it = by_user_.find(u);
  if (it == by_user_.end()) return {};
  return it->second;
}

void UserHistoryBank::add(UserId u, Entry e) {
  auto& list = by_user_[u];
  auto pos = std::upper_bound(list.begin(), list.end(), e, [](const Entry& a, const Entry& b) {
    return a.depart != b.depart ? a.depart < b.depart : a.trajectory < b.trajectory;
  });
  list.insert(pos, std::move(e));
  if (list.size() > cap_) list.erase(list.begin(), list.begin() + static_cast<long>(list.size() - cap_));
}

nlohmann::json UserHistoryBank::to_json() const {
  nlohmann::json users = nlohmann::json::array();
  for (const auto& [u, list] : by_user_) {
    nlohmann::json entries = nlohmann::json::array();
    for (const Entry& e : list)
      entries.push_back({{"trajectory", e.trajectory}, {"depart", e.depart}, {"summary", e.summary}});
    users.push_back({{"user", u}, {"entries", std::move(entries)}});
  }
  return {{"cap", cap_}, {"users", std::move(users)}};
}

UserHistoryBank UserHistoryBank::from_json(const nlohmann::json& j) {
  try {
    UserHistoryBank bank(j.at("cap").get<std::size_t>());
    for (const auto& u : j.at("users")) {
      const auto user = u.at("user").get<UserId>();
      for (const auto& e : u.at("entries"))
        bank.add(user, {e.at("trajectory").get<std::size_t>(), e.at("depart").get<Timestamp>(),
                        e.at("summary").get<std::vector<double>>()});
    }
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed history bank: ") + e.what());
  }
}

HistoryView prepare_history(const Model& model, const UserHistoryBank& bank, UserId user,
                            std::optional<std::size_t> exclude_trajectory) {
  HistoryView view;
  if (model.config().attention != AttentionMode::kBoth) return view;
  const std::size_t dim = model.config().state_dim;
  for (const auto& e : bank.entries(user)) {
    if (exclude_trajectory && e.trajectory == *exclude_trajectory) continue;
    if (e.summary.size() != dim) throw ValidationError("history entry has the wrong width");
    ad::Var v = ad::constant(e.summary, dim);
    view.keys.push_back(ad::dense(*model.inter().key, v));
    view.values.push_back(std::move(v));
  }
  return view;
}

ad::Var intra_attention(const Model& model, std::span<const ad::Var> hiddens) {
  if (hiddens.empty()) throw ValidationError("attention over an empty prefix");
  const AttentionParams& a = model.intra();
  std::vector<ad::Var> keys;
  for (const auto& h : hiddens) keys.push_back(ad::dense(*a.key, h));
  return ad::additive_attention(keys, ad::dense(*a.query, hiddens.back()), *a.score, hiddens);
}

ad::Var inter_attention(const Model& model, const ad::Var& summary, const HistoryView& history) {
  if (history.empty()) return summary;
  const AttentionParams& a = model.inter();
  return ad::additive_attention(history.keys, ad::dense(*a.query, summary), *a.score, history.values);
}

ObservableCost::ObservableCost(const Model& model, const RoadNetwork& net, UserId user,
                               Timestamp depart, HistoryView history)
    : model_(&model), net_(&net), user_(user), depart_(depart), history_(std::move(history)) {
  if (user < 0 || static_cast<std::size_t>(user) >= model.users())
    throw ValidationError("unknown user " + std::to_string(user));
  const auto& emb = model.embeddings();
  const TimeIndices ti = time_indices(depart);
  time_user_[0] = ad::row(*emb.user, static_cast<std::size_t>(user));
  time_user_[1] = ad::row(*emb.weekday, static_cast<std::size_t>(ti.weekday - 1));
  time_user_[2] = ad::row(*emb.hour, static_cast<std::size_t>(ti.hour - 1));
}

ad::Var ObservableCost::context(LocationId l) const {
  return ad::concat({time_user_[0], ad::row(*model_->embeddings().loc, static_cast<std::size_t>(l)),
                     time_user_[1], time_user_[2]});
}

void ObservableCost::attend(MovingState& s) const {
  const ModelConfig& cfg = model_->config();
  const ad::Var& h = s.hiddens.back();
  if (cfg.attention == AttentionMode::kNone) {
    s.summary = h;
  } else {
    const AttentionParams& a = model_->intra();
    s.summary = ad::additive_attention(s.keys, ad::dense(*a.query, h), *a.score, s.hiddens);
  }
  if (cfg.attention == AttentionMode::kBoth && !history_.empty()) {
    s.attended = ad::add(s.summary, inter_attention(*model_, s.summary, history_));
  } else {
    s.attended = s.summary;
  }
}

MovingState ObservableCost::start(LocationId source) const {
  if (!net_->valid(source)) throw ValidationError("unknown location " + std::to_string(source));
  MovingState s;
  s.path.push_back(source);
  const ad::Var h = ad::gru_step(model_->gru(), context(source), ad::zeros(model_->config().state_dim));
  s.hiddens.push_back(h);
  if (model_->config().attention != AttentionMode::kNone) s.keys.push_back(ad::dense(*model_->intra().key, h));
  s.g = ad::scalar(0.0);
  attend(s);
  return s;
}

MovingState ObservableCost::extend(const MovingState& state, LocationId next) const {
  MovingState s = state;
  s.path.push_back(next);
  const ad::Var h = ad::gru_step(model_->gru(), context(next), state.hiddens.back());
  s.hiddens.push_back(h);
  if (model_->config().attention != AttentionMode::kNone) s.keys.push_back(ad::dense(*model_->intra().key, h));
  attend(s);
  return s;
}

Expansion ObservableCost::expand(const MovingState& state) const {
  const auto nbrs = net_->neighbors(state.last());
  if (nbrs.empty()) throw DeadEndError("location " + std::to_string(state.last()) + " has no successors");
  Expansion e;
  e.next.assign(nbrs.begin(), nbrs.end());
  std::vector<ad::Var> scores;
  scores.reserve(nbrs.size());
  for (LocationId n : nbrs) {
    e.children.push_back(extend(state, n));
    scores.push_back(ad::dot(model_->output(), e.children.back().attended));
  }
  e.probs = ad::floor_renormalize(ad::softmax(ad::concat(scores)), model_->config().prob_floor);
  if (transition_probe) transition_probe(e.probs.value());
  for (std::size_t k = 0; k < e.children.size(); ++k)
    e.children[k].g = ad::add(state.g, ad::scale(ad::log(ad::pick(e.probs, k)), -1.0));
  return e;
}

std::vector<MovingState> ObservableCost::walk(std::span<const LocationId> path) const {
  if (path.empty()) throw ValidationError("empty path");
  std::vector<MovingState> states;
  states.reserve(path.size());
  states.push_back(start(path[0]));
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (!net_->has_edge(path[i - 1], path[i]))
      throw ValidationError("(" + std::to_string(path[i - 1]) + ", " + std::to_string(path[i]) + ") at step " +
                            std::to_string(i) + " is not a road-network edge");
    Expansion e = expand(states.back());
    const auto k = static_cast<std::size_t>(std::find(e.next.begin(), e.next.end(), path[i]) - e.next.begin());
    states.push_back(std::move(e.children[k]));
  }
  return states;
}

MovingState ObservableCost::encode_prefix(std::span<const LocationId> prefix) const {
  return std::move(walk(prefix).back());
}

std::vector<std::pair<LocationId, double>> ObservableCost::transition_probs(const MovingState& state) const {
  const Expansion e = expand(state);
  std::vector<std::pair<LocationId, double>> out;
  for (std::size_t k = 0; k < e.next.size(); ++k) out.emplace_back(e.next[k], e.probs[k]);
  return out;
}

double ObservableCost::g_cost(std::span<const LocationId> path) const { return encode_prefix(path).g_acc(); }

ad::Var ObservableCost::summarize(std::span<const LocationId> path) const {
  if (path.empty()) throw ValidationError("empty path");
  MovingState s = start(path[0]);
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (!net_->has_edge(path[i - 1], path[i]))
      throw ValidationError("(" + std::to_string(path[i - 1]) + ", " + std::to_string(path[i]) + ") at step " +
                            std::to_string(i) + " is not a road-network edge");
    s = extend(s, path[i]);
  }
  return s.summary;
}

ad::Var route_nll(const Model& model, const RoadNetwork& net, const Trajectory& t, const UserHistoryBank& bank,
                  std::optional<std::size_t> self_index) {
  const auto locs = t.locations();
  ObservableCost oc(model, net, t.user, t.depart(), prepare_history(model, bank, t.user, self_index));
  return oc.encode_prefix(locs).g;
}

ad::Var rnn_loss(const Model& model, const RoadNetwork& net, const Dataset& data,
                 std::span<const std::size_t> indices, const UserHistoryBank& bank) {
  if (indices.empty()) throw ValidationError("rnn_loss over an empty split");
  std::vector<ad::Var> terms;
  for (std::size_t i : indices) terms.push_back(route_nll(model, net, data.trajectories.at(i), bank, i));
  return ad::add_n(terms);
}

UserHistoryBank build_history(const Model& model, const RoadNetwork& net, const Dataset& data,
                              std::span<const std::size_t> indices) {
  UserHistoryBank bank(model.config().history_cap);
  if (model.config().attention != AttentionMode::kBoth) return bank;
  ad::NoGradGuard no_grad;
  for (std::size_t i : indices) {
    const Trajectory& t = data.trajectories.at(i);
    ObservableCost oc(model, net, t.user, t.depart(), {});
    const auto locs = t.locations();
    bank.add(t.user, {i, t.depart(), oc.summarize(locs).to_vector()});
  }
  return bank;
}

}  // namespace nasr
