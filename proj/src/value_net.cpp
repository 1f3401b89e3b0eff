#include "nasr/value_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nasr/errors.hpp"

namespace nasr {

namespace {

std::size_t position(std::span<const LocationId> ids, LocationId l) {
  if (ids.empty()) return static_cast<std::size_t>(l);
  auto it = std::lower_bound(ids.begin(), ids.end(), l);
  return static_cast<std::size_t>(it - ids.begin());
}

std::vector<LocationId> sorted_unique(std::vector<LocationId> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

Neighborhoods neighborhoods(const RoadNetwork& net, std::span<const LocationId> targets, std::size_t distance_bins) {
  Neighborhoods nb;
  nb.targets.assign(targets.begin(), targets.end());
  nb.offsets.push_back(0);
  for (LocationId t : targets) {
    const auto out = net.neighbors(t);
    std::vector<LocationId> hood(out.begin(), out.end());
    hood.push_back(t);
    hood = sorted_unique(std::move(hood));
    for (LocationId s : hood) {
      nb.sources.push_back(s);
      nb.bins.push_back(distance_bin(net.euclid(t, s), distance_bins));
    }
    nb.offsets.push_back(nb.sources.size());
  }
  return nb;
}

ValueNet::ValueNet(const Model& model, const RoadNetwork& net)
    : ValueNet(model, net, model.config().gat_variant, model.config().value_uses_state) {}

ValueNet::ValueNet(const Model& model, const RoadNetwork& net, GatVariant variant, bool use_state)
    : model_(&model), net_(&net), variant_(variant), use_state_(use_state) {
  if (net.size() != model.locations())
    throw ValidationError("model has " + std::to_string(model.locations()) + " locations, network has " +
                          std::to_string(net.size()));
  const ValueNetParams& p = model.value();
  const ad::Var loc = ad::leaf(*model.embeddings().loc);
  layer0_ = p.proj ? ad::matmul_rows(loc, *p.proj) : loc;
  const ad::Var dist = ad::leaf(*model.embeddings().dist);
  for (std::size_t z = 0; z < p.layers.size(); ++z) {
    const GatLayerParams& lp = p.layers[z];
    Layer l;
    if (z == 0) {
      l.center = ad::matmul_rows(layer0_, *lp.center);
      l.neighbor = ad::matmul_rows(layer0_, *lp.neighbor);
      l.value = ad::matmul_rows(layer0_, *lp.value);
    }
    if (variant_ == GatVariant::kContext) l.dist = ad::matmul_rows(dist, *lp.dist);
    layers_.push_back(std::move(l));
  }
}

double ValueNet::gat_score(std::span<const double> pre_activation, std::span<const double> w) {
  if (pre_activation.size() != w.size()) throw ValidationError("gat_score shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * std::tanh(pre_activation[i]);
  return s;
}

ad::Var ValueNet::state_term(std::size_t z, const ad::Var& state) const {
  if (variant_ != GatVariant::kContext || !use_state_) return {};
  return ad::dense(*model_->value().layers[z].state, state);
}

ad::Var ValueNet::layer_forward(std::size_t z, const ad::Var& input, std::span<const LocationId> input_ids,
                                const Neighborhoods& nb, const ad::Var& st, bool weights_only) const {
  const GatLayerParams& lp = model_->value().layers[z];
  const Layer& cache = layers_[z];
  const ad::Var center = cache.center ? cache.center : ad::matmul_rows(input, *lp.center);
  const ad::Var neighbor = cache.neighbor ? cache.neighbor : ad::matmul_rows(input, *lp.neighbor);
  const ad::Var value = cache.value ? cache.value : ad::matmul_rows(input, *lp.value);

  std::vector<std::size_t> center_rows;
  std::vector<std::size_t> source_rows;
  center_rows.reserve(nb.sources.size());
  source_rows.reserve(nb.sources.size());
  for (std::size_t t = 0; t < nb.targets.size(); ++t) {
    const std::size_t c = position(input_ids, nb.targets[t]);
    for (std::size_t e = nb.offsets[t]; e < nb.offsets[t + 1]; ++e) {
      center_rows.push_back(c);
      source_rows.push_back(position(input_ids, nb.sources[e]));
    }
  }
  ad::Var pre = ad::add(ad::gather_rows(center, center_rows), ad::gather_rows(neighbor, source_rows));
  if (cache.dist) pre = ad::add(pre, ad::gather_rows(cache.dist, nb.bins));
  if (st) pre = ad::add_rows(pre, st);
  const std::size_t heads = model_->config().heads;
  const ad::Var alpha = ad::segment_softmax(ad::head_dot(ad::tanh(pre), *lp.score, heads), nb.offsets);
  if (weights_only) return alpha;
  return ad::relu(ad::segment_aggregate(alpha, ad::gather_rows(value, source_rows), nb.offsets, heads));
}

ad::Var ValueNet::node_representations(const ad::Var& state) const {
  std::vector<LocationId> all(net_->size());
  std::iota(all.begin(), all.end(), 0);
  const Neighborhoods nb = neighborhoods(*net_, all, model_->config().distance_bins);
  ad::Var reprs = layer0_;
  for (std::size_t z = 0; z < layers_.size(); ++z) reprs = layer_forward(z, reprs, {}, nb, state_term(z, state), false);
  return reprs;
}

ad::Var ValueNet::attention_weights(const ad::Var& state, std::size_t layer) const {
  if (layer >= layers_.size()) throw ValidationError("no GAT layer " + std::to_string(layer));
  std::vector<LocationId> all(net_->size());
  std::iota(all.begin(), all.end(), 0);
  const Neighborhoods nb = neighborhoods(*net_, all, model_->config().distance_bins);
  ad::Var reprs = layer0_;
  for (std::size_t z = 0; z < layer; ++z) reprs = layer_forward(z, reprs, {}, nb, state_term(z, state), false);
  return layer_forward(layer, reprs, {}, nb, state_term(layer, state), true);
}

ad::Var ValueNet::head(const ad::Var& state, const ad::Var& n_at, const ad::Var& n_dest, LocationId at,
                       LocationId dest) const {
  const ValueNetParams& p = model_->value();
  const ad::Var s = use_state_ ? state : ad::zeros(model_->config().state_dim);
  const ad::Var x = ad::concat({s, n_at, n_dest, model_->embeddings().distance_embedding(net_->euclid(at, dest))});
  const ad::Var h1 = ad::relu(ad::affine(*p.w1, p.b1, x));
  const ad::Var h2 = ad::relu(ad::affine(*p.w2, p.b2, h1));
  return ad::softplus(ad::affine(*p.w3, p.b3, h2));
}

ad::Var ValueNet::estimate(const ad::Var& state, LocationId at, LocationId dest) const {
  if (!net_->valid(at) || !net_->valid(dest)) throw ValidationError("unknown location in value estimate");
  if (state.size() != model_->config().state_dim) throw ValidationError("moving state has the wrong width");
  const std::size_t depth = layers_.size();
  const std::size_t bins = model_->config().distance_bins;
  // sets[z] = nodes whose layer-z representation is needed.
  std::vector<std::vector<LocationId>> sets(depth + 1);
  sets[depth] = sorted_unique({at, dest});
  std::vector<Neighborhoods> hoods(depth);
  for (std::size_t z = depth; z-- > 0;) {
    hoods[z] = neighborhoods(*net_, sets[z + 1], bins);
    sets[z] = sorted_unique(hoods[z].sources);
  }
  ad::Var reprs;
  if (depth == 0) {
    std::vector<std::size_t> rows(sets[0].begin(), sets[0].end());
    reprs = ad::gather_rows(layer0_, rows);
  } else {
    reprs = layer0_;
    for (std::size_t z = 0; z < depth; ++z) {
      const std::span<const LocationId> ids = z == 0 ? std::span<const LocationId>{} : std::span<const LocationId>(sets[z]);
      reprs = layer_forward(z, reprs, ids, hoods[z], state_term(z, state), false);
    }
  }
  const auto& final_ids = sets[depth];
  const std::size_t ra = position(final_ids, at);
  const std::size_t rd = position(final_ids, dest);
  return head(state, ad::gather_rows(reprs, std::span<const std::size_t>(&ra, 1)),
              ad::gather_rows(reprs, std::span<const std::size_t>(&rd, 1)), at, dest);
}

ad::Var ValueNet::estimate_from(const ad::Var& state, const ad::Var& reprs, LocationId at, LocationId dest) const {
  const std::size_t ra = static_cast<std::size_t>(at);
  const std::size_t rd = static_cast<std::size_t>(dest);
  return head(state, ad::gather_rows(reprs, std::span<const std::size_t>(&ra, 1)),
              ad::gather_rows(reprs, std::span<const std::size_t>(&rd, 1)), at, dest);
}

double sp_heuristic(const Model& model, LocationId at, LocationId dest) {
  const ad::Param& loc = *model.embeddings().loc;
  const double* a = loc.row(static_cast<std::size_t>(at));
  const double* d = loc.row(static_cast<std::size_t>(dest));
  double s = 0.0;
  for (std::size_t i = 0; i < loc.cols(); ++i) s += a[i] * d[i];
  return s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
}

void write_association_csv(std::ostream& out, const RoadNetwork& net, const ad::Var& reprs, LocationId at,
                           LocationId dest) {
  const std::size_t k = reprs.cols();
  const auto v = reprs.value();
  out << "location,x,y,score\n";
  for (std::size_t j = 0; j < net.size(); ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      s += v[j * k + c] * (v[static_cast<std::size_t>(at) * k + c] + v[static_cast<std::size_t>(dest) * k + c]);
    const Point& p = net.coord(static_cast<LocationId>(j));
    out << j << ',' << p.x << ',' << p.y << ',' << s << '\n';
  }
}

}  // namespace nasr
