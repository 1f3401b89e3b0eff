#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "nasr/autodiff.hpp"
#include "nasr/graph.hpp"
#include "nasr/model.hpp"

namespace nasr {

// Attention neighbourhoods of a set of target nodes: for target t, entries
// [offsets[t], offsets[t+1]) of `sources` list its out-neighbours and itself
// in ascending id order.
struct Neighborhoods {
  std::vector<LocationId> targets;
  std::vector<LocationId> sources;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> bins;  // distance bin of (target, source)
};

Neighborhoods neighborhoods(const RoadNetwork& net, std::span<const LocationId> targets,
                            std::size_t distance_bins);

// The estimated-cost network bound to one road network. State-independent
// projections are computed once at construction, so a ValueNet must not
// outlive a parameter update of the model it was built from.
class ValueNet {
 public:
  ValueNet(const Model& model, const RoadNetwork& net);
  ValueNet(const Model& model, const RoadNetwork& net, GatVariant variant, bool use_state);

  GatVariant variant() const { return variant_; }
  bool uses_state() const { return use_state_; }

  // Unnormalised score of source j for target i under one head's score
  // vector, from the summed pre-activation terms.
  static double gat_score(std::span<const double> pre_activation, std::span<const double> w);

  // Layer-0 representations (|L| x K_G).
  ad::Var initial_representations() const { return layer0_; }
  // All node representations after every GAT layer (|L| x K_G).
  ad::Var node_representations(const ad::Var& state) const;
  // Attention weights (E x heads) of layer z (0-based) for the full graph, in
  // the order of neighborhoods(net, all nodes).
  ad::Var attention_weights(const ad::Var& state, std::size_t layer) const;

  // h(l_i -> l_d) >= 0. Evaluates only the receptive field of the two nodes.
  ad::Var estimate(const ad::Var& state, LocationId at, LocationId dest) const;
  // Same value from precomputed full-graph representations.
  ad::Var estimate_from(const ad::Var& state, const ad::Var& reprs, LocationId at, LocationId dest) const;

 private:
  struct Layer {
    ad::Var center;    // |L| x K_G projections of the layer input (layer 0 only)
    ad::Var neighbor;
    ad::Var value;
    ad::Var dist;      // bins x K_G
  };

  // One GAT layer. `input` rows correspond to `input_ids`; nb lists targets
  // whose neighbourhoods are inside input_ids.
  ad::Var layer_forward(std::size_t z, const ad::Var& input, std::span<const LocationId> input_ids,
                        const Neighborhoods& nb, const ad::Var& state_term, bool weights_only) const;
  ad::Var state_term(std::size_t z, const ad::Var& state) const;
  ad::Var head(const ad::Var& state, const ad::Var& n_at, const ad::Var& n_dest, LocationId at,
               LocationId dest) const;

  const Model* model_;
  const RoadNetwork* net_;
  GatVariant variant_;
  bool use_state_;
  ad::Var layer0_;
  std::vector<Layer> layers_;
};

// softplus(v_i . v_d) over the location embeddings.
double sp_heuristic(const Model& model, LocationId at, LocationId dest);

// n_j . n_i + n_j . n_d for every node j, as CSV rows (location, x, y, score).
void write_association_csv(std::ostream& out, const RoadNetwork& net, const ad::Var& reprs, LocationId at,
                           LocationId dest);

}  // namespace nasr
