#pragma once

// Reverse-mode differentiation over a dynamically recorded graph of
// vector/matrix values. Every value is a row-major float64 array with a
// (rows, cols) shape; column vectors use cols == 1.
//
// Learnable arrays live in a ParamStore. Ops read parameters directly and
// accumulate into their gradient buffers during backward(), so parameters are
// never copied onto the graph. Intermediate nodes are reference counted and
// disappear as soon as nothing downstream holds them, which keeps inference
// (NoGradGuard) allocation-light.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nasr/rng.hpp"

namespace nasr::ad {

class Param {
 public:
  Param(std::string name, std::size_t rows, std::size_t cols);

  const std::string& name() const { return name_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return value_.size(); }

  std::span<double> value() { return value_; }
  std::span<const double> value() const { return value_; }
  const double* row(std::size_t r) const { return value_.data() + r * cols_; }

  // The adjoint accumulator is written through const references during
  // backward(); a parameter store has a single writer while training.
  std::span<double> grad() const { return grad_; }

 private:
  friend class ParamStore;

  std::string name_;
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> value_;
  mutable std::vector<double> grad_;
  std::vector<double> first_moment_;
  std::vector<double> second_moment_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
};

class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  // Zero-initialised parameter; names must be unique.
  Param& create(const std::string& name, std::size_t rows, std::size_t cols);
  // Uniform in [-scale, scale].
  Param& create_uniform(const std::string& name, std::size_t rows, std::size_t cols, double scale,
                        Rng& rng);

  bool contains(const std::string& name) const { return index_.contains(name); }
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::size_t total_size() const;
  std::uint64_t steps() const { return steps_; }

  void zero_grad();
  double grad_norm() const;

  // Clip to the global norm, adaptive-moment update, then zero gradients.
  // Parameters whose gradient is entirely zero are left as they are.
  // Throws NumericError naming the first parameter with a non-finite gradient.
  void adam_step(const AdamConfig& cfg);

  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

  // {name: {"shape": [rows, cols], "data": [...]}} in creation order.
  nlohmann::json to_json() const;
  // Overwrites values of existing parameters; names and shapes must match.
  void load_json(const nlohmann::json& j);

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t steps_ = 0;
};

void optimizer_step(ParamStore& store, double lr);

struct Node {
  std::vector<double> value;
  std::vector<double> grad;
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into parents (and parameter accumulators).
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  explicit operator bool() const { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> value() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double> to_vector() const { return node_->value; }

  // Seeds d(this)/d(this) = 1 and accumulates into every reachable node and
  // parameter. Requires a scalar.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds a node from a computed value. Parents and the backward rule are only
// kept while recording. Exposed for tests and extensions.
Var make_op(std::vector<double> value, std::size_t rows, std::size_t cols, std::vector<Var> parents,
            std::function<void(Node&)> backward);

// ---- leaves -----------------------------------------------------------------
Var constant(std::vector<double> value, std::size_t rows, std::size_t cols = 1);
Var scalar(double v);
Var zeros(std::size_t rows, std::size_t cols = 1);
// The whole parameter as a value (copied); gradients flow back into it.
Var leaf(const Param& p);
// Row r of an embedding table, as a column vector.
Var row(const Param& table, std::size_t r);

// ---- linear algebra ---------------------------------------------------------
// W x (+ b). W is (out x in), x has in entries.
Var affine(const Param& w, const Param* b, const Var& x);
inline Var dense(const Param& w, const Var& x) { return affine(w, nullptr, x); }
// X W^T for X (n x in), W (out x in): applies W to every row of X.
Var matmul_rows(const Var& x, const Param& w);
Var dot(const Var& a, const Var& b);
Var dot(const Param& w, const Var& x);

// ---- elementwise / structural -----------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// X + 1 v^T: adds v to every row of X.
Var add_rows(const Var& x, const Var& v);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice(const Var& a, std::size_t offset, std::size_t length);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var softplus(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var add_n(std::span<const Var> scalars);
Var pick(const Var& a, std::size_t i);

// ---- probability ------------------------------------------------------------
// Max-subtracted softmax over all entries; throws on empty input.
Var softmax(const Var& scores);
// q_i = max(p_i, floor) / sum_j max(p_j, floor).
Var floor_renormalize(const Var& probs, double floor);

// ---- attention --------------------------------------------------------------
// score_k = w . tanh(keys[k] + query), alpha = softmax(score),
// returns sum_k alpha_k values[k]. keys/query have w.size() entries.
Var additive_attention(std::span<const Var> keys, const Var& query, const Param& w,
                       std::span<const Var> values);
// Same scores, returns the attention weights themselves.
std::vector<double> additive_attention_weights(std::span<const Var> keys, const Var& query,
                                               const Param& w);

// Rows idx[0], idx[1], ... of X stacked into a (idx.size() x cols) matrix.
Var gather_rows(const Var& x, std::span<const std::size_t> idx);
// X is (E x heads*d); returns (E x heads) with entry (e, a) = w_a . X[e, a*d:(a+1)*d].
Var head_dot(const Var& x, const Param& w, std::size_t heads);
// S is (E x heads); rows [offsets[s], offsets[s+1]) form segment s. Softmax
// per segment and per column.
Var segment_softmax(const Var& s, std::span<const std::size_t> offsets);
// alpha (E x heads), v (E x width), width divisible by heads. Output row s,
// column c = sum over segment s of alpha[e, c / (width/heads)] * v[e, c].
Var segment_aggregate(const Var& alpha, const Var& v, std::span<const std::size_t> offsets,
                      std::size_t heads);

// ---- recurrent cell ---------------------------------------------------------
struct GruParams {
  const Param* wz = nullptr;
  const Param* bz = nullptr;
  const Param* wr = nullptr;
  const Param* br = nullptr;
  const Param* wh = nullptr;
  const Param* bh = nullptr;

  std::size_t input_size() const { return wz->cols() - wz->rows(); }
  std::size_t hidden_size() const { return wz->rows(); }

  // Creates <prefix>.{wz,bz,wr,br,wh,bh}; weights uniform, biases zero.
  static GruParams create(ParamStore& store, const std::string& prefix, std::size_t input,
                          std::size_t hidden, double init_scale, Rng& rng);
  static GruParams bind(const ParamStore& store, const std::string& prefix);
};

// z = sig(Wz[x;h]+bz), r = sig(Wr[x;h]+br), c = tanh(Wh[x; r*h]+bh),
// h' = (1-z)*h + z*c.
Var gru_step(const GruParams& p, const Var& x, const Var& h);

// ---- verification -----------------------------------------------------------
struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct FiniteDiffOptions {
  double eps = 1e-6;
  std::size_t max_coords = 1000;  // seeded sample beyond this many coordinates
  std::uint64_t seed = 0;
  // Relative error is |a - n| / max(|a|, |n|, denom_floor).
  double denom_floor = 1e-3;
};

// Compares backward() of `loss` against central differences for every
// coordinate of every parameter in `store` (or a sample). `loss` must be a
// deterministic function of the store's values.
FiniteDiffReport finite_diff_check(ParamStore& store, const std::function<Var()>& loss,
                                   const FiniteDiffOptions& opts = {});

}  // namespace nasr::ad
