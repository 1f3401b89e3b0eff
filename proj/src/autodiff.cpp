#include "nasr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "nasr/errors.hpp"

namespace nasr::ad {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(std::string("autodiff shape mismatch: ") + what);
}

// One exp instead of libm tanh; absolute error stays near 1e-16.
double tanh_exp(double x) {
  const double e = std::exp(-2.0 * std::abs(x));
  const double t = (1.0 - e) / (1.0 + e);
  return x < 0 ? -t : t;
}

// Dot product with four running sums.
double dot4(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

// ---- Param / ParamStore -----------------------------------------------------

Param::Param(std::string name, std::size_t rows, std::size_t cols)
    : name_(std::move(name)),
      rows_(rows),
      cols_(cols),
      value_(rows * cols, 0.0),
      grad_(rows * cols, 0.0),
      first_moment_(rows * cols, 0.0),
      second_moment_(rows * cols, 0.0) {}

Param& ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols) {
  if (index_.contains(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  if (rows == 0 || cols == 0) throw ValidationError("parameter '" + name + "' has an empty shape");
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Param>(name, rows, cols));
  return *params_.back();
}

Param& ParamStore::create_uniform(const std::string& name, std::size_t rows, std::size_t cols,
                                  double scale, Rng& rng) {
  Param& p = create(name, rows, cols);
  for (double& v : p.value()) v = rng.uniform(-scale, scale);
  return p;
}

Param& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

std::vector<Param*> ParamStore::params() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamStore::params() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p->grad_.begin(), p->grad_.end(), 0.0);
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (double g : p->grad_) sq += g * g;
  }
  return std::sqrt(sq);
}

void ParamStore::adam_step(const AdamConfig& cfg) {
  for (const auto& p : params_) {
    for (double g : p->grad_) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p->name_ + "'");
    }
  }
  double factor = 1.0;
  if (cfg.clip_norm > 0.0) {
    const double norm = grad_norm();
    if (norm > cfg.clip_norm) factor = cfg.clip_norm / norm;
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : params_) {
    // Parameters untouched by this loss keep their values and moments.
    if (std::all_of(p->grad_.begin(), p->grad_.end(), [](double g) { return g == 0.0; })) continue;
    for (std::size_t i = 0; i < p->value_.size(); ++i) {
      const double g = p->grad_[i] * factor;
      double& m = p->first_moment_[i];
      double& v = p->second_moment_[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      p->value_[i] -= cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
    }
    std::fill(p->grad_.begin(), p->grad_.end(), 0.0);
  }
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value_);
  return out;
}

void ParamStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) throw ValidationError("snapshot does not match parameter store");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (values[i].size() != params_[i]->value_.size()) {
      throw ValidationError("snapshot shape mismatch for '" + params_[i]->name_ + "'");
    }
    params_[i]->value_ = values[i];
  }
}

nlohmann::json ParamStore::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& p : params_) {
    j[p->name_] = {{"shape", {p->rows_, p->cols_}}, {"data", p->value_}};
  }
  return j;
}

void ParamStore::load_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("parameter block must be a JSON object");
  for (const auto& p : params_) {
    if (!j.contains(p->name_)) throw ValidationError("checkpoint lacks parameter '" + p->name_ + "'");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    Param& p = get(it.key());
    try {
      const auto shape = it.value().at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != p.rows_ || shape[1] != p.cols_) {
        throw ValidationError("shape mismatch for parameter '" + p.name_ + "'");
      }
      auto data = it.value().at("data").get<std::vector<double>>();
      if (data.size() != p.value_.size()) {
        throw ValidationError("data length mismatch for parameter '" + p.name_ + "'");
      }
      p.value_ = std::move(data);
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError("malformed parameter '" + p.name_ + "': " + ex.what());
    }
  }
}

void optimizer_step(ParamStore& store, double lr) {
  AdamConfig cfg;
  cfg.lr = lr;
  store.adam_step(cfg);
}

// ---- graph machinery --------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(std::vector<double> value, std::size_t rows, std::size_t cols, std::vector<Var> parents,
            std::function<void(Node&)> backward) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by a differentiable op");
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->rows = rows;
  node->cols = cols;
  if (g_grad_enabled) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

double Var::item() const {
  if (node_->value.size() != 1) throw ValidationError("item() on a non-scalar value");
  return node_->value[0];
}

void Var::backward() const {
  if (node_->value.size() != 1) throw ValidationError("backward() needs a scalar loss");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---- leaves -----------------------------------------------------------------

Var constant(std::vector<double> value, std::size_t rows, std::size_t cols) {
  require(value.size() == rows * cols, "constant size");
  return make_op(std::move(value), rows, cols, {}, nullptr);
}

Var scalar(double v) { return constant({v}, 1, 1); }

Var zeros(std::size_t rows, std::size_t cols) {
  return constant(std::vector<double>(rows * cols, 0.0), rows, cols);
}

Var leaf(const Param& p) {
  const Param* pp = &p;
  return make_op(std::vector<double>(p.value().begin(), p.value().end()), p.rows(), p.cols(), {},
                 [pp](Node& self) {
                   auto g = pp->grad();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                 });
}

Var row(const Param& table, std::size_t r) {
  if (r >= table.rows()) {
    throw ValidationError("row " + std::to_string(r) + " out of range for '" + table.name() + "' with " +
                          std::to_string(table.rows()) + " rows");
  }
  const Param* pp = &table;
  const double* src = table.row(r);
  return make_op(std::vector<double>(src, src + table.cols()), table.cols(), 1, {},
                 [pp, r](Node& self) {
                   auto g = pp->grad();
                   const std::size_t c = pp->cols();
                   for (std::size_t i = 0; i < c; ++i) g[r * c + i] += self.grad[i];
                 });
}

// ---- linear algebra ---------------------------------------------------------

Var affine(const Param& w, const Param* b, const Var& x) {
  const std::size_t out = w.rows();
  const std::size_t in = w.cols();
  require(x.size() == in, "affine input");
  require(b == nullptr || b->size() == out, "affine bias");
  std::vector<double> y(out, 0.0);
  const auto xv = x.value();
  const auto wv = w.value();
  for (std::size_t o = 0; o < out; ++o) {
    const double* wr = wv.data() + o * in;
    y[o] = (b ? b->value()[o] : 0.0) + dot4(wr, xv.data(), in);
  }
  const Param* wp = &w;
  return make_op(std::move(y), out, 1, {x}, [wp, b, out, in](Node& self) {
    Node& xn = *self.parents[0];
    auto wg = wp->grad();
    const auto wv = wp->value();
    for (std::size_t o = 0; o < out; ++o) {
      const double g = self.grad[o];
      if (g == 0.0) continue;
      double* wgr = wg.data() + o * in;
      const double* wr = wv.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        wgr[i] += g * xn.value[i];
        xn.grad[i] += g * wr[i];
      }
    }
    if (b) {
      auto bg = b->grad();
      for (std::size_t o = 0; o < out; ++o) bg[o] += self.grad[o];
    }
  });
}

Var matmul_rows(const Var& x, const Param& w) {
  const std::size_t n = x.rows();
  const std::size_t in = w.cols();
  const std::size_t out = w.rows();
  require(x.cols() == in, "matmul_rows inner dimension");
  std::vector<double> y(n * out, 0.0);
  const auto xv = x.value();
  const auto wv = w.value();
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = xv.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = wv.data() + o * in;
      y[r * out + o] = dot4(xr, wr, in);
    }
  }
  const Param* wp = &w;
  return make_op(std::move(y), n, out, {x}, [wp, n, in, out](Node& self) {
    Node& xn = *self.parents[0];
    auto wg = wp->grad();
    const auto wv = wp->value();
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = xn.value.data() + r * in;
      double* xg = xn.grad.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = self.grad[r * out + o];
        if (g == 0.0) continue;
        const double* wr = wv.data() + o * in;
        double* wgr = wg.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          wgr[i] += g * xr[i];
          xg[i] += g * wr[i];
        }
      }
    }
  });
}

Var dot(const Var& a, const Var& b) {
  require(a.size() == b.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return make_op({acc}, 1, 1, {a, b}, [](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    const double g = self.grad[0];
    for (std::size_t i = 0; i < an.value.size(); ++i) {
      an.grad[i] += g * bn.value[i];
      bn.grad[i] += g * an.value[i];
    }
  });
}

Var dot(const Param& w, const Var& x) {
  require(w.size() == x.size(), "dot(param)");
  double acc = 0.0;
  const auto wv = w.value();
  for (std::size_t i = 0; i < x.size(); ++i) acc += wv[i] * x[i];
  const Param* wp = &w;
  return make_op({acc}, 1, 1, {x}, [wp](Node& self) {
    Node& xn = *self.parents[0];
    const double g = self.grad[0];
    auto wg = wp->grad();
    const auto wv = wp->value();
    for (std::size_t i = 0; i < xn.value.size(); ++i) {
      wg[i] += g * xn.value[i];
      xn.grad[i] += g * wv[i];
    }
  });
}

// ---- elementwise / structural -----------------------------------------------

Var add(const Var& a, const Var& b) {
  require(a.size() == b.size(), "add");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  return make_op(std::move(y), a.rows(), a.cols(), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& g = self.parents[k]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.size() == b.size(), "sub");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  return make_op(std::move(y), a.rows(), a.cols(), {a, b}, [](Node& self) {
    auto& ga = self.parents[0]->grad;
    auto& gb = self.parents[1]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.size() == b.size(), "mul");
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return make_op(std::move(y), a.rows(), a.cols(), {a, b}, [](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      an.grad[i] += self.grad[i] * bn.value[i];
      bn.grad[i] += self.grad[i] * an.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * s;
  return make_op(std::move(y), a.rows(), a.cols(), {a}, [s](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_rows(const Var& x, const Var& v) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  require(v.size() == d, "add_rows");
  std::vector<double> y(x.value().begin(), x.value().end());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] += v[c];
  }
  return make_op(std::move(y), n, d, {x, v}, [n, d](Node& self) {
    auto& gx = self.parents[0]->grad;
    auto& gv = self.parents[1]->grad;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        gx[r * d + c] += self.grad[r * d + c];
        gv[c] += self.grad[r * d + c];
      }
    }
  });
}

Var concat(std::span<const Var> parts) {
  std::vector<double> y;
  std::size_t total = 0;
  for (const Var& p : parts) total += p.size();
  y.reserve(total);
  for (const Var& p : parts) y.insert(y.end(), p.value().begin(), p.value().end());
  return make_op(std::move(y), total, 1, std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += self.grad[off + i];
      off += p->grad.size();
    }
  });
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var slice(const Var& a, std::size_t offset, std::size_t length) {
  require(offset + length <= a.size(), "slice range");
  std::vector<double> y(a.value().begin() + static_cast<std::ptrdiff_t>(offset),
                        a.value().begin() + static_cast<std::ptrdiff_t>(offset + length));
  return make_op(std::move(y), length, 1, {a}, [offset](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
  });
}

namespace {

// Elementwise op whose derivative is expressed through input x and output y.
template <typename F, typename D>
Var unary(const Var& a, F f, D deriv) {
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(a[i]);
  return make_op(std::move(y), a.rows(), a.cols(), {a}, [deriv](Node& self) {
    Node& an = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      an.grad[i] += self.grad[i] * deriv(an.value[i], self.value[i]);
    }
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var tanh(const Var& a) {
  return unary(a, tanh_exp, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(const Var& a) {
  return unary(a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
               [](double x, double) { return stable_sigmoid(x); });
}

Var log(const Var& a) {
  for (double v : a.value()) {
    if (!(v > 0.0)) throw NumericError("log of a non-positive value");
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  return make_op({acc}, 1, 1, {a}, [](Node& self) {
    auto& g = self.parents[0]->grad;
    for (double& v : g) v += self.grad[0];
  });
}

Var add_n(std::span<const Var> scalars) {
  double acc = 0.0;
  for (const Var& s : scalars) acc += s.item();
  return make_op({acc}, 1, 1, std::vector<Var>(scalars.begin(), scalars.end()), [](Node& self) {
    for (auto& p : self.parents) p->grad[0] += self.grad[0];
  });
}

Var pick(const Var& a, std::size_t i) {
  require(i < a.size(), "pick index");
  return make_op({a[i]}, 1, 1, {a}, [i](Node& self) { self.parents[0]->grad[i] += self.grad[0]; });
}

// ---- probability ------------------------------------------------------------

namespace {

void softmax_inplace(double* v, std::size_t n, std::size_t stride) {
  double top = v[0];
  for (std::size_t i = 1; i < n; ++i) top = std::max(top, v[i * stride]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (v[i * stride] = std::exp(v[i * stride] - top));
  for (std::size_t i = 0; i < n; ++i) v[i * stride] /= total;
}

}  // namespace

Var softmax(const Var& scores) {
  if (scores.size() == 0) throw ValidationError("softmax of an empty vector");
  std::vector<double> y(scores.value().begin(), scores.value().end());
  softmax_inplace(y.data(), y.size(), 1);
  return make_op(std::move(y), scores.rows(), scores.cols(), {scores}, [](Node& self) {
    double inner = 0.0;
    for (std::size_t i = 0; i < self.value.size(); ++i) inner += self.grad[i] * self.value[i];
    auto& g = self.parents[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.value[i] * (self.grad[i] - inner);
  });
}

Var floor_renormalize(const Var& probs, double floor) {
  std::vector<double> m(probs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) total += (m[i] = std::max(probs[i], floor));
  std::vector<double> y(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) y[i] = m[i] / total;
  return make_op(std::move(y), probs.rows(), probs.cols(), {probs}, [floor, total](Node& self) {
    Node& pn = *self.parents[0];
    double inner = 0.0;
    for (std::size_t i = 0; i < self.value.size(); ++i) inner += self.grad[i] * self.value[i];
    for (std::size_t j = 0; j < self.value.size(); ++j) {
      if (pn.value[j] > floor) pn.grad[j] += (self.grad[j] - inner) / total;
    }
  });
}

// ---- attention --------------------------------------------------------------

namespace {

struct AttentionScores {
  std::vector<double> activations;  // tanh(key + query), k-major
  std::vector<double> weights;
};

AttentionScores attention_scores(std::span<const Var> keys, const Var& query, const Param& w) {
  const std::size_t d = w.size();
  require(query.size() == d, "attention query size");
  AttentionScores s;
  s.activations.resize(keys.size() * d);
  s.weights.resize(keys.size());
  const auto wv = w.value();
  for (std::size_t k = 0; k < keys.size(); ++k) {
    require(keys[k].size() == d, "attention key size");
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double t = tanh_exp(keys[k][c] + query[c]);
      s.activations[k * d + c] = t;
      acc += wv[c] * t;
    }
    s.weights[k] = acc;
  }
  softmax_inplace(s.weights.data(), s.weights.size(), 1);
  return s;
}

}  // namespace

std::vector<double> additive_attention_weights(std::span<const Var> keys, const Var& query, const Param& w) {
  if (keys.empty()) throw ValidationError("attention over an empty set");
  return attention_scores(keys, query, w).weights;
}

Var additive_attention(std::span<const Var> keys, const Var& query, const Param& w,
                       std::span<const Var> values) {
  if (keys.empty()) throw ValidationError("attention over an empty set");
  require(keys.size() == values.size(), "attention keys/values count");
  AttentionScores s = attention_scores(keys, query, w);
  const std::size_t dv = values[0].size();
  std::vector<double> out(dv, 0.0);
  for (std::size_t k = 0; k < values.size(); ++k) {
    require(values[k].size() == dv, "attention value size");
    for (std::size_t c = 0; c < dv; ++c) out[c] += s.weights[k] * values[k][c];
  }
  std::vector<Var> parents;
  parents.reserve(2 * keys.size() + 1);
  parents.insert(parents.end(), keys.begin(), keys.end());
  parents.push_back(query);
  parents.insert(parents.end(), values.begin(), values.end());
  const Param* wp = &w;
  const std::size_t nk = keys.size();
  return make_op(std::move(out), dv, 1, std::move(parents),
                 [wp, nk, dv, s = std::move(s)](Node& self) {
                   const std::size_t d = wp->size();
                   const auto wv = wp->value();
                   auto wg = wp->grad();
                   Node& qn = *self.parents[nk];
                   std::vector<double> g_alpha(nk, 0.0);
                   double inner = 0.0;
                   for (std::size_t k = 0; k < nk; ++k) {
                     Node& vn = *self.parents[nk + 1 + k];
                     double acc = 0.0;
                     for (std::size_t c = 0; c < dv; ++c) {
                       acc += vn.value[c] * self.grad[c];
                       vn.grad[c] += s.weights[k] * self.grad[c];
                     }
                     g_alpha[k] = acc;
                     inner += acc * s.weights[k];
                   }
                   for (std::size_t k = 0; k < nk; ++k) {
                     const double g_score = s.weights[k] * (g_alpha[k] - inner);
                     if (g_score == 0.0) continue;
                     Node& kn = *self.parents[k];
                     for (std::size_t c = 0; c < d; ++c) {
                       const double t = s.activations[k * d + c];
                       wg[c] += g_score * t;
                       const double g_pre = g_score * wv[c] * (1.0 - t * t);
                       kn.grad[c] += g_pre;
                       qn.grad[c] += g_pre;
                     }
                   }
                 });
}

Var gather_rows(const Var& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.cols();
  std::vector<double> y(idx.size() * d);
  for (std::size_t e = 0; e < idx.size(); ++e) {
    require(idx[e] < x.rows(), "gather_rows index");
    std::copy_n(x.value().begin() + static_cast<std::ptrdiff_t>(idx[e] * d), d,
                y.begin() + static_cast<std::ptrdiff_t>(e * d));
  }
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return make_op(std::move(y), idx.size(), d, {x}, [rows = std::move(rows), d](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t e = 0; e < rows.size(); ++e) {
      for (std::size_t c = 0; c < d; ++c) g[rows[e] * d + c] += self.grad[e * d + c];
    }
  });
}

Var head_dot(const Var& x, const Param& w, std::size_t heads) {
  const std::size_t width = x.cols();
  require(w.size() == width && heads > 0 && width % heads == 0, "head_dot widths");
  const std::size_t d = width / heads;
  const std::size_t n = x.rows();
  std::vector<double> y(n * heads, 0.0);
  const auto wv = w.value();
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t a = 0; a < heads; ++a) {
      double acc = 0.0;
      for (std::size_t c = a * d; c < (a + 1) * d; ++c) acc += wv[c] * x[e * width + c];
      y[e * heads + a] = acc;
    }
  }
  const Param* wp = &w;
  return make_op(std::move(y), n, heads, {x}, [wp, n, heads, d, width](Node& self) {
    Node& xn = *self.parents[0];
    auto wg = wp->grad();
    const auto wv = wp->value();
    for (std::size_t e = 0; e < n; ++e) {
      for (std::size_t a = 0; a < heads; ++a) {
        const double g = self.grad[e * heads + a];
        for (std::size_t c = a * d; c < (a + 1) * d; ++c) {
          wg[c] += g * xn.value[e * width + c];
          xn.grad[e * width + c] += g * wv[c];
        }
      }
    }
  });
}

Var segment_softmax(const Var& s, std::span<const std::size_t> offsets) {
  require(!offsets.empty() && offsets.back() == s.rows(), "segment offsets");
  const std::size_t heads = s.cols();
  std::vector<double> y(s.value().begin(), s.value().end());
  for (std::size_t seg = 0; seg + 1 < offsets.size(); ++seg) {
    const std::size_t lo = offsets[seg];
    const std::size_t n = offsets[seg + 1] - lo;
    if (n == 0) throw ValidationError("segment_softmax over an empty segment");
    for (std::size_t a = 0; a < heads; ++a) softmax_inplace(y.data() + lo * heads + a, n, heads);
  }
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  return make_op(std::move(y), s.rows(), heads, {s}, [offs = std::move(offs), heads](Node& self) {
    auto& g = self.parents[0]->grad;
    for (std::size_t seg = 0; seg + 1 < offs.size(); ++seg) {
      for (std::size_t a = 0; a < heads; ++a) {
        double inner = 0.0;
        for (std::size_t e = offs[seg]; e < offs[seg + 1]; ++e) {
          inner += self.grad[e * heads + a] * self.value[e * heads + a];
        }
        for (std::size_t e = offs[seg]; e < offs[seg + 1]; ++e) {
          g[e * heads + a] += self.value[e * heads + a] * (self.grad[e * heads + a] - inner);
        }
      }
    }
  });
}

Var segment_aggregate(const Var& alpha, const Var& v, std::span<const std::size_t> offsets,
                      std::size_t heads) {
  const std::size_t width = v.cols();
  require(alpha.rows() == v.rows() && alpha.cols() == heads, "segment_aggregate shapes");
  require(heads > 0 && width % heads == 0, "segment_aggregate heads");
  require(!offsets.empty() && offsets.back() == v.rows(), "segment offsets");
  const std::size_t hw = width / heads;
  const std::size_t segs = offsets.size() - 1;
  std::vector<double> y(segs * width, 0.0);
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t e = offsets[s]; e < offsets[s + 1]; ++e) {
      for (std::size_t c = 0; c < width; ++c) y[s * width + c] += alpha[e * heads + c / hw] * v[e * width + c];
    }
  }
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  return make_op(std::move(y), segs, width, {alpha, v},
                 [offs = std::move(offs), heads, width, hw](Node& self) {
                   Node& an = *self.parents[0];
                   Node& vn = *self.parents[1];
                   for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
                     for (std::size_t e = offs[s]; e < offs[s + 1]; ++e) {
                       for (std::size_t c = 0; c < width; ++c) {
                         const double g = self.grad[s * width + c];
                         an.grad[e * heads + c / hw] += g * vn.value[e * width + c];
                         vn.grad[e * width + c] += g * an.value[e * heads + c / hw];
                       }
                     }
                   }
                 });
}

// ---- recurrent cell ---------------------------------------------------------

GruParams GruParams::create(ParamStore& store, const std::string& prefix, std::size_t input,
                            std::size_t hidden, double init_scale, Rng& rng) {
  GruParams p;
  p.wz = &store.create_uniform(prefix + ".wz", hidden, input + hidden, init_scale, rng);
  p.bz = &store.create(prefix + ".bz", hidden, 1);
  p.wr = &store.create_uniform(prefix + ".wr", hidden, input + hidden, init_scale, rng);
  p.br = &store.create(prefix + ".br", hidden, 1);
  p.wh = &store.create_uniform(prefix + ".wh", hidden, input + hidden, init_scale, rng);
  p.bh = &store.create(prefix + ".bh", hidden, 1);
  return p;
}

GruParams GruParams::bind(const ParamStore& store, const std::string& prefix) {
  GruParams p;
  p.wz = &store.get(prefix + ".wz");
  p.bz = &store.get(prefix + ".bz");
  p.wr = &store.get(prefix + ".wr");
  p.br = &store.get(prefix + ".br");
  p.wh = &store.get(prefix + ".wh");
  p.bh = &store.get(prefix + ".bh");
  return p;
}

Var gru_step(const GruParams& p, const Var& x, const Var& h) {
  require(x.size() == p.input_size(), "gru input");
  require(h.size() == p.hidden_size(), "gru state");
  const Var xh = concat({x, h});
  const Var z = sigmoid(affine(*p.wz, p.bz, xh));
  const Var r = sigmoid(affine(*p.wr, p.br, xh));
  const Var candidate = tanh(affine(*p.wh, p.bh, concat({x, mul(r, h)})));
  return add(h, mul(z, sub(candidate, h)));
}

// ---- verification -----------------------------------------------------------

FiniteDiffReport finite_diff_check(ParamStore& store, const std::function<Var()>& loss,
                                   const FiniteDiffOptions& opts) {
  store.zero_grad();
  {
    Var l = loss();
    l.backward();
  }
  auto params = store.params();
  std::vector<std::vector<double>> analytic;
  for (Param* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());
  store.zero_grad();

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k]->size(); ++i) coords.emplace_back(k, i);
  }
  if (coords.size() > opts.max_coords) {
    Rng rng(opts.seed);
    for (std::size_t i = 0; i < opts.max_coords; ++i) {
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    }
    coords.resize(opts.max_coords);
  }

  FiniteDiffReport report;
  NoGradGuard no_grad;
  for (auto [k, i] : coords) {
    double& v = params[k]->value()[i];
    const double saved = v;
    v = saved + opts.eps;
    const double up = loss().item();
    v = saved - opts.eps;
    const double down = loss().item();
    v = saved;
    const double numeric = (up - down) / (2.0 * opts.eps);
    const double a = analytic[k][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.denom_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++report.coords_checked;
    if (rel > report.max_rel_error || report.worst_param.empty()) {
      report.max_rel_error = std::max(rel, report.max_rel_error);
      report.worst_param = params[k]->name() + "[" + std::to_string(i) + "]";
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace nasr::ad
