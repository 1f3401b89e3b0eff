// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,4,7] [--strict]
//
// Exits 0 once every selected criterion has run; --strict also fails on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nasr/grad_check.hpp"
#include "nasr/metrics.hpp"
#include "nasr/search.hpp"
#include "nasr/td_train.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace nasr;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::set<int> kMainLines{0, 5, 10, 15};

// ---- 1 ----

Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_prim = 0.0, worst_loss = 0.0;
  std::string worst_name;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& r : primitive_grad_checks(seed)) {
      ok = ok && r.passed() && r.tolerance <= 1e-5;
      if (r.max_rel_error > worst_prim) worst_prim = r.max_rel_error;
    }
    for (const auto& r : loss_grad_checks(seed)) {
      ok = ok && r.passed() && r.tolerance <= 1e-4;
      if (r.max_rel_error > worst_loss) {
        worst_loss = r.max_rel_error;
        worst_name = r.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 60.0, "10 seeds, worst primitive " + fmt("%.2e", worst_prim) + ", worst loss " +
                                 fmt("%.2e", worst_loss) + " (" + worst_name + "), " + fmt("%.1f s", secs)};
}

// ---- 2 ----

Verdict search_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0.0;
  std::size_t paths = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(8));
    const RoadNetwork net = testing::random_digraph(n, 0.3, rng);
    const Model m = Model::create(testing::tiny_config(), 2, net.size(), static_cast<std::uint64_t>(100 + trial));
    const auto s = static_cast<LocationId>(rng.below(net.size()));
    auto d = static_cast<LocationId>(rng.below(net.size() - 1));
    if (d >= s) ++d;
    const Query q{s, d, 1564963200 + static_cast<Timestamp>(rng.below(28 * 86400)), static_cast<UserId>(rng.below(2))};
    const ObservableCost oc(m, net, q.user, q.depart, HistoryView{});
    const auto oracle = testing::brute_force_min(net, oc, s, d);
    SearchConfig cfg;
    cfg.mode = HeuristicMode::kZero;
    cfg.max_expansions = 1000000;
    const SearchResult r = astar(net, m, q, UserHistoryBank{}, cfg);
    worst = std::max(worst, std::abs(r.cost() - oracle.best));
    paths += oracle.paths;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 60.0, "50 digraphs, " + std::to_string(paths) + " simple paths enumerated, max |diff| " +
                                            fmt("%.1e", worst) + ", " + fmt("%.1f s", secs)};
}

// ---- 3 ----

// Main line 0..n-1 where every main node but the last also has a dead-end
// spur; with zero output weights every step costs ln 2.
RoadNetwork spur_chain(int n) {
  std::vector<Point> pts;
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) pts.push_back({100.0 * i, 0.0});
  for (int i = 0; i + 1 < n; ++i) pts.push_back({100.0 * i, 100.0});
  for (int i = 0; i + 1 < n; ++i) {
    edges.push_back({i, i + 1, EdgeClass::kMain});
    edges.push_back({i, n + i, EdgeClass::kSide});
  }
  return RoadNetwork(pts, edges);
}

Verdict td_fixed_point() {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = 10;
  const RoadNetwork net = spur_chain(n);
  ModelConfig mc;
  mc.state_dim = 16;
  mc.gat_dim = 16;
  mc.mlp_hidden = 32;
  Model m = Model::create(mc, 1, net.size(), 3);
  testing::fill_param(m, "out.score", 0.0);
  Trajectory t;
  for (int i = 0; i < n; ++i) t.steps.push_back({i, 1564963200 + 12 * i});
  TrainConfig tc;
  tc.mode = TrainMode::kTD;
  tc.n = 5;
  tc.gamma = 0.9;
  ad::AdamConfig adam{0.01, 0.9, 0.999, 1e-8, 5.0};
  for (int it = 0; it < 3000; ++it) {
    if (it == 2000) adam.lr = 0.001;
    value_loss(m, net, t, UserHistoryBank{}, std::nullopt, tc).backward();
    m.store().adam_step(adam);
  }
  const double c = std::log(2.0);
  const ValueTargets vt = value_targets(m, net, t, UserHistoryBank{}, std::nullopt, tc);
  const ValueNet vn(m, net);
  double worst = 0.0;
  for (int i = 0; i + 1 < n; ++i) {
    const int k = n - 1 - i;
    const double want = c * (1 - std::pow(tc.gamma, k)) / (1 - tc.gamma);
    const double got = vn.estimate(vt.states[static_cast<std::size_t>(i)], i, n - 1).item();
    worst = std::max(worst, std::abs(got - want));
  }
  bool costs_ok = true;
  for (double x : vt.costs) costs_ok = costs_ok && std::abs(x - c) < 1e-12;
  const double secs = seconds_since(t0);
  return {costs_ok && worst <= 0.05 && secs < 120.0,
          "k = 1..9, max |h - c(1-g^k)/(1-g)| " + fmt("%.4f", worst) + ", " + fmt("%.1f s", secs)};
}

// ---- shared training runs ----

struct Run {
  RoadNetwork net;
  Dataset data;
  TrainResult result;
};

Run train_run(int w, std::size_t users, std::size_t per_user, std::uint64_t seed, const ModelConfig& mc,
              const TrainConfig& tc) {
  RoadNetwork net = grid_network(w, w, 100.0, kMainLines);
  Dataset data = split_dataset(synth_generate(net, users, per_user, seed), seed).data;
  TrainResult r = train(net, data, mc, tc);
  return {std::move(net), std::move(data), std::move(r)};
}

EvalReport eval(const Run& run, Split split, HeuristicMode mode) {
  SearchConfig sc;
  sc.mode = mode;
  sc.ed_lambda = run.result.ed_lambda;
  return evaluate(run.net, run.result.model, run.result.bank, run.data, run.data.indices(split), sc);
}

std::string buckets_str(const EvalReport& r) {
  std::string s;
  for (const auto& b : r.buckets)
    s += (s.empty() ? "" : " ") + to_string(b.bucket) + "=" + fmt("%.3f", b.f1) + "/" + std::to_string(b.n_queries);
  return s;
}

// ---- 4 ----

std::optional<Run> memo_run;

Verdict memorization() {
  const auto t0 = std::chrono::steady_clock::now();
  memo_run = train_run(20, 5, 40, 3, ModelConfig{}, TrainConfig{});
  const EvalReport r = eval(*memo_run, Split::kTrain, HeuristicMode::kValueNet);
  bool ok = !r.buckets.empty();
  for (const auto& b : r.buckets) ok = ok && b.f1 >= 0.90;
  const double secs = seconds_since(t0);
  return {ok && secs < 600.0, "train F1 per bucket " + buckets_str(r) + ", best epoch " +
                                  std::to_string(memo_run->result.best_epoch) + ", " + fmt("%.0f s", secs)};
}

// ---- 5 and 6 ----

constexpr std::uint64_t kSeeds[] = {1, 2, 3};
constexpr std::size_t kUsers = 10;
constexpr std::size_t kPerUser = 50;

struct SeedScores {
  std::map<std::string, double> f1;  // by configuration label
  std::map<Bucket, double> vn_bucket;
};

std::vector<SeedScores> ablation_scores;

void run_ablations(const std::function<void(const std::string&)>& log) {
  if (!ablation_scores.empty()) return;
  for (std::uint64_t seed : kSeeds) {
    SeedScores s;
    TrainConfig tc;
    tc.seed = seed;
    {
      const Run ba = train_run(20, kUsers, kPerUser, seed, ModelConfig{}, tc);
      const EvalReport vn = eval(ba, Split::kTest, HeuristicMode::kValueNet);
      s.f1["BA"] = s.f1["i-GAT"] = vn.mean_f1();
      for (const auto& b : vn.buckets) s.vn_bucket[b.bucket] = b.f1;
      s.f1["SP"] = eval(ba, Split::kTest, HeuristicMode::kSP).mean_f1();
      s.f1["ED"] = eval(ba, Split::kTest, HeuristicMode::kED).mean_f1();
      log("seed " + std::to_string(seed) + " BA/i-GAT " + fmt("%.3f", s.f1["BA"]) + " [" + buckets_str(vn) +
          "]  SP " + fmt("%.3f", s.f1["SP"]) + "  ED " + fmt("%.3f", s.f1["ED"]));
    }
    const auto variant = [&](const std::string& label, const std::function<void(ModelConfig&)>& tweak) {
      ModelConfig mc;
      tweak(mc);
      const Run r = train_run(20, kUsers, kPerUser, seed, mc, tc);
      s.f1[label] = eval(r, Split::kTest, HeuristicMode::kValueNet).mean_f1();
      log("seed " + std::to_string(seed) + " " + label + " " + fmt("%.3f", s.f1[label]));
    };
    variant("IA", [](ModelConfig& c) { c.attention = AttentionMode::kIntra; });
    variant("NA", [](ModelConfig& c) { c.attention = AttentionMode::kNone; });
    variant("BA-S", [](ModelConfig& c) { c.value_uses_state = false; });
    variant("o-GAT", [](ModelConfig& c) { c.gat_variant = GatVariant::kOriginal; });
    ablation_scores.push_back(std::move(s));
  }
}

double mean_of(const std::string& label) {
  double s = 0.0;
  for (const auto& x : ablation_scores) s += x.f1.at(label);
  return s / static_cast<double>(ablation_scores.size());
}

Verdict generalization(const std::function<void(const std::string&)>& log) {
  run_ablations(log);
  const double vn = mean_of("i-GAT"), ed = mean_of("ED");
  std::map<Bucket, double> per_bucket;
  std::map<Bucket, int> count;
  for (const auto& s : ablation_scores)
    for (auto [b, f] : s.vn_bucket) {
      per_bucket[b] += f;
      ++count[b];
    }
  std::string trend;
  bool monotone = true;
  double prev = 2.0;
  for (Bucket b : {Bucket::kShort, Bucket::kMedium, Bucket::kLong}) {
    if (!count[b]) continue;
    const double f = per_bucket[b] / count[b];
    monotone = monotone && f <= prev + 0.01;
    prev = f;
    trend += (trend.empty() ? "" : " -> ") + to_string(b) + " " + fmt("%.3f", f);
  }
  return {vn > ed && monotone, "(a) value-net " + fmt("%.3f", vn) + " vs ED " + fmt("%.3f", ed) + "; (b) " + trend};
}

Verdict ablations(const std::function<void(const std::string&)>& log) {
  run_ablations(log);
  const double ba = mean_of("BA"), ia = mean_of("IA"), na = mean_of("NA"), bas = mean_of("BA-S");
  const double ig = mean_of("i-GAT"), og = mean_of("o-GAT"), sp = mean_of("SP"), ed = mean_of("ED");
  const double tol = 0.01;
  const bool attention = ba >= ia - tol && ia >= na - tol && ba >= bas - tol;
  const bool heuristic = ig >= og - tol && og >= sp - tol && sp >= ed - tol;
  return {attention && heuristic, "BA " + fmt("%.3f", ba) + " IA " + fmt("%.3f", ia) + " NA " + fmt("%.3f", na) +
                                      " BA-S " + fmt("%.3f", bas) + "; i-GAT " + fmt("%.3f", ig) + " o-GAT " +
                                      fmt("%.3f", og) + " SP " + fmt("%.3f", sp) + " ED " + fmt("%.3f", ed)};
}

// ---- 7 ----

std::size_t edit_oracle(const std::vector<LocationId>& a, const std::vector<LocationId>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
  return d[a.size()][b.size()];
}

Verdict metric_oracles() {
  Rng rng(77);
  std::size_t mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<LocationId> a(2 + rng.below(20)), b(2 + rng.below(20));
    for (auto& x : a) x = static_cast<LocationId>(rng.below(8));
    for (auto& x : b) x = static_cast<LocationId>(rng.below(8));
    b.front() = a.front();
    b.back() = a.back();
    const std::vector<LocationId> ai(a.begin() + 1, a.end() - 1), bi(b.begin() + 1, b.end() - 1);
    mismatches += edit_distance(a, b) == edit_oracle(ai, bi) ? 0 : 1;
  }
  const std::vector<LocationId> actual{0, 1, 2, 3, 9}, predicted{0, 1, 4, 9};
  const Prf p = prf(actual, predicted);
  const bool prf_ok = std::abs(p.precision - 0.5) < 1e-15 && std::abs(p.recall - 1.0 / 3) < 1e-15 &&
                      std::abs(p.f1 - 0.4) < 1e-15 && prf(actual, actual).f1 == 1.0 &&
                      prf(std::vector<LocationId>{0, 9}, std::vector<LocationId>{0, 9}).f1 == 1.0 &&
                      prf(std::vector<LocationId>{0, 1, 9}, std::vector<LocationId>{0, 2, 9}).f1 == 0.0;

  if (!memo_run) memo_run = train_run(20, 5, 40, 3, ModelConfig{}, TrainConfig{});
  std::size_t dists = 0;
  double worst = 0.0;
  set_transition_probe([&](std::span<const double> p) {
    double s = 0.0;
    for (double x : p) s += x;
    worst = std::max(worst, std::abs(s - 1.0));
    ++dists;
  });
  const EvalReport r = eval(*memo_run, Split::kTest, HeuristicMode::kValueNet);
  set_transition_probe({});
  return {mismatches == 0 && prf_ok && dists > 0 && worst <= 1e-9,
          "edit distance mismatches " + std::to_string(mismatches) + "/100, P/R/F1 hand cases " +
              (prf_ok ? "ok" : "wrong") + ", " + std::to_string(dists) + " distributions over " +
              std::to_string(r.queries.size()) + " queries, max |sum - 1| " + fmt("%.1e", worst)};
}

// ---- 8 ----

int shell(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "nasr_acceptance_determinism";
  fs::remove_all(root);
  const std::string cli = NASR_CLI;
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    int rc = shell(cli + " gen-data --grid 10x10 --users 3 --per-user 20 --seed 5 --out " + (d / "data").string());
    rc = rc ? rc : shell(cli + " train --data " + (d / "data").string() + " --seed 5 --pretrain-epochs 8 --joint-epochs 4 --out " + (d / "m.ckpt").string());
    rc = rc ? rc : shell(cli + " evaluate --ckpt " + (d / "m.ckpt").string() + " --data " + (d / "data").string() + " --out " + (d / "report.csv").string());
    if (rc) return {false, std::string("run ") + run + " exited with " + std::to_string(rc)};
  }
  bool ok = true;
  std::string detail;
  for (const char* f : {"data/network.json", "data/trajectories.jsonl", "m.ckpt", "m.train.csv", "report.csv"}) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail += std::string(detail.empty() ? "" : ", ") + f + (same ? " identical" : " DIFFERENT");
  }
  fs::remove_all(root);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string only;
  bool strict = false;
  app.add_option("--only", only, "Comma-separated criterion numbers");
  app.add_flag("--strict", strict, "Exit 1 if any criterion fails");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  std::istringstream in(only);
  for (std::string tok; std::getline(in, tok, ',');)
    if (!tok.empty()) selected.insert(std::stoi(tok));

  const auto log = [](const std::string& s) { std::printf("    %s\n", s.c_str()), std::fflush(stdout); };
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradients},
      {"search exactness", search_exactness},
      {"TD fixed point", td_fixed_point},
      {"memorization capacity", memorization},
      {"generalization trend", [&] { return generalization(log); }},
      {"ablation direction", [&] { return ablations(log); }},
      {"metric oracles", metric_oracles},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::printf("criterion %d %s  %s: %s\n", id, v.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return strict && failed ? 1 : 0;
}
