// nasr: generate data, train, recommend routes, evaluate, check gradients.
//
// Exit codes: 0 ok, 2 invalid input, 3 search failure, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nasr/checkpoint.hpp"
#include "nasr/errors.hpp"
#include "nasr/grad_check.hpp"
#include "nasr/metrics.hpp"
#include "nasr/search.hpp"
#include "nasr/td_train.hpp"
#include "nasr/trajectory.hpp"

namespace fs = std::filesystem;
using namespace nasr;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitSearch = 3;
constexpr int kExitNumeric = 4;

std::pair<int, int> parse_grid(const std::string& s) {
  int w = 0, h = 0;
  char x = 0, extra = 0;
  std::istringstream in(s);
  if (!(in >> w >> x >> h) || (x != 'x' && x != 'X') || (in >> extra))
    throw ValidationError("--grid expects WxH, got '" + s + "'");
  return {w, h};
}

Query parse_query(const std::string& s) {
  Query q;
  char c1 = 0, c2 = 0, c3 = 0, extra = 0;
  std::istringstream in(s);
  if (!(in >> q.source >> c1 >> q.destination >> c2 >> q.depart >> c3 >> q.user) || c1 != ',' || c2 != ',' ||
      c3 != ',' || (in >> extra))
    throw ValidationError("--query expects src,dst,depart,user, got '" + s + "'");
  return q;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SearchConfig search;
};

RunConfig read_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("cannot parse config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "model") rc.model = model_config_from_json(it.value());
    else if (it.key() == "train") rc.train = train_config_from_json(it.value());
    else if (it.key() == "search") rc.search = search_config_from_json(it.value());
    else throw ValidationError("unknown config key '" + it.key() + "'; valid keys: model, train, search");
  }
  return rc;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

int cmd_gen_data(const std::string& grid, double spacing, std::size_t users, std::size_t per_user,
                 std::uint64_t seed, const fs::path& out) {
  const auto [w, h] = parse_grid(grid);
  std::set<int> main_lines;
  for (int i = 0; i < std::max(w, h); i += 5) main_lines.insert(i);
  const RoadNetwork net = grid_network(w, h, spacing, main_lines);
  SplitResult split = split_dataset(synth_generate(net, users, per_user, seed), seed);
  fs::create_directories(out);
  save_network(net, out / "network.json");
  save_dataset(split.data, out / "trajectories.jsonl");
  std::cout << "wrote " << net.size() << " locations, " << split.data.trajectories.size() << " trajectories ("
            << split.data.indices(Split::kTrain).size() << " train, " << split.data.indices(Split::kVal).size()
            << " val, " << split.data.indices(Split::kTest).size() << " test)";
  if (split.dropped_users > 0) std::cout << ", dropped " << split.dropped_users << " users";
  std::cout << " to " << out.string() << '\n';
  return 0;
}

fs::path log_path_for(const fs::path& ckpt) {
  fs::path p = ckpt;
  p.replace_extension(".train.csv");
  return p;
}

int cmd_train(const fs::path& data_dir, const std::string& config, const fs::path& out, const CLI::App& sub,
              std::uint64_t seed, std::size_t pretrain, std::size_t joint) {
  RunConfig rc = read_config(config);
  if (sub.count("--seed")) rc.train.seed = seed;
  if (sub.count("--pretrain-epochs")) rc.train.pretrain_epochs = pretrain;
  if (sub.count("--joint-epochs")) rc.train.joint_epochs = joint;
  rc.train.validate();
  const RoadNetwork net = load_network(data_dir / "network.json");
  const Dataset data = load_dataset(data_dir / "trajectories.jsonl", net);
  TrainResult r = train(net, data, rc.model, rc.train, [](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " loss1 " << e.loss1;
    if (e.joint) std::cerr << " loss2 " << e.loss2 << " val_f1 " << e.val_f1;
    std::cerr << '\n';
  });
  save_checkpoint(out, r.model, r.bank, r.ed_lambda, rc.train, net);
  std::ostringstream log;
  write_training_log(log, r.log);
  write_text(log_path_for(out), log.str());
  std::cout << "trained " << r.log.size() << " epochs, best epoch " << r.best_epoch << ", ed_lambda " << r.ed_lambda
            << "; wrote " << out.string() << " and " << log_path_for(out).string() << '\n';
  return 0;
}

int cmd_recommend(const fs::path& ckpt_path, const std::string& query, const std::string& mode,
                  std::size_t max_expansions, const fs::path& out) {
  const Query q = parse_query(query);
  SearchConfig sc;
  sc.mode = heuristic_mode_from_string(mode);
  sc.max_expansions = max_expansions;
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  sc.ed_lambda = ckpt.ed_lambda;
  const RouteResult r = recommend(ckpt.network, ckpt.model, q, ckpt.bank, sc);
  if (!out.empty()) write_text(out, route_geojson(ckpt.network, r).dump(2) + "\n");
  std::cout << "route";
  for (LocationId l : r.route) std::cout << ' ' << l;
  std::cout << "\ncost " << r.trace.back().g << ", expansions " << r.diagnostics.expansions << ", pushes "
            << r.diagnostics.pushes << ", peak frontier " << r.diagnostics.peak_frontier << '\n';
  return 0;
}

int cmd_evaluate(const fs::path& ckpt_path, const fs::path& data_dir, const std::string& mode, const std::string& split,
                 std::size_t max_expansions, const fs::path& out) {
  SearchConfig sc;
  sc.mode = heuristic_mode_from_string(mode);
  sc.max_expansions = max_expansions;
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  sc.ed_lambda = ckpt.ed_lambda;
  const Dataset data = load_dataset(data_dir / "trajectories.jsonl", ckpt.network);
  const auto idx = data.indices(split_from_string(split));
  const EvalReport rep = evaluate(ckpt.network, ckpt.model, ckpt.bank, data, idx, sc);
  std::ostringstream csv;
  write_report_csv(csv, rep);
  if (!out.empty()) write_text(out, csv.str());
  std::cout << csv.str();
  return 0;
}

int cmd_grad_check(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_grad_checks(seed)) {
    std::printf("%-26s %-4s max_rel_error %.3e (tol %.0e, %zu coords, worst %s)\n", r.name.c_str(),
                r.passed() ? "ok" : "FAIL", r.max_rel_error, r.tolerance, r.coords, r.worst.c_str());
    ok = ok && r.passed();
  }
  return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized route recommendation with learned A* costs"};
  app.require_subcommand(1);

  std::string grid = "20x20", config, query, mode = "value-net", split = "test";
  double spacing = 100.0;
  std::size_t users = 10, per_user = 50, max_expansions = 10000, pretrain = 0, joint = 0;
  std::uint64_t seed = 0;
  std::string out, data, ckpt;

  auto* gen = app.add_subcommand("gen-data", "Synthesize a grid network and trajectories");
  gen->add_option("--grid", grid, "Grid size WxH")->capture_default_str();
  gen->add_option("--spacing", spacing, "Grid spacing in meters")->capture_default_str();
  gen->add_option("--users", users, "Number of users")->capture_default_str();
  gen->add_option("--per-user", per_user, "Trajectories per user")->capture_default_str();
  gen->add_option("--seed", seed, "Random seed")->capture_default_str();
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train both cost components");
  tr->add_option("--data", data, "Directory with network.json and trajectories.jsonl")->required();
  tr->add_option("--config", config, "JSON config with model/train/search sections");
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--seed", seed, "Override train.seed");
  tr->add_option("--pretrain-epochs", pretrain, "Override train.pretrain_epochs");
  tr->add_option("--joint-epochs", joint, "Override train.joint_epochs");

  auto* rec = app.add_subcommand("recommend", "Search a route for one query");
  rec->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  rec->add_option("--query", query, "src,dst,depart,user")->required();
  rec->add_option("--mode", mode, "value-net, o-GAT, SP, ED or zero")->capture_default_str();
  rec->add_option("--max-expansions", max_expansions, "Search budget")->capture_default_str();
  rec->add_option("--out", out, "GeoJSON output path");

  auto* ev = app.add_subcommand("evaluate", "Score searched routes against held-out trajectories");
  ev->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  ev->add_option("--data", data, "Directory with trajectories.jsonl")->required();
  ev->add_option("--mode", mode, "value-net, o-GAT, SP, ED or zero")->capture_default_str();
  ev->add_option("--split", split, "train, val or test")->capture_default_str();
  ev->add_option("--max-expansions", max_expansions, "Search budget")->capture_default_str();
  ev->add_option("--out", out, "CSV report path");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  gc->add_option("--seed", seed, "Random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*gen) return cmd_gen_data(grid, spacing, users, per_user, seed, out);
    if (*tr) return cmd_train(data, config, out, *tr, seed, pretrain, joint);
    if (*rec) return cmd_recommend(ckpt, query, mode, max_expansions, out);
    if (*ev) return cmd_evaluate(ckpt, data, mode, split, max_expansions, out);
    if (*gc) return cmd_grad_check(seed);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const SearchError& e) {
    std::cerr << "search failed: " << e.what() << '\n';
    return kExitSearch;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return 0;
}
