#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "sali/harness.hpp"

namespace {

using namespace sali;

harness::RunConfig load_config(const std::string& path) {
  if (path.empty()) return harness::default_run_config();
  return harness::run_config_from_json(io::json::parse(io::read_text_file(path)));
}

int cmd_gen_worlds(const std::string& out, uint64_t seed, int count,
                   const std::string& config_path) {
  harness::RunConfig cfg = load_config(config_path);
  for (int i = 0; i < count; ++i) {
    world::WorldConfig wc = cfg.world;
    wc.seed = seed + static_cast<uint64_t>(i);
    world::WorldGraph w = world::generate_world(wc);
    w.validate();
    io::save_world(out + "/world_" + std::to_string(wc.seed) + ".json", w);
  }
  std::cout << "wrote " << count << " worlds to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, uint64_t seed,
              bool has_seed) {
  harness::RunConfig cfg = load_config(config_path);
  if (has_seed) cfg.seed = seed;
  nn::ParamStore params;
  auto t0 = std::chrono::steady_clock::now();
  harness::TrainResult tr = harness::train_all(cfg, params);
  double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  io::json ckpt_cfg = harness::run_config_to_json(cfg);
  std::filesystem::create_directories(out);
  io::save_checkpoint(out + "/checkpoint.bin", params, ckpt_cfg);
  io::json log;
  log["epoch_losses"] = tr.epoch_losses;
  log["diverged"] = tr.diverged;
  log["seconds"] = secs;
  io::write_text_file(out + "/train_log.json", log.dump(1) + "\n");
  std::cout << "training " << (tr.diverged ? "DIVERGED (rolled back)" : "done") << " in "
            << secs << " s; epochs=" << tr.epoch_losses.size();
  if (!tr.epoch_losses.empty())
    std::cout << " first_loss=" << tr.epoch_losses.front()
              << " last_loss=" << tr.epoch_losses.back();
  std::cout << "\ncheckpoint: " << out << "/checkpoint.bin\n";
  return tr.diverged ? 3 : 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& out, uint64_t seed, bool has_seed, int jobs,
             bool has_jobs) {
  harness::RunConfig cfg = load_config(config_path);
  if (has_seed) cfg.seed = seed;
  if (has_jobs) cfg.jobs = jobs;
  if (!out.empty()) cfg.out_dir = out;
  if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
  nn::ParamStore params;
  if (!cfg.checkpoint.empty()) {
    io::load_checkpoint(cfg.checkpoint, params);
  } else {
    std::cout << "note: no checkpoint given, evaluating a freshly seeded policy\n";
    harness::init_all_params(cfg, params);
  }
  harness::EvalResult ev = harness::run_eval(cfg, params);
  std::printf("episodes=%d NE=%.3f TL=%.3f SR=%.1f%% OSR=%.1f%% SPL=%.3f\n",
              ev.report.count, ev.report.mean.ne, ev.report.mean.tl, ev.report.mean.sr,
              ev.report.mean.osr, ev.report.mean.spl);
  if (!cfg.out_dir.empty()) std::cout << "reports in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_ablate(const std::string& suite, const std::string& config_path,
               const std::string& checkpoint, const std::string& out, uint64_t seed,
               bool has_seed, int jobs, bool has_jobs) {
  harness::RunConfig cfg = load_config(config_path);
  if (has_seed) cfg.seed = seed;
  if (has_jobs) cfg.jobs = jobs;
  if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
  if (cfg.checkpoint.empty())
    fail(ErrorKind::Config, "ablate requires a trained checkpoint (--checkpoint)");
  nn::ParamStore params;
  io::load_checkpoint(cfg.checkpoint, params);
  harness::AblationReport rep = harness::run_ablation(suite, cfg, params);
  io::json j = harness::ablation_to_json(rep);
  std::cout << j.dump(1) << "\n";
  if (!out.empty()) {
    io::write_text_file(out + "/ablation_" + suite + ".json", j.dump(1) + "\n");
    std::string csv = "label,NE,TL,SR,OSR,SPL,seconds\n";
    for (const auto& r : rep.rows) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f\n",
                    r.label.c_str(), r.report.mean.ne, r.report.mean.tl,
                    r.report.mean.sr, r.report.mean.osr, r.report.mean.spl, r.seconds);
      csv += buf;
    }
    io::write_text_file(out + "/ablation_" + suite + ".csv", csv);
  }
  return 0;
}

// Small but complete policy on a 5-node map with an imagination node.
int cmd_gradcheck(bool full, double eps) {
  world::WorldConfig wc;
  wc.rooms = 2;
  wc.nodes_per_room = 3;
  wc.object_vocab = 6;
  wc.room_vocab = 3;
  wc.appearance_dim = 8;
  wc.geometry_dim = 4;
  wc.seed = 11;
  world::WorldGraph w = world::generate_world(wc);
  world::Vocab vocab(wc.room_vocab, wc.object_vocab);

  memory::MemoryMap map({4, 0.9, 1.0});
  Rng rng(5);
  map.integrate_observation(world::observe(w, 0, rng), 1);
  // One imagined node hanging off the first navigable neighbor.
  for (int id : map.ids()) {
    if (map.node(id).kind != memory::NodeKind::Navigable) continue;
    VecXd f = map.node(id).feature;
    for (int i = 0; i < f.size(); ++i) f[i] += 0.05 * (i % 3);
    map.add_imagination_node(map.node(id).position + Vec3(0.4, 0.3, 0.0), f, id);
    break;
  }

  policy::PolicyConfig pcfg;
  pcfg.d_model = full ? 64 : 16;
  pcfg.heads = full ? 4 : 2;
  pcfg.d_ff = full ? 128 : 32;
  pcfg.vocab_size = vocab.size();
  pcfg.feature_dim = wc.appearance_dim + wc.geometry_dim + wc.object_vocab;
  nn::ParamStore params;
  Rng prng(99);
  policy::init_policy_params(params, pcfg, prng);

  std::vector<int> tokens = {vocab.function_token("walk"), vocab.function_token("into"),
                             vocab.room_token(1), vocab.function_token("stop")};
  policy::MapView view = policy::build_map_view(map, 1);
  nn::LossFn loss_fn = policy::make_sap_loss_fn(params, pcfg, view, tokens, vocab, 1);

  auto res = nn::grad_check(params, loss_fn, eps);
  std::printf("parameters: %zu scalars over %zu tensors\n", params.scalar_count(),
              params.tensors().size());
  std::printf("max relative error: %.3e (tensor %s [%d,%d])\n", res.max_rel_error,
              res.worst_tensor.c_str(), res.worst_row, res.worst_col);

  // Mutation check: a corrupted analytic gradient must be flagged.
  auto analytic = nn::analytic_grads(params, loss_fn);
  auto numeric = nn::numeric_grads(params, loss_fn, eps);
  auto corrupted = analytic;
  corrupted.at("policy.score_r.f2.w")(0, 0) += 0.25;
  double mutated = nn::max_rel_error(corrupted, numeric).max_rel_error;
  std::printf("corrupted-gradient check: %.3e (must exceed 1e-2)\n", mutated);

  bool ok = res.max_rel_error < 1e-4 && mutated > 1e-2;
  std::printf("%s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 2;
}

int cmd_roundtrip(int trials, const std::string& out) {
  Rng rng(2024);
  int recovered_all = 0;
  bool dumped = false;
  for (int trial = 0; trial < trials; ++trial) {
    int k = 1 + static_cast<int>(rng.below(4));
    std::vector<std::pair<int, int>> bins;
    int guard = 0;
    while (static_cast<int>(bins.size()) < k && guard++ < 1000) {
      int a = static_cast<int>(rng.below(imagine::Heatmap::kAngularBins));
      int r = static_cast<int>(rng.below(imagine::Heatmap::kRadialBins));
      bool ok = true;
      for (auto [a2, r2] : bins) {
        int da = std::abs(a - a2);
        da = std::min(da, imagine::Heatmap::kAngularBins - da);
        if (da < 2 || std::abs(r - r2) < 2) ok = false;
      }
      if (ok) bins.push_back({a, r});
    }
    std::vector<imagine::PolarWaypoint> nbs;
    for (auto [a, r] : bins) {
      imagine::PolarWaypoint pw;
      pw.heading = (a + 0.2 + 0.6 * rng.uniform()) * 3.0 * M_PI / 180.0;
      pw.distance = (r + 0.2 + 0.6 * rng.uniform()) * imagine::Heatmap::kRadialBin;
      nbs.push_back(pw);
    }
    imagine::Heatmap m = imagine::heatmap_gt(nbs);
    auto peaks = imagine::nms_peaks(m, static_cast<int>(nbs.size()));
    bool all = peaks.size() == nbs.size();
    for (const auto& nb : nbs) {
      bool matched = false;
      for (const auto& p : peaks) {
        int da = std::abs(static_cast<int>(std::floor(wrap_angle(nb.heading) * 180.0 /
                                                      M_PI / 3.0)) -
                          static_cast<int>(std::floor(p.heading * 180.0 / M_PI / 3.0)));
        da = std::min(da, imagine::Heatmap::kAngularBins - da);
        int dr = std::abs(static_cast<int>(std::floor(nb.distance / 0.25)) -
                          static_cast<int>(std::floor(p.distance / 0.25)));
        if (da <= 1 && dr <= 1) matched = true;
      }
      if (!matched) all = false;
    }
    recovered_all += all ? 1 : 0;
    if (!out.empty() && !dumped) {
      std::string csv;
      for (int a = 0; a < imagine::Heatmap::kAngularBins; ++a) {
        for (int r = 0; r < imagine::Heatmap::kRadialBins; ++r) {
          csv += std::to_string(m.grid(a, r));
          csv += (r + 1 < imagine::Heatmap::kRadialBins) ? "," : "\n";
        }
      }
      io::write_text_file(out + "/heatmap.csv", csv);
      dumped = true;
    }
  }
  double rate = 100.0 * recovered_all / trials;
  std::printf("round-trip recovery: %d/%d trials (%.2f%%)\n", recovered_all, trials,
              rate);
  return recovered_all == trials ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sali: imagination-memory navigation engine"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, suite;
  uint64_t seed = 0;
  int jobs = 1, count = 10, trials = 1000;
  bool full = false;
  double eps = 1e-5;

  auto* gen = app.add_subcommand("gen-worlds", "generate synthetic worlds");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "base world seed");
  gen->add_option("--count", count, "number of worlds");
  gen->add_option("--config", config_path, "run config JSON");

  auto* train = app.add_subcommand("train", "train aux models and the SAP policy");
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--out", out_dir, "output directory")->required();
  auto* train_seed = train->add_option("--seed", seed, "base seed");

  auto* eval = app.add_subcommand("eval", "evaluate on the benchmark block");
  eval->add_option("--config", config_path, "run config JSON");
  eval->add_option("--checkpoint", checkpoint, "trained checkpoint");
  eval->add_option("--out", out_dir, "output directory");
  auto* eval_seed = eval->add_option("--seed", seed, "base seed");
  auto* eval_jobs = eval->add_option("--jobs", jobs, "worker count");

  auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
  ablate->add_option("suite", suite,
                     "memory_type|imagination_range|auxiliary_models|"
                     "decision_weight|instruction_split")
      ->required();
  ablate->add_option("--config", config_path, "run config JSON");
  ablate->add_option("--checkpoint", checkpoint, "trained checkpoint");
  ablate->add_option("--out", out_dir, "output directory");
  auto* ab_seed = ablate->add_option("--seed", seed, "base seed");
  auto* ab_jobs = ablate->add_option("--jobs", jobs, "worker count");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the policy");
  gc->add_flag("--full", full, "use the full d_model=64 policy");
  gc->add_option("--eps", eps, "finite difference step");

  auto* rt = app.add_subcommand("roundtrip-waypoints",
                                "heatmap -> NMS round-trip recovery check");
  rt->add_option("--trials", trials, "number of random neighbor sets");
  rt->add_option("--out", out_dir, "directory for a sample heatmap CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_worlds(out_dir, seed, count, config_path);
    if (train->parsed())
      return cmd_train(config_path, out_dir, seed, train_seed->count() > 0);
    if (eval->parsed())
      return cmd_eval(config_path, checkpoint, out_dir, seed, eval_seed->count() > 0,
                      jobs, eval_jobs->count() > 0);
    if (ablate->parsed())
      return cmd_ablate(suite, config_path, checkpoint, out_dir, seed,
                        ab_seed->count() > 0, jobs, ab_jobs->count() > 0);
    if (gc->parsed()) return cmd_gradcheck(full, eps);
    if (rt->parsed()) return cmd_roundtrip(trials, out_dir);
  } catch (const sali::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == sali::ErrorKind::Training ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
