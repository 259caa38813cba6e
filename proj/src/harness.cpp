#include "sali/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <memory>
#include <thread>

namespace sali::harness {

using io::json;

policy::PolicyConfig policy_config_for(const RunConfig& cfg) {
  policy::PolicyConfig p = cfg.policy;
  world::Vocab vocab(cfg.world.room_vocab, cfg.world.object_vocab);
  p.vocab_size = vocab.size();
  p.feature_dim =
      cfg.world.appearance_dim + cfg.world.geometry_dim + cfg.world.object_vocab;
  p.separate_imagination_encoder = cfg.agent.separate_imagination_encoder;
  return p;
}

imagine::ChannelDims channel_dims_for(const world::WorldConfig& wc) {
  imagine::ChannelDims d;
  d.appearance = wc.appearance_dim;
  d.geometry = wc.geometry_dim;
  d.semantic = wc.object_vocab;
  return d;
}

void init_all_params(const RunConfig& cfg, nn::ParamStore& params) {
  Rng rng(cfg.seed ^ 0x1A171BEEFull);
  policy::init_policy_params(params, policy_config_for(cfg), rng);
  imagine::ChannelDims dims = channel_dims_for(cfg.world);
  imagine::init_waypoint_params(params, dims, rng);
  imagine::init_room_params(params, dims, cfg.world.room_vocab, rng);
  if (cfg.agent.imaginer == imagine::ImaginerKind::Learned)
    imagine::LearnedImaginer::init_params(params, dims, cfg.agent.history_len, rng);
}

namespace {

std::unique_ptr<imagine::Imaginer> make_imaginer(const AgentConfig& acfg,
                                                 const world::WorldGraph& w,
                                                 nn::ParamStore& params,
                                                 const imagine::ChannelDims& dims) {
  switch (acfg.imaginer) {
    case imagine::ImaginerKind::Oracle:
      return std::make_unique<imagine::OracleImaginer>(w, acfg.imaginer_noise);
    case imagine::ImaginerKind::Learned:
      return std::make_unique<imagine::LearnedImaginer>(params, dims, acfg.history_len);
    default:
      return std::make_unique<imagine::NullImaginer>();
  }
}

int count_room_legs(const world::WorldGraph& w, const std::vector<int>& path) {
  int legs = 0;
  int prev = w.node(path.front()).room_type;
  for (size_t i = 1; i < path.size(); ++i) {
    int rt = w.node(path[i]).room_type;
    if (rt != prev) {
      ++legs;
      prev = rt;
    }
  }
  return legs;
}

double world_edge_length(const world::WorldGraph& w, int a, int b) {
  for (const auto& [nb, len] : w.neighbors(a))
    if (nb == b) return len;
  fail(ErrorKind::Lookup, "not a world edge");
}

json metrics_to_json(const metrics::MetricsSummary& m) {
  return json{{"NE", m.ne}, {"TL", m.tl}, {"SR", m.sr}, {"OSR", m.osr}, {"SPL", m.spl}};
}

std::string csv_row(const std::string& id, const std::string& label,
                    const metrics::MetricsSummary& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f", id.c_str(),
                label.c_str(), m.ne, m.tl, m.sr, m.osr, m.spl);
  return buf;
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  if (j.contains("world")) {
    const json& w = j["world"];
    cfg.world.rooms = w.value("rooms", cfg.world.rooms);
    cfg.world.nodes_per_room = w.value("nodes_per_room", cfg.world.nodes_per_room);
    cfg.world.object_vocab = w.value("object_vocab", cfg.world.object_vocab);
    cfg.world.room_vocab = w.value("room_vocab", cfg.world.room_vocab);
    cfg.world.appearance_dim = w.value("appearance_dim", cfg.world.appearance_dim);
    cfg.world.geometry_dim = w.value("geometry_dim", cfg.world.geometry_dim);
    cfg.world.stub_noise = w.value("stub_noise", cfg.world.stub_noise);
    cfg.world.seed = w.value("seed", cfg.world.seed);
  }
  cfg.world_path = j.value("world_path", cfg.world_path);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.checkpoint = j.value("checkpoint", cfg.checkpoint);
  cfg.jobs = j.value("jobs", cfg.jobs);
  cfg.out_dir = j.value("out", cfg.out_dir);
  if (j.contains("agent")) {
    const json& a = j["agent"];
    AgentConfig& ac = cfg.agent;
    ac.max_depth = a.value("M", ac.max_depth);
    ac.imagination_cap = a.value("N_bar", ac.imagination_cap);
    ac.history_len = a.value("K", ac.history_len);
    ac.tau = a.value("tau", ac.tau);
    ac.pos_scale = a.value("pos_scale", ac.pos_scale);
    ac.max_steps = a.value("max_steps", ac.max_steps);
    ac.use_room_model = a.value("use_room_model", ac.use_room_model);
    ac.use_waypoint_model = a.value("use_waypoint_model", ac.use_waypoint_model);
    ac.separate_imagination_encoder =
        a.value("separate_imagination_encoder", ac.separate_imagination_encoder);
    if (a.contains("memory_mode"))
      ac.memory_mode = policy::memory_mode_from_name(a["memory_mode"].get<std::string>());
    if (a.contains("gamma")) {
      const json& g = a["gamma"];
      std::string mode = g.value("mode", "dynamic");
      if (mode == "dynamic") {
        ac.gamma_dynamic = true;
      } else if (mode == "fixed") {
        ac.gamma_dynamic = false;
        ac.gamma_fixed = g.value("value", 0.5);
      } else {
        fail(ErrorKind::Config, "gamma mode must be dynamic or fixed");
      }
    }
    if (a.contains("imaginer")) {
      const json& im = a["imaginer"];
      if (im.contains("kind"))
        ac.imaginer = imagine::imaginer_kind_from_name(im["kind"].get<std::string>());
      ac.imaginer_noise = im.value("noise", ac.imaginer_noise);
    }
    if (a.contains("nms")) {
      const json& nm = a["nms"];
      ac.nms_max_k = nm.value("max_k", ac.nms_max_k);
      ac.nms_window_a = nm.value("window_a", ac.nms_window_a);
      ac.nms_window_r = nm.value("window_r", ac.nms_window_r);
    }
  }
  // Also accepted at top level, matching the documented run-config keys.
  if (j.contains("imaginer")) {
    const json& im = j["imaginer"];
    if (im.contains("kind"))
      cfg.agent.imaginer = imagine::imaginer_kind_from_name(im["kind"].get<std::string>());
    cfg.agent.imaginer_noise = im.value("noise", cfg.agent.imaginer_noise);
  }
  if (j.contains("policy")) {
    const json& p = j["policy"];
    cfg.policy.d_model = p.value("d_model", cfg.policy.d_model);
    cfg.policy.heads = p.value("heads", cfg.policy.heads);
    cfg.policy.instr_layers = p.value("instr_layers", cfg.policy.instr_layers);
    cfg.policy.cross_layers = p.value("cross_layers", cfg.policy.cross_layers);
    cfg.policy.d_ff = p.value("d_ff", cfg.policy.d_ff);
    cfg.policy.max_tokens = p.value("max_tokens", cfg.policy.max_tokens);
  }
  if (j.contains("eval")) {
    cfg.eval_world_count = j["eval"].value("world_count", cfg.eval_world_count);
    cfg.eval_seed_base = j["eval"].value("seed_base", cfg.eval_seed_base);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    cfg.train.world_count = t.value("world_count", cfg.train.world_count);
    cfg.train.seed_base = t.value("seed_base", cfg.train.seed_base);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.batch_episodes = t.value("batch_episodes", cfg.train.batch_episodes);
    cfg.train.aux_epochs = t.value("aux_epochs", cfg.train.aux_epochs);
    cfg.train.aux_lr = t.value("aux_lr", cfg.train.aux_lr);
    cfg.train.waypoint_lr = t.value("waypoint_lr", cfg.train.waypoint_lr);
    cfg.train.pairs_per_world = t.value("pairs_per_world", cfg.train.pairs_per_world);
    cfg.train.waypoint_samples = t.value("waypoint_samples", cfg.train.waypoint_samples);
  }

  if (cfg.agent.max_depth < 0 || cfg.agent.imagination_cap < 0)
    fail(ErrorKind::Config, "M and N_bar must be >= 0");
  if (cfg.agent.history_len < 1) fail(ErrorKind::Config, "K must be >= 1");
  if (!cfg.agent.gamma_dynamic &&
      (cfg.agent.gamma_fixed < 0.0 || cfg.agent.gamma_fixed > 1.0))
    fail(ErrorKind::Config, "fixed gamma must be in [0,1]");
  if (cfg.jobs < 1) fail(ErrorKind::Config, "jobs must be >= 1");
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["world"] = {{"rooms", cfg.world.rooms},
                {"nodes_per_room", cfg.world.nodes_per_room},
                {"object_vocab", cfg.world.object_vocab},
                {"room_vocab", cfg.world.room_vocab},
                {"appearance_dim", cfg.world.appearance_dim},
                {"geometry_dim", cfg.world.geometry_dim},
                {"stub_noise", cfg.world.stub_noise},
                {"seed", cfg.world.seed}};
  if (!cfg.world_path.empty()) j["world_path"] = cfg.world_path;
  j["seed"] = cfg.seed;
  j["jobs"] = cfg.jobs;
  if (!cfg.checkpoint.empty()) j["checkpoint"] = cfg.checkpoint;
  j["agent"] = {
      {"M", cfg.agent.max_depth},
      {"N_bar", cfg.agent.imagination_cap},
      {"K", cfg.agent.history_len},
      {"tau", cfg.agent.tau},
      {"pos_scale", cfg.agent.pos_scale},
      {"max_steps", cfg.agent.max_steps},
      {"memory_mode", policy::memory_mode_name(cfg.agent.memory_mode)},
      {"gamma",
       cfg.agent.gamma_dynamic
           ? json{{"mode", "dynamic"}}
           : json{{"mode", "fixed"}, {"value", cfg.agent.gamma_fixed}}},
      {"imaginer",
       {{"kind", imagine::imaginer_kind_name(cfg.agent.imaginer)},
        {"noise", cfg.agent.imaginer_noise}}},
      {"nms",
       {{"max_k", cfg.agent.nms_max_k},
        {"window_a", cfg.agent.nms_window_a},
        {"window_r", cfg.agent.nms_window_r}}},
      {"use_room_model", cfg.agent.use_room_model},
      {"use_waypoint_model", cfg.agent.use_waypoint_model},
      {"separate_imagination_encoder", cfg.agent.separate_imagination_encoder}};
  j["policy"] = {{"d_model", cfg.policy.d_model},
                 {"heads", cfg.policy.heads},
                 {"instr_layers", cfg.policy.instr_layers},
                 {"cross_layers", cfg.policy.cross_layers},
                 {"d_ff", cfg.policy.d_ff},
                 {"max_tokens", cfg.policy.max_tokens}};
  j["eval"] = {{"world_count", cfg.eval_world_count},
               {"seed_base", cfg.eval_seed_base}};
  j["train"] = {{"world_count", cfg.train.world_count},
                {"seed_base", cfg.train.seed_base},
                {"epochs", cfg.train.epochs},
                {"lr", cfg.train.lr},
                {"batch_episodes", cfg.train.batch_episodes},
                {"aux_epochs", cfg.train.aux_epochs},
                {"aux_lr", cfg.train.aux_lr},
                {"waypoint_lr", cfg.train.waypoint_lr},
                {"pairs_per_world", cfg.train.pairs_per_world},
                {"waypoint_samples", cfg.train.waypoint_samples}};
  return j;
}

// ---------------------------------------------------------------------------

std::vector<EpisodeSpec> make_episode_specs(const world::WorldGraph& w,
                                            const world::Vocab& vocab,
                                            uint64_t world_seed, int base_id,
                                            int pairs) {
  Rng rng(world_seed ^ 0x5EEDFACEull);
  int n = w.node_count();
  const auto& all = w.nodes();

  std::vector<std::pair<int, int>> chosen;
  std::pair<int, int> fallback{-1, -1};
  for (int tries = 0; tries < 800 && static_cast<int>(chosen.size()) < pairs; ++tries) {
    int a = all[rng.below(n)].id;
    int b = all[rng.below(n)].id;
    if (a == b) continue;
    bool dup = false;
    for (auto [ca, cb] : chosen)
      if (ca == a && cb == b) dup = true;
    if (dup) continue;
    auto pr = world::shortest_path(w, a, b);
    int legs = count_room_legs(w, pr.path);
    if (legs == 2) chosen.push_back({a, b});
    else if (legs >= 2 && fallback.first < 0) fallback = {a, b};
  }
  if (chosen.empty() && fallback.first >= 0) chosen.push_back(fallback);
  if (chosen.empty()) {
    // Exhaustive fallback for tiny worlds.
    int best_legs = 0;
    std::pair<int, int> best{-1, -1};
    for (const auto& na : all)
      for (const auto& nb : all) {
        if (na.id == nb.id) continue;
        int legs = count_room_legs(w, world::shortest_path(w, na.id, nb.id).path);
        if (legs > best_legs) {
          best_legs = legs;
          best = {na.id, nb.id};
        }
      }
    if (best.first < 0 || best_legs < 2)
      fail(ErrorKind::Generation,
           "world (seed " + std::to_string(world_seed) + ") has no multi-room path");
    chosen.push_back(best);
  }

  std::vector<EpisodeSpec> specs;
  int idx = 0;
  for (auto [start, goal] : chosen) {
    // The goal is the first node of the final room so the expert stops right
    // after crossing the last door; instructions name rooms and objects, not
    // individual in-room nodes.
    auto expert = world::shortest_path(w, start, goal).path;
    int final_room = w.node(expert.back()).room_type;
    for (size_t i = 1; i < expert.size(); ++i) {
      if (w.node(expert[i]).room_type == final_room &&
          w.node(expert[i - 1]).room_type != final_room) {
        goal = expert[i];
        expert = world::shortest_path(w, start, goal).path;
        break;
      }
    }
    for (world::InstrCategory cat : {world::InstrCategory::S1, world::InstrCategory::S2,
                                     world::InstrCategory::S3}) {
      EpisodeSpec s;
      s.id = base_id + idx++;
      s.world_seed = world_seed;
      s.start = start;
      s.goal = goal;
      s.expert = expert;
      s.instruction = world::generate_instruction(w, expert, cat, vocab);
      specs.push_back(std::move(s));
    }
  }
  return specs;
}

// ---------------------------------------------------------------------------

EpisodeResult run_episode(const world::WorldGraph& w, const EpisodeSpec& spec,
                          nn::ParamStore& params, const policy::PolicyConfig& pcfg,
                          const AgentConfig& acfg, const world::Vocab& vocab, Rng rng) {
  EpisodeResult res;
  res.id = spec.id;
  res.world_seed = spec.world_seed;
  res.record.goal_node_id = spec.goal;
  res.record.category = spec.instruction.category;
  res.record.trajectory = {spec.start};
  res.record.stop_position = w.node(spec.start).position;

  memory::MemoryMap map(
      {acfg.imagination_cap, acfg.tau, acfg.pos_scale});
  if (acfg.max_steps < 1) {
    res.summary = metrics::episode_metrics(res.record, w);
    res.memory_final = io::memory_snapshot(map);
    return res;
  }

  imagine::ChannelDims dims = channel_dims_for(w.config());
  auto imaginer = make_imaginer(acfg, w, params, dims);
  imagine::RoomWeights room_weights =
      imagine::default_room_weights(w.config().room_vocab, w.config().object_vocab);
  imagine::ExpandOptions opt;
  opt.dims = dims;
  opt.use_room_model = acfg.use_room_model;
  opt.use_waypoint_model = acfg.use_waypoint_model;
  opt.nms_max_k = acfg.nms_max_k;
  opt.nms_window_a = acfg.nms_window_a;
  opt.nms_window_r = acfg.nms_window_r;
  opt.room_weights = &room_weights;

  double gamma_override = acfg.gamma_dynamic ? -1.0 : acfg.gamma_fixed;
  int cur = spec.start;
  {
    world::Observation obs = world::observe(w, cur, rng);
    map.integrate_observation(obs, 1);
  }

  for (int t = 1; t <= acfg.max_steps; ++t) {
    if (acfg.max_depth > 0) {
      imagine::ImaginationTree tree =
          imagine::init_tree(map, dims, acfg.history_len, acfg.max_depth, t);
      for (int m = 0; m < acfg.max_depth; ++m)
        imagine::expand_tree(tree, *imaginer, &params, opt, rng);
      imagine::merge_into_memory(map, tree);
    }

    policy::ScoreSet scores =
        policy::run_policy(params, pcfg, map, t, spec.instruction.tokens, vocab,
                           acfg.memory_mode, gamma_override);

    StepLog log;
    log.t = t;
    log.gamma = scores.gamma;
    log.n_visited = map.count_kind(memory::NodeKind::Visited) +
                    map.count_kind(memory::NodeKind::Current);
    log.n_navigable = map.count_kind(memory::NodeKind::Navigable);
    log.n_imagination = map.imagination_count();
    log.fused_equals_sr = scores.fused.size() == scores.s_r.size();
    for (const auto& [id, v] : scores.fused) {
      auto it = scores.s_r.find(id);
      if (it == scores.s_r.end() || it->second != v) log.fused_equals_sr = false;
      log.max_fused = std::max(log.max_fused, v);
    }

    policy::Action act =
        policy::select_action(scores.fused, map, policy::SelectMode::Greedy, 1.0, rng);
    log.chosen = act.stop ? memory::MemoryMap::kStopId : act.target;
    res.steps.push_back(log);
    if (act.stop) break;

    for (size_t i = 1; i < act.route.size(); ++i) {
      int next = act.route[i];
      res.runner_tl += world_edge_length(w, cur, next);
      res.record.trajectory.push_back(next);
      world::Observation obs = world::observe(w, next, rng);
      map.integrate_observation(obs, t + 1);
      cur = next;
    }
  }

  res.record.stop_position = w.node(cur).position;
  res.summary = metrics::episode_metrics(res.record, w);
  if (std::abs(res.summary.tl - res.runner_tl) > 1e-9)
    fail(ErrorKind::Validation, "runner TL disagrees with metrics TL");
  res.memory_final = io::memory_snapshot(map);
  return res;
}

// ---------------------------------------------------------------------------

EvalResult run_eval(const RunConfig& cfg, nn::ParamStore& params) {
  world::Vocab vocab(cfg.world.room_vocab, cfg.world.object_vocab);
  policy::PolicyConfig pcfg = policy_config_for(cfg);

  std::vector<world::WorldGraph> worlds;
  std::vector<EpisodeSpec> specs;
  std::vector<int> spec_world;
  if (!cfg.world_path.empty()) {
    worlds.push_back(io::load_world(cfg.world_path));
    auto sp = make_episode_specs(worlds[0], vocab, worlds[0].config().seed, 0);
    for (auto& s : sp) {
      specs.push_back(std::move(s));
      spec_world.push_back(0);
    }
  } else {
    for (int i = 0; i < cfg.eval_world_count; ++i) {
      world::WorldConfig wc = cfg.world;
      wc.seed = cfg.eval_seed_base + static_cast<uint64_t>(i);
      worlds.push_back(world::generate_world(wc));
    }
    for (int i = 0; i < cfg.eval_world_count; ++i) {
      auto sp = make_episode_specs(worlds[i], vocab, worlds[i].config().seed, 3 * i);
      for (auto& s : sp) {
        specs.push_back(std::move(s));
        spec_world.push_back(i);
      }
    }
  }

  std::vector<EpisodeResult> results(specs.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      size_t idx = next.fetch_add(1);
      if (idx >= specs.size()) break;
      Rng rng = Rng(cfg.seed).child(static_cast<uint64_t>(specs[idx].id));
      results[idx] = run_episode(worlds[spec_world[idx]], specs[idx], params, pcfg,
                                 cfg.agent, vocab, rng);
    }
  };
  int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  EvalResult ev;
  ev.episodes = std::move(results);
  std::vector<metrics::EpisodeRecord> records;
  std::vector<metrics::MetricsSummary> summaries;
  for (const auto& r : ev.episodes) {
    records.push_back(r.record);
    summaries.push_back(r.summary);
  }
  ev.report = metrics::aggregate(records, summaries);

  size_t max_steps = 0;
  for (const auto& r : ev.episodes) max_steps = std::max(max_steps, r.steps.size());
  for (size_t s = 0; s < max_steps; ++s) {
    double sum = 0.0;
    int count = 0;
    for (const auto& r : ev.episodes)
      if (s < r.steps.size()) {
        sum += r.steps[s].gamma;
        ++count;
      }
    ev.mean_gamma_by_step.push_back(count ? sum / count : 0.0);
  }

  json rep;
  // Execution knobs (worker count, output paths) stay out of the report so
  // identical experiments produce byte-identical files.
  json cfg_echo = run_config_to_json(cfg);
  cfg_echo.erase("jobs");
  rep["config"] = cfg_echo;
  rep["aggregate"] = metrics_to_json(ev.report.mean);
  rep["aggregate"]["count"] = ev.report.count;
  json bycat = json::object();
  for (const auto& [cat, m] : ev.report.by_category) {
    bycat[cat] = metrics_to_json(m);
    bycat[cat]["count"] = ev.report.category_counts.at(cat);
  }
  rep["by_category"] = bycat;
  rep["mean_gamma_by_step"] = ev.mean_gamma_by_step;
  json eps = json::array();
  for (const auto& r : ev.episodes) {
    json e;
    e["id"] = r.id;
    e["category"] = world::category_name(r.record.category);
    e["world_seed"] = r.world_seed;
    e["start"] = r.record.trajectory.front();
    e["goal"] = r.record.goal_node_id;
    e["metrics"] = metrics_to_json(r.summary);
    e["steps"] = r.steps.size();
    eps.push_back(e);
  }
  rep["episodes"] = eps;
  ev.report_json = rep;

  if (!cfg.out_dir.empty()) {
    io::write_text_file(cfg.out_dir + "/report.json", rep.dump(1) + "\n");
    std::string csv = "id,category,NE,TL,SR,OSR,SPL\n";
    for (const auto& r : ev.episodes)
      csv += csv_row(std::to_string(r.id), world::category_name(r.record.category),
                     r.summary) +
             "\n";
    csv += csv_row("aggregate", "all", ev.report.mean) + "\n";
    for (const auto& [cat, m] : ev.report.by_category)
      csv += csv_row("aggregate", cat, m) + "\n";
    io::write_text_file(cfg.out_dir + "/report.csv", csv);
    for (const auto& r : ev.episodes) {
      json e;
      e["id"] = r.id;
      e["category"] = world::category_name(r.record.category);
      e["world_seed"] = r.world_seed;
      e["trajectory"] = r.record.trajectory;
      e["stop_position"] = {r.record.stop_position.x(), r.record.stop_position.y(),
                            r.record.stop_position.z()};
      e["goal"] = r.record.goal_node_id;
      e["metrics"] = metrics_to_json(r.summary);
      json steps = json::array();
      for (const auto& s : r.steps)
        steps.push_back({{"t", s.t},
                         {"gamma", s.gamma},
                         {"chosen", s.chosen},
                         {"visited", s.n_visited},
                         {"navigable", s.n_navigable},
                         {"imagination", s.n_imagination},
                         {"max_fused", s.max_fused},
                         {"fused_equals_sr", s.fused_equals_sr}});
      e["steps"] = steps;
      e["memory_final"] = r.memory_final;
      io::write_text_file(cfg.out_dir + "/episodes/" + std::to_string(r.id) + ".json",
                          e.dump(1) + "\n");
    }
  }
  return ev;
}

// ---------------------------------------------------------------------------

AblationReport run_ablation(const std::string& suite, const RunConfig& base,
                            nn::ParamStore& params) {
  AblationReport rep;
  rep.suite = suite;

  auto eval_row = [&](const std::string& label, const RunConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    RunConfig c = cfg;
    c.out_dir.clear();
    EvalResult ev = run_eval(c, params);
    AblationRow row;
    row.label = label;
    row.report = ev.report;
    for (const auto& e : ev.episodes) row.sr_per_episode.push_back(e.summary.sr);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
    rep.rows.push_back(std::move(row));
  };

  if (suite == "memory_type") {
    RunConfig reality = base;
    reality.agent.memory_mode = policy::MemoryMode::Reality;
    reality.agent.max_depth = 0;
    reality.agent.imagination_cap = 0;
    eval_row("reality", reality);
    RunConfig imag = base;
    imag.agent.memory_mode = policy::MemoryMode::Imagination;
    eval_row("imagination", imag);
    RunConfig hybrid = base;
    hybrid.agent.memory_mode = policy::MemoryMode::Hybrid;
    eval_row("reality+imagination", hybrid);
  } else if (suite == "imagination_range") {
    const std::pair<int, int> ranges[] = {{0, 0}, {1, 4}, {2, 4}, {2, 8}};
    for (auto [m, nbar] : ranges) {
      RunConfig c = base;
      c.agent.max_depth = m;
      c.agent.imagination_cap = nbar;
      if (m == 0) c.agent.memory_mode = policy::MemoryMode::Reality;
      eval_row("M=" + std::to_string(m) + ",N=" + std::to_string(nbar), c);
    }
  } else if (suite == "auxiliary_models") {
    const std::pair<bool, bool> rows[] = {
        {false, false}, {true, false}, {false, true}, {true, true}};
    const char* labels[] = {"none", "room", "waypoint", "room+waypoint"};
    for (int i = 0; i < 4; ++i) {
      RunConfig c = base;
      c.agent.use_room_model = rows[i].first;
      c.agent.use_waypoint_model = rows[i].second;
      eval_row(labels[i], c);
    }
  } else if (suite == "decision_weight") {
    RunConfig dyn = base;
    dyn.agent.gamma_dynamic = true;
    eval_row("dynamic", dyn);
    RunConfig fixed = base;
    fixed.agent.gamma_dynamic = false;
    fixed.agent.gamma_fixed = 0.5;
    eval_row("fixed_0.5", fixed);
  } else if (suite == "instruction_split") {
    auto t0 = std::chrono::steady_clock::now();
    RunConfig c = base;
    c.out_dir.clear();
    EvalResult ev = run_eval(c, params);
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const std::string cat : {"S1", "S2", "S3"}) {
      AblationRow row;
      row.label = cat;
      row.report.mean = ev.report.by_category.at(cat);
      row.report.count = ev.report.category_counts.at(cat);
      row.seconds = secs / 3.0;
      for (const auto& e : ev.episodes)
        if (world::category_name(e.record.category) == cat)
          row.sr_per_episode.push_back(e.summary.sr);
      rep.rows.push_back(std::move(row));
    }
  } else {
    fail(ErrorKind::Config, "unknown ablation suite: " + suite);
  }
  return rep;
}

io::json ablation_to_json(const AblationReport& rep) {
  json j;
  j["suite"] = rep.suite;
  j["train_seconds"] = rep.train_seconds;
  json rows = json::array();
  for (const auto& r : rep.rows) {
    json rj;
    rj["label"] = r.label;
    rj["seconds"] = r.seconds;
    rj["metrics"] = metrics_to_json(r.report.mean);
    rj["count"] = r.report.count;
    rows.push_back(rj);
  }
  j["rows"] = rows;
  return j;
}

// ---------------------------------------------------------------------------

double bootstrap_confidence_greater(const std::vector<double>& a,
                                    const std::vector<double>& b, int resamples,
                                    uint64_t seed) {
  if (a.size() != b.size() || a.empty())
    fail(ErrorKind::Config, "paired bootstrap needs equal nonempty samples");
  Rng rng(seed);
  size_t n = a.size();
  int wins = 0;
  for (int r = 0; r < resamples; ++r) {
    double sa = 0.0, sb = 0.0;
    for (size_t i = 0; i < n; ++i) {
      size_t k = rng.below(n);
      sa += a[k];
      sb += b[k];
    }
    if (sa > sb) ++wins;
  }
  return static_cast<double>(wins) / resamples;
}

namespace {
std::vector<double> ranks_of(const std::vector<double>& x) {
  size_t n = x.size();
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t i, size_t j) { return x[i] < x[j]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    double avg = 0.5 * (i + j) + 1.0;  // average rank of the tie group
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}
}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    fail(ErrorKind::Config, "spearman needs matching samples");
  auto rx = ranks_of(x);
  auto ry = ranks_of(y);
  double mx = 0, my = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= rx.size();
  my /= ry.size();
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace sali::harness
