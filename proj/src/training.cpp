#include <algorithm>
#include <cmath>

#include "sali/harness.hpp"

namespace sali::harness {

using nn::Mat;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

namespace {

std::unique_ptr<imagine::Imaginer> training_imaginer(const AgentConfig& acfg,
                                                     const world::WorldGraph& w,
                                                     ParamStore& params,
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

struct ReplayStats {
  double loss_sum = 0.0;
  int steps = 0;
  int correct = 0;
};

// Teacher-forced replay of the expert path; with backprop, gradients of the
// per-step SAP losses accumulate into params.
ReplayStats replay_episode(const world::WorldGraph& w, const EpisodeSpec& spec,
                           ParamStore& params, const policy::PolicyConfig& pcfg,
                           const AgentConfig& acfg, const world::Vocab& vocab, Rng rng,
                           bool backprop) {
  ReplayStats stats;
  memory::MemoryMap map({acfg.imagination_cap, acfg.tau, acfg.pos_scale});
  imagine::ChannelDims dims = channel_dims_for(w.config());
  auto imaginer = training_imaginer(acfg, w, params, dims);
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

  {
    world::Observation obs = world::observe(w, spec.expert.front(), rng);
    map.integrate_observation(obs, 1);
  }
  for (size_t k = 0; k < spec.expert.size(); ++k) {
    int t = static_cast<int>(k) + 1;
    if (acfg.max_depth > 0) {
      imagine::ImaginationTree tree =
          imagine::init_tree(map, dims, acfg.history_len, acfg.max_depth, t);
      for (int m = 0; m < acfg.max_depth; ++m)
        imagine::expand_tree(tree, *imaginer, &params, opt, rng);
      imagine::merge_into_memory(map, tree);
    }
    policy::MapView view = policy::build_map_view(map, t);
    int target_id = (k + 1 < spec.expert.size()) ? spec.expert[k + 1]
                                                 : memory::MemoryMap::kStopId;
    int target_idx = -1;
    for (size_t c = 0; c < view.candidate_ids.size(); ++c)
      if (view.candidate_ids[c] == target_id) target_idx = static_cast<int>(c);
    if (target_idx < 0)
      fail(ErrorKind::Supervision, "expert target " + std::to_string(target_id) +
                                       " not among candidates");

    Tape tape;
    Var instr =
        policy::encode_instruction(tape, params, pcfg, spec.instruction.tokens, vocab);
    policy::DecisionVars dv = policy::decide(tape, params, pcfg, view, instr,
                                             acfg.memory_mode, gamma_override);
    Var logits = nn::transpose(tape, dv.fused);
    Var loss = nn::cross_entropy_logits(tape, logits, target_idx);
    stats.loss_sum += tape.val(loss)(0, 0);
    stats.steps += 1;
    int argmax = 0;
    const Mat& fv = tape.val(dv.fused);
    for (int i = 1; i < fv.rows(); ++i)
      if (fv(i, 0) > fv(argmax, 0)) argmax = i;
    if (argmax == target_idx) stats.correct += 1;
    if (backprop) tape.backward(loss);

    if (k + 1 < spec.expert.size()) {
      world::Observation obs = world::observe(w, spec.expert[k + 1], rng);
      map.integrate_observation(obs, t + 1);
    }
  }
  return stats;
}

std::map<std::string, Mat> snapshot_values(const ParamStore& ps) {
  std::map<std::string, Mat> out;
  for (const auto& [name, t] : ps.tensors()) out[name] = t.value;
  return out;
}

void restore_values(ParamStore& ps, const std::map<std::string, Mat>& snap) {
  for (auto& [name, t] : ps.tensors()) t.value = snap.at(name);
}

}  // namespace

TrainResult train_policy_sap(const RunConfig& cfg, ParamStore& params,
                             const std::vector<const world::WorldGraph*>& worlds,
                             const std::vector<std::vector<EpisodeSpec>>& specs) {
  world::Vocab vocab(cfg.world.room_vocab, cfg.world.object_vocab);
  policy::PolicyConfig pcfg = policy_config_for(cfg);

  struct Item {
    const world::WorldGraph* w;
    const EpisodeSpec* spec;
  };
  std::vector<Item> items;
  for (size_t i = 0; i < worlds.size(); ++i)
    for (const auto& s : specs[i]) items.push_back({worlds[i], &s});

  TrainResult tr;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    auto last_good = snapshot_values(params);
    Rng order_rng(cfg.seed ^ (0x9E3779B97F4A7C15ull * (epoch + 1)));
    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[order_rng.below(i)]);

    params.zero_grads();
    double epoch_loss = 0.0;
    int epoch_steps = 0;
    int batch_count = 0;
    int batch_steps = 0;
    bool bad = false;
    for (size_t oi = 0; oi < order.size() && !bad; ++oi) {
      const Item& item = items[order[oi]];
      Rng rng = Rng(cfg.seed).child(
          static_cast<uint64_t>(epoch) * 1000003ull + item.spec->id);
      ReplayStats st = replay_episode(*item.w, *item.spec, params, pcfg, cfg.agent,
                                      vocab, rng, /*backprop=*/true);
      epoch_loss += st.loss_sum;
      epoch_steps += st.steps;
      batch_steps += st.steps;
      ++batch_count;
      if (batch_count >= cfg.train.batch_episodes || oi + 1 == order.size()) {
        if (batch_steps > 0) {
          params.scale_grads(1.0 / batch_steps);
          if (!params.grads_finite()) {
            bad = true;
            break;
          }
          params.sgd_step(cfg.train.lr);
        }
        params.zero_grads();
        batch_count = 0;
        batch_steps = 0;
      }
    }
    double mean = epoch_steps > 0 ? epoch_loss / epoch_steps : 0.0;
    if (bad || !std::isfinite(mean)) {
      restore_values(params, last_good);
      tr.diverged = true;
      break;
    }
    tr.epoch_losses.push_back(mean);
  }
  return tr;
}

double heldout_accuracy(const RunConfig& cfg, ParamStore& params,
                        const std::vector<const world::WorldGraph*>& worlds,
                        const std::vector<std::vector<EpisodeSpec>>& specs) {
  world::Vocab vocab(cfg.world.room_vocab, cfg.world.object_vocab);
  policy::PolicyConfig pcfg = policy_config_for(cfg);
  long correct = 0, total = 0;
  for (size_t i = 0; i < worlds.size(); ++i)
    for (const auto& spec : specs[i]) {
      Rng rng = Rng(cfg.seed).child(0xEEA1ull + spec.id);
      ReplayStats st = replay_episode(*worlds[i], spec, params, pcfg, cfg.agent, vocab,
                                      rng, /*backprop=*/false);
      correct += st.correct;
      total += st.steps;
    }
  return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

// ---------------------------------------------------------------------------
// Auxiliary models

AuxTrainResult train_waypoint(ParamStore& params, const imagine::ChannelDims& dims,
                              const std::vector<const world::WorldGraph*>& worlds,
                              int max_samples, int epochs, double lr, uint64_t seed) {
  struct Sample {
    Mat input;   // 1 x (appearance + geometry)
    Mat target;  // 1 x 1440
  };
  std::vector<Sample> samples;
  for (const auto* w : worlds) {
    for (const auto& n : w->nodes()) {
      std::vector<imagine::PolarWaypoint> nbs;
      for (const auto& [nid, len] : w->neighbors(n.id)) {
        if (len <= 0.0 || len > imagine::Heatmap::kRange) continue;
        imagine::PolarWaypoint pw;
        pw.heading = heading_of(w->node(nid).position - n.position);
        pw.distance = len;
        nbs.push_back(pw);
      }
      if (nbs.empty()) continue;
      Sample s;
      s.input = Mat(1, dims.appearance + dims.geometry);
      s.input << n.appearance.transpose(), n.geometry.transpose();
      imagine::Heatmap gt = imagine::heatmap_gt(nbs);
      s.target = Mat(1, imagine::Heatmap::kAngularBins * imagine::Heatmap::kRadialBins);
      for (int a = 0; a < imagine::Heatmap::kAngularBins; ++a)
        for (int r = 0; r < imagine::Heatmap::kRadialBins; ++r)
          s.target(0, a * imagine::Heatmap::kRadialBins + r) = gt.grid(a, r);
      samples.push_back(std::move(s));
    }
  }
  Rng rng(seed);
  for (size_t i = samples.size(); i > 1; --i)
    std::swap(samples[i - 1], samples[rng.below(i)]);
  if (max_samples > 0 && static_cast<int>(samples.size()) > max_samples)
    samples.resize(max_samples);
  if (samples.empty()) fail(ErrorKind::Config, "no waypoint samples harvested");

  // Full-batch gradient descent; one tape per epoch.
  int n = static_cast<int>(samples.size());
  Mat inputs(n, samples[0].input.cols());
  Mat targets(n, samples[0].target.cols());
  for (int i = 0; i < n; ++i) {
    inputs.row(i) = samples[i].input.row(0);
    targets.row(i) = samples[i].target.row(0);
  }

  AuxTrainResult res;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    params.zero_grads();
    Tape t;
    Var pred =
        nn::sigmoid_op(t, imagine::waypoint_logits(t, params, t.constant(inputs)));
    Var loss = nn::mean_sq_diff(t, pred, targets);
    t.backward(loss);
    params.sgd_step(lr);
    params.zero_grads();
    res.losses.push_back(t.val(loss)(0, 0));
  }
  return res;
}

AuxTrainResult train_room(ParamStore& params, const imagine::ChannelDims& dims,
                          int room_vocab,
                          const std::vector<const world::WorldGraph*>& worlds,
                          int epochs, double lr, uint64_t seed) {
  struct Sample {
    Mat input;  // 1 x (semantic + geometry)
    int label;
  };
  std::vector<Sample> samples;
  for (const auto* w : worlds)
    for (const auto& n : w->nodes()) {
      Sample s;
      s.input = Mat(1, dims.semantic + dims.geometry);
      s.input << n.semantic.transpose(), n.geometry.transpose();
      s.label = n.room_type;
      samples.push_back(std::move(s));
    }
  if (samples.empty()) fail(ErrorKind::Config, "no room samples harvested");
  (void)room_vocab;
  (void)seed;

  int n = static_cast<int>(samples.size());
  Mat inputs(n, samples[0].input.cols());
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    inputs.row(i) = samples[i].input.row(0);
    labels[i] = samples[i].label;
  }

  AuxTrainResult res;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    params.zero_grads();
    Tape t;
    Var logits = imagine::room_logits(t, params, t.constant(inputs));
    Var loss = nn::cross_entropy_rows(t, logits, labels);
    t.backward(loss);
    params.sgd_step(lr);
    params.zero_grads();
    res.losses.push_back(t.val(loss)(0, 0));
  }
  {
    Tape t;
    Var logits = imagine::room_logits(t, params, t.constant(inputs));
    const Mat& v = t.val(logits);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      int argmax = 0;
      for (int c = 1; c < v.cols(); ++c)
        if (v(i, c) > v(i, argmax)) argmax = c;
      if (argmax == labels[i]) ++correct;
    }
    res.final_accuracy = static_cast<double>(correct) / n;
  }
  return res;
}

AuxTrainResult train_imaginer(ParamStore& params, const imagine::ChannelDims& dims,
                              int history_len,
                              const std::vector<const world::WorldGraph*>& worlds,
                              int epochs, double lr, uint64_t seed) {
  struct Sample {
    Mat inpaint_in;
    Mat gt_sem;  // 1 x semantic
    Mat gt_geo;  // 1 x geometry
    Mat spade_in;
    Mat gt_app;  // 1 x appearance
  };
  std::vector<Sample> samples;
  for (const auto* w : worlds)
    for (const auto& e : w->edges())
      for (auto [src, dst] : {std::pair{e.a, e.b}, std::pair{e.b, e.a}}) {
        const auto& a = w->node(src);
        const auto& b = w->node(dst);
        imagine::BranchHistory hist;
        imagine::HistoryTriple tr;
        tr.geometry = a.geometry;
        tr.semantic = a.semantic;
        tr.position = a.position;
        hist.push_back(tr);
        Sample s;
        s.inpaint_in = imagine::LearnedImaginer::structured_input(hist, b.position,
                                                                  dims, history_len);
        s.gt_sem = b.semantic.transpose();
        s.gt_geo = b.geometry.transpose();
        imagine::GeneratedChannels ch;
        ch.geometry = b.geometry;
        ch.semantic = b.semantic;
        s.spade_in = imagine::LearnedImaginer::appearance_input(a.appearance, ch, dims);
        s.gt_app = b.appearance.transpose();
        samples.push_back(std::move(s));
      }
  if (samples.empty()) fail(ErrorKind::Config, "no imaginer samples harvested");
  (void)seed;

  int n = static_cast<int>(samples.size());
  Mat inpaint_in(n, samples[0].inpaint_in.cols());
  Mat gt_sem(n, samples[0].gt_sem.cols());
  Mat gt_geo(n, samples[0].gt_geo.cols());
  Mat spade_in(n, samples[0].spade_in.cols());
  Mat gt_app(n, samples[0].gt_app.cols());
  for (int i = 0; i < n; ++i) {
    inpaint_in.row(i) = samples[i].inpaint_in.row(0);
    gt_sem.row(i) = samples[i].gt_sem.row(0);
    gt_geo.row(i) = samples[i].gt_geo.row(0);
    spade_in.row(i) = samples[i].spade_in.row(0);
    gt_app.row(i) = samples[i].gt_app.row(0);
  }

  const double lambda = 0.5;
  AuxTrainResult res;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    params.zero_grads();
    Tape t;
    Var h = nn::tanh_op(
        t, nn::linear(t, t.constant(inpaint_in), params, "imaginer.inpaint.f1"));
    Var geo = nn::linear(t, h, params, "imaginer.inpaint.geo");
    Var sem_logits = nn::linear(t, h, params, "imaginer.inpaint.sem");
    Var ce = nn::cross_entropy_rows_dist(t, sem_logits, gt_sem);
    Var mae = nn::mean_abs_diff(t, geo, gt_geo);
    Var inpaint = nn::add(t, nn::scale(t, ce, lambda), nn::scale(t, mae, 1.0 - lambda));
    Var h2 = nn::tanh_op(
        t, nn::linear(t, t.constant(spade_in), params, "imaginer.spade.f1"));
    Var app = nn::linear(t, h2, params, "imaginer.spade.f2");
    Var spade = nn::mean_sq_diff(t, app, gt_app);
    Var loss = nn::add(t, inpaint, spade);
    t.backward(loss);
    params.sgd_step(lr);
    params.zero_grads();
    res.losses.push_back(t.val(loss)(0, 0));
  }
  return res;
}

TrainResult train_all(RunConfig cfg, ParamStore& params) {
  imagine::ChannelDims dims = channel_dims_for(cfg.world);
  world::Vocab vocab(cfg.world.room_vocab, cfg.world.object_vocab);

  std::vector<world::WorldGraph> worlds;
  for (int i = 0; i < cfg.train.world_count; ++i) {
    world::WorldConfig wc = cfg.world;
    wc.seed = cfg.train.seed_base + static_cast<uint64_t>(i);
    worlds.push_back(world::generate_world(wc));
  }
  std::vector<const world::WorldGraph*> wptr;
  std::vector<std::vector<EpisodeSpec>> specs;
  for (size_t i = 0; i < worlds.size(); ++i) {
    wptr.push_back(&worlds[i]);
    specs.push_back(make_episode_specs(worlds[i], vocab, worlds[i].config().seed,
                                       static_cast<int>(3 * cfg.train.pairs_per_world * i),
                                       cfg.train.pairs_per_world));
  }

  if (params.tensors().empty()) init_all_params(cfg, params);
  train_waypoint(params, dims, wptr, cfg.train.waypoint_samples, cfg.train.aux_epochs,
                 cfg.train.waypoint_lr, cfg.seed ^ 0xAABB01ull);
  train_room(params, dims, cfg.world.room_vocab, wptr, cfg.train.aux_epochs,
             cfg.train.aux_lr, cfg.seed ^ 0xAABB02ull);
  if (cfg.agent.imaginer == imagine::ImaginerKind::Learned)
    train_imaginer(params, dims, cfg.agent.history_len, wptr, cfg.train.aux_epochs,
                   cfg.train.aux_lr, cfg.seed ^ 0xAABB03ull);

  TrainResult tr = train_policy_sap(cfg, params, wptr, specs);
  tr.heldout_accuracy = 0.0;
  return tr;
}

}  // namespace sali::harness
