#include "sali/imagination.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace sali::imagine {

using nn::Mat;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

namespace {

std::atomic<long> g_clamp_warnings{0};

int angular_bin(double heading) {
  double deg = wrap_angle(heading) * 180.0 / M_PI;
  int bin = static_cast<int>(std::floor(deg / 3.0));
  return std::min(bin, Heatmap::kAngularBins - 1);
}

int radial_bin(double distance) {
  int bin = static_cast<int>(std::floor(distance / Heatmap::kRadialBin));
  return std::min(bin, Heatmap::kRadialBins - 1);
}

}  // namespace

Heatmap heatmap_gt(const std::vector<PolarWaypoint>& neighbors) {
  Heatmap m;
  for (const auto& nb : neighbors) {
    if (!(nb.distance > 0.0) || nb.distance > Heatmap::kRange)
      fail(ErrorKind::Domain, "waypoint distance must be in (0, 3] m");
    int ca = angular_bin(nb.heading);
    int cr = radial_bin(nb.distance);
    for (int da = -3; da <= 3; ++da) {
      int a = ((ca + da) % Heatmap::kAngularBins + Heatmap::kAngularBins) %
              Heatmap::kAngularBins;
      for (int dr = -3; dr <= 3; ++dr) {
        int r = cr + dr;
        if (r < 0 || r >= Heatmap::kRadialBins) continue;
        double v = std::exp(-0.5 * (da * da + dr * dr));
        m.grid(a, r) = std::max(m.grid(a, r), v);
      }
    }
  }
  return m;
}

std::vector<PolarWaypoint> nms_peaks(const Heatmap& m, int max_k, int window_a,
                                     int window_r) {
  if (max_k < 1) fail(ErrorKind::Config, "nms max_k must be >= 1");
  if (window_a % 2 == 0 || window_r % 2 == 0)
    fail(ErrorKind::Config, "nms window must be odd in each axis");
  int ra = window_a / 2;
  int rr = window_r / 2;

  struct Peak {
    double value;
    int a, r;
  };
  std::vector<Peak> peaks;
  for (int a = 0; a < Heatmap::kAngularBins; ++a) {
    for (int r = 0; r < Heatmap::kRadialBins; ++r) {
      double v = m.grid(a, r);
      bool strict = true;
      for (int da = -ra; da <= ra && strict; ++da) {
        int a2 = ((a + da) % Heatmap::kAngularBins + Heatmap::kAngularBins) %
                 Heatmap::kAngularBins;
        for (int dr = -rr; dr <= rr; ++dr) {
          if (da == 0 && dr == 0) continue;
          int r2 = r + dr;
          if (r2 < 0 || r2 >= Heatmap::kRadialBins) continue;
          if (a2 == a && r2 == r) continue;  // window wider than the wrap
          if (m.grid(a2, r2) >= v) {
            strict = false;
            break;
          }
        }
      }
      if (strict) peaks.push_back({v, a, r});
    }
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& x, const Peak& y) {
    if (x.value != y.value) return x.value > y.value;
    if (x.a != y.a) return x.a < y.a;
    return x.r < y.r;
  });
  if (static_cast<int>(peaks.size()) > max_k) peaks.resize(max_k);

  std::vector<PolarWaypoint> out;
  for (const auto& p : peaks) {
    PolarWaypoint w;
    w.heading = (p.a + 0.5) * 3.0 * M_PI / 180.0;
    w.distance = (p.r + 0.5) * Heatmap::kRadialBin;
    out.push_back(w);
  }
  return out;
}

double waypoint_loss(const Heatmap& predicted, const Heatmap& gt) {
  return (predicted.grid - gt.grid).array().square().sum() /
         static_cast<double>(Heatmap::kAngularBins * Heatmap::kRadialBins);
}

void init_waypoint_params(ParamStore& ps, const ChannelDims& dims, Rng& rng) {
  int in = dims.appearance + dims.geometry;
  nn::ensure_linear(ps, "waypoint.merge", in, 64, rng);
  nn::ensure_linear(ps, "waypoint.f1", 64, 128, rng);
  nn::ensure_linear(ps, "waypoint.f2", 128,
                    Heatmap::kAngularBins * Heatmap::kRadialBins, rng);
}

Var waypoint_logits(Tape& t, ParamStore& ps, Var input) {
  Var merged = nn::tanh_op(t, nn::linear(t, input, ps, "waypoint.merge"));
  Var h = nn::tanh_op(t, nn::linear(t, merged, ps, "waypoint.f1"));
  return nn::linear(t, h, ps, "waypoint.f2");
}

namespace {
// Forward-only evaluation; the tape path is reserved for training.
Eigen::RowVectorXd linear_fwd(const ParamStore& ps, const std::string& prefix,
                              const Eigen::RowVectorXd& x) {
  return x * ps.at(prefix + ".w").value + ps.at(prefix + ".b").value.row(0);
}
}  // namespace

Heatmap predict_heatmap(ParamStore& ps, const VecXd& appearance, const VecXd& geometry) {
  if (ps.at("waypoint.merge.w").value.rows() != appearance.size() + geometry.size())
    fail(ErrorKind::Shape, "waypoint model input dimension mismatch");
  Eigen::RowVectorXd x(appearance.size() + geometry.size());
  x << appearance.transpose(), geometry.transpose();
  Eigen::RowVectorXd m1 = linear_fwd(ps, "waypoint.merge", x).array().tanh();
  Eigen::RowVectorXd h = linear_fwd(ps, "waypoint.f1", m1).array().tanh();
  Eigen::RowVectorXd logits = linear_fwd(ps, "waypoint.f2", h);
  Heatmap m;
  for (int a = 0; a < Heatmap::kAngularBins; ++a)
    for (int r = 0; r < Heatmap::kRadialBins; ++r)
      m.grid(a, r) =
          1.0 / (1.0 + std::exp(-logits(a * Heatmap::kRadialBins + r)));
  return m;
}

// ---------------------------------------------------------------------------

RoomWeights default_room_weights(int room_vocab, int object_vocab) {
  RoomWeights rw;
  for (int r = 0; r < room_vocab; ++r) {
    VecXd w = VecXd::Zero(object_vocab);
    for (int obj : world::room_prior_objects(r, object_vocab)) w[obj] = 2.0;
    rw.w.push_back(std::move(w));
  }
  return rw;
}

VecXd room_reweight(const VecXd& semantic, int room_type, const RoomWeights& weights) {
  if (room_type < 0 || room_type >= static_cast<int>(weights.w.size()))
    fail(ErrorKind::Lookup, "unknown room type " + std::to_string(room_type));
  const VecXd& w = weights.w[room_type];
  if (w.size() != semantic.size())
    fail(ErrorKind::Shape, "room weight length mismatch");
  VecXd out = semantic.cwiseProduct(VecXd::Ones(w.size()) + w);
  double s = out.sum();
  if (s <= 0.0) fail(ErrorKind::Numeric, "reweighted semantic sums to zero");
  return out / s;
}

void init_room_params(ParamStore& ps, const ChannelDims& dims, int room_vocab, Rng& rng) {
  int in = dims.semantic + dims.geometry;
  nn::ensure_linear(ps, "room.f1", in, 32, rng);
  nn::ensure_linear(ps, "room.f2", 32, room_vocab, rng);
}

Var room_logits(Tape& t, ParamStore& ps, Var input) {
  Var h = nn::tanh_op(t, nn::linear(t, input, ps, "room.f1"));
  return nn::linear(t, h, ps, "room.f2");
}

VecXd predict_room_logits(ParamStore& ps, const VecXd& semantic, const VecXd& geometry) {
  Eigen::RowVectorXd x(semantic.size() + geometry.size());
  x << semantic.transpose(), geometry.transpose();
  Eigen::RowVectorXd h = linear_fwd(ps, "room.f1", x).array().tanh();
  return linear_fwd(ps, "room.f2", h).transpose();
}

double room_loss(const VecXd& predicted_logits, int true_room) {
  if (true_room < 0 || true_room >= predicted_logits.size())
    fail(ErrorKind::Supervision, "room label out of range");
  double mx = predicted_logits.maxCoeff();
  double z = (predicted_logits.array() - mx).exp().sum();
  return std::log(z) - (predicted_logits[true_room] - mx);
}

double inpaint_lite_loss(const VecXd& pred_semantic, const VecXd& pred_geometry,
                         const VecXd& gt_semantic, const VecXd& gt_geometry,
                         double lambda) {
  if (lambda < 0.0 || lambda > 1.0) fail(ErrorKind::Config, "lambda must be in [0,1]");
  if (pred_semantic.size() != gt_semantic.size() ||
      pred_geometry.size() != gt_geometry.size())
    fail(ErrorKind::Shape, "inpaint loss shape mismatch");
  double ce = 0.0;
  for (int i = 0; i < gt_semantic.size(); ++i) {
    if (gt_semantic[i] <= 0.0) continue;
    double p = pred_semantic[i];
    if (p < 1e-12) {
      p = 1e-12;
      g_clamp_warnings.fetch_add(1, std::memory_order_relaxed);
    }
    ce -= gt_semantic[i] * std::log(p);
  }
  double mae = (pred_geometry - gt_geometry).array().abs().mean();
  return lambda * ce + (1.0 - lambda) * mae;
}

long inpaint_clamp_warnings() { return g_clamp_warnings.load(); }
void reset_inpaint_clamp_warnings() { g_clamp_warnings.store(0); }

// ---------------------------------------------------------------------------
// Imaginers

ImaginerKind imaginer_kind_from_name(const std::string& name) {
  if (name == "oracle") return ImaginerKind::Oracle;
  if (name == "learned") return ImaginerKind::Learned;
  if (name == "null" || name == "none") return ImaginerKind::Null;
  fail(ErrorKind::Config, "unknown imaginer kind: " + name);
}

std::string imaginer_kind_name(ImaginerKind k) {
  switch (k) {
    case ImaginerKind::Oracle: return "oracle";
    case ImaginerKind::Learned: return "learned";
    default: return "null";
  }
}

namespace {
const world::WorldNode& nearest_node(const world::WorldGraph& w, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  const world::WorldNode* bn = nullptr;
  for (const auto& n : w.nodes()) {
    double d = (n.position - p).norm();
    if (d < best - 1e-12) {
      best = d;
      bn = &n;
    }
  }
  return *bn;
}
}  // namespace

std::optional<GeneratedChannels> OracleImaginer::structured(const BranchHistory&,
                                                            const Vec3& position,
                                                            Rng& rng) {
  const world::WorldNode& n = nearest_node(*world_, position);
  GeneratedChannels ch;
  ch.geometry = n.geometry;
  ch.semantic = n.semantic;
  if (noise_ > 0.0) {
    for (int i = 0; i < ch.geometry.size(); ++i) ch.geometry[i] += rng.normal(0, noise_);
    for (int i = 0; i < ch.semantic.size(); ++i) ch.semantic[i] += rng.normal(0, noise_);
    ch.semantic = ch.semantic.cwiseMax(0.0);
    double s = ch.semantic.sum();
    if (s > 0.0)
      ch.semantic /= s;
    else
      ch.semantic.setConstant(1.0 / ch.semantic.size());
  }
  return ch;
}

std::optional<VecXd> OracleImaginer::appearance(const VecXd&, const GeneratedChannels&,
                                                const Vec3& position, Rng& rng) {
  VecXd app = nearest_node(*world_, position).appearance;
  if (noise_ > 0.0) {
    for (int i = 0; i < app.size(); ++i) app[i] += rng.normal(0, noise_);
    double n = app.norm();
    if (n > 0.0) app /= n;
  }
  return app;
}

void LearnedImaginer::init_params(ParamStore& ps, const ChannelDims& dims,
                                  int history_len, Rng& rng) {
  int in = history_len * (dims.geometry + dims.semantic + 3) + 3;
  nn::ensure_linear(ps, "imaginer.inpaint.f1", in, 64, rng);
  nn::ensure_linear(ps, "imaginer.inpaint.geo", 64, dims.geometry, rng);
  nn::ensure_linear(ps, "imaginer.inpaint.sem", 64, dims.semantic, rng);
  int ain = dims.appearance + dims.geometry + dims.semantic;
  nn::ensure_linear(ps, "imaginer.spade.f1", ain, 64, rng);
  nn::ensure_linear(ps, "imaginer.spade.f2", 64, dims.appearance, rng);
}

Mat LearnedImaginer::structured_input(const BranchHistory& history, const Vec3& position,
                                      const ChannelDims& dims, int history_len) {
  int per = dims.geometry + dims.semantic + 3;
  Mat in = Mat::Zero(1, history_len * per + 3);
  // Most recent triples first; offsets canonicalized to the world frame
  // (heading 0), relative to the query position.
  int slot = 0;
  for (auto it = history.rbegin(); it != history.rend() && slot < history_len;
       ++it, ++slot) {
    int base = slot * per;
    in.block(0, base, 1, dims.geometry) = it->geometry.transpose();
    in.block(0, base + dims.geometry, 1, dims.semantic) = it->semantic.transpose();
    Vec3 rel = it->position - position;
    in(0, base + dims.geometry + dims.semantic + 0) = rel.x();
    in(0, base + dims.geometry + dims.semantic + 1) = rel.y();
    in(0, base + dims.geometry + dims.semantic + 2) = rel.z();
  }
  int tail = history_len * per;
  in(0, tail + 0) = position.x();
  in(0, tail + 1) = position.y();
  in(0, tail + 2) = position.z();
  return in;
}

Mat LearnedImaginer::appearance_input(const VecXd& parent_appearance,
                                      const GeneratedChannels& channels,
                                      const ChannelDims& dims) {
  Mat in(1, dims.appearance + dims.geometry + dims.semantic);
  in << parent_appearance.transpose(), channels.geometry.transpose(),
      channels.semantic.transpose();
  return in;
}

std::optional<GeneratedChannels> LearnedImaginer::structured(
    const BranchHistory& history, const Vec3& position, Rng&) {
  Tape t;
  Var in = t.constant(structured_input(history, position, dims_, k_));
  Var h = nn::tanh_op(t, nn::linear(t, in, *ps_, "imaginer.inpaint.f1"));
  Var geo = nn::linear(t, h, *ps_, "imaginer.inpaint.geo");
  Var sem = nn::softmax_rows(t, nn::linear(t, h, *ps_, "imaginer.inpaint.sem"));
  GeneratedChannels ch;
  ch.geometry = t.val(geo).row(0).transpose();
  ch.semantic = t.val(sem).row(0).transpose();
  return ch;
}

std::optional<VecXd> LearnedImaginer::appearance(const VecXd& parent_appearance,
                                                 const GeneratedChannels& channels,
                                                 const Vec3&, Rng&) {
  Tape t;
  Var in = t.constant(appearance_input(parent_appearance, channels, dims_));
  Var h = nn::tanh_op(t, nn::linear(t, in, *ps_, "imaginer.spade.f1"));
  Var out = nn::linear(t, h, *ps_, "imaginer.spade.f2");
  VecXd app = t.val(out).row(0).transpose();
  double n = app.norm();
  if (n > 1e-12) app /= n;
  return app;
}

// ---------------------------------------------------------------------------
// Tree

ImaginationTree init_tree(const memory::MemoryMap& map, const ChannelDims& dims, int k,
                          int max_depth, int step) {
  if (k < 1) fail(ErrorKind::Config, "history length K must be >= 1");
  if (map.current_id() < 0) fail(ErrorKind::Config, "init_tree requires a current node");
  ImaginationTree tree;
  tree.step_origin = step;
  tree.max_depth = max_depth;
  tree.history_len = k;

  // Last K visited nodes in visit order ((last_visit_step, id) ascending).
  std::vector<std::pair<std::pair<int, int>, int>> visits;
  for (int id : map.ids()) {
    const auto& n = map.node(id);
    if (n.kind == memory::NodeKind::Visited || n.kind == memory::NodeKind::Current)
      visits.push_back({{n.last_visit_step, id}, id});
  }
  std::sort(visits.begin(), visits.end());
  BranchHistory history;
  size_t start = visits.size() > static_cast<size_t>(k) ? visits.size() - k : 0;
  for (size_t i = start; i < visits.size(); ++i) {
    const auto& n = map.node(visits[i].second);
    HistoryTriple tr;
    tr.geometry = n.feature.segment(dims.appearance, dims.geometry);
    tr.semantic = n.feature.segment(dims.appearance + dims.geometry, dims.semantic);
    tr.position = n.position;
    history.push_back(std::move(tr));
  }

  VecXd current_appearance =
      map.node(map.current_id()).feature.segment(0, dims.appearance);

  for (int id : map.ids()) {
    const auto& n = map.node(id);
    if (n.kind != memory::NodeKind::Navigable) continue;
    FrontierEntry e;
    e.position = n.position;
    e.parent_memory_id = id;
    e.history = history;
    e.appearance = current_appearance;
    tree.frontier.push_back(std::move(e));
  }
  return tree;
}

void expand_tree(ImaginationTree& tree, Imaginer& imaginer, ParamStore* params,
                 const ExpandOptions& opt, Rng& rng) {
  if (tree.depth >= tree.max_depth)
    fail(ErrorKind::Domain, "imagination tree expansion exhausted (depth = M)");
  std::vector<FrontierEntry> next;
  for (const FrontierEntry& e : tree.frontier) {
    auto ch = imaginer.structured(e.history, e.position, rng);
    if (!ch) continue;
    if (opt.use_room_model && params && params->has("room.f1.w") && opt.room_weights) {
      VecXd logits = predict_room_logits(*params, ch->semantic, ch->geometry);
      int rt = 0;
      for (int i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[rt]) rt = i;
      ch->semantic = room_reweight(ch->semantic, rt, *opt.room_weights);
    }
    auto app = imaginer.appearance(e.appearance, *ch, e.position, rng);
    if (!app) continue;

    GeneratedNode g;
    g.position = e.position;
    g.appearance = *app;
    g.geometry = ch->geometry;
    g.semantic = ch->semantic;
    g.depth = tree.depth + 1;
    g.parent_memory_id = e.parent_generated < 0 ? e.parent_memory_id : -1;
    g.parent_generated = e.parent_generated;
    int g_index = static_cast<int>(tree.generated.size());
    tree.generated.push_back(g);

    std::vector<PolarWaypoint> waypoints;
    if (opt.use_waypoint_model && params && params->has("waypoint.merge.w")) {
      Heatmap m = predict_heatmap(*params, g.appearance, g.geometry);
      waypoints = nms_peaks(m, opt.nms_max_k, opt.nms_window_a, opt.nms_window_r);
    } else {
      for (int i = 0; i < opt.nms_max_k; ++i) {
        PolarWaypoint w;
        w.heading = rng.uniform(0.0, 2.0 * M_PI);
        w.distance = rng.uniform(opt.random_waypoint_min, opt.random_waypoint_max);
        waypoints.push_back(w);
      }
    }
    for (const auto& w : waypoints) {
      FrontierEntry f;
      f.position = g.position + w.distance * heading_dir(w.heading);  // z = parent z
      f.parent_memory_id = -1;
      f.parent_generated = g_index;
      f.history = e.history;
      HistoryTriple tr;
      tr.geometry = g.geometry;
      tr.semantic = g.semantic;
      tr.position = g.position;
      f.history.push_back(std::move(tr));
      while (static_cast<int>(f.history.size()) > tree.history_len)
        f.history.pop_front();
      f.appearance = g.appearance;
      next.push_back(std::move(f));
    }
  }
  tree.frontier = std::move(next);
  tree.depth += 1;
}

void merge_into_memory(memory::MemoryMap& map, const ImaginationTree& tree) {
  std::vector<int> assigned(tree.generated.size(), -1);
  for (size_t i = 0; i < tree.generated.size(); ++i) {
    const GeneratedNode& g = tree.generated[i];
    VecXd feature(g.appearance.size() + g.geometry.size() + g.semantic.size());
    feature << g.appearance, g.geometry, g.semantic;
    int parent = g.parent_generated >= 0 ? assigned[g.parent_generated]
                                         : g.parent_memory_id;
    if (parent == -1 || !map.has_node(parent)) continue;  // parent pruned earlier
    assigned[i] = map.add_imagination_node(g.position, std::move(feature), parent);
  }
  map.prune_imagination();
}

}  // namespace sali::imagine
