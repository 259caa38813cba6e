#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "sali/memory_map.hpp"
#include "sali/nn.hpp"
#include "sali/world.hpp"

namespace sali::imagine {

// Channel widths of the concatenated node feature (appearance | geometry |
// semantic).
struct ChannelDims {
  int appearance = 32;
  int geometry = 16;
  int semantic = 16;
  int feature() const { return appearance + geometry + semantic; }
};

// ---------------------------------------------------------------------------
// Waypoint heatmap: polar occupancy over 360 degrees x 3 meters.

struct Heatmap {
  static constexpr int kAngularBins = 120;  // 3 degrees each
  static constexpr int kRadialBins = 12;    // 0.25 m each
  static constexpr double kRadialBin = 0.25;
  static constexpr double kRange = 3.0;

  Eigen::MatrixXd grid = Eigen::MatrixXd::Zero(kAngularBins, kRadialBins);
};

struct PolarWaypoint {
  double heading = 0.0;  // radians, memory-module convention
  double distance = 0.0;
};

// Wrap-aware Gaussian splat (sigma = 1 bin, truncated at 3 sigma) per
// neighbor; cells combine by max so values stay in [0, 1].
Heatmap heatmap_gt(const std::vector<PolarWaypoint>& neighbors);

// Strict local maxima of the wrap-aware window, strongest first, mapped to
// bin centers.
std::vector<PolarWaypoint> nms_peaks(const Heatmap& m, int max_k, int window_a = 5,
                                     int window_r = 3);

// Mean squared per-cell difference.
double waypoint_loss(const Heatmap& predicted, const Heatmap& gt);

// Lite waypoint model: [appearance; geometry] -> merge layer -> two-layer
// perceptron -> 1440 logits -> sigmoid grid.
void init_waypoint_params(nn::ParamStore& ps, const ChannelDims& dims, Rng& rng);
nn::Var waypoint_logits(nn::Tape& t, nn::ParamStore& ps, nn::Var input);  // 1 x 1440
Heatmap predict_heatmap(nn::ParamStore& ps, const VecXd& appearance,
                        const VecXd& geometry);

// ---------------------------------------------------------------------------
// Room-type model and semantic reweighting.

struct RoomWeights {
  std::vector<VecXd> w;  // per room type, non-negative, object-vocab length
};

// 2.0 on each room's generation-prior objects, 0 elsewhere.
RoomWeights default_room_weights(int room_vocab, int object_vocab);

// output proportional to semantic .* (1 + w[room_type]).
VecXd room_reweight(const VecXd& semantic, int room_type, const RoomWeights& weights);

void init_room_params(nn::ParamStore& ps, const ChannelDims& dims, int room_vocab,
                      Rng& rng);
nn::Var room_logits(nn::Tape& t, nn::ParamStore& ps, nn::Var input);  // 1 x room_vocab
VecXd predict_room_logits(nn::ParamStore& ps, const VecXd& semantic,
                          const VecXd& geometry);

// Cross-entropy of softmax(logits) against the true room label.
double room_loss(const VecXd& predicted_logits, int true_room);

// -lambda * sum(gt_s .* log pred_s) + (1 - lambda) * mean |pred_g - gt_g|.
// Probabilities below 1e-12 are clamped; each clamp bumps a global counter.
double inpaint_lite_loss(const VecXd& pred_semantic, const VecXd& pred_geometry,
                         const VecXd& gt_semantic, const VecXd& gt_geometry,
                         double lambda);
long inpaint_clamp_warnings();
void reset_inpaint_clamp_warnings();

// ---------------------------------------------------------------------------
// Imaginers: stand-ins for the inpaint + spade generators.

struct HistoryTriple {
  VecXd geometry;
  VecXd semantic;
  Vec3 position = Vec3::Zero();
};

using BranchHistory = std::deque<HistoryTriple>;

struct GeneratedChannels {
  VecXd geometry;
  VecXd semantic;
};

class Imaginer {
public:
  virtual ~Imaginer() = default;
  // Inpaint stand-in: structured channels at a query position, or nothing.
  virtual std::optional<GeneratedChannels> structured(const BranchHistory& history,
                                                      const Vec3& position,
                                                      Rng& rng) = 0;
  // Spade stand-in: appearance conditioned on the parent appearance and the
  // freshly generated structured channels.
  virtual std::optional<VecXd> appearance(const VecXd& parent_appearance,
                                          const GeneratedChannels& channels,
                                          const Vec3& position, Rng& rng) = 0;
};

class NullImaginer : public Imaginer {
public:
  std::optional<GeneratedChannels> structured(const BranchHistory&, const Vec3&,
                                              Rng&) override {
    return std::nullopt;
  }
  std::optional<VecXd> appearance(const VecXd&, const GeneratedChannels&, const Vec3&,
                                  Rng&) override {
    return std::nullopt;
  }
};

// Ground truth of the nearest world node plus Gaussian noise.
class OracleImaginer : public Imaginer {
public:
  OracleImaginer(const world::WorldGraph& world, double noise_std)
      : world_(&world), noise_(noise_std) {}

  std::optional<GeneratedChannels> structured(const BranchHistory& history,
                                              const Vec3& position, Rng& rng) override;
  std::optional<VecXd> appearance(const VecXd& parent_appearance,
                                  const GeneratedChannels& channels,
                                  const Vec3& position, Rng& rng) override;

private:
  const world::WorldGraph* world_;
  double noise_;
};

// Perceptrons over flattened history (trained with the lite losses).
class LearnedImaginer : public Imaginer {
public:
  LearnedImaginer(nn::ParamStore& ps, ChannelDims dims, int history_len)
      : ps_(&ps), dims_(dims), k_(history_len) {}

  static void init_params(nn::ParamStore& ps, const ChannelDims& dims, int history_len,
                          Rng& rng);
  static nn::Mat structured_input(const BranchHistory& history, const Vec3& position,
                                  const ChannelDims& dims, int history_len);
  static nn::Mat appearance_input(const VecXd& parent_appearance,
                                  const GeneratedChannels& channels,
                                  const ChannelDims& dims);

  std::optional<GeneratedChannels> structured(const BranchHistory& history,
                                              const Vec3& position, Rng& rng) override;
  std::optional<VecXd> appearance(const VecXd& parent_appearance,
                                  const GeneratedChannels& channels,
                                  const Vec3& position, Rng& rng) override;

private:
  nn::ParamStore* ps_;
  ChannelDims dims_;
  int k_;
};

enum class ImaginerKind { Oracle, Learned, Null };
ImaginerKind imaginer_kind_from_name(const std::string& name);
std::string imaginer_kind_name(ImaginerKind k);

// ---------------------------------------------------------------------------
// Recurrent imagination tree.

struct GeneratedNode {
  Vec3 position = Vec3::Zero();
  VecXd appearance;
  VecXd geometry;
  VecXd semantic;
  int depth = 0;
  int parent_memory_id = -1;  // navigable node id, when rooted in memory
  int parent_generated = -1;  // index into generated, when rooted in the tree
};

struct FrontierEntry {
  Vec3 position = Vec3::Zero();
  int parent_memory_id = -1;
  int parent_generated = -1;
  BranchHistory history;  // last K (geometry, semantic, position) triples
  VecXd appearance;       // branch appearance r
};

struct ImaginationTree {
  int step_origin = 0;
  int depth = 0;      // N: completed expansion rounds
  int max_depth = 2;  // M
  int history_len = 2;  // K
  std::vector<FrontierEntry> frontier;
  std::vector<GeneratedNode> generated;
};

// History from the last K visited nodes, appearance from the Current node,
// frontier from the Navigable nodes.
ImaginationTree init_tree(const memory::MemoryMap& map, const ChannelDims& dims, int k,
                          int max_depth, int step);

struct ExpandOptions {
  ChannelDims dims;
  bool use_room_model = true;
  bool use_waypoint_model = true;
  int nms_max_k = 4;
  int nms_window_a = 5;
  int nms_window_r = 3;
  double random_waypoint_min = 0.5;  // fallback sampling range, meters
  double random_waypoint_max = 2.5;
  const RoomWeights* room_weights = nullptr;
};

// One expansion round: structured channels, room reweighting, appearance,
// then new frontier positions from the waypoint model (or random directions
// when the model is disabled). Throws when depth has reached max_depth.
void expand_tree(ImaginationTree& tree, Imaginer& imaginer, nn::ParamStore* params,
                 const ExpandOptions& opt, Rng& rng);

// Generated nodes become Imagination nodes wired to their parents; the map
// then prunes back to its cap.
void merge_into_memory(memory::MemoryMap& map, const ImaginationTree& tree);

}  // namespace sali::imagine
