#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sali/memory_map.hpp"
#include "sali/nn.hpp"
#include "sali/world.hpp"

namespace sali::policy {

struct PolicyConfig {
  int d_model = 64;
  int heads = 4;
  int instr_layers = 2;  // instruction self-attention depth
  int cross_layers = 2;  // GASA + cross-attention rounds
  int d_ff = 128;
  int vocab_size = 0;
  int max_tokens = 48;
  int feature_dim = 0;  // appearance + geometry + semantic
  bool separate_imagination_encoder = false;
};

// Which score streams feed the fused decision.
enum class MemoryMode { Reality, Imagination, Hybrid };

MemoryMode memory_mode_from_name(const std::string& name);
std::string memory_mode_name(MemoryMode m);

// All learnable tensors under the "policy." prefix.
void init_policy_params(nn::ParamStore& ps, const PolicyConfig& cfg, Rng& rng);

// Per-head attention probability rows captured for inspection.
struct AttnDiag {
  std::vector<nn::Mat> head_probs;
};

// Token + positional + type embeddings followed by self-attention layers.
nn::Var encode_instruction(nn::Tape& t, nn::ParamStore& ps, const PolicyConfig& cfg,
                           const std::vector<int>& tokens, const world::Vocab& vocab,
                           AttnDiag* diag = nullptr);

// One self-attention block with additive hop-bucket biases, post-norm
// residuals and a position-wise feed-forward. Exposed for direct testing.
nn::Var gasa_block(nn::Tape& t, nn::ParamStore& ps, const std::string& prefix,
                   nn::Var x, int heads, const Eigen::MatrixXi* buckets,
                   AttnDiag* diag = nullptr);

// Snapshot of the memory map arranged for the transformer.
struct MapView {
  std::vector<int> order;        // node ids, row order of `inputs`
  nn::Mat inputs;                // n x (feature_dim + 5 + 1 + 5)
  Eigen::MatrixXi buckets;       // n x n hop buckets
  std::vector<int> real_rows;    // visited/current/navigable/stop rows
  std::vector<int> imag_rows;
  std::vector<int> imag_ids;
  std::vector<int> candidate_ids;   // stop first (id -1), then navigable ids
  std::vector<int> candidate_rows;  // rows matching candidate_ids
  int stop_candidate = 0;           // index of the stop entry in candidates
  // candidate index (into candidate_ids) each imagination node fuses into.
  std::vector<int> imag_assign;
};

MapView build_map_view(const memory::MemoryMap& map, int current_step);
// Same content in an arbitrary caller-supplied node order (for equivariance
// tests).
MapView build_map_view(const memory::MemoryMap& map, int current_step,
                       const std::vector<int>& order);

// Node projection, then alternating graph-aware self-attention and
// cross-attention to instruction tokens.
nn::Var cross_modal_encode(nn::Tape& t, nn::ParamStore& ps, const PolicyConfig& cfg,
                           const MapView& view, nn::Var instr,
                           AttnDiag* diag = nullptr);

struct DecisionVars {
  nn::Var node_vecs;  // n x d
  nn::Var s_r;        // candidates x 1 (navigable + stop)
  nn::Var s_i;        // imag x 1 (invalid when no imagination nodes)
  nn::Var gamma;      // 1 x 1
  nn::Var fused;      // candidates x 1
};

// Full decision head: scores, fusion factor, fused scores.
// gamma_override >= 0 replaces the dynamic factor (fixed-weight ablation).
DecisionVars decide(nn::Tape& t, nn::ParamStore& ps, const PolicyConfig& cfg,
                    const MapView& view, nn::Var instr, MemoryMode mode,
                    double gamma_override = -1.0, AttnDiag* diag = nullptr);

// Plain-value score set for inference and logging.
struct ScoreSet {
  std::map<int, double> s_r;  // navigable + stop, by node id
  std::map<int, double> s_i;  // imagination nodes, by node id
  double gamma = 0.5;
  std::map<int, double> fused;
};

ScoreSet run_policy(nn::ParamStore& ps, const PolicyConfig& cfg,
                    const memory::MemoryMap& map, int current_step,
                    const std::vector<int>& tokens, const world::Vocab& vocab,
                    MemoryMode mode, double gamma_override = -1.0);

// Reference fusion rule: each imagination node adds gamma * score to its
// Euclidean-nearest navigable node (ties to the lowest id); stop passes
// through.
std::map<int, double> fuse_scores(const std::map<int, double>& s_r,
                                  const std::map<int, double>& s_i, double gamma,
                                  const memory::MemoryMap& map);

struct Action {
  bool stop = false;
  int target = memory::MemoryMap::kStopId;
  std::vector<int> route;  // current .. target through real edges
};

enum class SelectMode { Greedy, Sample };

Action select_action(const std::map<int, double>& fused, const memory::MemoryMap& map,
                     SelectMode mode, double temperature, Rng& rng);

// Cross-entropy of softmax over fused scores against the expert's choice.
double sap_loss(const std::map<int, double>& fused, int expert_target);

// Builds a loss closure for gradient checking the full policy on one
// decision (teacher forcing against expert_candidate).
nn::LossFn make_sap_loss_fn(nn::ParamStore& ps, const PolicyConfig& cfg,
                            const MapView& view, std::vector<int> tokens,
                            const world::Vocab& vocab, int expert_candidate);

}  // namespace sali::policy
