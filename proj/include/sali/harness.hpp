#pragma once

#include <string>
#include <vector>

#include "sali/imagination.hpp"
#include "sali/json_io.hpp"
#include "sali/metrics.hpp"
#include "sali/policy.hpp"

namespace sali::harness {

struct AgentConfig {
  int max_depth = 2;        // M
  int imagination_cap = 4;  // N-bar
  int history_len = 2;      // K
  double tau = 0.9;
  double pos_scale = 1.0;
  policy::MemoryMode memory_mode = policy::MemoryMode::Hybrid;
  bool gamma_dynamic = true;
  double gamma_fixed = 0.5;
  imagine::ImaginerKind imaginer = imagine::ImaginerKind::Oracle;
  double imaginer_noise = 0.1;
  int max_steps = 15;
  int nms_max_k = 4;
  int nms_window_a = 5;
  int nms_window_r = 3;
  bool use_room_model = true;
  bool use_waypoint_model = true;
  bool separate_imagination_encoder = false;
};

struct TrainConfig {
  int world_count = 50;
  uint64_t seed_base = 0;
  int epochs = 25;
  double lr = 0.3;
  int batch_episodes = 10;
  int aux_epochs = 80;
  double aux_lr = 0.5;
  // The waypoint loss averages over 1440 cells, so its gradients are three
  // orders of magnitude smaller than the other heads.
  double waypoint_lr = 300.0;
  int waypoint_samples = 500;
  int pairs_per_world = 2;  // distinct (start, goal) pairs per training world
};

struct RunConfig {
  world::WorldConfig world;
  std::string world_path;  // optional explicit world file (single-world eval)
  uint64_t seed = 42;
  AgentConfig agent;
  policy::PolicyConfig policy;
  std::string checkpoint;
  int jobs = 1;
  std::string out_dir;
  int eval_world_count = 100;
  uint64_t eval_seed_base = 1000;
  TrainConfig train;
};

RunConfig run_config_from_json(const io::json& j);
io::json run_config_to_json(const RunConfig& cfg);
RunConfig default_run_config();

policy::PolicyConfig policy_config_for(const RunConfig& cfg);
imagine::ChannelDims channel_dims_for(const world::WorldConfig& wc);
// Fresh policy + waypoint + room (and learned-imaginer) tensors, seeded.
void init_all_params(const RunConfig& cfg, nn::ParamStore& params);

// ---------------------------------------------------------------------------
// Episodes

struct EpisodeSpec {
  int id = 0;
  uint64_t world_seed = 0;
  int start = 0;
  int goal = 0;
  std::vector<int> expert;
  world::Instruction instruction;
};

// Deterministic (start, goal) pairs whose shortest paths cross enough rooms
// for the S-categories, with one instruction per category per pair.
std::vector<EpisodeSpec> make_episode_specs(const world::WorldGraph& w,
                                            const world::Vocab& vocab,
                                            uint64_t world_seed, int base_id,
                                            int pairs = 1);

struct StepLog {
  int t = 0;
  double gamma = 0.5;
  int chosen = memory::MemoryMap::kStopId;
  int n_visited = 0;
  int n_navigable = 0;
  int n_imagination = 0;
  double max_fused = 0.0;
  bool fused_equals_sr = true;  // bitwise audit of the reality-only identity
};

struct EpisodeResult {
  int id = 0;
  uint64_t world_seed = 0;
  metrics::EpisodeRecord record;
  metrics::MetricsSummary summary;
  std::vector<StepLog> steps;
  double runner_tl = 0.0;  // accumulated during movement, cross-checked
  io::json memory_final;
};

EpisodeResult run_episode(const world::WorldGraph& w, const EpisodeSpec& spec,
                          nn::ParamStore& params, const policy::PolicyConfig& pcfg,
                          const AgentConfig& acfg, const world::Vocab& vocab, Rng rng);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  metrics::AggregateReport report;
  std::vector<EpisodeResult> episodes;
  std::vector<double> mean_gamma_by_step;
  io::json report_json;
};

// Episodes run in a worker pool (cfg.jobs); per-episode rng streams are
// split from cfg.seed so the result is independent of scheduling. When
// out_dir is non-empty writes report.json, report.csv and episodes/<id>.json.
EvalResult run_eval(const RunConfig& cfg, nn::ParamStore& params);

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  std::vector<double> epoch_losses;
  bool diverged = false;
  double heldout_accuracy = 0.0;
};

// Waypoint + room (and learned-imaginer, when configured) models, then SAP
// imitation over expert paths. Returns per-epoch losses; on divergence the
// parameters are rolled back to the last finite epoch.
TrainResult train_all(RunConfig cfg, nn::ParamStore& params);

TrainResult train_policy_sap(const RunConfig& cfg, nn::ParamStore& params,
                             const std::vector<const world::WorldGraph*>& worlds,
                             const std::vector<std::vector<EpisodeSpec>>& specs);

struct AuxTrainResult {
  std::vector<double> losses;
  double final_accuracy = 0.0;  // room model only
};

AuxTrainResult train_waypoint(nn::ParamStore& params, const imagine::ChannelDims& dims,
                              const std::vector<const world::WorldGraph*>& worlds,
                              int max_samples, int epochs, double lr, uint64_t seed);
AuxTrainResult train_room(nn::ParamStore& params, const imagine::ChannelDims& dims,
                          int room_vocab,
                          const std::vector<const world::WorldGraph*>& worlds,
                          int epochs, double lr, uint64_t seed);
AuxTrainResult train_imaginer(nn::ParamStore& params, const imagine::ChannelDims& dims,
                              int history_len,
                              const std::vector<const world::WorldGraph*>& worlds,
                              int epochs, double lr, uint64_t seed);

// Teacher-forced next-action accuracy over the given specs.
double heldout_accuracy(const RunConfig& cfg, nn::ParamStore& params,
                        const std::vector<const world::WorldGraph*>& worlds,
                        const std::vector<std::vector<EpisodeSpec>>& specs);

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
  std::string label;
  metrics::AggregateReport report;
  double seconds = 0.0;
  std::vector<double> sr_per_episode;
};

struct AblationReport {
  std::string suite;
  std::vector<AblationRow> rows;
  double train_seconds = 0.0;
};

// suite: memory_type | imagination_range | auxiliary_models |
//        decision_weight | instruction_split
AblationReport run_ablation(const std::string& suite, const RunConfig& base,
                            nn::ParamStore& params);
io::json ablation_to_json(const AblationReport& rep);

// ---------------------------------------------------------------------------
// Statistics helpers

// Paired bootstrap: fraction of resamples where mean(a) > mean(b).
double bootstrap_confidence_greater(const std::vector<double>& a,
                                    const std::vector<double>& b, int resamples,
                                    uint64_t seed);
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace sali::harness
