#pragma once

#include <Eigen/Core>
#include <map>
#include <vector>

#include "sali/error.hpp"
#include "sali/geometry.hpp"
#include "sali/world.hpp"

namespace sali::memory {

enum class NodeKind { Visited, Current, Navigable, Imagination, Stop };
enum class Completeness { Full, Partial, Imagined };

const char* kind_name(NodeKind k);
const char* completeness_name(Completeness c);

struct MemoryNode {
  int id = -1;
  NodeKind kind = NodeKind::Navigable;
  VecXd feature;
  Vec3 position = Vec3::Zero();
  int last_visit_step = 0;  // 0 for Navigable, Imagination and Stop
  Completeness completeness = Completeness::Partial;
};

struct EmbeddingInputs {
  VecXd feature;
  // (dx, dy, dz, euclidean distance, heading) relative to the Current node.
  Eigen::Matrix<double, 5, 1> location_code;
  int step_code = 0;
};

struct EdgeInfo {
  double length = 0.0;
  // True when the link came from an observation (world adjacency); imagined
  // links join the graph structure but are not traversable.
  bool observed = false;
};

// cos(f_i, f_j) - mean squared positional difference (position divided by
// pos_scale first; scale 1 is the literal definition).
double pruning_criterion(const MemoryNode& a, const MemoryNode& b,
                         double pos_scale = 1.0);

class MemoryMap {
public:
  static constexpr int kStopId = -1;

  struct Config {
    int imagination_cap = 4;  // N-bar
    double tau = 0.9;
    double pos_scale = 1.0;
  };

  MemoryMap();
  explicit MemoryMap(Config cfg);

  const Config& config() const { return cfg_; }

  // Occupied node becomes Current (previous Current -> Visited), neighbor
  // stubs become or refresh Navigable nodes (re-observed Navigable features
  // average-pooled with the stored ones). Visited features never change.
  void integrate_observation(const world::Observation& obs, int step);

  // New Imagination node wired to its parent (Navigable or Imagination).
  int add_imagination_node(const Vec3& position, VecXd feature, int parent_id);

  // Merges near-duplicates above tau, then evicts down to the imagination
  // cap keeping the nodes most corroborated by the Current node.
  void prune_imagination();

  EmbeddingInputs embedding_inputs(int id, int current_step) const;

  bool has_node(int id) const { return nodes_.count(id) > 0; }
  const MemoryNode& node(int id) const;
  std::vector<int> ids() const;  // ascending; the stop node (-1) first
  int current_id() const { return current_id_; }
  int feature_dim() const { return feature_dim_; }
  int count_kind(NodeKind k) const;
  int imagination_count() const { return count_kind(NodeKind::Imagination); }
  const std::map<std::pair<int, int>, EdgeInfo>& edges() const { return edges_; }
  // All incident edges (observed and imagined), sorted by neighbor id.
  std::vector<std::pair<int, double>> edge_neighbors(int id) const;

  // Hop buckets over memory edges for graph-aware attention:
  // 0..3 exact, 4 = four or more, 5 = disconnected. The stop node counts as
  // one hop from everything.
  Eigen::MatrixXi hop_buckets(const std::vector<int>& order) const;

  // Shortest route through observed edges between real nodes,
  // lexicographic ties.
  std::vector<int> route(int from, int to) const;

  void validate() const;

private:
  void set_edge(int a, int b, bool observed);
  void remove_node(int id);
  void refresh_incident_edges(int id);
  void merge_pair(int keep, int gone, bool average);

  Config cfg_;
  std::map<int, MemoryNode> nodes_;
  std::map<std::pair<int, int>, EdgeInfo> edges_;  // key normalized a < b
  int current_id_ = -1;
  int feature_dim_ = 0;
  int next_imagination_id_ = 1000000;
};

}  // namespace sali::memory
