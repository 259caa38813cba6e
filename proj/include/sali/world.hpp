#pragma once

#include <string>
#include <vector>

#include "sali/error.hpp"
#include "sali/geometry.hpp"
#include "sali/rng.hpp"

namespace sali::world {

struct WorldConfig {
  int rooms = 8;
  int nodes_per_room = 6;
  int object_vocab = 16;
  int room_vocab = 8;
  int appearance_dim = 32;
  int geometry_dim = 16;
  double stub_noise = 0.0;  // std of zero-mean Gaussian on neighbor stub features
  uint64_t seed = 0;
};

struct WorldNode {
  int id = -1;
  Vec3 position = Vec3::Zero();
  VecXd appearance;  // unit norm
  VecXd geometry;
  VecXd semantic;    // probability vector over object vocabulary
  int room_type = 0;
};

struct WorldEdge {
  int a = -1;
  int b = -1;
  double length = 0.0;
};

class WorldGraph {
public:
  WorldGraph() = default;
  WorldGraph(WorldConfig cfg, std::vector<WorldNode> nodes, std::vector<WorldEdge> edges);

  const WorldConfig& config() const { return cfg_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }
  const std::vector<WorldNode>& nodes() const { return nodes_; }
  const std::vector<WorldEdge>& edges() const { return edges_; }

  bool has_node(int id) const;
  const WorldNode& node(int id) const;
  // Sorted by neighbor id.
  const std::vector<std::pair<int, double>>& neighbors(int id) const;

  // Validates symmetry, connectivity and edge-length consistency; throws
  // Error(Validation) naming the offending node or edge.
  void validate() const;

private:
  int index_of(int id) const;

  WorldConfig cfg_;
  std::vector<WorldNode> nodes_;
  std::vector<WorldEdge> edges_;
  std::vector<int> id_to_index_;  // dense map, -1 for absent
  std::vector<std::vector<std::pair<int, double>>> adj_;
};

struct NeighborStub {
  int id = -1;
  Vec3 position = Vec3::Zero();
  VecXd feature;  // concatenated (appearance, geometry, semantic) + noise
};

struct Observation {
  int node_id = -1;
  Vec3 position = Vec3::Zero();
  VecXd appearance;
  VecXd geometry;
  VecXd semantic;
  std::vector<NeighborStub> neighbor_stubs;
};

// Objects a given room type is biased towards during generation. The first
// two entries are unique to the room type when object_vocab >= 2 * room
// types, which keeps room types separable from semantics.
std::vector<int> room_prior_objects(int room_type, int object_vocab);

WorldGraph generate_world(const WorldConfig& cfg);

// Full channels for node_id plus noisy stubs for each neighbor. Uses
// cfg.stub_noise; rng is only consumed when stub_noise > 0.
Observation observe(const WorldGraph& world, int node_id, Rng& rng);

struct PathResult {
  std::vector<int> path;
  double length = 0.0;
};

// Minimal total edge length; among equals, the lexicographically smallest
// node-id sequence.
PathResult shortest_path(const WorldGraph& world, int a, int b);

// ---------------------------------------------------------------------------
// Instructions

enum class TokenType { Room, Object, Direction, Function };

enum class InstrCategory { S1, S2, S3, Plain };

std::string category_name(InstrCategory c);
InstrCategory category_from_name(const std::string& name);

class Vocab {
public:
  Vocab(int room_vocab, int object_vocab);

  int size() const { return static_cast<int>(names_.size()); }
  int room_token(int room_type) const;
  int object_token(int object) const;
  int direction_token(int d) const;  // 0..3 = north, east, south, west
  int function_token(const std::string& word) const;
  TokenType type_of(int token) const;
  const std::string& name(int token) const;

private:
  int room_vocab_;
  int object_vocab_;
  std::vector<std::string> names_;
  std::vector<TokenType> types_;
};

struct Instruction {
  std::vector<int> tokens;
  InstrCategory category = InstrCategory::Plain;
  int goal_node_id = -1;
};

// Token sequence mentioning rooms/objects along expert_path per category
// constraints; throws Error(Generation) when unsatisfiable on this path.
Instruction generate_instruction(const WorldGraph& world,
                                 const std::vector<int>& expert_path,
                                 InstrCategory category, const Vocab& vocab);

}  // namespace sali::world
