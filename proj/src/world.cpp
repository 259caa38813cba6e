#include "sali/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

namespace sali::world {

namespace {

constexpr double kRoomSize = 3.0;
constexpr double kJitter = 1.35;      // keeps nodes 0.15 m off the cell walls
constexpr double kCloseEdge = 3.0;    // extra intra-room edges below this length

Vec3 cell_center(int cx, int cy) {
  return Vec3(kRoomSize * cx + kRoomSize / 2.0, kRoomSize * cy + kRoomSize / 2.0, 0.0);
}

VecXd make_geometry(const Vec3& pos, const Vec3& center, int room_type, int room_vocab,
                    int dim) {
  // Depth stand-in: a pure function of the pose within the room cell plus a
  // room-type signature, so geometry carries local layout information.
  VecXd g = VecXd::Zero(dim);
  double dx = pos.x() - center.x();
  double dy = pos.y() - center.y();
  double vals[16] = {
      dx,
      dy,
      kRoomSize / 2.0 - dx,
      kRoomSize / 2.0 + dx,
      kRoomSize / 2.0 - dy,
      kRoomSize / 2.0 + dy,
      std::sin(dx),
      std::cos(dx),
      std::sin(dy),
      std::cos(dy),
      std::sin(2.0 * dx),
      std::cos(2.0 * dx),
      std::sin(2.0 * dy),
      std::cos(2.0 * dy),
      std::cos(2.0 * M_PI * room_type / std::max(1, room_vocab)),
      std::sin(2.0 * M_PI * room_type / std::max(1, room_vocab)),
  };
  for (int i = 0; i < dim && i < 16; ++i) g[i] = vals[i];
  for (int i = 16; i < dim; ++i) g[i] = std::sin((i - 14) * (dx + dy));
  return g;
}

VecXd room_anchor(int room_type, int dim) {
  Rng r(0xA11CE5ull + static_cast<uint64_t>(room_type));
  VecXd a(dim);
  for (int i = 0; i < dim; ++i) a[i] = r.normal();
  a.normalize();
  return a;
}

}  // namespace

std::vector<int> room_prior_objects(int room_type, int object_vocab) {
  if (object_vocab <= 0) fail(ErrorKind::Config, "object vocabulary must be positive");
  std::vector<int> objs;
  objs.push_back((2 * room_type) % object_vocab);
  if (object_vocab > 1) objs.push_back((2 * room_type + 1) % object_vocab);
  if (object_vocab > 2) objs.push_back((2 * room_type + 5) % object_vocab);
  std::sort(objs.begin(), objs.end());
  objs.erase(std::unique(objs.begin(), objs.end()), objs.end());
  return objs;
}

WorldGraph::WorldGraph(WorldConfig cfg, std::vector<WorldNode> nodes,
                       std::vector<WorldEdge> edges)
    : cfg_(cfg), nodes_(std::move(nodes)), edges_(std::move(edges)) {
  int max_id = -1;
  for (const auto& n : nodes_) max_id = std::max(max_id, n.id);
  id_to_index_.assign(max_id + 1, -1);
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    if (nodes_[i].id < 0) fail(ErrorKind::Validation, "node id must be non-negative");
    if (id_to_index_[nodes_[i].id] != -1)
      fail(ErrorKind::Validation, "duplicate node id " + std::to_string(nodes_[i].id));
    id_to_index_[nodes_[i].id] = i;
  }
  adj_.assign(nodes_.size(), {});
  for (const auto& e : edges_) {
    adj_[index_of(e.a)].emplace_back(e.b, e.length);
    adj_[index_of(e.b)].emplace_back(e.a, e.length);
  }
  for (auto& nb : adj_) std::sort(nb.begin(), nb.end());
}

int WorldGraph::index_of(int id) const {
  if (id < 0 || id >= static_cast<int>(id_to_index_.size()) || id_to_index_[id] < 0)
    fail(ErrorKind::Lookup, "unknown node id " + std::to_string(id));
  return id_to_index_[id];
}

bool WorldGraph::has_node(int id) const {
  return id >= 0 && id < static_cast<int>(id_to_index_.size()) && id_to_index_[id] >= 0;
}

const WorldNode& WorldGraph::node(int id) const { return nodes_[index_of(id)]; }

const std::vector<std::pair<int, double>>& WorldGraph::neighbors(int id) const {
  return adj_[index_of(id)];
}

void WorldGraph::validate() const {
  std::set<std::pair<int, int>> seen;
  for (size_t i = 0; i < edges_.size(); ++i) {
    const auto& e = edges_[i];
    if (e.a == e.b)
      fail(ErrorKind::Validation, "edge " + std::to_string(i) + " is a self-loop");
    if (!has_node(e.a) || !has_node(e.b))
      fail(ErrorKind::Validation, "edge " + std::to_string(i) + " references unknown node");
    auto key = std::minmax(e.a, e.b);
    if (!seen.insert({key.first, key.second}).second)
      fail(ErrorKind::Validation, "edge " + std::to_string(i) + " duplicates an earlier edge");
    double d = (node(e.a).position - node(e.b).position).norm();
    if (std::abs(d - e.length) > 1e-9)
      fail(ErrorKind::Validation,
           "edge " + std::to_string(i) + " length " + std::to_string(e.length) +
               " does not match endpoint distance " + std::to_string(d));
  }
  for (const auto& n : nodes_) {
    if (std::abs(n.appearance.norm() - 1.0) > 1e-9)
      fail(ErrorKind::Validation,
           "node " + std::to_string(n.id) + " appearance is not unit norm");
    if (n.semantic.minCoeff() < 0.0 || std::abs(n.semantic.sum() - 1.0) > 1e-9)
      fail(ErrorKind::Validation,
           "node " + std::to_string(n.id) + " semantic is not a distribution");
  }
  if (nodes_.empty()) fail(ErrorKind::Validation, "world has no nodes");
  // BFS connectivity.
  std::vector<bool> visited(nodes_.size(), false);
  std::queue<int> q;
  q.push(nodes_[0].id);
  visited[index_of(nodes_[0].id)] = true;
  int reached = 1;
  while (!q.empty()) {
    int cur = q.front();
    q.pop();
    for (const auto& [nb, len] : neighbors(cur)) {
      int idx = index_of(nb);
      if (!visited[idx]) {
        visited[idx] = true;
        ++reached;
        q.push(nb);
      }
    }
  }
  if (reached != static_cast<int>(nodes_.size()))
    fail(ErrorKind::Validation, "world graph is not connected");
}

WorldGraph generate_world(const WorldConfig& cfg) {
  if (cfg.rooms < 1 || cfg.nodes_per_room < 1)
    fail(ErrorKind::Config, "rooms and nodes_per_room must be >= 1");
  if (cfg.object_vocab < 1 || cfg.room_vocab < 1)
    fail(ErrorKind::Config, "vocabulary sizes must be >= 1");
  if (cfg.appearance_dim < 1 || cfg.geometry_dim < 1)
    fail(ErrorKind::Config, "feature dimensions must be >= 1");

  Rng rng(cfg.seed);
  int gw = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.rooms))));

  // Room types: a shuffled cycle so every type appears before any repeats.
  std::vector<int> type_perm(cfg.room_vocab);
  for (int i = 0; i < cfg.room_vocab; ++i) type_perm[i] = i;
  for (int i = cfg.room_vocab - 1; i > 0; --i)
    std::swap(type_perm[i], type_perm[rng.below(static_cast<uint64_t>(i + 1))]);

  std::vector<WorldNode> nodes;
  std::vector<std::vector<int>> room_members(cfg.rooms);
  for (int k = 0; k < cfg.rooms; ++k) {
    int cx = k % gw;
    int cy = k / gw;
    Vec3 center = cell_center(cx, cy);
    int room_type = type_perm[k % cfg.room_vocab];
    auto prior = room_prior_objects(room_type, cfg.object_vocab);
    for (int j = 0; j < cfg.nodes_per_room; ++j) {
      WorldNode n;
      n.id = static_cast<int>(nodes.size());
      n.room_type = room_type;
      n.position = center + Vec3(rng.uniform(-kJitter, kJitter),
                                 rng.uniform(-kJitter, kJitter), 0.0);
      n.appearance = room_anchor(room_type, cfg.appearance_dim);
      for (int i = 0; i < cfg.appearance_dim; ++i) n.appearance[i] += 0.3 * rng.normal();
      n.appearance.normalize();
      n.geometry = make_geometry(n.position, center, room_type, cfg.room_vocab,
                                 cfg.geometry_dim);
      VecXd sem = VecXd::Zero(cfg.object_vocab);
      for (int v = 0; v < cfg.object_vocab; ++v) sem[v] = 0.02 * rng.uniform();
      for (int obj : prior) sem[obj] += 0.5 + 0.5 * rng.uniform();
      sem /= sem.sum();
      n.semantic = sem;
      room_members[k].push_back(n.id);
      nodes.push_back(std::move(n));
    }
  }

  std::set<std::pair<int, int>> edge_set;
  auto add_edge = [&](int a, int b) {
    if (a == b) return;
    edge_set.insert(std::minmax(a, b));
  };

  // Intra-room: nearest-neighbor spanning tree plus short extra edges.
  for (int k = 0; k < cfg.rooms; ++k) {
    const auto& mem = room_members[k];
    std::vector<bool> in_tree(mem.size(), false);
    in_tree[0] = true;
    for (size_t added = 1; added < mem.size(); ++added) {
      double best = std::numeric_limits<double>::infinity();
      int bi = -1, bj = -1;
      for (size_t i = 0; i < mem.size(); ++i) {
        if (!in_tree[i]) continue;
        for (size_t j = 0; j < mem.size(); ++j) {
          if (in_tree[j]) continue;
          double d = (nodes[mem[i]].position - nodes[mem[j]].position).norm();
          if (d < best - 1e-12) {
            best = d;
            bi = static_cast<int>(i);
            bj = static_cast<int>(j);
          }
        }
      }
      in_tree[bj] = true;
      add_edge(mem[bi], mem[bj]);
    }
    for (size_t i = 0; i < mem.size(); ++i)
      for (size_t j = i + 1; j < mem.size(); ++j)
        if ((nodes[mem[i]].position - nodes[mem[j]].position).norm() <= kCloseEdge)
          add_edge(mem[i], mem[j]);
  }

  // Doors between grid-adjacent rooms: closest cross-room node pair.
  for (int k = 0; k < cfg.rooms; ++k) {
    int cx = k % gw;
    for (int other : {k + 1, k + gw}) {
      if (other >= cfg.rooms) continue;
      if (other == k + 1 && (cx + 1) % gw == 0) continue;  // row wrap
      double best = std::numeric_limits<double>::infinity();
      int ba = -1, bb = -1;
      for (int a : room_members[k])
        for (int b : room_members[other]) {
          double d = (nodes[a].position - nodes[b].position).norm();
          if (d < best - 1e-12) {
            best = d;
            ba = a;
            bb = b;
          }
        }
      add_edge(ba, bb);
    }
  }

  std::vector<WorldEdge> edges;
  for (const auto& [a, b] : edge_set) {
    WorldEdge e;
    e.a = a;
    e.b = b;
    e.length = (nodes[a].position - nodes[b].position).norm();
    edges.push_back(e);
  }
  return WorldGraph(cfg, std::move(nodes), std::move(edges));
}

Observation observe(const WorldGraph& world, int node_id, Rng& rng) {
  const WorldNode& n = world.node(node_id);
  Observation obs;
  obs.node_id = node_id;
  obs.position = n.position;
  obs.appearance = n.appearance;
  obs.geometry = n.geometry;
  obs.semantic = n.semantic;
  double noise = world.config().stub_noise;
  for (const auto& [nb, len] : world.neighbors(node_id)) {
    const WorldNode& m = world.node(nb);
    NeighborStub stub;
    stub.id = nb;
    stub.position = m.position;
    VecXd f(m.appearance.size() + m.geometry.size() + m.semantic.size());
    f << m.appearance, m.geometry, m.semantic;
    if (noise > 0.0)
      for (int i = 0; i < f.size(); ++i) f[i] += rng.normal(0.0, noise);
    stub.feature = std::move(f);
    obs.neighbor_stubs.push_back(std::move(stub));
  }
  return obs;
}

PathResult shortest_path(const WorldGraph& world, int a, int b) {
  if (!world.has_node(a) || !world.has_node(b))
    fail(ErrorKind::Lookup, "shortest_path: unknown endpoint");
  if (a == b) return {{a}, 0.0};

  // Dijkstra from the goal, then a greedy lexicographic walk from the start:
  // at each node take the smallest-id neighbor that still lies on some
  // shortest path.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> ids;
  for (const auto& n : world.nodes()) ids.push_back(n.id);
  int max_id = *std::max_element(ids.begin(), ids.end());
  std::vector<double> dist(max_id + 1, inf);
  using QE = std::pair<double, int>;
  std::priority_queue<QE, std::vector<QE>, std::greater<QE>> pq;
  dist[b] = 0.0;
  pq.push({0.0, b});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u] + 1e-15) continue;
    for (const auto& [v, w] : world.neighbors(u)) {
      if (dist[u] + w < dist[v] - 1e-15) {
        dist[v] = dist[u] + w;
        pq.push({dist[v], v});
      }
    }
  }
  if (dist[a] == inf)
    fail(ErrorKind::NoPath, "no path between " + std::to_string(a) + " and " +
                                std::to_string(b));

  double total = dist[a];
  double tol = 1e-9 * std::max(1.0, total);
  PathResult res;
  res.path.push_back(a);
  res.length = total;
  int cur = a;
  double acc = 0.0;
  while (cur != b) {
    int next = -1;
    double next_w = 0.0;
    for (const auto& [v, w] : world.neighbors(cur)) {  // sorted by id
      if (std::abs(acc + w + dist[v] - total) <= tol) {
        next = v;
        next_w = w;
        break;
      }
    }
    if (next < 0) fail(ErrorKind::NoPath, "shortest_path reconstruction failed");
    acc += next_w;
    cur = next;
    res.path.push_back(cur);
  }
  return res;
}

// ---------------------------------------------------------------------------

std::string category_name(InstrCategory c) {
  switch (c) {
    case InstrCategory::S1: return "S1";
    case InstrCategory::S2: return "S2";
    case InstrCategory::S3: return "S3";
    default: return "plain";
  }
}

InstrCategory category_from_name(const std::string& name) {
  if (name == "S1") return InstrCategory::S1;
  if (name == "S2") return InstrCategory::S2;
  if (name == "S3") return InstrCategory::S3;
  if (name == "plain") return InstrCategory::Plain;
  fail(ErrorKind::Config, "unknown instruction category: " + name);
}

Vocab::Vocab(int room_vocab, int object_vocab)
    : room_vocab_(room_vocab), object_vocab_(object_vocab) {
  for (int r = 0; r < room_vocab; ++r) {
    names_.push_back("room" + std::to_string(r));
    types_.push_back(TokenType::Room);
  }
  for (int o = 0; o < object_vocab; ++o) {
    names_.push_back("obj" + std::to_string(o));
    types_.push_back(TokenType::Object);
  }
  for (const char* d : {"north", "east", "south", "west"}) {
    names_.push_back(d);
    types_.push_back(TokenType::Direction);
  }
  for (const char* w : {"walk", "into", "past", "then", "to", "the", "and", "stop"}) {
    names_.push_back(w);
    types_.push_back(TokenType::Function);
  }
}

int Vocab::room_token(int room_type) const {
  if (room_type < 0 || room_type >= room_vocab_)
    fail(ErrorKind::Lookup, "room type out of range");
  return room_type;
}

int Vocab::object_token(int object) const {
  if (object < 0 || object >= object_vocab_)
    fail(ErrorKind::Lookup, "object out of range");
  return room_vocab_ + object;
}

int Vocab::direction_token(int d) const {
  if (d < 0 || d >= 4) fail(ErrorKind::Lookup, "direction out of range");
  return room_vocab_ + object_vocab_ + d;
}

int Vocab::function_token(const std::string& word) const {
  for (int i = room_vocab_ + object_vocab_ + 4; i < size(); ++i)
    if (names_[i] == word) return i;
  fail(ErrorKind::Lookup, "unknown function word: " + word);
}

TokenType Vocab::type_of(int token) const {
  if (token < 0 || token >= size()) fail(ErrorKind::Lookup, "token out of range");
  return types_[token];
}

const std::string& Vocab::name(int token) const {
  if (token < 0 || token >= size()) fail(ErrorKind::Lookup, "token out of range");
  return names_[token];
}

Instruction generate_instruction(const WorldGraph& world,
                                 const std::vector<int>& expert_path,
                                 InstrCategory category, const Vocab& vocab) {
  if (expert_path.empty()) fail(ErrorKind::Generation, "empty expert path");
  for (size_t i = 0; i + 1 < expert_path.size(); ++i) {
    bool adjacent = false;
    for (const auto& [nb, len] : world.neighbors(expert_path[i]))
      if (nb == expert_path[i + 1]) adjacent = true;
    if (!adjacent) fail(ErrorKind::Generation, "expert path not valid in world");
  }

  // Rooms entered after the start, with the path node at each entry.
  struct Leg {
    int room_type;
    int entry_node;
  };
  std::vector<Leg> legs;
  int prev_room = world.node(expert_path.front()).room_type;
  for (size_t i = 1; i < expert_path.size(); ++i) {
    int rt = world.node(expert_path[i]).room_type;
    if (rt != prev_room) {
      legs.push_back({rt, expert_path[i]});
      prev_room = rt;
    }
  }

  auto leg_object = [&](const Leg& leg) {
    const VecXd& sem = world.node(leg.entry_node).semantic;
    int best = 0;
    for (int v = 1; v < sem.size(); ++v)
      if (sem[v] > sem[best]) best = v;
    return best;
  };

  Instruction instr;
  instr.category = category;
  instr.goal_node_id = expert_path.back();
  auto& toks = instr.tokens;
  int walk = vocab.function_token("walk");
  int into = vocab.function_token("into");
  int past = vocab.function_token("past");
  int then = vocab.function_token("then");
  int stop = vocab.function_token("stop");

  switch (category) {
    case InstrCategory::S1:
      if (legs.size() < 2)
        fail(ErrorKind::Generation, "S1 needs a path crossing at least 3 rooms");
      toks.push_back(walk);
      for (size_t i = 0; i < legs.size(); ++i) {
        if (i > 0) toks.push_back(then);
        toks.push_back(into);
        toks.push_back(vocab.room_token(legs[i].room_type));
      }
      toks.push_back(stop);
      break;
    case InstrCategory::S2:
      if (legs.size() < 2)
        fail(ErrorKind::Generation, "S2 needs a path crossing at least 3 rooms");
      toks.push_back(walk);
      for (size_t i = 0; i < legs.size(); ++i) {
        if (i > 0) toks.push_back(then);
        toks.push_back(past);
        toks.push_back(vocab.object_token(leg_object(legs[i])));
      }
      toks.push_back(stop);
      break;
    case InstrCategory::S3:
      if (legs.size() < 2)
        fail(ErrorKind::Generation, "S3 needs a path crossing at least 3 rooms");
      toks.push_back(walk);
      for (size_t i = 0; i < legs.size(); ++i) {
        if (i > 0) toks.push_back(then);
        toks.push_back(into);
        toks.push_back(vocab.room_token(legs[i].room_type));
        toks.push_back(past);
        toks.push_back(vocab.object_token(leg_object(legs[i])));
      }
      toks.push_back(stop);
      break;
    case InstrCategory::Plain:
      toks.push_back(walk);
      toks.push_back(vocab.function_token("to"));
      toks.push_back(vocab.function_token("the"));
      toks.push_back(vocab.room_token(world.node(expert_path.back()).room_type));
      toks.push_back(stop);
      break;
  }
  return instr;
}

}  // namespace sali::world
