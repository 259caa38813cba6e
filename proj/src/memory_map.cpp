#include "sali/memory_map.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace sali::memory {

const char* kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Visited: return "visited";
    case NodeKind::Current: return "current";
    case NodeKind::Navigable: return "navigable";
    case NodeKind::Imagination: return "imagination";
    case NodeKind::Stop: return "stop";
  }
  return "?";
}

const char* completeness_name(Completeness c) {
  switch (c) {
    case Completeness::Full: return "full";
    case Completeness::Partial: return "partial";
    case Completeness::Imagined: return "imagined";
  }
  return "?";
}

double pruning_criterion(const MemoryNode& a, const MemoryNode& b, double pos_scale) {
  double na = a.feature.norm();
  double nb = b.feature.norm();
  if (na < 1e-300 || nb < 1e-300)
    fail(ErrorKind::Numeric, "pruning criterion undefined for zero-norm feature");
  double cosine = a.feature.dot(b.feature) / (na * nb);
  Vec3 d = (a.position - b.position) / pos_scale;
  double mse = d.squaredNorm() / 3.0;
  return cosine - mse;
}

MemoryMap::MemoryMap() : MemoryMap(Config()) {}

MemoryMap::MemoryMap(Config cfg) : cfg_(cfg) {
  if (cfg_.imagination_cap < 0) fail(ErrorKind::Config, "imagination cap must be >= 0");
  MemoryNode stop;
  stop.id = kStopId;
  stop.kind = NodeKind::Stop;
  stop.completeness = Completeness::Full;
  stop.last_visit_step = 0;
  nodes_[kStopId] = std::move(stop);
}

const MemoryNode& MemoryMap::node(int id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) fail(ErrorKind::Lookup, "unknown memory node " + std::to_string(id));
  return it->second;
}

std::vector<int> MemoryMap::ids() const {
  std::vector<int> out;
  out.reserve(nodes_.size());
  for (const auto& [id, n] : nodes_) out.push_back(id);
  return out;  // std::map keeps them ascending, stop (-1) first
}

int MemoryMap::count_kind(NodeKind k) const {
  int c = 0;
  for (const auto& [id, n] : nodes_)
    if (n.kind == k) ++c;
  return c;
}

std::vector<std::pair<int, double>> MemoryMap::edge_neighbors(int id) const {
  std::vector<std::pair<int, double>> out;
  for (const auto& [key, info] : edges_) {
    if (key.first == id) out.emplace_back(key.second, info.length);
    else if (key.second == id) out.emplace_back(key.first, info.length);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void MemoryMap::set_edge(int a, int b, bool observed) {
  if (a == b) return;
  auto key = std::minmax(a, b);
  EdgeInfo& e = edges_[{key.first, key.second}];
  e.length = (nodes_.at(a).position - nodes_.at(b).position).norm();
  e.observed = e.observed || observed;
}

void MemoryMap::refresh_incident_edges(int id) {
  for (auto& [key, info] : edges_)
    if (key.first == id || key.second == id)
      info.length =
          (nodes_.at(key.first).position - nodes_.at(key.second).position).norm();
}

void MemoryMap::remove_node(int id) {
  for (auto it = edges_.begin(); it != edges_.end();) {
    if (it->first.first == id || it->first.second == id) it = edges_.erase(it);
    else ++it;
  }
  nodes_.erase(id);
}

void MemoryMap::integrate_observation(const world::Observation& obs, int step) {
  if (step < 1) fail(ErrorKind::Config, "step must be >= 1");
  if (feature_dim_ == 0)
    feature_dim_ = static_cast<int>(obs.appearance.size() + obs.geometry.size() +
                                    obs.semantic.size());

  if (current_id_ >= 0 && obs.node_id != current_id_) {
    bool adjacent = false;
    for (const auto& [nb, len] : edge_neighbors(current_id_))
      if (nb == obs.node_id) adjacent = true;
    if (!adjacent)
      fail(ErrorKind::Transition,
           "observation of node " + std::to_string(obs.node_id) +
               " which is not adjacent to the current node " +
               std::to_string(current_id_));
  }

  if (current_id_ >= 0 && current_id_ != obs.node_id)
    nodes_.at(current_id_).kind = NodeKind::Visited;

  VecXd full(feature_dim_);
  full << obs.appearance, obs.geometry, obs.semantic;

  MemoryNode& cur = nodes_[obs.node_id];
  cur.id = obs.node_id;
  cur.kind = NodeKind::Current;
  cur.completeness = Completeness::Full;
  cur.feature = std::move(full);
  cur.position = obs.position;
  cur.last_visit_step = step;
  current_id_ = obs.node_id;
  refresh_incident_edges(obs.node_id);

  for (const auto& stub : obs.neighbor_stubs) {
    auto it = nodes_.find(stub.id);
    if (it == nodes_.end()) {
      MemoryNode n;
      n.id = stub.id;
      n.kind = NodeKind::Navigable;
      n.completeness = Completeness::Partial;
      n.feature = stub.feature;
      n.position = stub.position;
      n.last_visit_step = 0;
      nodes_[stub.id] = std::move(n);
    } else if (it->second.kind == NodeKind::Navigable) {
      // Average pooling of the stored and the freshly observed feature.
      it->second.feature = 0.5 * (it->second.feature + stub.feature);
      it->second.position = stub.position;
      refresh_incident_edges(stub.id);
    }
    // Visited/Current neighbors keep their complete, fixed features.
    set_edge(obs.node_id, stub.id, /*observed=*/true);
  }

  // The stop node shadows the agent so its location code stays zero.
  nodes_.at(kStopId).position = obs.position;
}

int MemoryMap::add_imagination_node(const Vec3& position, VecXd feature, int parent_id) {
  const MemoryNode& parent = node(parent_id);
  if (parent.kind != NodeKind::Navigable && parent.kind != NodeKind::Imagination)
    fail(ErrorKind::Config, "imagination parent must be navigable or imagination");
  if (feature_dim_ == 0) feature_dim_ = static_cast<int>(feature.size());
  if (feature.size() != feature_dim_)
    fail(ErrorKind::Shape, "imagination feature dimension mismatch");
  MemoryNode n;
  n.id = next_imagination_id_++;
  n.kind = NodeKind::Imagination;
  n.completeness = Completeness::Imagined;
  n.feature = std::move(feature);
  n.position = position;
  n.last_visit_step = 0;
  int id = n.id;
  nodes_[id] = std::move(n);
  set_edge(id, parent_id, /*observed=*/false);
  return id;
}

void MemoryMap::merge_pair(int keep, int gone, bool average) {
  MemoryNode& k = nodes_.at(keep);
  const MemoryNode& g = nodes_.at(gone);
  if (average) {
    k.feature = 0.5 * (k.feature + g.feature);
    k.position = 0.5 * (k.position + g.position);
  }
  // Redirect the vanishing node's edges, keeping their provenance.
  std::vector<std::pair<int, bool>> partners;
  for (const auto& [key, info] : edges_) {
    if (key.first == gone && key.second != keep)
      partners.push_back({key.second, info.observed});
    if (key.second == gone && key.first != keep)
      partners.push_back({key.first, info.observed});
  }
  remove_node(gone);
  for (const auto& [p, observed] : partners) set_edge(keep, p, observed);
  refresh_incident_edges(keep);
}

void MemoryMap::prune_imagination() {
  // Phase 1: merge any Imagination node with another non-Stop node whenever
  // the criterion exceeds tau, repeated to a fixed point. Scanning in id
  // order keeps the result deterministic.
  bool merged = true;
  while (merged) {
    merged = false;
    std::vector<int> imag_ids;
    for (const auto& [id, n] : nodes_)
      if (n.kind == NodeKind::Imagination) imag_ids.push_back(id);
    for (int i : imag_ids) {
      if (!nodes_.count(i)) continue;
      for (const auto& [j, other] : nodes_) {
        if (j == i || other.kind == NodeKind::Stop) continue;
        double c;
        try {
          c = pruning_criterion(nodes_.at(i), other, cfg_.pos_scale);
        } catch (const Error&) {
          continue;
        }
        if (c <= cfg_.tau) continue;
        switch (other.kind) {
          case NodeKind::Imagination:
            merge_pair(std::min(i, j), std::max(i, j), /*average=*/true);
            break;
          case NodeKind::Navigable:
            merge_pair(j, i, /*average=*/true);  // keeps kind Navigable
            break;
          default:
            // Complete (Visited/Current) information wins outright: the
            // duplicate imagined node is folded away without touching it.
            merge_pair(j, i, /*average=*/false);
            break;
        }
        merged = true;
        break;
      }
      if (merged) break;
    }
  }

  // Phase 2: enforce the cap. The most distinct nodes (lowest criterion
  // against the Current node) are the ones carrying new information about
  // unvisited space, so they survive; near-duplicates of the present
  // context go first. Ties keep the lowest id.
  std::vector<int> imag_ids;
  for (const auto& [id, n] : nodes_)
    if (n.kind == NodeKind::Imagination) imag_ids.push_back(id);
  int excess = static_cast<int>(imag_ids.size()) - cfg_.imagination_cap;
  if (excess <= 0) return;

  const double pos_inf = std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, int>> distinctness;
  for (int id : imag_ids) {
    double r = pos_inf;  // unscorable nodes count as maximally distinct
    if (current_id_ >= 0) {
      try {
        r = pruning_criterion(nodes_.at(id), nodes_.at(current_id_), cfg_.pos_scale);
      } catch (const Error&) {
      }
    }
    distinctness.push_back({r, id});
  }
  std::sort(distinctness.begin(), distinctness.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first < b.first;
              return a.second < b.second;
            });
  for (size_t k = static_cast<size_t>(cfg_.imagination_cap); k < distinctness.size();
       ++k)
    remove_node(distinctness[k].second);
}

EmbeddingInputs MemoryMap::embedding_inputs(int id, int current_step) const {
  const MemoryNode& n = node(id);
  EmbeddingInputs out;
  out.feature = n.feature.size() > 0 ? n.feature : VecXd::Zero(feature_dim_);
  Vec3 rel = Vec3::Zero();
  if (current_id_ >= 0 && id != current_id_) rel = n.position - node(current_id_).position;
  double dist = rel.norm();
  out.location_code << rel.x(), rel.y(), rel.z(), dist, heading_of(rel);
  out.step_code = n.last_visit_step;
  (void)current_step;
  return out;
}

Eigen::MatrixXi MemoryMap::hop_buckets(const std::vector<int>& order) const {
  int n = static_cast<int>(order.size());
  Eigen::MatrixXi buckets(n, n);
  std::map<int, int> pos;
  for (int i = 0; i < n; ++i) pos[order[i]] = i;

  constexpr int kDisconnected = 5;
  buckets.setConstant(kDisconnected);
  for (int i = 0; i < n; ++i) buckets(i, i) = 0;

  // Adjacency in row indices, built once for all BFS sources.
  std::vector<std::vector<int>> adj(n);
  for (const auto& [key, info] : edges_) {
    auto a = pos.find(key.first);
    auto b = pos.find(key.second);
    if (a == pos.end() || b == pos.end()) continue;
    adj[a->second].push_back(b->second);
    adj[b->second].push_back(a->second);
  }

  std::vector<int> hops(n);
  for (int i = 0; i < n; ++i) {
    if (order[i] == kStopId) continue;
    std::fill(hops.begin(), hops.end(), -1);
    hops[i] = 0;
    std::queue<int> q;
    q.push(i);
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[u]) {
        if (hops[v] >= 0) continue;
        hops[v] = hops[u] + 1;
        q.push(v);
      }
    }
    for (int j = 0; j < n; ++j)
      if (hops[j] >= 0) buckets(i, j) = std::min(hops[j], 4);
  }
  // Stop is one hop away from everything.
  auto sit = pos.find(kStopId);
  if (sit != pos.end()) {
    int s = sit->second;
    for (int i = 0; i < n; ++i) {
      if (i == s) continue;
      buckets(s, i) = 1;
      buckets(i, s) = 1;
    }
    buckets(s, s) = 0;
  }
  return buckets;
}

std::vector<int> MemoryMap::route(int from, int to) const {
  if (!has_node(from) || !has_node(to)) fail(ErrorKind::Lookup, "route: unknown node");
  auto traversable = [&](int id) {
    NodeKind k = node(id).kind;
    return k != NodeKind::Imagination && k != NodeKind::Stop;
  };
  auto traversable_neighbors = [&](int id) {
    std::vector<std::pair<int, double>> out;
    for (const auto& [key, info] : edges_) {
      if (!info.observed) continue;
      int other;
      if (key.first == id) other = key.second;
      else if (key.second == id) other = key.first;
      else continue;
      if (traversable(other)) out.emplace_back(other, info.length);
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  if (!traversable(from) || !traversable(to))
    fail(ErrorKind::Routing, "route endpoints must be real nodes");
  if (from == to) return {from};

  const double inf = std::numeric_limits<double>::infinity();
  std::map<int, double> dist;  // from `to`, over real nodes
  using QE = std::pair<double, int>;
  std::priority_queue<QE, std::vector<QE>, std::greater<QE>> pq;
  dist[to] = 0.0;
  pq.push({0.0, to});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist.at(u) + 1e-15) continue;
    for (const auto& [v, w] : traversable_neighbors(u)) {
      auto it = dist.find(v);
      if (it == dist.end() || d + w < it->second - 1e-15) {
        dist[v] = d + w;
        pq.push({d + w, v});
      }
    }
  }
  if (!dist.count(from))
    fail(ErrorKind::Routing, "target " + std::to_string(to) +
                                 " unreachable through real edges");
  double total = dist.at(from);
  double tol = 1e-9 * std::max(1.0, total);
  std::vector<int> path{from};
  int cur = from;
  double acc = 0.0;
  while (cur != to) {
    int next = -1;
    double next_w = 0.0;
    for (const auto& [v, w] : traversable_neighbors(cur)) {
      if (!dist.count(v)) continue;
      if (std::abs(acc + w + dist.at(v) - total) <= tol) {
        next = v;
        next_w = w;
        break;
      }
    }
    if (next < 0) fail(ErrorKind::Routing, "route reconstruction failed");
    acc += next_w;
    cur = next;
    path.push_back(cur);
  }
  return path;
}

void MemoryMap::validate() const {
  int currents = 0, stops = 0;
  for (const auto& [id, n] : nodes_) {
    if (n.kind == NodeKind::Current) ++currents;
    if (n.kind == NodeKind::Stop) ++stops;
    switch (n.kind) {
      case NodeKind::Visited:
      case NodeKind::Current:
        if (n.completeness != Completeness::Full || n.last_visit_step < 1)
          fail(ErrorKind::Validation, "visited/current node invariant violated");
        break;
      case NodeKind::Navigable:
        if (n.completeness != Completeness::Partial || n.last_visit_step != 0)
          fail(ErrorKind::Validation, "navigable node invariant violated");
        break;
      case NodeKind::Imagination:
        if (n.completeness != Completeness::Imagined || n.last_visit_step != 0)
          fail(ErrorKind::Validation, "imagination node invariant violated");
        break;
      case NodeKind::Stop:
        break;
    }
  }
  if (stops != 1) fail(ErrorKind::Validation, "expected exactly one stop node");
  if (current_id_ >= 0 && currents != 1)
    fail(ErrorKind::Validation, "expected exactly one current node");
  if (imagination_count() > cfg_.imagination_cap + 0 && cfg_.imagination_cap >= 0) {
    // The cap only binds after pruning; integrate/merge callers prune.
  }
  for (const auto& [key, info] : edges_) {
    double d = (nodes_.at(key.first).position - nodes_.at(key.second).position).norm();
    if (std::abs(d - info.length) > 1e-9)
      fail(ErrorKind::Validation, "memory edge length out of sync");
  }
}

}  // namespace sali::memory
