#include "sali/json_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace sali::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

json vec_to_json(const VecXd& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

VecXd vec_from_json(const json& arr) {
  VecXd v(arr.size());
  for (size_t i = 0; i < arr.size(); ++i) v[static_cast<int>(i)] = arr[i].get<double>();
  return v;
}

// Starting line (1-based) of each element of the top-level array stored
// under `key`. String-aware, so braces inside strings do not confuse it.
std::vector<int> element_lines(const std::string& text, const std::string& key) {
  std::vector<int> lines;
  int line = 1;
  bool in_string = false;
  std::string current_string;
  std::string last_key;
  int object_depth = 0;
  int array_depth = 0;     // only tracked inside the target array
  bool in_target = false;  // inside the key's array
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c == '\n') ++line;
    if (in_string) {
      if (c == '\\') {
        ++i;
        continue;
      }
      if (c == '"') {
        in_string = false;
        last_key = current_string;
      } else {
        current_string += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        current_string.clear();
        break;
      case '[':
        if (!in_target && object_depth == 1 && last_key == key) {
          in_target = true;
          array_depth = 1;
        } else if (in_target) {
          if (array_depth == 1) lines.push_back(line);
          ++array_depth;
        }
        break;
      case ']':
        if (in_target) {
          --array_depth;
          if (array_depth == 0) in_target = false;
        }
        break;
      case '{':
        if (in_target && array_depth == 1) lines.push_back(line);
        ++object_depth;
        break;
      case '}':
        --object_depth;
        break;
      default:
        break;
    }
  }
  return lines;
}

[[noreturn]] void fail_at(const std::string& origin, int line, const std::string& msg) {
  fail(ErrorKind::Validation, origin + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

json world_to_json(const world::WorldGraph& w) {
  const auto& cfg = w.config();
  json j;
  j["config"] = {{"rooms", cfg.rooms},
                 {"nodes_per_room", cfg.nodes_per_room},
                 {"object_vocab", cfg.object_vocab},
                 {"room_vocab", cfg.room_vocab},
                 {"appearance_dim", cfg.appearance_dim},
                 {"geometry_dim", cfg.geometry_dim},
                 {"stub_noise", cfg.stub_noise},
                 {"seed", cfg.seed}};
  json nodes = json::array();
  for (const auto& n : w.nodes()) {
    json nj;
    nj["id"] = n.id;
    nj["position"] = {n.position.x(), n.position.y(), n.position.z()};
    nj["appearance"] = vec_to_json(n.appearance);
    nj["geometry"] = vec_to_json(n.geometry);
    nj["semantic"] = vec_to_json(n.semantic);
    nj["room_type"] = n.room_type;
    nodes.push_back(nj);
  }
  j["nodes"] = nodes;
  json edges = json::array();
  for (const auto& e : w.edges()) edges.push_back({e.a, e.b, e.length});
  j["edges"] = edges;
  return j;
}

void save_world(const std::string& path, const world::WorldGraph& w) {
  write_text_file(path, world_to_json(w).dump(1));
}

world::WorldGraph world_from_json_text(const std::string& text,
                                       const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Validation, origin + ": " + e.what());
  }
  if (!j.contains("nodes") || !j.contains("edges"))
    fail(ErrorKind::Validation, origin + ": missing top-level nodes/edges");

  auto node_lines = element_lines(text, "nodes");
  auto edge_lines = element_lines(text, "edges");
  auto node_line = [&](size_t i) {
    return i < node_lines.size() ? node_lines[i] : 0;
  };
  auto edge_line = [&](size_t i) {
    return i < edge_lines.size() ? edge_lines[i] : 0;
  };

  world::WorldConfig cfg;
  std::vector<world::WorldNode> nodes;
  for (size_t i = 0; i < j["nodes"].size(); ++i) {
    const json& nj = j["nodes"][i];
    world::WorldNode n;
    try {
      n.id = nj.at("id").get<int>();
      const auto& p = nj.at("position");
      n.position = Vec3(p.at(0).get<double>(), p.at(1).get<double>(),
                        p.at(2).get<double>());
      n.appearance = vec_from_json(nj.at("appearance"));
      n.geometry = vec_from_json(nj.at("geometry"));
      n.semantic = vec_from_json(nj.at("semantic"));
      n.room_type = nj.at("room_type").get<int>();
    } catch (const json::exception& e) {
      fail_at(origin, node_line(i), std::string("malformed node: ") + e.what());
    }
    if (std::abs(n.appearance.norm() - 1.0) > 1e-9)
      fail_at(origin, node_line(i),
              "node " + std::to_string(n.id) + " appearance is not unit norm");
    if (n.semantic.size() == 0 || n.semantic.minCoeff() < 0.0 ||
        std::abs(n.semantic.sum() - 1.0) > 1e-9)
      fail_at(origin, node_line(i),
              "node " + std::to_string(n.id) + " semantic is not a distribution");
    nodes.push_back(std::move(n));
  }
  if (nodes.empty()) fail(ErrorKind::Validation, origin + ": world has no nodes");

  cfg.appearance_dim = static_cast<int>(nodes[0].appearance.size());
  cfg.geometry_dim = static_cast<int>(nodes[0].geometry.size());
  cfg.object_vocab = static_cast<int>(nodes[0].semantic.size());
  int max_room = 0;
  for (const auto& n : nodes) max_room = std::max(max_room, n.room_type);
  cfg.room_vocab = max_room + 1;
  if (j.contains("config")) {
    const json& c = j["config"];
    cfg.rooms = c.value("rooms", cfg.rooms);
    cfg.nodes_per_room = c.value("nodes_per_room", cfg.nodes_per_room);
    cfg.object_vocab = c.value("object_vocab", cfg.object_vocab);
    cfg.room_vocab = c.value("room_vocab", cfg.room_vocab);
    cfg.appearance_dim = c.value("appearance_dim", cfg.appearance_dim);
    cfg.geometry_dim = c.value("geometry_dim", cfg.geometry_dim);
    cfg.stub_noise = c.value("stub_noise", cfg.stub_noise);
    cfg.seed = c.value("seed", cfg.seed);
  }

  std::set<std::pair<int, int>> seen;
  std::set<int> ids;
  for (const auto& n : nodes) ids.insert(n.id);
  std::vector<world::WorldEdge> edges;
  for (size_t i = 0; i < j["edges"].size(); ++i) {
    const json& ej = j["edges"][i];
    world::WorldEdge e;
    try {
      e.a = ej.at(0).get<int>();
      e.b = ej.at(1).get<int>();
      e.length = ej.at(2).get<double>();
    } catch (const json::exception& ex) {
      fail_at(origin, edge_line(i), std::string("malformed edge: ") + ex.what());
    }
    if (e.a == e.b) fail_at(origin, edge_line(i), "self-loop edge");
    if (!ids.count(e.a) || !ids.count(e.b))
      fail_at(origin, edge_line(i), "edge references unknown node");
    auto key = std::minmax(e.a, e.b);
    if (!seen.insert({key.first, key.second}).second)
      fail_at(origin, edge_line(i), "duplicate edge");
    edges.push_back(e);
  }

  world::WorldGraph w(cfg, std::move(nodes), std::move(edges));
  for (size_t i = 0; i < w.edges().size(); ++i) {
    const auto& e = w.edges()[i];
    double d = (w.node(e.a).position - w.node(e.b).position).norm();
    if (std::abs(d - e.length) > 1e-9)
      fail_at(origin, edge_line(i),
              "edge length " + std::to_string(e.length) +
                  " does not match endpoint distance " + std::to_string(d));
  }
  try {
    w.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Validation, origin + ": " + e.what());
  }
  return w;
}

world::WorldGraph load_world(const std::string& path) {
  return world_from_json_text(read_text_file(path), path);
}

json memory_snapshot(const memory::MemoryMap& map) {
  json j;
  json nodes = json::array();
  for (int id : map.ids()) {
    const auto& n = map.node(id);
    json nj;
    nj["id"] = n.id;
    nj["position"] = {n.position.x(), n.position.y(), n.position.z()};
    nj["feature"] = vec_to_json(n.feature);
    nj["kind"] = memory::kind_name(n.kind);
    nj["last_visit_step"] = n.last_visit_step;
    nj["completeness"] = memory::completeness_name(n.completeness);
    nodes.push_back(nj);
  }
  j["nodes"] = nodes;
  json edges = json::array();
  for (const auto& [key, info] : map.edges())
    edges.push_back({{"a", key.first},
                     {"b", key.second},
                     {"length", info.length},
                     {"observed", info.observed}});
  j["edges"] = edges;
  return j;
}

void save_checkpoint(const std::string& path, const nn::ParamStore& ps,
                     const json& config) {
  json header;
  header["version"] = "sali-ckpt-v1";
  header["config"] = config;
  json tensors = json::array();
  for (const auto& [name, t] : ps.tensors())
    tensors.push_back({{"name", name},
                       {"rows", t.value.rows()},
                       {"cols", t.value.cols()}});
  header["tensors"] = tensors;

  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Config, "cannot write checkpoint " + path);
  f << header.dump() << "\n";
  for (const auto& [name, t] : ps.tensors())
    for (int i = 0; i < t.value.rows(); ++i)
      for (int j = 0; j < t.value.cols(); ++j) {
        double v = t.value(i, j);
        f.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
}

json load_checkpoint(const std::string& path, nn::ParamStore& ps) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Config, "cannot read checkpoint " + path);
  std::string header_line;
  if (!std::getline(f, header_line))
    fail(ErrorKind::Validation, path + ": missing checkpoint header");
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Validation, path + ": bad checkpoint header: " + e.what());
  }
  if (header.value("version", "") != "sali-ckpt-v1")
    fail(ErrorKind::Validation, path + ": unsupported checkpoint version");
  for (const auto& tj : header.at("tensors")) {
    std::string name = tj.at("name").get<std::string>();
    int rows = tj.at("rows").get<int>();
    int cols = tj.at("cols").get<int>();
    nn::Tensor& t = ps.has(name) ? ps.at(name) : ps.add(name, rows, cols);
    if (t.value.rows() != rows || t.value.cols() != cols)
      fail(ErrorKind::Shape, path + ": tensor " + name + " shape mismatch");
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        double v;
        f.read(reinterpret_cast<char*>(&v), sizeof(double));
        if (!f) fail(ErrorKind::Validation, path + ": truncated checkpoint payload");
        t.value(i, j) = v;
      }
  }
  return header.value("config", json::object());
}

void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Config, "cannot write " + path);
  f << content;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Config, "cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace sali::io
