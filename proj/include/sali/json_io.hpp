#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "sali/memory_map.hpp"
#include "sali/nn.hpp"
#include "sali/world.hpp"

namespace sali::io {

using json = nlohmann::json;

json world_to_json(const world::WorldGraph& w);
void save_world(const std::string& path, const world::WorldGraph& w);

// Re-validates every invariant; violations raise Error(Validation) citing
// the file, line and offending element.
world::WorldGraph load_world(const std::string& path);
world::WorldGraph world_from_json_text(const std::string& text,
                                       const std::string& origin);

json memory_snapshot(const memory::MemoryMap& map);

// Checkpoint: one-line JSON header (version "sali-ckpt-v1", caller config,
// tensor names/shapes in serialization order), '\n', then row-major
// little-endian float64 payload.
void save_checkpoint(const std::string& path, const nn::ParamStore& ps,
                     const json& config);
json load_checkpoint(const std::string& path, nn::ParamStore& ps);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace sali::io
