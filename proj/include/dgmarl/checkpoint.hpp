#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgmarl/agent.hpp"
#include "dgmarl/errors.hpp"

namespace dgmarl {

namespace fs = std::filesystem;

/// One file: a JSON header line listing {name, rows, cols} per tensor, then
/// the values as raw little-endian float64 in that order.
inline void write_tensors(const fs::path& path, const std::vector<const Parameter*>& params) {
  nlohmann::json head;
  head["format"] = "dgmarl-tensors-1";
  head["tensors"] = nlohmann::json::array();
  for (const Parameter* p : params) {
    head["tensors"].push_back({{"name", p->name()}, {"rows", p->value().rows()}, {"cols", p->value().cols()}});
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write " + path.string());
  os << head.dump() << "\n";
  for (const Parameter* p : params) {
    os.write(reinterpret_cast<const char*>(p->value().data()),
             static_cast<std::streamsize>(p->value().size() * sizeof(Real)));
  }
  if (!os) throw CheckpointError("write failed for " + path.string());
}

inline void read_tensors(const fs::path& path, const std::vector<Parameter*>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("missing checkpoint file " + path.string());
  std::string line;
  std::getline(is, line);
  nlohmann::json head;
  try {
    head = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header: " + e.what());
  }
  if (head.value("format", "") != "dgmarl-tensors-1" || !head.contains("tensors")) {
    throw CheckpointError(path.string() + ": unknown format");
  }
  const auto& ts = head["tensors"];
  if (ts.size() != params.size()) {
    throw CheckpointError(path.string() + ": holds " + std::to_string(ts.size()) + " tensors, expected " +
                          std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    const std::string name = ts[k].value("name", "");
    const auto rows = ts[k].value("rows", std::size_t{0}), cols = ts[k].value("cols", std::size_t{0});
    if (name != p.name() || rows != p.value().rows() || cols != p.value().cols()) {
      throw CheckpointError(path.string() + ": tensor " + std::to_string(k) + " is '" + name + "' " +
                            std::to_string(rows) + "x" + std::to_string(cols) + ", expected '" + p.name() + "' " +
                            p.value().shape_str());
    }
  }
  for (Parameter* p : params) {
    is.read(reinterpret_cast<char*>(p->value().data()), static_cast<std::streamsize>(p->value().size() * sizeof(Real)));
    if (!is) throw CheckpointError(path.string() + ": truncated payload at '" + p->name() + "'");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
}

template <class T>
std::vector<const Parameter*> const_params(const std::vector<T*>& ps) {
  return {ps.begin(), ps.end()};
}

/// ckpt/agent_<i>/{dgat,policy,value}.bin plus ckpt/meta.json.
inline void save_checkpoint(const fs::path& dir, std::vector<std::unique_ptr<Agent>>& agents,
                            const nlohmann::json& meta) {
  fs::create_directories(dir);
  for (auto& a : agents) {
    const fs::path d = dir / ("agent_" + std::to_string(a->id()));
    fs::create_directories(d);
    write_tensors(d / "dgat.bin", const_params(a->dgat().parameters()));
    write_tensors(d / "policy.bin", const_params(a->nets().policy().parameters()));
    write_tensors(d / "value.bin", const_params(a->nets().value_net().parameters()));
  }
  nlohmann::json m = meta;
  m["num_agents"] = agents.size();
  std::ofstream os(dir / "meta.json");
  if (!os) throw CheckpointError("cannot write " + (dir / "meta.json").string());
  os << m.dump(2) << "\n";
}

inline nlohmann::json read_checkpoint_meta(const fs::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw CheckpointError("missing " + (dir / "meta.json").string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError((dir / "meta.json").string() + ": " + e.what());
  }
}

inline void load_checkpoint(const fs::path& dir, std::vector<std::unique_ptr<Agent>>& agents) {
  const auto meta = read_checkpoint_meta(dir);
  if (meta.value("num_agents", std::size_t{0}) != agents.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(meta.value("num_agents", 0)) + " agents, expected " +
                          std::to_string(agents.size()));
  }
  for (auto& a : agents) {
    const fs::path d = dir / ("agent_" + std::to_string(a->id()));
    read_tensors(d / "dgat.bin", a->dgat().parameters());
    read_tensors(d / "policy.bin", a->nets().policy().parameters());
    read_tensors(d / "value.bin", a->nets().value_net().parameters());
  }
}

}  // namespace dgmarl
