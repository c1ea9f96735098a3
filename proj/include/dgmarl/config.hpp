#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "toml.hpp"

#include "dgmarl/trainer.hpp"

namespace dgmarl {

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "attention") return Aggregation::Attention;
  if (s == "mean") return Aggregation::Mean;
  throw ConfigError("aggregation must be 'attention' or 'mean', got '" + s + "'");
}
inline std::string aggregation_name(Aggregation a) { return a == Aggregation::Attention ? "attention" : "mean"; }

inline Normalization parse_normalization(const std::string& s) {
  if (s == "softmax") return Normalization::Softmax;
  if (s == "softplus") return Normalization::Softplus;
  throw ConfigError("normalization must be 'softmax' or 'softplus', got '" + s + "'");
}
inline std::string normalization_name(Normalization n) { return n == Normalization::Softmax ? "softmax" : "softplus"; }

namespace detail {

/// One config field: its dotted key plus how to write it into a TOML table
/// and read it back out of a node.
struct Field {
  std::string key;
  std::function<void(const TrainConfig&, toml::table&)> put;
  std::function<void(TrainConfig&, const toml::node&)> get;
};

inline std::string where(const toml::node& n) {
  const auto& src = n.source();
  if (!src.begin) return "";
  return " (line " + std::to_string(src.begin.line) + ")";
}

template <class T>
T read_as(const toml::node& n, const std::string& key);

template <>
inline bool read_as<bool>(const toml::node& n, const std::string& key) {
  if (auto v = n.value_exact<bool>()) return *v;
  throw ConfigError(key + ": expected a boolean" + where(n));
}

template <>
inline std::string read_as<std::string>(const toml::node& n, const std::string& key) {
  if (auto v = n.value_exact<std::string>()) return *v;
  throw ConfigError(key + ": expected a string" + where(n));
}

template <>
inline double read_as<double>(const toml::node& n, const std::string& key) {
  if (auto v = n.value_exact<double>()) return *v;
  if (auto v = n.value_exact<std::int64_t>()) return static_cast<double>(*v);
  throw ConfigError(key + ": expected a number" + where(n));
}

template <>
inline std::size_t read_as<std::size_t>(const toml::node& n, const std::string& key) {
  if (auto v = n.value_exact<std::int64_t>()) {
    if (*v < 0) throw ConfigError(key + ": must be non-negative" + where(n));
    return static_cast<std::size_t>(*v);
  }
  throw ConfigError(key + ": expected a non-negative integer" + where(n));
}

/// Splits "a.b.c" into the table path and leaf name.
inline std::pair<std::vector<std::string>, std::string> split_key(const std::string& key) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : key) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return {parts, cur};
}

inline toml::table& subtable(toml::table& root, const std::vector<std::string>& path) {
  toml::table* t = &root;
  for (const auto& p : path) {
    if (!t->contains(p)) t->insert(p, toml::table{});
    toml::table* next = (*t)[p].as_table();
    if (!next) throw ConfigError(p + ": expected a table");
    t = next;
  }
  return *t;
}

template <class T, class Get, class Set>
Field field(std::string key, Get getter, Set setter) {
  Field f;
  f.key = key;
  f.put = [key, getter](const TrainConfig& c, toml::table& root) {
    auto [path, leaf] = split_key(key);
    toml::table& t = subtable(root, path);
    const T v = getter(c);
    if constexpr (std::is_same_v<T, std::size_t>) {
      t.insert_or_assign(leaf, static_cast<std::int64_t>(v));
    } else {
      t.insert_or_assign(leaf, v);
    }
  };
  f.get = [key, setter](TrainConfig& c, const toml::node& n) { setter(c, read_as<T>(n, key)); };
  return f;
}

#define DGMARL_FIELD(T, key, member) \
  field<T>(key, [](const TrainConfig& c) { return static_cast<T>(c.member); }, [](TrainConfig& c, T v) { c.member = v; })

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(field<std::string>(
        "mode", [](const TrainConfig& c) { return mode_name(c.mode); },
        [](TrainConfig& c, std::string s) { c.mode = parse_mode(s); }));
    v.push_back(DGMARL_FIELD(std::size_t, "hops", hops));
    v.push_back(field<std::string>(
        "aggregation", [](const TrainConfig& c) { return aggregation_name(c.aggregation); },
        [](TrainConfig& c, std::string s) { c.aggregation = parse_aggregation(s); }));
    v.push_back(field<std::string>(
        "normalization", [](const TrainConfig& c) { return normalization_name(c.normalization); },
        [](TrainConfig& c, std::string s) { c.normalization = parse_normalization(s); }));
    v.push_back(DGMARL_FIELD(bool, "shared_layers", shared_layers));
    v.push_back(DGMARL_FIELD(std::size_t, "feature_dim", feature_dim));
    v.push_back(DGMARL_FIELD(std::size_t, "attn_dim", attn_dim));
    v.push_back(DGMARL_FIELD(std::size_t, "hidden", hidden));
    v.push_back(DGMARL_FIELD(std::size_t, "total_steps", total_steps));
    v.push_back(DGMARL_FIELD(std::size_t, "rollout_envs", rollout_envs));
    v.push_back(DGMARL_FIELD(std::size_t, "rollout_length", rollout_length));
    v.push_back(DGMARL_FIELD(std::size_t, "eval_interval", eval_interval));
    v.push_back(DGMARL_FIELD(std::size_t, "eval_episodes", eval_episodes));
    v.push_back(DGMARL_FIELD(std::size_t, "seed", seed));
    v.push_back(DGMARL_FIELD(std::size_t, "threads", threads));
    v.push_back(DGMARL_FIELD(bool, "record_wall_time", record_wall_time));

    v.push_back(DGMARL_FIELD(double, "ppo.clip", ppo.clip));
    v.push_back(DGMARL_FIELD(double, "ppo.gamma", ppo.gamma));
    v.push_back(DGMARL_FIELD(double, "ppo.lambda", ppo.lambda));
    v.push_back(DGMARL_FIELD(std::size_t, "ppo.epochs", ppo.epochs));
    v.push_back(DGMARL_FIELD(std::size_t, "ppo.num_minibatches", ppo.num_minibatches));
    v.push_back(DGMARL_FIELD(double, "ppo.entropy_coef", ppo.entropy_coef));
    v.push_back(DGMARL_FIELD(bool, "ppo.huber", ppo.huber));
    v.push_back(DGMARL_FIELD(double, "ppo.huber_delta", ppo.huber_delta));
    v.push_back(DGMARL_FIELD(double, "ppo.value_coef", ppo.value_coef));
    v.push_back(DGMARL_FIELD(double, "ppo.consensus_alpha", ppo.consensus_alpha));
    v.push_back(DGMARL_FIELD(double, "ppo.lr", ppo.lr));
    v.push_back(DGMARL_FIELD(double, "ppo.adam_eps", ppo.adam_eps));
    v.push_back(DGMARL_FIELD(double, "ppo.max_grad_norm", ppo.max_grad_norm));

    v.push_back(DGMARL_FIELD(std::string, "env.kind", env.kind));
    v.push_back(DGMARL_FIELD(std::size_t, "env.n_agents", env.n_agents));
    v.push_back(DGMARL_FIELD(double, "env.arena", env.arena));
    v.push_back(DGMARL_FIELD(std::size_t, "env.max_steps", env.max_steps));
    v.push_back(DGMARL_FIELD(double, "env.r_obs", env.r_obs));
    v.push_back(DGMARL_FIELD(double, "env.r_comm", env.r_comm));
    v.push_back(DGMARL_FIELD(std::size_t, "env.k_obs", env.k_obs));
    v.push_back(DGMARL_FIELD(double, "env.move", env.move));
    v.push_back(DGMARL_FIELD(double, "env.cover_radius", env.cover_radius));
    v.push_back(DGMARL_FIELD(double, "env.coverage_bonus", env.coverage_bonus));
    v.push_back(DGMARL_FIELD(std::size_t, "env.reset_retries", env.reset_retries));
    return v;
  }();
  return f;
}

#undef DGMARL_FIELD

inline void collect_leaf_keys(const toml::table& t, const std::string& prefix,
                              std::vector<std::pair<std::string, const toml::node*>>& out) {
  for (const auto& [k, node] : t) {
    const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
    if (const toml::table* sub = node.as_table()) {
      collect_leaf_keys(*sub, key, out);
    } else {
      out.emplace_back(key, &node);
    }
  }
}

}  // namespace detail

/// Serializes every field, so the result round-trips through config_from_toml.
inline toml::table config_to_toml(const TrainConfig& c) {
  toml::table t;
  for (const auto& f : detail::fields()) f.put(c, t);
  return t;
}

/// Reads a table over the defaults. Unknown keys and type mismatches are
/// ConfigErrors naming the dotted key and its source line.
inline TrainConfig config_from_toml(const toml::table& t) {
  TrainConfig c;
  std::set<std::string> known;
  for (const auto& f : detail::fields()) known.insert(f.key);
  std::vector<std::pair<std::string, const toml::node*>> leaves;
  detail::collect_leaf_keys(t, "", leaves);
  for (const auto& [key, node] : leaves) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'" + detail::where(*node));
  }
  for (const auto& f : detail::fields()) {
    auto [path, leaf] = detail::split_key(f.key);
    const toml::table* cur = &t;
    for (const auto& p : path) {
      const toml::node* n = cur->get(p);
      cur = n ? n->as_table() : nullptr;
      if (!cur) break;
    }
    if (!cur) continue;
    if (const toml::node* n = cur->get(leaf)) f.get(c, *n);
  }
  c.validate();
  return c;
}

/// Parses `key=value` with the value read as a TOML literal; bare words fall
/// back to strings, so `mode=independent` works without quotes.
inline void apply_override(toml::table& t, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "': expected key=value");
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  std::set<std::string> known;
  for (const auto& f : detail::fields()) known.insert(f.key);
  if (!known.count(key)) throw ConfigError("override '" + kv + "': unknown config key '" + key + "'");
  auto [path, leaf] = detail::split_key(key);
  toml::table& dst = detail::subtable(t, path);
  try {
    toml::table parsed = toml::parse("v = " + raw);
    dst.insert_or_assign(leaf, *parsed.get("v"));
  } catch (const toml::parse_error&) {
    dst.insert_or_assign(leaf, raw);
  }
}

inline toml::table parse_toml_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return toml::parse(ss.str(), path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << path.string() << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
       << e.description();
    throw ConfigError(os.str());
  }
}

/// File, then overrides in order, then validation.
inline TrainConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  toml::table t = parse_toml_file(path);
  for (const auto& o : overrides) apply_override(t, o);
  return config_from_toml(t);
}

inline TrainConfig config_from_string(const std::string& text) {
  try {
    return config_from_toml(toml::parse(text));
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("config: ") + std::string(e.description()));
  }
}

/// Canonical text of the resolved config; keys sorted, every field present.
inline std::string config_snapshot(const TrainConfig& c) {
  std::ostringstream os;
  os << config_to_toml(c) << "\n";
  return os.str();
}

/// Hex SHA-1 over "blob <len>\0<bytes>", the same id git gives the file.
inline std::string content_hash(const std::string& bytes) {
  const std::string blob = "blob " + std::to_string(bytes.size()) + std::string(1, '\0') + bytes;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw ConfigError("content_hash: digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int k = 0; k < len; ++k) {
    std::snprintf(buf, sizeof buf, "%02x", md[k]);
    hex += buf;
  }
  return hex;
}

}  // namespace dgmarl
