#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dgmarl/checkpoint.hpp"
#include "dgmarl/commcost.hpp"
#include "dgmarl/config.hpp"
#include "dgmarl/svg.hpp"
#include "dgmarl/trainer.hpp"

namespace dgmarl::cli {

namespace fs = std::filesystem;

enum ExitCode : int { Ok = 0, Failure = 1, BadConfig = 2, BadAssumption = 3, BadCheckpoint = 4 };

/// Seed used when neither the config file nor a flag names one.
inline std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("DGMARL_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("DGMARL_SEED must be a non-negative integer, got '") + v + "'");
  return s;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline Table read_csv(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw ConfigError("cannot read '" + p.string() + "'");
  Table t;
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("'" + p.string() + "' is empty");
  t.header = split_csv_line(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_csv_line(line));
    if (t.rows.back().size() != t.header.size()) {
      throw ConfigError(p.string() + ": row " + std::to_string(t.rows.size()) + " has " +
                        std::to_string(t.rows.back().size()) + " fields, header has " + std::to_string(t.header.size()));
    }
  }
  return t;
}

inline double to_double(const std::string& s) {
  if (s.empty() || s == "nan") return std::nan("");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  return *end == '\0' ? v : std::nan("");
}

inline void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + p.string() + "'");
  os << text;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  toml::table t = parse_toml_file(a.config);
  if (!t.contains("seed")) {
    if (auto s = env_seed()) t.insert_or_assign("seed", static_cast<std::int64_t>(*s));
  }
  for (const auto& o : a.overrides) apply_override(t, o);
  if (a.seed) t.insert_or_assign("seed", static_cast<std::int64_t>(*a.seed));
  if (a.threads) t.insert_or_assign("threads", static_cast<std::int64_t>(*a.threads));
  const TrainConfig cfg = config_from_toml(t);
  const std::string snapshot = config_snapshot(cfg);
  const std::string hash = content_hash(snapshot);
  const fs::path dir = a.out.empty() ? fs::path("runs") / (fs::path(a.config).stem().string() + "-" + hash.substr(0, 8))
                                     : fs::path(a.out);
  fs::create_directories(dir);
  write_file(dir / "config.toml", snapshot);
  nlohmann::json manifest;
  manifest["config_path"] = a.config;
  manifest["overrides"] = a.overrides;
  manifest["seed"] = cfg.seed;
  manifest["output_dir"] = dir.string();
  manifest["config_hash"] = hash;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  Trainer tr(cfg);
  RunOutputs ro;
  ro.dir = dir;
  ro.extra_meta["config"] = snapshot;
  ro.extra_meta["config_hash"] = hash;
  if (!a.quiet) {
    ro.on_row = [&out](const MetricsRow& r) {
      out << "step " << r.step << " iter " << r.iteration << " return " << format_real(r.mean_return) << " success "
          << format_real(r.success_rate) << "\n";
    };
  }
  RunResult res = run(tr, ro);
  out << "final success " << format_real(res.final_eval.success_rate) << " return "
      << format_real(res.final_eval.mean_return) << " -> " << dir.string() << "\n";
  return Ok;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::size_t episodes = 100;
  std::optional<std::uint64_t> seed;
  std::size_t seeds = 1;
  bool json = false;
};

inline nlohmann::json eval_checkpoint(const fs::path& ckpt, std::size_t episodes, std::uint64_t seed,
                                      std::size_t seeds) {
  const nlohmann::json meta = read_checkpoint_meta(ckpt);
  if (!meta.contains("config") || !meta["config"].is_string()) {
    throw CheckpointError((ckpt / "meta.json").string() + " has no embedded config");
  }
  TrainConfig cfg;
  try {
    cfg = config_from_string(meta["config"].get<std::string>());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("embedded config is invalid: ") + e.what());
  }
  Trainer tr(cfg);
  load_checkpoint(ckpt, tr.agents());

  nlohmann::json j;
  j["checkpoint"] = ckpt.string();
  j["episodes"] = episodes;
  j["per_seed"] = nlohmann::json::array();
  std::vector<Real> succ, ret, deg;
  for (std::size_t s = 0; s < seeds; ++s) {
    const EvalReport r = tr.evaluate(episodes, seed + s);
    nlohmann::json e;
    e["seed"] = seed + s;
    e["success_rate"] = episodes ? nlohmann::json(r.success_rate) : nlohmann::json(nullptr);
    e["mean_return"] = episodes ? nlohmann::json(r.mean_return) : nlohmann::json(nullptr);
    e["mean_node_degree"] = episodes ? nlohmann::json(r.mean_node_degree) : nlohmann::json(nullptr);
    j["per_seed"].push_back(e);
    if (episodes) {
      succ.push_back(r.success_rate);
      ret.push_back(r.mean_return);
      deg.push_back(r.mean_node_degree);
    }
  }
  auto mean = [](const std::vector<Real>& v) {
    Real s = 0.0;
    for (Real x : v) s += x;
    return s / static_cast<Real>(v.size());
  };
  if (succ.empty()) {
    j["success_rate"] = nullptr;
    j["success_std"] = nullptr;
    j["mean_return"] = nullptr;
    j["mean_node_degree"] = nullptr;
  } else {
    const Real m = mean(succ);
    Real var = 0.0;
    for (Real x : succ) var += (x - m) * (x - m);
    j["success_rate"] = m;
    j["success_std"] = std::sqrt(var / static_cast<Real>(succ.size()));
    j["mean_return"] = mean(ret);
    j["mean_node_degree"] = mean(deg);
  }
  return j;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::uint64_t seed = 0;
  if (a.seed) {
    seed = *a.seed;
  } else if (auto s = env_seed()) {
    seed = *s;
  }
  if (a.seeds == 0) throw ConfigError("--seeds must be positive");
  const nlohmann::json j = eval_checkpoint(a.checkpoint, a.episodes, seed, a.seeds);
  if (a.json) {
    out << j.dump(2) << "\n";
    return Ok;
  }
  if (a.episodes == 0) {
    out << "no episodes evaluated\n";
    return Ok;
  }
  out << "success " << format_real(j["success_rate"].get<Real>()) << " +- " << format_real(j["success_std"].get<Real>())
      << " over " << a.seeds << " seed(s) x " << a.episodes << " episodes\n";
  out << "mean return " << format_real(j["mean_return"].get<Real>()) << "\n";
  out << "mean node degree " << format_real(j["mean_node_degree"].get<Real>()) << "\n";
  return Ok;
}

// ---- cost ------------------------------------------------------------------

struct CostArgs {
  std::string preset = "default";
  std::string range;  // "lo:hi" or "lo:hi:step"
  std::string out = "cost";
  std::optional<double> path_loss;
};

inline SweepPreset preset_named(const std::string& name) {
  if (name == "default") return SweepPreset{};
  throw ConfigError("unknown cost preset '" + name + "' (available: default)");
}

inline void parse_range(const std::string& r, SweepPreset& p) {
  std::vector<std::size_t> v;
  std::stringstream ss(r);
  std::string part;
  while (std::getline(ss, part, ':')) {
    char* end = nullptr;
    const long long x = std::strtoll(part.c_str(), &end, 10);
    if (part.empty() || *end != '\0' || x < 0) throw ConfigError("--range '" + r + "': expected lo:hi[:step]");
    v.push_back(static_cast<std::size_t>(x));
  }
  if (v.size() < 2 || v.size() > 3) throw ConfigError("--range '" + r + "': expected lo:hi[:step]");
  p.n_min = v[0];
  p.n_max = v[1];
  p.n_step = v.size() == 3 ? v[2] : 1;
}

/// Writes <out>.csv and <out>.svg; slopes go to stdout and an SVG comment.
inline int cmd_cost(const CostArgs& a, std::ostream& out) {
  SweepPreset p = preset_named(a.preset);
  if (!a.range.empty()) parse_range(a.range, p);
  if (a.path_loss) p.path_loss = *a.path_loss;
  p.validate();
  const auto rows = cost_sweep(p);
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  write_file(a.out + ".csv", csv.str());

  std::vector<svg::Series> series;
  std::vector<std::string> footer;
  for (const char* m : {"ctde", "ctde_multihop", "dg"}) {
    svg::Series s;
    s.name = m;
    for (const auto& r : rows) {
      if (r.method != m) continue;
      s.x.push_back(static_cast<double>(r.n));
      s.y.push_back(r.cost);
    }
    if (s.x.size() >= 2) {
      const Real slope = loglog_slope(s.x, s.y);
      footer.push_back(std::string("slope ") + m + " " + format_real(slope));
      out << "slope " << m << " " << format_real(slope) << "\n";
    }
    series.push_back(std::move(s));
  }
  svg::ChartOptions opt;
  opt.title = "Communication cost per step";
  opt.x_label = "N (agents)";
  opt.y_label = "scalars transferred";
  opt.log_x = opt.log_y = true;
  opt.footer = footer;
  write_file(a.out + ".svg", svg::line_chart(series, opt));
  out << "wrote " << a.out << ".csv and " << a.out << ".svg\n";
  return Ok;
}

// ---- plot ------------------------------------------------------------------

struct PlotArgs {
  std::string metrics;
  std::vector<std::string> columns{"success_rate"};
  std::string out = "plot.svg";
  std::size_t smooth = 1;
  bool log_y = false;
};

inline int cmd_plot(const PlotArgs& a, std::ostream& out) {
  const Table t = read_csv(a.metrics);
  auto col = [&](const std::string& name) -> std::size_t {
    for (std::size_t k = 0; k < t.header.size(); ++k)
      if (t.header[k] == name) return k;
    std::string avail;
    for (const auto& h : t.header) avail += (avail.empty() ? "" : ", ") + h;
    throw ConfigError("unknown column '" + name + "'; available: " + avail);
  };
  const std::size_t xs = col("step");
  std::vector<svg::Series> series;
  for (const auto& c : a.columns) {
    const std::size_t k = col(c);
    svg::Series s;
    s.name = a.smooth > 1 ? c + " (avg " + std::to_string(a.smooth) + ")" : c;
    std::vector<double> y;
    for (const auto& r : t.rows) {
      s.x.push_back(to_double(r[xs]));
      y.push_back(to_double(r[k]));
    }
    s.y = svg::moving_average(y, a.smooth);
    series.push_back(std::move(s));
  }
  svg::ChartOptions opt;
  opt.title = fs::path(a.metrics).filename().string();
  opt.x_label = "env steps";
  opt.log_y = a.log_y;
  write_file(a.out, svg::line_chart(series, opt));
  out << "wrote " << a.out << "\n";
  return Ok;
}

// ---- entry -----------------------------------------------------------------

/// Parses argv and dispatches; every error maps to the documented exit code.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Distributed graph-attention multi-agent PPO"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train agents from a TOML config");
  train->add_option("-c,--config", ta.config, "config file")->required();
  train->add_option("--override", ta.overrides, "dotted key=value, repeatable");
  train->add_option("-o,--out", ta.out, "run directory");
  train->add_option("--seed", ta.seed, "seed (else config, else DGMARL_SEED)");
  train->add_option("--threads", ta.threads, "worker threads");
  train->add_flag("-q,--quiet", ta.quiet, "no per-iteration lines");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  eval->add_option("checkpoint", ea.checkpoint, "checkpoint directory (run/ckpt)")->required();
  eval->add_option("--episodes", ea.episodes, "episodes per seed");
  eval->add_option("--seed", ea.seed, "first evaluation seed (default DGMARL_SEED or 0)");
  eval->add_option("--seeds", ea.seeds, "number of consecutive seeds");
  eval->add_flag("--json", ea.json, "machine-readable output");

  CostArgs ca;
  auto* cost = app.add_subcommand("cost", "communication cost sweep");
  cost->add_option("--preset", ca.preset, "message-size preset");
  cost->add_option("--range", ca.range, "N range lo:hi[:step], default 8:128:2");
  cost->add_option("-o,--out", ca.out, "output prefix for .csv and .svg");
  cost->add_option("--path-loss", ca.path_loss, "path-loss exponent in [2, 4]");

  PlotArgs pa;
  auto* plot = app.add_subcommand("plot", "SVG chart of metrics columns against step");
  plot->add_option("metrics", pa.metrics, "metrics or eval CSV")->required();
  plot->add_option("--columns", pa.columns, "columns to draw")->delimiter(',');
  plot->add_option("-o,--out", pa.out, "output SVG");
  plot->add_option("--smooth", pa.smooth, "moving-average window");
  plot->add_flag("--log-y", pa.log_y, "logarithmic y axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? Ok : BadConfig;
  }
  try {
    if (*train) return cmd_train(ta, out);
    if (*eval) return cmd_eval(ea, out);
    if (*cost) return cmd_cost(ca, out);
    if (*plot) return cmd_plot(pa, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return BadConfig;
  } catch (const AssumptionError& e) {
    err << "assumption violated: " << e.what() << "\n";
    return BadAssumption;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return BadCheckpoint;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return Failure;
  }
  return Failure;
}

}  // namespace dgmarl::cli
