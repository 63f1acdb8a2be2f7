/*
 * Copyright 2026 The drupi Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <mutex>
#include <string>
#include <vector>

#include "drupi/container.hpp"
#include "drupi/error.hpp"
#include "drupi/experiment.hpp"
#include "drupi/metrics.hpp"

namespace fs = std::filesystem;
using namespace drupi;
using namespace drupi::experiment;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kConfig = 2;
constexpr int kFailure = 3;

struct Common {
  fs::path config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> sets;
  fs::path out;
  bool dry_run = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (INI)")->required();
  cmd->add_option("--seed", c.seeds, "seed(s) replacing the config's list");
  cmd->add_option("--set", c.sets, "override as section.key=value");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--dry-run", c.dry_run, "validate and print the resolved config; write nothing");
}

Overrides overrides_of(const Common& c) {
  Overrides o;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(s, "expected section.key=value");
    o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!c.out.empty()) o.emplace_back("experiment.out", c.out.string());
  if (!c.seeds.empty()) {
    std::string list;
    for (auto s : c.seeds) list += (list.empty() ? "" : ",") + std::to_string(s);
    o.emplace_back("experiment.seeds", list);
  }
  return o;
}

int run(const Common& c) {
  const auto cfg = load_config(c.config, overrides_of(c));
  if (c.dry_run) {
    std::cout << canonical_text(cfg) << "config_hash=" << config_hash(cfg) << "\n";
    return kOk;
  }
  const auto threads = worker_threads();
  const auto ws = prepare(cfg);
  const auto outcomes = run_seeds(cfg, ws, threads);
  const auto summary = write_artifacts(cfg, outcomes, cfg.out);
  std::ifstream in(summary);
  std::cout << in.rdbuf();
  for (const auto& o : outcomes)
    if (o.status != "ok") return kPartial;
  return kOk;
}

std::string sweep_key(const std::string& param) {
  if (param == "lambda_task") return "loss.lambda_task";
  if (param == "lambda_reg") return "loss.lambda_reg";
  if (param == "n_feat") return "privileged.n_feat";
  if (param == "tap") return "privileged.tap";
  throw ConfigError("--param", "expected lambda_task, lambda_reg, n_feat or tap, got '" + param + "'");
}

int sweep(const Common& c, const std::string& param, const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("--values", "grid is empty");
  const std::string key = sweep_key(param);
  const auto base = load_config(c.config, overrides_of(c));
  std::vector<ExperimentConfig> points;
  for (const auto& v : values) {
    auto o = overrides_of(c);
    o.emplace_back(key, v);
    points.push_back(load_config(c.config, o));
  }
  if (c.dry_run) {
    for (std::size_t i = 0; i < points.size(); ++i)
      std::cout << "# point " << i << ": " << param << "=" << values[i] << "\n"
                << canonical_text(points[i]) << "config_hash=" << config_hash(points[i]) << "\n";
    return kOk;
  }
  // The swept settings never touch the data or the probe, so one workspace serves every point.
  const auto ws = prepare(base);
  const fs::path dir = base.out;
  fs::create_directories(dir);
  const fs::path summary = dir / "sweep.csv";
  std::ofstream csv(summary);
  csv << csv_header() << "\n";
  std::mutex writer;
  bool partial = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto outcomes = run_seeds(points[i], ws, worker_threads());
    write_artifacts(points[i], outcomes, dir / ("point-" + std::to_string(i) + "-" + param + "-" + values[i]));
    const std::string hash = config_hash(points[i]);
    std::lock_guard lock(writer);
    for (const auto& o : outcomes) {
      csv << csv_row(points[i], hash, o) << "\n";
      partial = partial || o.status != "ok";
    }
    csv << csv_aggregate(points[i], hash, outcomes) << "\n";
  }
  csv.close();
  std::ifstream in(summary);
  std::cout << in.rdbuf();
  return partial ? kPartial : kOk;
}

int inspect(const fs::path& path) {
  std::cout << data::container_header(path) << "\n";
  return kOk;
}

int metrics_of(const fs::path& path, std::uint64_t seed) {
  const auto ds = data::load_reduced(path);
  if (!ds.features) throw InvalidArgument(path.string() + " carries no feature labels");
  const auto r = metrics::diversity_discriminability(*ds.features, ds.labels, ds.classes, seed);
  nlohmann::json j{{"examples", ds.size()},
                   {"n_feat", ds.n_feat()},
                   {"diversity", r.diversity},
                   {"discriminability", r.discriminability},
                   {"mutual_information", r.mutual_information},
                   {"degenerate", r.degenerate}};
  std::cout << j.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset reduction with synthesized privileged information"};
  app.require_subcommand(1);

  Common run_opts;
  add_common(app.add_subcommand("run", "reduce, synthesize, train and evaluate per seed"), run_opts);

  Common sweep_opts;
  std::string param;
  std::vector<std::string> values;
  auto* sweep_cmd = app.add_subcommand("sweep", "one run per grid value with shared seeds");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--param", param, "lambda_task | lambda_reg | n_feat | tap")->required();
  sweep_cmd->add_option("--values", values, "grid values")->required()->delimiter(',');

  fs::path inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "print a container's header");
  inspect_cmd->add_option("container", inspect_path)->required();

  fs::path metrics_path;
  std::uint64_t metrics_seed = 0;
  auto* metrics_cmd = app.add_subcommand("metrics", "diversity and discriminability of stored feature labels");
  metrics_cmd->add_option("container", metrics_path)->required();
  metrics_cmd->add_option("--seed", metrics_seed, "k-means seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("run")) return run(run_opts);
    if (app.got_subcommand(sweep_cmd)) return sweep(sweep_opts, param, values);
    if (app.got_subcommand(inspect_cmd)) return inspect(inspect_path);
    return metrics_of(metrics_path, metrics_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
