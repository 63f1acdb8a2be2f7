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


#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drupi/data.hpp"
#include "drupi/distill.hpp"
#include "drupi/lupi.hpp"
#include "drupi/metrics.hpp"
#include "drupi/nn.hpp"
#include "drupi/privileged.hpp"

namespace drupi::experiment {

inline constexpr int kSchemaVersion = 1;

enum class InitMethod { Random, Herding, KCenter, Forgetting, DC, DM };
std::string_view init_name(InitMethod m);
InitMethod parse_init(std::string_view name);

enum class FeatureSource { None, Assigned, Learned };
std::string_view feature_source_name(FeatureSource s);
FeatureSource parse_feature_source(std::string_view name);

struct DataConfig {
  std::string source = "blobs";  // blobs | idx
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t classes = 3;
  data::BlobSpec blobs{3, 100, 1, 16, 0, 0.05f, 0.04f};
  std::size_t test_per_class = 100;
  std::uint64_t seed = 0;  // blob draws and the pre-trained probe
};

struct ExperimentConfig {
  DataConfig data;
  std::optional<std::size_t> ipc = 1;
  std::optional<double> fraction;
  InitMethod init = InitMethod::Random;
  FeatureSource features = FeatureSource::Learned;
  privileged::FeatureInit feature_init = privileged::FeatureInit::WeakModel;
  std::size_t n_feat = 1;
  float noise_std = 0.1f;
  std::size_t tap = 0;  // 0 means the final layer
  std::size_t weak_epochs = 1;
  std::size_t teacher_epochs = 20;
  float soft_temperature = 4.0f;
  nn::ModelSpec model;  // input and classes are resolved from the data
  privileged::DrupiLossConfig loss;
  distill::BiLevelConfig synthesis;  // its model, tap, and loss mirror the fields above
  std::optional<bool> update_images;
  lupi::LupiOptions eval;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path out = "drupi-out";

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool resolved_update_images() const;
  distill::BiLevelConfig resolved_synthesis() const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Parses the INI text; `overrides` are "section.key" assignments applied before interpretation.
ExperimentConfig parse_config(const std::string& text, const Overrides& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// Every resolved setting as sorted "section.key=value" lines.
std::string canonical_text(const ExperimentConfig& cfg);
/// SHA-256 of the canonical text without seeds and output directory.
std::string config_hash(const ExperimentConfig& cfg);

struct Workspace {
  data::LabeledDataset train;
  data::LabeledDataset test;
  nn::ModelSpec model;
  nn::ModelState teacher;  // fixed pre-trained model: direct assignment, selection embeddings, gradient probe
};

/// Loads or draws the data and trains the probe. Paths must exist.
Workspace prepare(const ExperimentConfig& cfg);

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::string status = "ok";
  data::ReducedDataset ds;
  double accuracy = 0;
  lupi::Alignment alignment;
  std::optional<metrics::DiversityReport> diversity;
  std::vector<privileged::LossComponents> trace;
  std::vector<double> distance_trace;
  std::vector<std::string> model_hashes;
  double wall_clock_s = 0;
};

/// The reduced set for one seed, before LUPI training.
data::ReducedDataset build_reduced(const ExperimentConfig& cfg, const Workspace& ws, std::uint64_t seed,
                                   distill::SynthesisResult* synthesis = nullptr);

/// Build, train, and evaluate one seed. Throws on failure.
SeedOutcome run_seed(const ExperimentConfig& cfg, const Workspace& ws, std::uint64_t seed);

/// All seeds on at most `threads` workers. Failures become error rows.
std::vector<SeedOutcome> run_seeds(const ExperimentConfig& cfg, const Workspace& ws, std::size_t threads);

/// Worker count from DRUPI_THREADS, default 1.
std::size_t worker_threads();

std::string csv_header();
std::string csv_row(const ExperimentConfig& cfg, const std::string& hash, const SeedOutcome& o);
/// Mean over successful rows, seed column "mean".
std::string csv_aggregate(const ExperimentConfig& cfg, const std::string& hash,
                          const std::vector<SeedOutcome>& outcomes);

/// Per-seed JSON report.
std::string report_json(const ExperimentConfig& cfg, const std::string& hash, const SeedOutcome& o);

/// Containers, reports, and summary.csv under `dir`. Returns the summary path.
std::filesystem::path write_artifacts(const ExperimentConfig& cfg, const std::vector<SeedOutcome>& outcomes,
                                      const std::filesystem::path& dir);

}  // namespace drupi::experiment
