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


#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "drupi/container.hpp"
#include "drupi/error.hpp"
#include "drupi/experiment.hpp"
#include "support/random_reduced.hpp"

using namespace drupi;
using namespace drupi::experiment;

namespace {

const std::string kTiny = R"([experiment]
schema = 1
seeds = 1, 2

[data]
source = blobs
classes = 3
per_class = 6
test_per_class = 5
size = 8
contrast = 0.2

[reduce]
ipc = 2

[privileged]
teacher_epochs = 2

[synthesis]
outer_steps = 1
inner_steps = 1
real_batch = 4

[model]
width = 4

[eval]
epochs = 3
)";

std::string strip_wall_clock(const std::string& row) { return row.substr(0, row.rfind(',')); }

void check_field(const std::string& text, const std::string& expected) {
  try {
    parse_config(text);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == expected);
  }
}

}  // namespace

TEST_CASE("a minimal config takes the documented defaults") {
  const auto c = parse_config("[experiment]\nschema = 1\n");
  CHECK(c.ipc == 1u);
  CHECK_FALSE(c.fraction);
  CHECK(c.init == InitMethod::Random);
  CHECK(c.features == FeatureSource::Learned);
  CHECK(c.loss.lambda_reg == 0.5f);
  CHECK(c.loss.lambda_task == 0.1f);
  CHECK(c.synthesis.data_lr == doctest::Approx(0.1));
  CHECK(c.eval.epochs == 100);
  CHECK(c.eval.lr == doctest::Approx(0.01));
  CHECK(c.eval.batch_size == 0);
  CHECK(c.seeds.size() == 5);
  CHECK(c.model.input == Shape{1, 16, 16});
  CHECK_FALSE(c.resolved_update_images());
}

TEST_CASE("config errors name the offending field") {
  check_field("[data]\nsource = blobs\n", "[experiment] schema");
  check_field("[experiment]\nschema = 2\n", "[experiment] schema");
  check_field("[experiment]\nschema = 1\n[loss]\nlamda_reg = 1\n", "[loss] lamda_reg");
  check_field("[experiment]\nschema = 1\n[loss]\nlambda_reg = lots\n", "[loss] lambda_reg");
  check_field("[experiment]\nschema = 1\n[loss]\nlambda_reg = -1\n", "[loss] lambda_reg");
  check_field("[experiment]\nschema = 1\n[reduce]\nipc = 2\nfraction = 0.1\n", "[reduce] ipc");
  check_field("[experiment]\nschema = 1\n[reduce]\nipc = -2\n", "[reduce] ipc");
  check_field("[experiment]\nschema = 1\n[reduce]\ninit = magic\n", "[reduce] init");
  check_field("[experiment]\nschema = 1\n[privileged]\nfeatures = none\n", "[privileged] features");
  check_field("[experiment]\nschema = 1\n[privileged]\ntap = 5\n", "[privileged] tap");
  check_field("[experiment]\nschema = 1\n[synthesis]\nbackend = mtt\n", "[synthesis] backend");
  check_field("[experiment]\nschema = 1\n[synthesis]\nupdate_images = maybe\n", "[synthesis] update_images");
  check_field("[experiment]\nschema = 1\n[data]\nsource = idx\n", "[data] train_images");
  check_field("[experiment]\nschema = 1\n[weird]\nx = 1\n", "[weird]");
  check_field("[experiment]\nschema = 1\nseeds =\n", "[experiment] seeds");
  CHECK_THROWS_AS(load_config("/nonexistent/drupi.ini"), ConfigError);
}

TEST_CASE("the config hash depends only on the logical configuration") {
  const auto a = parse_config(kTiny);
  const auto reordered = parse_config(
      "; comment\n[model]\nwidth=4\n[experiment]\nseeds=7\nschema=1\nout=/tmp/else\n"
      "[data]\nsize=8\ncontrast=0.20\nper_class=6\ntest_per_class=5\nclasses=3\nsource=blobs\n"
      "[reduce]\nipc=2\n[privileged]\nteacher_epochs=2\n[synthesis]\nouter_steps=1\ninner_steps=1\n"
      "real_batch=4\n[eval]\nepochs=3\n");
  CHECK(config_hash(a) == config_hash(reordered));
  CHECK(config_hash(a).size() == 64);
  CHECK(config_hash(a) != config_hash(parse_config(kTiny, {{"loss.lambda_task", "0.2"}})));
  CHECK(canonical_text(a) != canonical_text(reordered));
  CHECK(config_hash(parse_config(kTiny)) == config_hash(a));
}

TEST_CASE("overrides and image-update defaults") {
  const auto c = parse_config(kTiny, {{"loss.lambda_reg", "5"}, {"reduce.init", "dc"}});
  CHECK(c.loss.lambda_reg == 5.0f);
  CHECK(c.resolved_update_images());
  CHECK_FALSE(parse_config(kTiny, {{"reduce.init", "dc"}, {"synthesis.update_images", "false"}})
                  .resolved_update_images());
  CHECK(parse_config(kTiny, {{"synthesis.update_images", "true"}}).resolved_update_images());
  CHECK_THROWS_AS(parse_config(kTiny, {{"reduce.fraction", "0.5"}}), ConfigError);
}

TEST_CASE("a tiny pipeline runs, is deterministic, and writes loadable artifacts") {
  const auto cfg = parse_config(kTiny);
  const auto ws = prepare(cfg);
  CHECK(ws.train.size() == 18);
  CHECK(ws.test.size() == 15);
  const auto first = run_seeds(cfg, ws, 1);
  const auto again = run_seeds(cfg, ws, 2);
  REQUIRE(first.size() == 2);
  const std::string hash = config_hash(cfg);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(first[i].status == "ok");
    CHECK(first[i].accuracy >= 0.0);
    CHECK(first[i].accuracy <= 1.0);
    CHECK(first[i].diversity.has_value());
    CHECK(first[i].ds.features.has_value());
    CHECK(first[i].ds.provenance.config_hash == hash);
    CHECK(first[i].ds.provenance.seed == cfg.seeds[i]);
    CHECK(strip_wall_clock(csv_row(cfg, hash, first[i])) == strip_wall_clock(csv_row(cfg, hash, again[i])));
    CHECK(testing::bits_equal(first[i].ds, again[i].ds));
  }
  CHECK(first[0].ds.labels == std::vector<int>{0, 0, 1, 1, 2, 2});

  const auto dir = std::filesystem::temp_directory_path() / "drupi-test-experiment";
  std::filesystem::remove_all(dir);
  const auto summary = write_artifacts(cfg, first, dir);
  std::ifstream in(summary);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == csv_header());
  CHECK(lines[3].find("," + std::string("mean") + ",") != std::string::npos);
  for (const auto& o : first) {
    const auto path = dir / ("reduced-seed-" + std::to_string(o.seed) + ".drpi");
    CHECK(testing::bits_equal(data::load_reduced(path), o.ds));
    CHECK(std::filesystem::exists(dir / ("report-seed-" + std::to_string(o.seed) + ".json")));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("per-seed failures become error rows") {
  const auto cfg = parse_config(kTiny);
  auto ws = prepare(cfg);
  ws.test.images = Tensor({15, 1, 4, 4}, 0.5f);
  const auto out = run_seeds(cfg, ws, 1);
  REQUIRE(out.size() == 2);
  for (const auto& o : out) CHECK(o.status.rfind("error: ", 0) == 0);
  const auto agg = csv_aggregate(cfg, config_hash(cfg), out);
  CHECK(agg.find("partial 0/2") != std::string::npos);
}

TEST_CASE("csv fields use a dot decimal and quote embedded commas") {
  const auto cfg = parse_config(kTiny);
  SeedOutcome o;
  o.seed = 3;
  o.status = "error: a, b";
  const auto row = csv_row(cfg, "h", o);
  CHECK(row.find("\"error: a, b\"") != std::string::npos);
  CHECK(row.find("0.5,0.1,1,0,") != std::string::npos);
}

TEST_CASE("every init method and feature source builds a valid reduced set") {
  for (const char* init : {"random", "herding", "kcenter", "forgetting", "dc", "dm"})
    for (const char* features : {"none", "assigned", "learned"}) {
      Overrides o{{"reduce.init", init}, {"privileged.features", features}};
      if (std::string(features) == "none") o.insert(o.end(), {{"loss.lambda_reg", "0"}, {"loss.lambda_task", "0"}});
      const auto cfg = parse_config(kTiny, o);
      const auto ws = prepare(cfg);
      const auto ds = build_reduced(cfg, ws, 4);
      CAPTURE(init);
      CAPTURE(features);
      CHECK_NOTHROW(ds.validate());
      CHECK(ds.size() == 6);
      CHECK(ds.features.has_value() == (std::string(features) != "none"));
    }
}

TEST_CASE("attention and soft-label channels are attached when configured") {
  const auto cfg = parse_config(kTiny, {{"privileged.attention", "channel"}, {"loss.lambda_soft", "0.5"}});
  const auto ws = prepare(cfg);
  const auto ds = build_reduced(cfg, ws, 1);
  REQUIRE(ds.attention);
  CHECK(ds.attention_kind == data::AttentionKind::Channel);
  CHECK(ds.attention->shape() == Shape{6, 4, 1, 1});
  REQUIRE(ds.soft_labels);
  CHECK(ds.soft_labels->shape() == Shape{6, 3});
}

TEST_CASE("worker count comes from the environment") {
  unsetenv("DRUPI_THREADS");
  CHECK(worker_threads() == 1);
  setenv("DRUPI_THREADS", "3", 1);
  CHECK(worker_threads() == 3);
  setenv("DRUPI_THREADS", "zero", 1);
  CHECK_THROWS_AS(worker_threads(), ConfigError);
  unsetenv("DRUPI_THREADS");
}
