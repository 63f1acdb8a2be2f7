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


#include "drupi/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "drupi/container.hpp"
#include "drupi/coreset.hpp"
#include "drupi/error.hpp"
#include "drupi/train.hpp"

namespace drupi::experiment {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"experiment", {"schema", "seeds", "out"}},
      {"data",
       {"source", "train_images", "train_labels", "test_images", "test_labels", "classes", "per_class",
        "test_per_class", "channels", "size", "noise", "contrast", "template_seed", "seed"}},
      {"reduce", {"ipc", "fraction", "init"}},
      {"privileged",
       {"features", "feature_init", "n_feat", "noise_std", "tap", "attention", "aggregation", "weak_epochs",
        "teacher_epochs", "soft_temperature"}},
      {"loss", {"lambda_reg", "lambda_task", "lambda_soft", "lambda_nce", "nce_temperature"}},
      {"synthesis",
       {"backend", "outer_steps", "inner_steps", "match_rounds", "model_lr", "data_lr", "real_batch",
        "synthetic_batch", "update_images"}},
      {"model", {"family", "depth", "width"}},
      {"eval", {"epochs", "lr", "batch_size", "aligner"}},
  };
  return keys;
}

std::string field(const std::string& key) {
  const auto dot = key.find('.');
  return "[" + key.substr(0, dot) + "] " + key.substr(dot + 1);
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& key) const { 
    auto v = tree_.get_optional<std::string>(key);
    return v ? std::optional<std::string>(*v) : std::nullopt;
  }

  std::string text(const std::string& key, const std::string& def) const { return raw(key).value_or(def); }

  std::uint64_t count(const std::string& key, std::uint64_t def) const {
    auto v = raw(key);
    return v ? to_count(key, *v) : def;
  }

  double number(const std::string& key, double def) const {
    auto v = raw(key);
    if (!v) return def;
    try {
      std::size_t used = 0;
      const double x = std::stod(*v, &used);
      if (used != v->size() || !std::isfinite(x)) throw std::invalid_argument(*v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(field(key), "expected a number, got '" + *v + "'");
    }
  }

  bool flag(const std::string& key, bool def) const {
    auto v = raw(key);
    if (!v) return def;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(field(key), "expected true or false, got '" + *v + "'");
  }

  std::vector<std::uint64_t> counts(const std::string& key, std::vector<std::uint64_t> def) const {
    auto v = raw(key);
    if (!v) return def;
    std::vector<std::uint64_t> out;
    std::stringstream ss(*v);
    for (std::string item; std::getline(ss, item, ',');) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      out.push_back(to_count(key, item));
    }
    return out;
  }

  template <class Fn>
  auto parsed(const std::string& key, const std::string& def, Fn parse) const {
    const std::string v = text(key, def);
    try {
      return parse(v);
    } catch (const Error& e) {
      throw ConfigError(field(key), e.what());
    }
  }

 private:
  static std::uint64_t to_count(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
      const auto x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError(field(key), "expected a non-negative integer, got '" + v + "'");
    }
  }

  const pt::ptree& tree_;
};

void check_keys(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    auto it = schema().find(section);
    if (it == schema().end()) throw ConfigError("[" + section + "]", "unknown section");
    if (body.empty() && !body.data().empty()) throw ConfigError("[" + section + "]", "expected a section");
    for (const auto& [key, value] : body)
      if (!it->second.count(key)) throw ConfigError("[" + section + "] " + key, "unknown setting");
  }
}

ExperimentConfig from_tree(const pt::ptree& tree) {
  check_keys(tree);
  const Reader r(tree);
  ExperimentConfig c;
  const auto schema_version = r.raw("experiment.schema");
  if (!schema_version) throw ConfigError("[experiment] schema", "missing schema version");
  if (r.count("experiment.schema", 0) != static_cast<std::uint64_t>(kSchemaVersion))
    throw ConfigError("[experiment] schema", "unsupported version " + *schema_version + ", expected " +
                      std::to_string(kSchemaVersion));
  c.seeds = r.counts("experiment.seeds", c.seeds);
  c.out = r.text("experiment.out", c.out.string());

  auto& d = c.data;
  d.source = r.text("data.source", d.source);
  d.train_images = r.text("data.train_images", "");
  d.train_labels = r.text("data.train_labels", "");
  d.test_images = r.text("data.test_images", "");
  d.test_labels = r.text("data.test_labels", "");
  d.classes = r.count("data.classes", d.source == "idx" ? 10 : d.blobs.classes);
  d.blobs.classes = d.classes;
  d.blobs.per_class = r.count("data.per_class", d.blobs.per_class);
  d.test_per_class = r.count("data.test_per_class", d.test_per_class);
  d.blobs.channels = r.count("data.channels", d.blobs.channels);
  d.blobs.size = r.count("data.size", d.blobs.size);
  d.blobs.noise = static_cast<float>(r.number("data.noise", d.blobs.noise));
  d.blobs.contrast = static_cast<float>(r.number("data.contrast", d.blobs.contrast));
  d.blobs.template_seed = r.count("data.template_seed", d.blobs.template_seed);
  d.seed = r.count("data.seed", d.seed);

  c.ipc.reset();
  if (r.raw("reduce.ipc")) c.ipc = r.count("reduce.ipc", 1);
  if (r.raw("reduce.fraction")) c.fraction = r.number("reduce.fraction", 0);
  if (!c.ipc && !c.fraction) c.ipc = 1;
  c.init = r.parsed("reduce.init", "random", parse_init);

  c.features = r.parsed("privileged.features", "learned", parse_feature_source);
  c.feature_init = r.parsed("privileged.feature_init", "weak", [](const std::string& v) {
    if (v == "weak") return privileged::FeatureInit::WeakModel;
    if (v == "noise") return privileged::FeatureInit::Noise;
    throw InvalidArgument("expected weak or noise, got '" + v + "'");
  });
  c.n_feat = r.count("privileged.n_feat", c.n_feat);
  c.noise_std = static_cast<float>(r.number("privileged.noise_std", c.noise_std));
  c.tap = r.count("privileged.tap", c.tap);
  const std::string attention = r.text("privileged.attention", "none");
  if (attention != "none") c.loss.attention = r.parsed("privileged.attention", "", data::parse_attention);
  c.loss.aggregation = r.parsed("privileged.aggregation", "average", privileged::parse_aggregation);
  c.weak_epochs = r.count("privileged.weak_epochs", c.weak_epochs);
  c.teacher_epochs = r.count("privileged.teacher_epochs", c.teacher_epochs);
  c.soft_temperature = static_cast<float>(r.number("privileged.soft_temperature", c.soft_temperature));

  c.loss.lambda_reg = static_cast<float>(r.number("loss.lambda_reg", c.loss.lambda_reg));
  c.loss.lambda_task = static_cast<float>(r.number("loss.lambda_task", c.loss.lambda_task));
  c.loss.lambda_soft = static_cast<float>(r.number("loss.lambda_soft", c.loss.lambda_soft));
  c.loss.lambda_nce = static_cast<float>(r.number("loss.lambda_nce", c.loss.lambda_nce));
  c.loss.nce_temperature = static_cast<float>(r.number("loss.nce_temperature", c.loss.nce_temperature));

  auto& s = c.synthesis;
  s.backend = r.parsed("synthesis.backend", "dc", distill::parse_backend);
  s.outer_steps = r.count("synthesis.outer_steps", s.outer_steps);
  s.inner_steps = r.count("synthesis.inner_steps", s.inner_steps);
  s.match_rounds = r.count("synthesis.match_rounds", s.match_rounds);
  s.model_lr = static_cast<float>(r.number("synthesis.model_lr", s.model_lr));
  s.data_lr = static_cast<float>(r.number("synthesis.data_lr", s.data_lr));
  s.real_batch = r.count("synthesis.real_batch", s.real_batch);
  s.synthetic_batch = r.count("synthesis.synthetic_batch", s.synthetic_batch);
  if (r.raw("synthesis.update_images")) c.update_images = r.flag("synthesis.update_images", false);

  c.model.family = r.parsed("model.family", "convnet", nn::parse_family);
  c.model.depth = r.count("model.depth", c.model.depth);
  c.model.width = r.count("model.width", c.model.width);

  c.eval.epochs = r.count("eval.epochs", c.eval.epochs);
  c.eval.lr = static_cast<float>(r.number("eval.lr", c.eval.lr));
  c.eval.batch_size = r.count("eval.batch_size", c.eval.batch_size);
  c.eval.allow_aligner = r.flag("eval.aligner", c.eval.allow_aligner);

  if (c.data.source == "blobs") {
    c.model.input = {c.data.blobs.channels, c.data.blobs.size, c.data.blobs.size};
    c.model.classes = c.data.classes;
  }
  c.validate();
  return c;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.7g", v);
  return buf;
}

std::string fixed(double v, int digits = 6) {
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

std::size_t resolve_ipc(const ExperimentConfig& cfg, const data::LabeledDataset& train) {
  if (cfg.ipc) return *cfg.ipc;
  const auto counts = data::counts_from_fraction(*cfg.fraction, train.size(), train.classes);
  return std::max<std::size_t>(1, *std::min_element(counts.begin(), counts.end()));
}

nn::FeatureTap resolved_tap(const ExperimentConfig& cfg, const nn::ModelSpec& spec) {
  return cfg.tap == 0 ? nn::FeatureTap::final_layer(spec) : nn::FeatureTap{cfg.tap};
}

Tensor mean_over_copies(const Tensor& features) {
  const std::size_t m = features.dim(0), n = features.dim(1), d = features.numel() / (m * n);
  Shape s(features.shape().begin() + 2, features.shape().end());
  s.insert(s.begin(), m);
  Tensor out(s, 0.0f);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += features[(i * n + k) * d + j] / static_cast<float>(n);
  return out;
}

std::string backend_column(const ExperimentConfig& cfg) {
  if (cfg.features == FeatureSource::Learned) return std::string(distill::backend_name(cfg.synthesis.backend));
  if (cfg.init == InitMethod::DC) return "dc";
  if (cfg.init == InitMethod::DM) return "dm";
  return "none";
}

}  // namespace

std::string_view init_name(InitMethod m) {
  switch (m) {
    case InitMethod::Random: return "random";
    case InitMethod::Herding: return "herding";
    case InitMethod::KCenter: return "kcenter";
    case InitMethod::Forgetting: return "forgetting";
    case InitMethod::DC: return "dc";
    case InitMethod::DM: return "dm";
  }
  return "?";
}

InitMethod parse_init(std::string_view name) {
  for (auto m : {InitMethod::Random, InitMethod::Herding, InitMethod::KCenter, InitMethod::Forgetting,
                 InitMethod::DC, InitMethod::DM})
    if (init_name(m) == name) return m;
  throw InvalidArgument("unknown init method '" + std::string(name) + "'");
}

std::string_view feature_source_name(FeatureSource s) {
  switch (s) {
    case FeatureSource::None: return "none";
    case FeatureSource::Assigned: return "assigned";
    case FeatureSource::Learned: return "learned";
  }
  return "?";
}

FeatureSource parse_feature_source(std::string_view name) {
  for (auto s : {FeatureSource::None, FeatureSource::Assigned, FeatureSource::Learned})
    if (feature_source_name(s) == name) return s;
  throw InvalidArgument("unknown feature source '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  auto wrap = [](const char* key, auto&& check) {
    try {
      check();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(field(key), e.what());
    }
  };
  if (ipc.has_value() == fraction.has_value()) throw ConfigError("[reduce] ipc", "set exactly one of ipc and fraction");
  if (ipc && *ipc < 1) throw ConfigError("[reduce] ipc", "must be >= 1");
  if (fraction && !(*fraction > 0.0 && *fraction <= 1.0)) throw ConfigError("[reduce] fraction", "must be in (0, 1]");
  if (data.source != "blobs" && data.source != "idx")
    throw ConfigError("[data] source", "expected blobs or idx, got '" + data.source + "'");
  if (data.source == "idx") {
    for (const auto& [key, path] : {std::pair{"data.train_images", data.train_images},
                                    {"data.train_labels", data.train_labels},
                                    {"data.test_images", data.test_images},
                                    {"data.test_labels", data.test_labels}})
      if (path.empty()) throw ConfigError(field(key), "required for idx data");
  } else {
    if (data.classes < 2) throw ConfigError("[data] classes", "must be >= 2");
    if (data.blobs.per_class < 1 || data.test_per_class < 1) throw ConfigError("[data] per_class", "must be >= 1");
  }
  if (seeds.empty()) throw ConfigError("[experiment] seeds", "at least one seed is required");
  if (n_feat < 1) throw ConfigError("[privileged] n_feat", "must be >= 1");
  if (features == FeatureSource::None &&
      (loss.lambda_reg > 0 || loss.lambda_task > 0 || loss.lambda_nce > 0))
    throw ConfigError("[privileged] features", "none, but feature-label loss weights are nonzero");
  if (!(eval.lr > 0.0f)) throw ConfigError("[eval] lr", "must be > 0");
  if (features == FeatureSource::Learned || init == InitMethod::DC || init == InitMethod::DM) {
    if (synthesis.inner_steps < 1) throw ConfigError("[synthesis] inner_steps", "must be >= 1");
    if (synthesis.match_rounds < 1) throw ConfigError("[synthesis] match_rounds", "must be >= 1");
    if (!(synthesis.model_lr > 0.0f)) throw ConfigError("[synthesis] model_lr", "must be > 0");
    if (!(synthesis.data_lr > 0.0f)) throw ConfigError("[synthesis] data_lr", "must be > 0");
    if (synthesis.real_batch < 1) throw ConfigError("[synthesis] real_batch", "must be >= 1");
  }
  wrap("loss.lambda_reg", [&] { loss.validate(); });
  if (data.source == "blobs") {
    wrap("model.depth", [&] { model.validate(); });
    wrap("privileged.tap", [&] { resolved_tap(*this, model).validate(model); });
  }
}

bool ExperimentConfig::resolved_update_images() const {
  if (update_images) return *update_images;
  return init == InitMethod::DC || init == InitMethod::DM;
}

distill::BiLevelConfig ExperimentConfig::resolved_synthesis() const {
  distill::BiLevelConfig s = synthesis;
  s.model = model;
  s.tap = resolved_tap(*this, model);
  s.loss = loss;
  s.update_images = resolved_update_images();
  return s;
}

ExperimentConfig parse_config(const std::string& text, const Overrides& overrides) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("line " + std::to_string(e.line()), e.message());
  }
  for (const auto& [key, value] : overrides) {
    if (key.find('.') == std::string::npos) throw ConfigError(key, "overrides take the form section.key");
    tree.put(key, value);
  }
  return from_tree(tree);
}

ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string canonical_text(const ExperimentConfig& c) {
  std::map<std::string, std::string> kv;
  kv["data.source"] = c.data.source;
  kv["data.seed"] = std::to_string(c.data.seed);
  kv["data.classes"] = std::to_string(c.data.classes);
  if (c.data.source == "idx") {
    kv["data.train_images"] = c.data.train_images.string();
    kv["data.train_labels"] = c.data.train_labels.string();
    kv["data.test_images"] = c.data.test_images.string();
    kv["data.test_labels"] = c.data.test_labels.string();
  } else {
    kv["data.per_class"] = std::to_string(c.data.blobs.per_class);
    kv["data.test_per_class"] = std::to_string(c.data.test_per_class);
    kv["data.channels"] = std::to_string(c.data.blobs.channels);
    kv["data.size"] = std::to_string(c.data.blobs.size);
    kv["data.noise"] = fmt(c.data.blobs.noise);
    kv["data.contrast"] = fmt(c.data.blobs.contrast);
    kv["data.template_seed"] = std::to_string(c.data.blobs.template_seed);
  }
  if (c.ipc) kv["reduce.ipc"] = std::to_string(*c.ipc);
  if (c.fraction) kv["reduce.fraction"] = fmt(*c.fraction);
  kv["reduce.init"] = init_name(c.init);
  kv["privileged.features"] = feature_source_name(c.features);
  kv["privileged.feature_init"] = c.feature_init == privileged::FeatureInit::WeakModel ? "weak" : "noise";
  kv["privileged.n_feat"] = std::to_string(c.n_feat);
  kv["privileged.noise_std"] = fmt(c.noise_std);
  kv["privileged.tap"] = std::to_string(c.tap);
  kv["privileged.attention"] = c.loss.attention ? std::string(data::attention_name(*c.loss.attention)) : "none";
  kv["privileged.aggregation"] = privileged::aggregation_name(c.loss.aggregation);
  kv["privileged.weak_epochs"] = std::to_string(c.weak_epochs);
  kv["privileged.teacher_epochs"] = std::to_string(c.teacher_epochs);
  kv["privileged.soft_temperature"] = fmt(c.soft_temperature);
  kv["loss.lambda_reg"] = fmt(c.loss.lambda_reg);
  kv["loss.lambda_task"] = fmt(c.loss.lambda_task);
  kv["loss.lambda_soft"] = fmt(c.loss.lambda_soft);
  kv["loss.lambda_nce"] = fmt(c.loss.lambda_nce);
  kv["loss.nce_temperature"] = fmt(c.loss.nce_temperature);
  kv["synthesis.backend"] = distill::backend_name(c.synthesis.backend);
  kv["synthesis.outer_steps"] = std::to_string(c.synthesis.outer_steps);
  kv["synthesis.inner_steps"] = std::to_string(c.synthesis.inner_steps);
  kv["synthesis.match_rounds"] = std::to_string(c.synthesis.match_rounds);
  kv["synthesis.model_lr"] = fmt(c.synthesis.model_lr);
  kv["synthesis.data_lr"] = fmt(c.synthesis.data_lr);
  kv["synthesis.real_batch"] = std::to_string(c.synthesis.real_batch);
  kv["synthesis.synthetic_batch"] = std::to_string(c.synthesis.synthetic_batch);
  kv["synthesis.update_images"] = c.resolved_update_images() ? "true" : "false";
  kv["model.family"] = nn::family_name(c.model.family);
  kv["model.depth"] = std::to_string(c.model.depth);
  kv["model.width"] = std::to_string(c.model.width);
  kv["eval.epochs"] = std::to_string(c.eval.epochs);
  kv["eval.lr"] = fmt(c.eval.lr);
  kv["eval.batch_size"] = std::to_string(c.eval.batch_size);
  kv["eval.aligner"] = c.eval.allow_aligner ? "true" : "false";
  kv["experiment.schema"] = std::to_string(kSchemaVersion);
  std::string seeds;
  for (auto s : c.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  kv["experiment.seeds"] = seeds;
  kv["experiment.out"] = c.out.string();
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& c) {
  std::string text;
  std::istringstream lines(canonical_text(c));
  for (std::string line; std::getline(lines, line);)
    if (line.rfind("experiment.seeds=", 0) != 0 && line.rfind("experiment.out=", 0) != 0) text += line + "\n";
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

Workspace prepare(const ExperimentConfig& cfg) {
  cfg.validate();
  Workspace ws;
  if (cfg.data.source == "idx") {
    for (const auto& p : {cfg.data.train_images, cfg.data.train_labels, cfg.data.test_images, cfg.data.test_labels})
      if (!std::filesystem::exists(p)) throw ConfigError("[data]", "file not found: " + p.string());
    ws.train = data::load_idx(cfg.data.train_images, cfg.data.train_labels, cfg.data.classes);
    ws.test = data::load_idx(cfg.data.test_images, cfg.data.test_labels, cfg.data.classes);
  } else {
    ws.train = data::make_blobs(cfg.data.blobs, derive_seed(cfg.data.seed, "train"));
    data::BlobSpec test = cfg.data.blobs;
    test.per_class = cfg.data.test_per_class;
    ws.test = data::make_blobs(test, derive_seed(cfg.data.seed, "test"));
  }
  ws.model = cfg.model;
  ws.model.input = ws.train.image_shape();
  ws.model.classes = ws.train.classes;
  ws.model.validate();
  resolved_tap(cfg, ws.model).validate(ws.model);
  const auto teacher_seed = derive_seed(cfg.data.seed, "teacher");
  ws.teacher = nn::train_supervised(nn::init_model(ws.model, teacher_seed), ws.train,
                                    {cfg.teacher_epochs, 0.01f, 64, teacher_seed});
  return ws;
}

data::ReducedDataset build_reduced(const ExperimentConfig& cfg, const Workspace& ws, std::uint64_t seed,
                                   distill::SynthesisResult* synthesis) {
  const auto& train = ws.train;
  const std::size_t ipc = resolve_ipc(cfg, train);
  const std::size_t classes = train.classes;
  const nn::FeatureTap tap = resolved_tap(cfg, ws.model);
  const std::string hash = config_hash(cfg);

  std::vector<std::size_t> idx;
  switch (cfg.init) {
    case InitMethod::Herding:
      idx = coreset::select_herding(coreset::embed(ws.teacher, train.images), train.labels, classes, ipc);
      break;
    case InitMethod::KCenter:
      idx = coreset::select_kcenter(coreset::embed(ws.teacher, train.images), train.labels, classes, ipc);
      break;
    case InitMethod::Forgetting: {
      coreset::ProxyOptions proxy{ws.model, {std::max<std::size_t>(2, cfg.teacher_epochs), 0.01f, 64, 0}};
      idx = coreset::select_forgetting(train, ipc, proxy, derive_seed(seed, "init"));
      break;
    }
    default:
      idx = coreset::select_random(train, ipc, derive_seed(seed, "init"));
  }
  auto ds = data::reduce(train, idx);

  distill::BiLevelConfig syn = cfg.resolved_synthesis();
  syn.model = ws.model;
  if (cfg.init == InitMethod::DC || cfg.init == InitMethod::DM) {
    distill::BiLevelConfig images_only = syn;
    images_only.backend = cfg.init == InitMethod::DC ? distill::Backend::DC : distill::Backend::DM;
    images_only.loss = privileged::DrupiLossConfig{};
    images_only.loss.lambda_reg = images_only.loss.lambda_task = 0.0f;
    images_only.update_images = true;
    ds = distill::run_synthesis(train, ds, images_only, derive_seed(seed, "distill-init"), hash).ds;
  }

  const Shape feature_shape = ws.model.feature_shape(tap.layer);
  if (cfg.features == FeatureSource::Assigned) {
    privileged::FeatureInitOptions opts{privileged::FeatureInit::WeakModel, cfg.n_feat, cfg.noise_std};
    ds.features = privileged::init_features(ds.images, opts, derive_seed(seed, "noise"), feature_shape, &ws.teacher, tap);
  } else if (cfg.features == FeatureSource::Learned) {
    const auto weak_seed = derive_seed(seed, "weak");
    const auto weak = nn::train_supervised(nn::init_model(ws.model, weak_seed), train,
                                           {cfg.weak_epochs, 0.01f, 64, weak_seed});
    privileged::FeatureInitOptions opts{cfg.feature_init, cfg.n_feat, cfg.noise_std};
    ds.features = privileged::init_features(ds.images, opts, derive_seed(seed, "noise"), feature_shape, &weak, tap);
    if (cfg.loss.lambda_soft > 0) ds.soft_labels = privileged::soft_labels(ds.images, ws.teacher, cfg.soft_temperature);
    auto result = distill::run_synthesis(train, ds, syn, seed, hash);
    ds = result.ds;
    if (synthesis) *synthesis = std::move(result);
  }
  if (cfg.loss.lambda_soft > 0) ds.soft_labels = privileged::soft_labels(ds.images, ws.teacher, cfg.soft_temperature);
  if (cfg.loss.attention && ds.features) {
    ds.attention_kind = cfg.loss.attention;
    ds.attention = privileged::pool_attention(mean_over_copies(*ds.features), *cfg.loss.attention);
  }
  ds.provenance.backend = backend_column(cfg);
  ds.provenance.config_hash = hash;
  ds.provenance.seed = seed;
  ds.provenance.feature_layer = ds.features ? tap.layer : 0;
  ds.validate();
  return ds;
}

SeedOutcome run_seed(const ExperimentConfig& cfg, const Workspace& ws, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  SeedOutcome o;
  o.seed = seed;
  distill::SynthesisResult synthesis;
  o.ds = build_reduced(cfg, ws, seed, &synthesis);
  o.distance_trace = synthesis.distance_trace;
  o.model_hashes = synthesis.model_hashes;

  const nn::FeatureTap tap = resolved_tap(cfg, ws.model);
  lupi::LupiOptions eval = cfg.eval;
  eval.tap = tap;
  auto trained = lupi::train_lupi(o.ds, ws.model, cfg.loss, eval, seed);
  o.accuracy = lupi::evaluate(trained.model, ws.test);
  o.trace = std::move(trained.trace);
  o.alignment = lupi::gradient_alignment(o.ds, ws.train, ws.teacher, cfg.loss, tap);
  if (o.ds.features) {
    std::vector<std::size_t> per(o.ds.classes, 0);
    for (int y : o.ds.labels) ++per[static_cast<std::size_t>(y)];
    if (*std::min_element(per.begin(), per.end()) >= 2)
      o.diversity = metrics::diversity_discriminability(*o.ds.features, o.ds.labels, o.ds.classes,
                                                        derive_seed(seed, "metrics"));
  }
  o.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return o;
}

std::vector<SeedOutcome> run_seeds(const ExperimentConfig& cfg, const Workspace& ws, std::size_t threads) {
  std::vector<SeedOutcome> out(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < out.size(); i = next++) {
      try {
        out[i] = run_seed(cfg, ws, cfg.seeds[i]);
      } catch (const std::exception& e) {
        out[i] = SeedOutcome{};
        out[i].seed = cfg.seeds[i];
        out[i].status = std::string("error: ") + e.what();
        out[i].accuracy = std::numeric_limits<double>::quiet_NaN();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(threads, 1, out.size());
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  return out;
}

std::size_t worker_threads() {
  const char* v = std::getenv("DRUPI_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("DRUPI_THREADS", "expected a positive integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(n);
}

std::string csv_header() {
  return "config_hash,seed,init,backend,lambda_reg,lambda_task,n_feat,tap,accuracy,grad_cosine,diversity,"
         "discriminability,status,wall_clock_s";
}

namespace {

std::string row(const ExperimentConfig& cfg, const std::string& hash, const std::string& seed, double acc,
                double cosine, double diversity, double discriminability, const std::string& status, double wall) {
  std::string r = hash + "," + seed + "," + std::string(init_name(cfg.init)) + "," + backend_column(cfg) + ",";
  r += fmt(cfg.loss.lambda_reg) + "," + fmt(cfg.loss.lambda_task) + "," + std::to_string(cfg.n_feat) + ",";
  r += std::to_string(cfg.tap) + "," + fixed(acc) + "," + fixed(cosine) + "," + fixed(diversity) + ",";
  r += fixed(discriminability) + "," + csv_field(status) + "," + fixed(wall, 3);
  return r;
}

}  // namespace

std::string csv_row(const ExperimentConfig& cfg, const std::string& hash, const SeedOutcome& o) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const bool ok = o.status == "ok";
  return row(cfg, hash, std::to_string(o.seed), ok ? o.accuracy : nan, ok ? o.alignment.with_pi.value : nan,
             o.diversity ? o.diversity->diversity : nan, o.diversity ? o.diversity->discriminability : nan, o.status,
             o.wall_clock_s);
}

std::string csv_aggregate(const ExperimentConfig& cfg, const std::string& hash,
                          const std::vector<SeedOutcome>& outcomes) {
  double acc = 0, cosine = 0, div = 0, disc = 0, wall = 0;
  std::size_t ok = 0, with_div = 0;
  for (const auto& o : outcomes) {
    wall += o.wall_clock_s;
    if (o.status != "ok") continue;
    ++ok;
    acc += o.accuracy;
    cosine += o.alignment.with_pi.value;
    if (o.diversity) {
      ++with_div;
      div += o.diversity->diversity;
      disc += o.diversity->discriminability;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::string status = ok == outcomes.size() ? "ok"
                                                   : "partial " + std::to_string(ok) + "/" +
                                                         std::to_string(outcomes.size());
  return row(cfg, hash, "mean", ok ? acc / ok : nan, ok ? cosine / ok : nan, with_div ? div / with_div : nan,
             with_div ? disc / with_div : nan, status, wall);
}

std::string report_json(const ExperimentConfig& cfg, const std::string& hash, const SeedOutcome& o) {
  nlohmann::json j;
  j["config_hash"] = hash;
  j["seed"] = o.seed;
  j["status"] = o.status;
  j["init"] = init_name(cfg.init);
  j["features"] = feature_source_name(cfg.features);
  if (o.status == "ok") {
    j["accuracy"] = o.accuracy;
    j["grad_cosine"] = {{"with_pi", o.alignment.with_pi.value},
                        {"without_pi", o.alignment.without_pi.value},
                        {"degenerate", o.alignment.with_pi.degenerate || o.alignment.without_pi.degenerate}};
    if (o.diversity)
      j["feature_labels"] = {{"diversity", o.diversity->diversity},
                             {"discriminability", o.diversity->discriminability},
                             {"mutual_information", o.diversity->mutual_information},
                             {"degenerate", o.diversity->degenerate}};
    auto& trace = j["loss_trace"] = nlohmann::json::array();
    for (const auto& c : o.trace)
      trace.push_back({{"cls", c.cls}, {"reg", c.reg}, {"task", c.task}, {"soft", c.soft}, {"nce", c.nce}});
    j["distance_trace"] = o.distance_trace;
    j["model_hashes"] = o.model_hashes;
  }
  j["wall_clock_s"] = o.wall_clock_s;
  return j.dump(2);
}

std::filesystem::path write_artifacts(const ExperimentConfig& cfg, const std::vector<SeedOutcome>& outcomes,
                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string hash = config_hash(cfg);
  for (const auto& o : outcomes) {
    const std::string stem = "seed-" + std::to_string(o.seed);
    if (o.status == "ok") data::save_reduced(o.ds, dir / ("reduced-" + stem + ".drpi"));
    std::ofstream(dir / ("report-" + stem + ".json")) << report_json(cfg, hash, o) << "\n";
  }
  const auto summary = dir / "summary.csv";
  std::ofstream csv(summary);
  csv << csv_header() << "\n";
  for (const auto& o : outcomes) csv << csv_row(cfg, hash, o) << "\n";
  csv << csv_aggregate(cfg, hash, outcomes) << "\n";
  if (!csv) throw Error("cannot write " + summary.string());
  return summary;
}

}  // namespace drupi::experiment
