#include "cfcrs/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "cfcrs/error.hpp"

namespace cfcrs {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& reason) {
  throw Error(ErrorCode::kConfigError, field + ": " + reason);
}

// Reads known keys of one object and rejects the rest.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(where(""), "expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) fail(where(key), "unknown key");
    }
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_integer() || it->get<std::int64_t>() < 0) fail(where(key), "expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) fail(where(key), "expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) fail(where(key), "expected a boolean");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) fail(where(key), "expected a string");
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        if (!it->is_array()) fail(where(key), "expected an array of numbers");
        for (const auto& v : *it) {
          if (!v.is_number()) fail(where(key), "expected an array of numbers");
        }
      }
      out = it->get<T>();
    } catch (const json::exception& e) {
      fail(where(key), e.what());
    }
  }

  Reader section(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    static const json empty = json::object();
    return Reader(it == obj_.end() ? empty : *it, where(key));
  }

 private:
  std::string where(const std::string& key) const {
    if (path_.empty()) return key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void positive(const std::string& field, double v) {
  if (!(v > 0.0)) fail(field, "must be positive");
}

void at_least_one(const std::string& field, std::size_t v) {
  if (v == 0) fail(field, "must be at least 1");
}

}  // namespace

void RunConfig::validate() const {
  if (item_type.empty()) fail("item_type", "must not be empty");
  if (precision != "f64" && precision != "f32") fail("precision", "must be f64 or f32");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) fail("train_fraction", "must be in (0, 1]");
  at_least_one("workers", workers);
  at_least_one("hop_limit", hop_limit);
  at_least_one("embedding.dim", embedding_dim);
  at_least_one("embedding.layers", rgcn_layers);
  at_least_one("embedding.num_bases", num_bases);
  at_least_one("mining.min_support", min_support);
  at_least_one("mining.max_len", max_len);
  at_least_one("classifier.epochs", classifier.epochs);
  at_least_one("classifier.batch_size", classifier.batch_size);
  positive("classifier.lr", classifier.lr);
  at_least_one("flm.model_dim", flm.model_dim);
  at_least_one("flm.heads", flm.heads);
  if (flm.model_dim % flm.heads != 0) fail("flm.heads", "must divide flm.model_dim");
  at_least_one("flm.layers", flm.layers);
  at_least_one("flm.ffn_dim", flm.ffn_dim);
  at_least_one("flm.batch_size", flm.batch_size);
  positive("flm.lr", flm.lr);
  if (flm.pseudo_ratio < 0.0) fail("flm.pseudo_ratio", "must be non-negative");
  positive("flm.temperature", flm.temperature);
  at_least_one("recommender.batch_size", recommender.batch_size);
  positive("recommender.lr", recommender.lr);
  if (recommender.weight_decay < 0.0) fail("recommender.weight_decay", "must be non-negative");
  at_least_one("recommender.patience", recommender.patience);
  at_least_one("recommender.select_k", recommender.select_k);
  if (!(recommender.valid_fraction >= 0.0 && recommender.valid_fraction < 1.0)) {
    fail("recommender.valid_fraction", "must be in [0, 1)");
  }
  if (curriculum.rho < 0.0) fail("curriculum.rho", "must be non-negative");
  if (!(curriculum.delta > 0.0 && curriculum.delta <= 1.0)) fail("curriculum.delta", "must be in (0, 1]");
  positive("adversarial.alpha", adversarial.alpha);
  at_least_one("adversarial.rollouts", adversarial.rollouts);
  at_least_one("adversarial.edits_per_user", adversarial.edits_per_user);
  if (mix_ratio < 0.0) fail("adversarial.mix_ratio", "must be non-negative");
  if (chit_chat_rate < 0.0 || chit_chat_rate > 1.0) fail("realization.chit_chat_rate", "must be in [0, 1]");
  for (double d : sweep.delta) {
    if (!(d > 0.0 && d <= 1.0)) fail("sweep.delta", "values must be in (0, 1]");
  }
  for (double r : sweep.rho) {
    if (r < 0.0) fail("sweep.rho", "values must be non-negative");
  }
  for (double m : sweep.mix_ratio) {
    if (m < 0.0) fail("sweep.mix_ratio", "values must be non-negative");
  }
}

RgcnConfig RunConfig::rgcn() const {
  return RgcnConfig{embedding_dim, rgcn_layers, num_bases, Activation::kTanh};
}

RecConfig RunConfig::rec() const { return RecConfig{rgcn(), attn_dim}; }

FlmConfig RunConfig::flm_model() const {
  return FlmConfig{embedding_dim, flm.model_dim, flm.heads, flm.layers, flm.ffn_dim, max_len};
}

FlmTrainConfig RunConfig::flm_training() const {
  FlmTrainConfig c;
  c.epochs = flm.epochs;
  c.batch_size = flm.batch_size;
  c.pseudo_ratio = flm.pseudo_ratio;
  c.optimizer.lr = flm.lr;
  c.seed = derive_seed(seed, 3);
  return c;
}

RecTrainConfig RunConfig::rec_training() const {
  RecTrainConfig c;
  c.epochs = recommender.epochs;
  c.batch_size = recommender.batch_size;
  c.patience = recommender.patience;
  c.select_k = recommender.select_k;
  c.optimizer.lr = recommender.lr;
  c.optimizer.weight_decay = recommender.weight_decay;
  c.seed = derive_seed(seed, 1);
  return c;
}

SchemaTrainConfig RunConfig::classifier_training() const {
  SchemaTrainConfig c;
  c.epochs = classifier.epochs;
  c.batch_size = classifier.batch_size;
  c.optimizer.lr = classifier.lr;
  c.seed = derive_seed(seed, 2);
  return c;
}

CourseConfig RunConfig::courses() const {
  CourseConfig c;
  c.curriculum = curriculum;
  c.mix_ratio = mix_ratio;
  c.patience = recommender.patience;
  c.rec = rec_training();
  c.seed = derive_seed(seed, 4);
  return c;
}

SimulatorOptions RunConfig::simulator() const {
  return SimulatorOptions{flm.temperature, flm.path_constrained, chit_chat_rate};
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["paths"] = {{"kg", c.paths.kg},
                {"type_map", c.paths.type_map},
                {"dialogues", c.paths.dialogues},
                {"test_dialogues", c.paths.test_dialogues},
                {"output_dir", c.paths.output_dir}};
  j["item_type"] = c.item_type;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["precision"] = c.precision;
  j["train_fraction"] = c.train_fraction;
  j["hop_limit"] = c.hop_limit;
  j["embedding"] = {{"dim", c.embedding_dim},
                    {"layers", c.rgcn_layers},
                    {"num_bases", c.num_bases},
                    {"attn_dim", c.attn_dim}};
  j["mining"] = {{"min_support", c.min_support}, {"max_len", c.max_len}};
  j["classifier"] = {{"hidden", c.classifier.hidden},
                     {"epochs", c.classifier.epochs},
                     {"batch_size", c.classifier.batch_size},
                     {"lr", c.classifier.lr}};
  j["flm"] = {{"model_dim", c.flm.model_dim},     {"heads", c.flm.heads},
              {"layers", c.flm.layers},           {"ffn_dim", c.flm.ffn_dim},
              {"epochs", c.flm.epochs},           {"batch_size", c.flm.batch_size},
              {"lr", c.flm.lr},                   {"pseudo_ratio", c.flm.pseudo_ratio},
              {"temperature", c.flm.temperature}, {"path_constrained", c.flm.path_constrained}};
  j["recommender"] = {{"epochs", c.recommender.epochs},
                      {"batch_size", c.recommender.batch_size},
                      {"lr", c.recommender.lr},
                      {"weight_decay", c.recommender.weight_decay},
                      {"patience", c.recommender.patience},
                      {"select_k", c.recommender.select_k},
                      {"valid_fraction", c.recommender.valid_fraction}};
  j["curriculum"] = {{"rho", c.curriculum.rho},
                     {"delta", c.curriculum.delta},
                     {"courses", c.curriculum.courses}};
  j["adversarial"] = {{"alpha", c.adversarial.alpha},
                      {"rollouts", c.adversarial.rollouts},
                      {"reinforce_steps", c.adversarial.reinforce_steps},
                      {"edits_per_user", c.adversarial.edits_per_user},
                      {"pairs_per_course", c.adversarial.pairs_per_course},
                      {"dialogues_per_edit", c.adversarial.dialogues_per_edit},
                      {"use_baseline", c.adversarial.use_baseline},
                      {"mix_ratio", c.mix_ratio}};
  j["eda"] = {{"dialogues_per_course", c.eda_dialogues_per_course}};
  j["realization"] = {{"fallback_templates", c.fallback_templates},
                      {"chit_chat_rate", c.chit_chat_rate}};
  j["sweep"] = {{"rho", c.sweep.rho}, {"delta", c.sweep.delta}, {"mix_ratio", c.sweep.mix_ratio}};
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  {
    Reader r(j, "");
    {
      Reader p = r.section("paths");
      p.get("kg", c.paths.kg);
      p.get("type_map", c.paths.type_map);
      p.get("dialogues", c.paths.dialogues);
      p.get("test_dialogues", c.paths.test_dialogues);
      p.get("output_dir", c.paths.output_dir);
    }
    r.get("item_type", c.item_type);
    r.get("seed", c.seed);
    r.get("workers", c.workers);
    r.get("precision", c.precision);
    r.get("train_fraction", c.train_fraction);
    r.get("hop_limit", c.hop_limit);
    {
      Reader e = r.section("embedding");
      e.get("dim", c.embedding_dim);
      e.get("layers", c.rgcn_layers);
      e.get("num_bases", c.num_bases);
      e.get("attn_dim", c.attn_dim);
    }
    {
      Reader m = r.section("mining");
      m.get("min_support", c.min_support);
      m.get("max_len", c.max_len);
    }
    {
      Reader s = r.section("classifier");
      s.get("hidden", c.classifier.hidden);
      s.get("epochs", c.classifier.epochs);
      s.get("batch_size", c.classifier.batch_size);
      s.get("lr", c.classifier.lr);
    }
    {
      Reader f = r.section("flm");
      f.get("model_dim", c.flm.model_dim);
      f.get("heads", c.flm.heads);
      f.get("layers", c.flm.layers);
      f.get("ffn_dim", c.flm.ffn_dim);
      f.get("epochs", c.flm.epochs);
      f.get("batch_size", c.flm.batch_size);
      f.get("lr", c.flm.lr);
      f.get("pseudo_ratio", c.flm.pseudo_ratio);
      f.get("temperature", c.flm.temperature);
      f.get("path_constrained", c.flm.path_constrained);
    }
    {
      Reader s = r.section("recommender");
      s.get("epochs", c.recommender.epochs);
      s.get("batch_size", c.recommender.batch_size);
      s.get("lr", c.recommender.lr);
      s.get("weight_decay", c.recommender.weight_decay);
      s.get("patience", c.recommender.patience);
      s.get("select_k", c.recommender.select_k);
      s.get("valid_fraction", c.recommender.valid_fraction);
    }
    {
      Reader s = r.section("curriculum");
      s.get("rho", c.curriculum.rho);
      s.get("delta", c.curriculum.delta);
      s.get("courses", c.curriculum.courses);
    }
    {
      Reader s = r.section("adversarial");
      s.get("alpha", c.adversarial.alpha);
      s.get("rollouts", c.adversarial.rollouts);
      s.get("reinforce_steps", c.adversarial.reinforce_steps);
      s.get("edits_per_user", c.adversarial.edits_per_user);
      s.get("pairs_per_course", c.adversarial.pairs_per_course);
      s.get("dialogues_per_edit", c.adversarial.dialogues_per_edit);
      s.get("use_baseline", c.adversarial.use_baseline);
      s.get("mix_ratio", c.mix_ratio);
    }
    {
      Reader s = r.section("eda");
      s.get("dialogues_per_course", c.eda_dialogues_per_course);
    }
    {
      Reader s = r.section("realization");
      s.get("fallback_templates", c.fallback_templates);
      s.get("chit_chat_rate", c.chit_chat_rate);
    }
    {
      Reader s = r.section("sweep");
      s.get("rho", c.sweep.rho);
      s.get("delta", c.sweep.delta);
      s.get("mix_ratio", c.sweep.mix_ratio);
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config", "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail("config", e.what());
  }
  return config_from_json(j);
}

void apply_overrides(json& doc, std::span<const std::string> assignments) {
  for (const std::string& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) fail(a, "override must look like key=value");
    const std::string key = a.substr(0, eq);
    const std::string raw = a.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    json* node = &doc;
    std::istringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->is_object()) fail(key, "not an object path");
      node = &(*node)[path[i]];
      if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) fail(key, "not an object path");
    (*node)[path.back()] = value;
  }
}

std::size_t default_workers() {
  if (const char* v = std::getenv("CFCRS_WORKERS")) {
    char* end = nullptr;
    const unsigned long n = std::strtoul(v, &end, 10);
    if (end != v && *end == '\0' && n > 0) return n;
  }
  return 1;
}

}  // namespace cfcrs
