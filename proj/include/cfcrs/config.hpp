#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfcrs/counterfactual.hpp"
#include "cfcrs/flm.hpp"
#include "cfcrs/recommender.hpp"

namespace cfcrs {

struct PathsConfig {
  std::string kg;
  std::string type_map;
  std::string dialogues;
  std::string test_dialogues;
  std::string output_dir = "run";
};

struct ClassifierConfig {
  std::size_t hidden = 0;  // 0: twice the embedding width
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr = 1e-3;
};

struct FlmSection {
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_dim = 256;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double pseudo_ratio = 4.0;
  double temperature = 1.0;
  bool path_constrained = true;
};

struct RecommenderSection {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t patience = 3;
  std::size_t select_k = 50;  // model selection on validation Recall@select_k
  double valid_fraction = 0.1;
};

struct SweepGrid {
  std::vector<double> rho = {0.1, 0.01, 0.001};
  std::vector<double> delta = {0.9, 0.8, 0.7};
  std::vector<double> mix_ratio = {0.5, 1.0, 2.0};
};

// Every field of a run. Serialises to and from a single JSON document in
// which unknown keys are errors.
struct RunConfig {
  PathsConfig paths;
  std::string item_type = "item";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string precision = "f64";  // checkpoint value type: f64 or f32
  double train_fraction = 1.0;
  std::size_t hop_limit = 2;
  std::size_t embedding_dim = 128;
  std::size_t rgcn_layers = 1;
  std::size_t num_bases = 8;
  std::size_t attn_dim = 0;
  std::size_t min_support = 5;
  std::size_t max_len = 16;
  ClassifierConfig classifier;
  FlmSection flm;
  RecommenderSection recommender;
  CurriculumSchedule curriculum;
  CounterfactualConfig adversarial;
  double mix_ratio = 1.0;
  std::size_t eda_dialogues_per_course = 0;  // 0: as many as the counterfactual run
  bool fallback_templates = true;
  double chit_chat_rate = 0.0;
  SweepGrid sweep;

  // Throws ConfigError naming the field.
  void validate() const;

  RgcnConfig rgcn() const;
  RecConfig rec() const;
  FlmConfig flm_model() const;
  FlmTrainConfig flm_training() const;
  RecTrainConfig rec_training() const;
  SchemaTrainConfig classifier_training() const;
  CourseConfig courses() const;
  SimulatorOptions simulator() const;
};

nlohmann::ordered_json to_json(const RunConfig& c);
// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// Applies `dotted.key=value` assignments to a config document. Values are
// parsed as JSON when possible and taken as strings otherwise.
void apply_overrides(nlohmann::json& doc, std::span<const std::string> assignments);

// Worker count from CFCRS_WORKERS, or 1.
std::size_t default_workers();

}  // namespace cfcrs
