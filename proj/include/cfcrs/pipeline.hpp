#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cfcrs/config.hpp"
#include "cfcrs/corpus.hpp"
#include "cfcrs/counterfactual.hpp"
#include "cfcrs/flm.hpp"
#include "cfcrs/recommender.hpp"
#include "cfcrs/schema.hpp"
#include "cfcrs/synthetic_world.hpp"

namespace cfcrs {

struct Dataset {
  std::shared_ptr<const KnowledgeGraph> kg;
  TypeId item_type = 0;
  std::vector<Dialogue> train;
  std::vector<Dialogue> valid;
  std::vector<Dialogue> test;
};

// Validation dialogues are picked by id hash; of the rest, train_fraction is
// kept (the ids with the smallest hash under the run seed).
Dataset make_dataset(std::shared_ptr<const KnowledgeGraph> kg, std::vector<Dialogue> dialogues,
                     std::vector<Dialogue> test, const RunConfig& config);
// Reads paths.kg, paths.type_map, paths.dialogues and, when set,
// paths.test_dialogues.
Dataset load_dataset(const RunConfig& config);
Dataset synthetic_dataset(const SyntheticWorld& world, const RunConfig& config);

struct SampleSets {
  std::vector<RecSample> train;
  std::vector<RecSample> valid;
  std::vector<RecSample> test;
};

SampleSets rec_samples(const Dataset& data);

// User nodes come from the training dialogues only.
std::shared_ptr<const HeterogeneousKG> build_hkg(const Dataset& data);

SchemaCatalog mine_stage(const Dataset& data, const RunConfig& config);
std::shared_ptr<const TemplateBank> template_bank(const Dataset& data, const RunConfig& config);
PreferenceEncoder prompt_encoder(const RecModel& model);

// Real flow examples (clipped to max_len) of the given dialogues.
std::vector<FlowExample> flow_examples(std::span<const Dialogue> dialogues,
                                       const KnowledgeGraph& kg, std::size_t max_len);

// Each dialogue whose clipped schema is in the catalog, labelled with it.
std::vector<SchemaPair> schema_pairs(std::span<const Dialogue> dialogues,
                                     const KnowledgeGraph& kg, const SchemaCatalog& catalog,
                                     const PreferenceEncoder& prompts);

// Recommender, schema classifier and flow model trained on the real data,
// recommender first so that its embeddings can serve as frozen prompts.
struct PretrainedSystem {
  std::shared_ptr<const HeterogeneousKG> hkg;
  std::shared_ptr<const RecModel> recommender;
  RecTrainReport rec_report;
  SchemaCatalog catalog;
  nn::ParamStore classifier;
  SchemaTrainReport classifier_report;
  std::shared_ptr<const FlowLM> flm;
  FlmTrainReport flm_report;
  std::shared_ptr<const TemplateBank> bank;
  PreferenceEncoder prompts;
};

std::shared_ptr<RecModel> pretrain_rec_stage(const Dataset& data,
                                             std::shared_ptr<const HeterogeneousKG> hkg,
                                             const SampleSets& samples, const RunConfig& config,
                                             RecTrainReport* report = nullptr);
nn::ParamStore classifier_stage(const Dataset& data, const SchemaCatalog& catalog,
                                const PreferenceEncoder& prompts, const RunConfig& config,
                                SchemaTrainReport* report = nullptr);
std::shared_ptr<FlowLM> flm_stage(const Dataset& data, const HeterogeneousKG& hkg,
                                  const SchemaCatalog& catalog, const PreferenceEncoder& prompts,
                                  const RunConfig& config, FlmTrainReport* report = nullptr);

PretrainedSystem pretrain_system(const Dataset& data, const SampleSets& samples,
                                 const RunConfig& config);

std::shared_ptr<const Simulator> make_simulator(const PretrainedSystem& system,
                                                const RunConfig& config);

enum class Variant { kBaseline, kCounterfactual, kEda };
std::string_view to_string(Variant v);

struct VariantResult {
  std::shared_ptr<RecModel> model;
  CourseResult courses;
  MetricReport test;
};

// Continues training a copy of the pretrained recommender for the
// configured courses with the variant's augmentation, then evaluates on
// the test samples (when there are any).
VariantResult run_variant(const PretrainedSystem& system, const Dataset& data,
                          const SampleSets& samples, Variant variant, const RunConfig& config,
                          const std::function<void(const CourseLog&)>& on_course = {});

// Responses of the recommender turns.
std::vector<std::string> recommender_responses(std::span<const Dialogue> dialogues);

}  // namespace cfcrs
