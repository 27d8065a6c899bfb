#include "cfcrs/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cfcrs/error.hpp"

namespace cfcrs {

namespace {

std::ifstream open_input(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, std::string(what) + " " + path);
  return in;
}

std::uint64_t id_hash(std::string_view id, std::uint64_t seed) {
  std::uint64_t h = 14695981039346656037ull ^ seed;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

Dataset make_dataset(std::shared_ptr<const KnowledgeGraph> kg, std::vector<Dialogue> dialogues,
                     std::vector<Dialogue> test, const RunConfig& config) {
  Dataset data;
  const auto item = kg->find_type(config.item_type);
  if (!item) throw Error(ErrorCode::kUnknownType, config.item_type);
  data.item_type = *item;
  data.kg = std::move(kg);
  for (Dialogue& d : dialogues) {
    validate_dialogue(d);
    if (in_validation_split(d.dialogue_id, config.recommender.valid_fraction)) {
      data.valid.push_back(std::move(d));
    } else {
      data.train.push_back(std::move(d));
    }
  }
  if (config.train_fraction < 1.0) {
    const auto keep = static_cast<std::size_t>(
        std::llround(config.train_fraction * static_cast<double>(data.train.size())));
    std::vector<std::pair<std::uint64_t, std::size_t>> order;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      order.emplace_back(id_hash(data.train[i].dialogue_id, config.seed), i);
    }
    std::sort(order.begin(), order.end());
    order.resize(std::max<std::size_t>(1, keep));
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    std::vector<Dialogue> kept;
    for (const auto& [h, i] : order) kept.push_back(std::move(data.train[i]));
    data.train = std::move(kept);
  }
  for (const Dialogue& d : test) validate_dialogue(d);
  data.test = std::move(test);
  return data;
}

Dataset load_dataset(const RunConfig& config) {
  auto triples = open_input(config.paths.kg, "knowledge graph");
  auto types = open_input(config.paths.type_map, "type map");
  auto kg = std::make_shared<const KnowledgeGraph>(load_kg(triples, types));
  auto dialogues_in = open_input(config.paths.dialogues, "dialogues");
  std::vector<Dialogue> dialogues = load_dialogues(dialogues_in);
  std::vector<Dialogue> test;
  if (!config.paths.test_dialogues.empty()) {
    auto test_in = open_input(config.paths.test_dialogues, "test dialogues");
    test = load_dialogues(test_in);
  }
  return make_dataset(std::move(kg), std::move(dialogues), std::move(test), config);
}

Dataset synthetic_dataset(const SyntheticWorld& world, const RunConfig& config) {
  std::istringstream triples(world.triples);
  std::istringstream types(world.type_map);
  auto kg = std::make_shared<const KnowledgeGraph>(load_kg(triples, types));
  return make_dataset(std::move(kg), world.dialogues, world.test, config);
}

SampleSets rec_samples(const Dataset& data) {
  SampleSets s;
  auto collect = [&](const std::vector<Dialogue>& ds, std::vector<RecSample>& out) {
    for (const Dialogue& d : ds) {
      auto part = to_rec_samples(d, *data.kg, data.item_type);
      out.insert(out.end(), part.begin(), part.end());
    }
  };
  collect(data.train, s.train);
  collect(data.valid, s.valid);
  collect(data.test, s.test);
  return s;
}

std::shared_ptr<const HeterogeneousKG> build_hkg(const Dataset& data) {
  return std::make_shared<const HeterogeneousKG>(data.kg,
                                                 derive_interactions(data.train, *data.kg));
}

SchemaCatalog mine_stage(const Dataset& data, const RunConfig& config) {
  std::vector<FlowSchema> schemas;
  for (const Dialogue& d : data.train) schemas.push_back(extract_flow(d, *data.kg).schema);
  return mine_schemas(schemas, config.min_support, config.max_len);
}

std::shared_ptr<const TemplateBank> template_bank(const Dataset& data, const RunConfig& config) {
  std::vector<Template> templates;
  for (const Dialogue& d : data.train) {
    auto t = extract_templates(d, *data.kg);
    templates.insert(templates.end(), t.begin(), t.end());
  }
  return std::make_shared<const TemplateBank>(std::move(templates), *data.kg, data.item_type,
                                              config.fallback_templates);
}

PreferenceEncoder prompt_encoder(const RecModel& model) {
  return make_scorer(model).context_encoder;
}

std::vector<FlowExample> flow_examples(std::span<const Dialogue> dialogues,
                                       const KnowledgeGraph& kg, std::size_t max_len) {
  std::vector<FlowExample> out;
  for (const Dialogue& d : dialogues) {
    FlowAndSchema fs = extract_flow(d, kg);
    if (fs.flow.empty()) continue;
    FlowExample ex;
    ex.schema = clip_schema(fs.schema, max_len);
    ex.flow.assign(fs.flow.entities.begin(),
                   fs.flow.entities.begin() + static_cast<std::ptrdiff_t>(ex.schema.size()));
    const std::vector<UserPair> pair = user_pairs(std::span<const Dialogue>(&d, 1), kg);
    ex.seeker = pair.front().seeker;
    ex.recommender = pair.front().recommender;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<SchemaPair> schema_pairs(std::span<const Dialogue> dialogues,
                                     const KnowledgeGraph& kg, const SchemaCatalog& catalog,
                                     const PreferenceEncoder& prompts) {
  std::vector<SchemaPair> out;
  for (const FlowExample& ex : flow_examples(dialogues, kg, catalog.max_len)) {
    const auto gold = catalog.index_of(ex.schema);
    if (!gold) continue;
    out.push_back(SchemaPair{prompts.encode(ex.seeker), prompts.encode(ex.recommender), *gold});
  }
  return out;
}

std::shared_ptr<RecModel> pretrain_rec_stage(const Dataset& data,
                                             std::shared_ptr<const HeterogeneousKG> hkg,
                                             const SampleSets& samples, const RunConfig& config,
                                             RecTrainReport* report) {
  Rng rng(derive_seed(config.seed, 10));
  auto model = std::make_shared<RecModel>(config.rec(), std::move(hkg), data.item_type, rng);
  RecTrainReport r = pretrain_recommender(*model, samples.train, samples.valid,
                                          config.rec_training());
  if (report) *report = std::move(r);
  return model;
}

nn::ParamStore classifier_stage(const Dataset& data, const SchemaCatalog& catalog,
                                const PreferenceEncoder& prompts, const RunConfig& config,
                                SchemaTrainReport* report) {
  Rng rng(derive_seed(config.seed, 11));
  nn::ParamStore store;
  const std::size_t hidden =
      config.classifier.hidden ? config.classifier.hidden : 2 * config.embedding_dim;
  init_schema_classifier(store, config.embedding_dim, hidden, catalog.size(), rng);
  const auto train = schema_pairs(data.train, *data.kg, catalog, prompts);
  const auto valid = schema_pairs(data.valid, *data.kg, catalog, prompts);
  SchemaTrainReport r = train_schema_classifier(store, train, valid, config.classifier_training());
  if (report) *report = std::move(r);
  return store;
}

std::shared_ptr<FlowLM> flm_stage(const Dataset& data, const HeterogeneousKG& hkg,
                                  const SchemaCatalog& catalog, const PreferenceEncoder& prompts,
                                  const RunConfig& config, FlmTrainReport* report) {
  Rng rng(derive_seed(config.seed, 12));
  auto flm = std::make_shared<FlowLM>(config.flm_model(), data.kg, rng);
  const auto real = flow_examples(data.train, *data.kg, config.max_len);
  const PathIndex index(hkg.base_ptr(), config.hop_limit);
  std::unique_ptr<PseudoFlowSampler> pseudo;
  if (config.flm.pseudo_ratio > 0.0) {
    pseudo = std::make_unique<PseudoFlowSampler>(index, catalog);
    if (!pseudo->any_reachable()) {
      throw Error(ErrorCode::kAllSchemasUnreachable, "no catalog schema has a valid path");
    }
  }
  FlmTrainReport r = pretrain_flm(*flm, real, pseudo.get(), prompts, config.flm_training());
  if (report) *report = std::move(r);
  return flm;
}

PretrainedSystem pretrain_system(const Dataset& data, const SampleSets& samples,
                                 const RunConfig& config) {
  PretrainedSystem s;
  s.hkg = build_hkg(data);
  s.recommender = pretrain_rec_stage(data, s.hkg, samples, config, &s.rec_report);
  s.prompts = prompt_encoder(*s.recommender);
  s.catalog = mine_stage(data, config);
  if (s.catalog.empty()) throw Error(ErrorCode::kEmptyCatalog, "no schema reaches min_support");
  s.classifier = classifier_stage(data, s.catalog, s.prompts, config, &s.classifier_report);
  s.flm = flm_stage(data, *s.hkg, s.catalog, s.prompts, config, &s.flm_report);
  s.bank = template_bank(data, config);
  return s;
}

std::shared_ptr<const Simulator> make_simulator(const PretrainedSystem& system,
                                                const RunConfig& config) {
  auto paths = std::make_shared<const PathIndex>(system.hkg->base_ptr(), config.hop_limit);
  return std::make_shared<const Simulator>(system.flm, system.prompts, system.classifier,
                                           system.catalog, std::move(paths), system.bank,
                                           config.simulator());
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline:
      return "baseline";
    case Variant::kCounterfactual:
      return "cfcrs";
    case Variant::kEda:
      return "eda";
  }
  return "?";
}

std::vector<std::string> recommender_responses(std::span<const Dialogue> dialogues) {
  std::vector<std::string> out;
  for (const Dialogue& d : dialogues) {
    for (const Turn& t : d.turns) {
      if (t.speaker == Speaker::kRecommender) out.push_back(t.text);
    }
  }
  return out;
}

VariantResult run_variant(const PretrainedSystem& system, const Dataset& data,
                          const SampleSets& samples, Variant variant, const RunConfig& config,
                          const std::function<void(const CourseLog&)>& on_course) {
  VariantResult result;
  result.model = std::make_shared<RecModel>(*system.recommender);
  std::unique_ptr<Augmenter> augmenter;
  const CounterfactualConfig& adv = config.adversarial;
  if (variant == Variant::kCounterfactual) {
    augmenter = std::make_unique<CounterfactualAugmenter>(
        make_simulator(system, config), user_pairs(data.train, *data.kg), data.item_type, adv);
  } else if (variant == Variant::kEda) {
    std::vector<FlowAndSchema> flows;
    for (const Dialogue& d : data.train) flows.push_back(extract_flow(d, *data.kg));
    const std::size_t per_course =
        config.eda_dialogues_per_course
            ? config.eda_dialogues_per_course
            : adv.pairs_per_course * adv.edits_per_user * adv.dialogues_per_edit;
    augmenter = std::make_unique<EdaAugmenter>(std::move(flows), system.bank, data.kg, per_course);
  }
  result.courses = train_cfcrs(*result.model, samples.train, samples.valid, augmenter.get(),
                               config.courses(), on_course);
  if (!samples.test.empty()) {
    result.test = evaluate(make_scorer(*result.model), samples.test);
    if (!result.courses.simulated.empty()) {
      const auto responses = recommender_responses(result.courses.simulated);
      for (std::size_t n : {2, 3, 4}) result.test.distinct[n] = distinct_n(responses, n);
    }
  }
  return result;
}

}  // namespace cfcrs
