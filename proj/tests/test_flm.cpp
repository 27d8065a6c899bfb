#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "cfcrs/error.hpp"
#include "cfcrs/flm.hpp"
#include "cfcrs/nn/grad_check.hpp"
#include "fixtures.hpp"

using namespace cfcrs;
using nn::Tensor;
using fixtures::throws_code;

namespace {

constexpr std::size_t kEntityDim = 6;

FlmConfig tiny_config() {
  return FlmConfig{.entity_dim = kEntityDim, .model_dim = 8, .heads = 2, .layers = 1,
                   .ffn_dim = 16, .max_len = 6};
}

// Untrained model with a random output head so the distribution is not flat.
FlowLM random_flm(std::shared_ptr<const KnowledgeGraph> kg, std::uint64_t seed) {
  Rng rng(seed);
  FlowLM flm(tiny_config(), kg, rng);
  flm.params().get("flm.out.W") =
      fixtures::random_matrix(kg->num_entities(), tiny_config().model_dim, rng, 2.0);
  return flm;
}

// Every type-matching flow for the schema.
std::vector<std::vector<EntityId>> all_typed(const KnowledgeGraph& kg, const FlowSchema& s) {
  std::vector<std::vector<EntityId>> out = {{}};
  for (TypeId t : s.types) {
    std::vector<std::vector<EntityId>> next;
    for (const auto& p : out) {
      for (EntityId e : kg.entities_of_type(t)) {
        auto q = p;
        q.push_back(e);
        next.push_back(std::move(q));
      }
    }
    out = std::move(next);
  }
  return out;
}

struct Prompt {
  Tensor e_u, e_v;
};

Prompt random_prompt(std::uint64_t seed) {
  Rng rng(seed);
  return {fixtures::random_matrix(1, kEntityDim, rng), fixtures::random_matrix(1, kEntityDim, rng)};
}

}  // namespace

TEST_CASE("flow_log_prob: probabilities over all typed flows sum to one") {
  auto kg = fixtures::movie_kg();
  FlowLM flm = random_flm(kg, 1);
  const Prompt p = random_prompt(2);
  const FlowSchema schema{{*kg->find_type("genre"), *kg->find_type("item"), *kg->find_type("item")}};
  for (double temperature : {1.0, 0.5, 2.0}) {
    double total = 0.0;
    for (const auto& f : all_typed(*kg, schema)) {
      total += std::exp(flow_log_prob(flm, p.e_u, p.e_v, schema, f, nullptr, temperature));
    }
    CHECK(std::abs(total - 1.0) < 1e-10);
  }
}

TEST_CASE("flow_log_prob: plan-masked probabilities cover exactly the valid flows") {
  auto kg = fixtures::movie_kg();
  FlowLM flm = random_flm(kg, 3);
  const Prompt p = random_prompt(4);
  const FlowSchema schema{{*kg->find_type("genre"), *kg->find_type("item"), *kg->find_type("item")}};
  PathIndex index(kg, 2);
  const SchemaPlan plan = index.plan(schema);
  double total = 0.0;
  std::size_t valid = 0;
  for (const auto& f : all_typed(*kg, schema)) {
    if (is_valid_flow(*kg, f, schema, 2)) {
      total += std::exp(flow_log_prob(flm, p.e_u, p.e_v, schema, f, &plan));
      ++valid;
    } else {
      CHECK(throws_code(ErrorCode::kConstraintViolation,
                        [&] { flow_log_prob(flm, p.e_u, p.e_v, schema, f, &plan); }));
    }
  }
  CHECK(static_cast<double>(valid) == plan.total_paths());
  CHECK(std::abs(total - 1.0) < 1e-10);
}

TEST_CASE("flow_log_prob: untrained perplexity equals the type class size") {
  auto kg = fixtures::movie_kg();
  Rng rng(5);
  FlowLM flm(tiny_config(), kg, rng);
  const Prompt p = random_prompt(6);
  const TypeId item = *kg->find_type("item");
  const FlowSchema schema{{item, item, item}};
  const std::vector<EntityId> flow = {kg->entity_id("It"), kg->entity_id("Superbad"),
                                      kg->entity_id("It")};
  const double lp = flow_log_prob(flm, p.e_u, p.e_v, schema, flow);
  CHECK(std::abs(std::exp(-lp / 3.0) - 4.0) < 1e-10);
}

TEST_CASE("flow_log_prob: input errors") {
  auto kg = fixtures::movie_kg();
  FlowLM flm = random_flm(kg, 7);
  const Prompt p = random_prompt(8);
  const TypeId genre = *kg->find_type("genre");
  const FlowSchema schema{{genre}};
  const std::vector<EntityId> wrong_type = {kg->entity_id("It")};
  CHECK(throws_code(ErrorCode::kTypeMismatch,
                    [&] { flow_log_prob(flm, p.e_u, p.e_v, schema, wrong_type); }));
  const std::vector<EntityId> outside = {static_cast<EntityId>(kg->num_entities() + 4)};
  CHECK(throws_code(ErrorCode::kVocabMiss,
                    [&] { flow_log_prob(flm, p.e_u, p.e_v, schema, outside); }));
  const std::vector<EntityId> empty;
  CHECK(flow_log_prob(flm, p.e_u, p.e_v, FlowSchema{}, empty) == 0.0);
}

TEST_CASE("decoder is causal") {
  auto kg = fixtures::movie_kg();
  FlowLM flm = random_flm(kg, 9);
  const Prompt p = random_prompt(10);
  const TypeId item = *kg->find_type("item");
  const FlowSchema schema{{item, item, item}};
  nn::Graph g(false);
  nn::Expr memory = encode_prompt(g, flm, g.constant(p.e_u), g.constant(p.e_v), schema);
  const std::vector<EntityId> a = {kg->entity_id("It"), kg->entity_id("Superbad")};
  const std::vector<EntityId> b = {kg->entity_id("It"), kg->entity_id("Get Out")};
  const Tensor la = decode_logits(g, flm, memory, schema, a).value();
  const Tensor lb = decode_logits(g, flm, memory, schema, b).value();
  REQUIRE(la.rows() == 3);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t j = 0; j < la.cols(); ++j) CHECK(la.at(r, j) == lb.at(r, j));
  }
  bool differs = false;
  for (std::size_t j = 0; j < la.cols(); ++j) differs = differs || la.at(2, j) != lb.at(2, j);
  CHECK(differs);
}

TEST_CASE("generate_flow: sampling frequencies follow flow_log_prob") {
  auto kg = fixtures::movie_kg();
  FlowLM flm = random_flm(kg, 11);
  const Prompt p = random_prompt(12);
  const FlowSchema schema{{*kg->find_type("genre"), *kg->find_type("item")}};
  std::map<std::vector<EntityId>, int> counts;
  Rng rng(13);
  const int n = 8000;
  for (int i = 0; i < n; ++i) ++counts[generate_flow(flm, p.e_u, p.e_v, schema, rng).entities];
  for (const auto& f : all_typed(*kg, schema)) {
    const double q = std::exp(flow_log_prob(flm, p.e_u, p.e_v, schema, f));
    const double sigma = std::sqrt(n * q * (1 - q));
    CHECK(std::abs(counts[f] - n * q) < 4 * sigma + 1);
  }
}

TEST_CASE("generate_flow: greedy, plan and reproducibility") {
  auto kg = fixtures::movie_kg();
  FlowLM flm = random_flm(kg, 14);
  const Prompt p = random_prompt(15);
  const TypeId genre = *kg->find_type("genre"), item = *kg->find_type("item");
  const FlowSchema schema{{genre, item, item, genre}};
  Rng r1(1), r2(2);
  const auto g1 = generate_flow(flm, p.e_u, p.e_v, schema, r1, {.greedy = true});
  const auto g2 = generate_flow(flm, p.e_u, p.e_v, schema, r2, {.greedy = true});
  CHECK(g1.entities == g2.entities);
  double best = -1e300;
  for (const auto& f : all_typed(*kg, schema)) {
    best = std::max(best, flow_log_prob(flm, p.e_u, p.e_v, schema, f));
  }
  // Greedy picks the per-step argmax, so it is at most the joint optimum.
  CHECK(flow_log_prob(flm, p.e_u, p.e_v, schema, g1.entities) <= best + 1e-12);

  PathIndex index(kg, 2);
  const SchemaPlan plan = index.plan(schema);
  Rng a(7), b(7);
  for (int i = 0; i < 200; ++i) {
    const auto fa = generate_flow(flm, p.e_u, p.e_v, schema, a, {}, &plan);
    const auto fb = generate_flow(flm, p.e_u, p.e_v, schema, b, {}, &plan);
    CHECK(fa.entities == fb.entities);
    CHECK(is_valid_flow(*kg, fa.entities, schema, 2));
  }
  Rng rng(0);
  CHECK(throws_code(ErrorCode::kConfigError, [&] {
    generate_flow(flm, p.e_u, p.e_v, schema, rng, {.temperature = 0.0});
  }));
}

TEST_CASE("flow_log_prob: gradients match finite differences") {
  auto kg = fixtures::movie_kg();
  FlowLM flm = random_flm(kg, 16);
  Rng rng(17);
  for (const std::string& name : flm.params().names()) {
    Tensor& t = flm.params().get(name);
    if (t.squared_norm() == 0.0) {
      for (double& v : t.values()) v = 0.3 * (uniform01(rng) - 0.5);
    }
  }
  const Prompt p = random_prompt(18);
  const TypeId genre = *kg->find_type("genre"), item = *kg->find_type("item");
  const FlowSchema schema{{genre, item, item}};
  PathIndex index(kg, 2);
  const SchemaPlan plan = index.plan(schema);
  const std::vector<EntityId> flow = {kg->entity_id("comedy"), kg->entity_id("Superbad"),
                                      kg->entity_id("21 Jump Street")};
  nn::LossFn f = [&](nn::Graph& g) {
    return flow_log_prob(g, flm, g.constant(p.e_u), g.constant(p.e_v), schema, flow, &plan);
  };
  CHECK(nn::grad_check(f, flm.params()).max_relative_error < 1e-5);
}

TEST_CASE("pretrain_flm memorises a single flow") {
  auto kg = fixtures::movie_kg();
  Rng rng(19);
  FlowLM flm(tiny_config(), kg, rng);
  PreferenceEncoder prompts{EntityEmbeddings{fixtures::random_matrix(kg->num_entities(), kEntityDim, rng),
                                             kg->num_entities()},
                            fixtures::random_matrix(4, kEntityDim, rng), Tensor({4})};
  const TypeId genre = *kg->find_type("genre"), item = *kg->find_type("item");
  const FlowExample ex{FlowSchema{{genre, item, item}},
                       {kg->entity_id("horror"), kg->entity_id("Get Out"), kg->entity_id("It")},
                       {kg->entity_id("horror")},
                       {kg->entity_id("Get Out"), kg->entity_id("It")}};
  const double before = example_nll(flm, ex, prompts);
  CHECK(std::abs(before - std::log(32.0)) < 1e-10);
  const std::vector<FlowExample> real = {ex};
  const FlmTrainReport r = pretrain_flm(
      flm, real, nullptr, prompts,
      FlmTrainConfig{.epochs = 500, .batch_size = 1, .pseudo_ratio = 0.0,
                     .optimizer = {.lr = 0.01, .weight_decay = 0.0}, .seed = 1});
  CHECK(r.steps == 500);
  CHECK(example_nll(flm, ex, prompts) < 0.01);
}

TEST_CASE("split_entities: two non-empty deduplicated groups") {
  Rng rng(20);
  const std::vector<EntityId> flow = {3, 1, 3, 2};
  std::set<std::pair<std::vector<EntityId>, std::vector<EntityId>>> seen;
  for (int i = 0; i < 500; ++i) {
    auto [a, b] = split_entities(flow, rng);
    CHECK_FALSE(a.empty());
    CHECK_FALSE(b.empty());
    CHECK(std::set<EntityId>(a.begin(), a.end()).size() == a.size());
    std::set<EntityId> both(a.begin(), a.end());
    both.insert(b.begin(), b.end());
    CHECK(both == std::set<EntityId>{1, 2, 3});
    seen.insert({a, b});
  }
  CHECK(seen.size() > 4);
  const std::vector<EntityId> one = {5};
  auto [a, b] = split_entities(one, rng);
  CHECK(a.size() + b.size() == 1);
}

TEST_CASE("PseudoFlowSampler: valid flows, and an error when nothing is reachable") {
  auto kg = fixtures::movie_kg();
  PathIndex index(kg, 2);
  const TypeId genre = *kg->find_type("genre"), item = *kg->find_type("item"),
               actor = *kg->find_type("actor");
  SchemaCatalog catalog = mine_schemas(
      std::vector<FlowSchema>{FlowSchema{{genre, item}}, FlowSchema{{item, actor, item}}}, 1);
  PseudoFlowSampler sampler(index, catalog);
  CHECK(sampler.any_reachable());
  Rng rng(21);
  std::set<FlowSchema> schemas;
  for (int i = 0; i < 200; ++i) {
    const FlowExample ex = sampler.sample(rng);
    CHECK(is_valid_flow(*kg, ex.flow, ex.schema, 2));
    CHECK_FALSE(ex.seeker.empty());
    CHECK_FALSE(ex.recommender.empty());
    schemas.insert(ex.schema);
  }
  CHECK(schemas.size() == 2);

  // The only actor cannot follow itself.
  SchemaCatalog dead = mine_schemas(std::vector<FlowSchema>{FlowSchema{{actor, actor}}}, 1);
  PseudoFlowSampler none(index, dead, 3);
  CHECK_FALSE(none.any_reachable());
  CHECK(throws_code(ErrorCode::kAllSchemasUnreachable, [&] { none.sample(rng); }));
  CHECK(throws_code(ErrorCode::kEmptyCatalog, [&] { PseudoFlowSampler(index, SchemaCatalog{}); }));
}
