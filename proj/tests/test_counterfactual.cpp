#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfcrs/counterfactual.hpp"
#include "cfcrs/error.hpp"
#include "cfcrs/nn/grad_check.hpp"
#include "fixtures.hpp"

using namespace cfcrs;
using nn::Tensor;
using fixtures::throws_code;

namespace {

constexpr std::size_t kDim = 5;

struct World {
  std::shared_ptr<const KnowledgeGraph> kg = fixtures::movie_kg();
  TypeId genre = *kg->find_type("genre");
  TypeId item = *kg->find_type("item");
  TypeId actor = *kg->find_type("actor");
  PreferenceEncoder prompts;
  std::shared_ptr<const FlowLM> flm;
  std::shared_ptr<const PathIndex> paths = std::make_shared<const PathIndex>(kg, 2);
  std::shared_ptr<const TemplateBank> bank;

  World() {
    Rng rng(100);
    prompts = PreferenceEncoder{
        EntityEmbeddings{fixtures::random_matrix(kg->num_entities(), kDim, rng), kg->num_entities()},
        fixtures::random_matrix(3, kDim, rng), Tensor({3}, {0.2, -0.1, 0.4})};
    auto model = std::make_shared<FlowLM>(
        FlmConfig{.entity_dim = kDim, .model_dim = 8, .heads = 2, .layers = 1, .ffn_dim = 16,
                  .max_len = 6},
        kg, rng);
    model->params().get("flm.out.W") = fixtures::random_matrix(kg->num_entities(), 8, rng, 2.0);
    model->params().get("flm.prompt.W") = fixtures::random_matrix(8, kDim, rng, 1.5);
    flm = model;
    bank = std::make_shared<const TemplateBank>(
        extract_templates(fixtures::jump_street_dialogue(), *kg), *kg, item, true);
  }

  EntityId id(const std::string& name) const { return kg->entity_id(name); }

  // Classifier with a zero output layer ranks schemas by catalog index.
  std::shared_ptr<const Simulator> simulator(const SchemaCatalog& catalog, bool random_head) const {
    nn::ParamStore classifier;
    Rng rng(101);
    init_schema_classifier(classifier, kDim, 6, catalog.size(), rng);
    if (random_head) classifier.get("schema.W2") = fixtures::random_matrix(catalog.size(), 6, rng);
    return std::make_shared<const Simulator>(flm, prompts, classifier, catalog, paths, bank);
  }

  SchemaCatalog catalog(std::vector<FlowSchema> schemas) const {
    return mine_schemas(schemas, 1);
  }
};

std::vector<std::vector<EntityId>> valid_flows(const World& w, const FlowSchema& s) {
  std::vector<std::vector<EntityId>> out = {{}};
  for (TypeId t : s.types) {
    std::vector<std::vector<EntityId>> next;
    for (const auto& p : out) {
      for (EntityId e : w.kg->entities_of_type(t)) {
        auto q = p;
        q.push_back(e);
        next.push_back(std::move(q));
      }
    }
    out = std::move(next);
  }
  std::erase_if(out, [&](const auto& f) { return !is_valid_flow(*w.kg, f, s, 2); });
  return out;
}

double norm(const Tensor& t) { return std::sqrt(t.squared_norm()); }

}  // namespace

TEST_CASE("curriculum_lambda: closed form") {
  const CurriculumSchedule s{.rho = 0.3, .delta = 0.8, .courses = 10};
  for (std::size_t k = 0; k <= 10; ++k) {
    CHECK(std::abs(curriculum_lambda(s, k) - 0.3 * std::pow(0.8, static_cast<double>(k))) < 1e-15);
  }
  CHECK(curriculum_lambda(s, 0) == 0.3);
  for (std::size_t k = 1; k <= 10; ++k) CHECK(curriculum_lambda(s, k) < curriculum_lambda(s, k - 1));
}

TEST_CASE("select_edit_targets: distinct, capped and uniform") {
  Rng rng(1);
  CHECK(select_edit_targets(0, 3, rng).empty());
  auto all = select_edit_targets(3, 7, rng);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<std::size_t>{0, 1, 2});

  const std::size_t n = 5, k = 2;
  const int trials = 5000;
  std::vector<int> hits(n, 0);
  for (int i = 0; i < trials; ++i) {
    const auto picks = select_edit_targets(n, k, rng);
    REQUIRE(picks.size() == k);
    CHECK(picks[0] != picks[1]);
    for (std::size_t p : picks) ++hits[p];
  }
  const double p = static_cast<double>(k) / n;
  const double sigma = std::sqrt(trials * p * (1 - p));
  for (int h : hits) CHECK(std::abs(h - trials * p) < 4 * sigma);
}

TEST_CASE("apply_edit and edited_preference") {
  World w;
  Rng rng(2);
  const Tensor rows = fixtures::random_matrix(3, kDim, rng);
  const Tensor delta = fixtures::random_matrix(1, kDim, rng);
  const std::vector<EntityEdit> edits = {{1, delta}};
  const Tensor edited = apply_edit(rows, edits);
  for (std::size_t j = 0; j < kDim; ++j) {
    CHECK(edited.at(0, j) == rows.at(0, j));
    CHECK(edited.at(1, j) == rows.at(1, j) + delta[j]);
  }
  const std::vector<EntityEdit> outside = {{3, delta}};
  CHECK(throws_code(ErrorCode::kPositionOutOfRange, [&] { apply_edit(rows, outside); }));

  const std::vector<EntityId> ents = {w.id("comedy"), w.id("Superbad"), w.id("Jonah Hill")};
  const Tensor zero = Tensor::matrix(1, kDim);
  CHECK(edited_preference(w.prompts, ents, std::nullopt, delta) == w.prompts.encode(ents));
  CHECK(edited_preference(w.prompts, ents, 2, zero) == w.prompts.encode(ents));
  CHECK(edited_preference(w.prompts, {}, std::nullopt, zero).squared_norm() == 0.0);

  const std::vector<EntityEdit> one = {{2, delta}};
  const UserPreference want =
      encode_user(apply_edit(w.prompts.embeddings.rows(ents), one), w.prompts.w, w.prompts.b);
  const Tensor got = edited_preference(w.prompts, ents, 2, delta);
  for (std::size_t j = 0; j < kDim; ++j) CHECK(std::abs(got[j] - want.e_u[j]) < 1e-14);

  nn::ParamStore store;
  store.add("delta", delta);
  const Tensor c = fixtures::random_matrix(1, kDim, rng);
  nn::LossFn f = [&](nn::Graph& g) {
    return nn::sum(nn::mul(edited_preference(g, w.prompts, ents, 1, g.param(store, "delta")),
                           g.constant(c)));
  };
  CHECK(nn::grad_check(f, store).max_relative_error < 1e-6);
}

TEST_CASE("user_pairs: per-side mentions, deduplicated") {
  World w;
  std::vector<Dialogue> ds = {fixtures::jump_street_dialogue("a"),
                              fixtures::dialogue("quiet", {fixtures::turn(Speaker::kSeeker, "Hi", {})})};
  const auto pairs = user_pairs(ds, *w.kg);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].dialogue_id == "a");
  CHECK(pairs[0].seeker == std::vector<EntityId>{w.id("comedy"), w.id("Jonah Hill")});
  CHECK(pairs[0].recommender ==
        std::vector<EntityId>{w.id("21 Jump Street"), w.id("comedy"), w.id("Superbad")});
}

TEST_CASE("Simulator: schema choice skips unreachable schemas") {
  World w;
  const SchemaCatalog c = mine_schemas(
      std::vector<FlowSchema>{FlowSchema{{w.actor, w.actor}}, FlowSchema{{w.actor, w.actor}},
                              FlowSchema{{w.genre, w.item}}},
      1);
  REQUIRE(c.schemas[0] == FlowSchema{{w.actor, w.actor}});
  auto sim = w.simulator(c, false);
  const Tensor e = w.prompts.encode(std::vector<EntityId>{w.id("comedy")});
  CHECK(sim->choose_schema(e, e) == 1);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto r = sim->rollout(e, e, rng);
    CHECK(is_valid_flow(*w.kg, r.flow.entities, c.schemas[r.schema], 2));
    const RealizedDialogue d = sim->realize(r, "s", rng);
    CHECK(extract_flow(d.dialogue, *w.kg).flow.entities == r.flow.entities);
  }
  auto dead = w.simulator(w.catalog({FlowSchema{{w.actor, w.actor}}}), false);
  CHECK(throws_code(ErrorCode::kAllSchemasUnreachable, [&] { dead->choose_schema(e, e); }));
}

TEST_CASE("reinforce_step: estimate matches the enumerated policy gradient") {
  World w;
  const FlowSchema schema{{w.genre, w.item}};
  auto sim = w.simulator(w.catalog({schema}), true);
  const UserPair pair{"p", {w.id("comedy"), w.id("Jonah Hill")}, {w.id("21 Jump Street")}};
  Rng rng(4);
  Augmentation aug{0, 1, 0, fixtures::random_matrix(1, kDim, rng, 0.3),
                   fixtures::random_matrix(1, kDim, rng, 0.3), 0.0};
  const RewardFn reward = [&](const Simulator::Rollout& r) {
    return 1.0 + 0.5 * static_cast<double>(r.flow.entities[1]) +
           (r.flow.entities[0] == w.id("horror") ? 2.0 : 0.0);
  };
  const auto flows = valid_flows(w, schema);
  auto expected = [&](const Tensor& du, const Tensor& dv) {
    const Tensor e_u = edited_preference(w.prompts, pair.seeker, aug.position_u, du);
    const Tensor e_v = edited_preference(w.prompts, pair.recommender, aug.position_v, dv);
    double j = 0.0, mass = 0.0;
    for (const auto& f : flows) {
      const Simulator::Rollout r{0, ConversationFlow::of(f)};
      nn::Graph g(false);
      const double p = std::exp(sim->log_prob(g, g.constant(e_u), g.constant(e_v), r).scalar());
      j += p * reward(r);
      mass += p;
    }
    CHECK(std::abs(mass - 1.0) < 1e-10);
    return j;
  };
  const double h = 1e-5;
  Tensor exact_u = Tensor::matrix(1, kDim), exact_v = Tensor::matrix(1, kDim);
  for (std::size_t k = 0; k < kDim; ++k) {
    Tensor up = aug.delta_u, dn = aug.delta_u;
    up[k] += h;
    dn[k] -= h;
    exact_u[k] = (expected(up, aug.delta_v) - expected(dn, aug.delta_v)) / (2 * h);
    up = aug.delta_v;
    dn = aug.delta_v;
    up[k] += h;
    dn[k] -= h;
    exact_v[k] = (expected(aug.delta_u, up) - expected(aug.delta_u, dn)) / (2 * h);
  }
  REQUIRE(norm(exact_u) > 1e-3);
  REQUIRE(norm(exact_v) > 1e-3);

  // The exact mean reward is a valid baseline and keeps the estimate unbiased.
  aug.baseline = expected(aug.delta_u, aug.delta_v);
  Augmentation work = aug;
  const ReinforceStats st = reinforce_step(
      work, pair, *sim, reward,
      ReinforceOptions{.alpha = 0.0, .rollouts = 20000, .use_baseline = true, .baseline_momentum = 1.0},
      rng);
  CHECK(st.rewards.size() == 20000);
  Tensor diff_u = st.grad_u, diff_v = st.grad_v;
  for (std::size_t k = 0; k < kDim; ++k) {
    diff_u[k] -= exact_u[k];
    diff_v[k] -= exact_v[k];
  }
  CHECK(norm(diff_u) < 0.05 * norm(exact_u));
  CHECK(norm(diff_v) < 0.05 * norm(exact_v));
  CHECK(std::abs(st.mean_reward - aug.baseline) < 0.05 * aug.baseline);
  CHECK(work.delta_u == aug.delta_u);
}

TEST_CASE("reinforce_step: zero reward only decays the edit") {
  World w;
  auto sim = w.simulator(w.catalog({FlowSchema{{w.genre, w.item}}}), true);
  const UserPair pair{"p", {w.id("comedy")}, {w.id("Superbad"), w.id("Jonah Hill")}};
  Rng rng(5);
  Augmentation aug{0, 0, 1, fixtures::random_matrix(1, kDim, rng),
                   fixtures::random_matrix(1, kDim, rng), 0.0};
  const Augmentation before = aug;
  const ReinforceOptions opt{.alpha = 0.01, .lambda = 0.5, .rollouts = 3};
  const RewardFn zero = [](const Simulator::Rollout&) { return 0.0; };
  const ReinforceStats st = reinforce_step(aug, pair, *sim, zero, opt, rng);
  CHECK(st.grad_u.squared_norm() == 0.0);
  CHECK(st.mean_reward == 0.0);
  for (std::size_t k = 0; k < kDim; ++k) {
    CHECK(aug.delta_u[k] == before.delta_u[k] * (1 - 2 * 0.01 * 0.5));
    CHECK(aug.delta_v[k] == before.delta_v[k] * (1 - 2 * 0.01 * 0.5));
  }
  const RewardFn nan = [](const Simulator::Rollout&) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK(throws_code(ErrorCode::kNonFiniteUpdate,
                    [&] { reinforce_step(aug, pair, *sim, nan, opt, rng); }));
}

TEST_CASE("eda: every operation keeps flow and schema aligned") {
  World w;
  Rng rng(6);
  for (EdaOp op : {EdaOp::kReplace, EdaOp::kInsert, EdaOp::kSwap, EdaOp::kDelete}) {
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<EntityId> ents(1 + uniform_index(rng, 5));
      FlowSchema schema;
      for (EntityId& e : ents) {
        e = static_cast<EntityId>(uniform_index(rng, w.kg->num_entities()));
        schema.types.push_back(w.kg->type_of(e));
      }
      const EdaResult r = eda_apply(ConversationFlow::of(ents), schema, *w.kg, op, rng);
      REQUIRE(r.flow.size() == r.schema.size());
      for (std::size_t i = 0; i < r.flow.size(); ++i) {
        CHECK(w.kg->type_of(r.flow.entities[i]) == r.schema.types[i]);
      }
      const auto n = static_cast<long>(ents.size());
      const auto m = static_cast<long>(r.flow.size());
      switch (op) {
        case EdaOp::kInsert: CHECK(m == n + 1); break;
        case EdaOp::kDelete: CHECK(m == n - 1); break;
        case EdaOp::kSwap: {
          auto a = ents, b = r.flow.entities;
          std::sort(a.begin(), a.end());
          std::sort(b.begin(), b.end());
          CHECK(a == b);
          break;
        }
        case EdaOp::kReplace: {
          CHECK(m == n);
          std::size_t changed = 0;
          for (std::size_t i = 0; i < ents.size(); ++i) changed += ents[i] != r.flow.entities[i];
          CHECK(changed <= 1);
          break;
        }
      }
    }
  }
  const EdaResult empty = eda_augment(ConversationFlow{}, FlowSchema{}, *w.kg, rng);
  CHECK(empty.flow.empty());
}

TEST_CASE("train_cfcrs: course log, simulated dialogues and determinism") {
  World w;
  auto hkg = std::make_shared<const HeterogeneousKG>(attach_users(w.kg, {}));
  auto sim = w.simulator(w.catalog({FlowSchema{{w.genre, w.item}},
                                    FlowSchema{{w.item, w.actor, w.item}}}),
                         true);
  const std::vector<Dialogue> ds = {fixtures::jump_street_dialogue("a")};
  std::vector<RecSample> real = to_rec_samples(ds[0], *w.kg, w.item);
  real.push_back(RecSample{{w.id("horror")}, w.id("Get Out"), false, "b"});
  const std::vector<RecSample> valid = {RecSample{{w.id("horror")}, w.id("It"), false, "c"}};
  const CourseConfig cfg{.curriculum = {.courses = 3},
                         .mix_ratio = 2.0,
                         .patience = 10,
                         .rec = {.batch_size = 4, .select_k = 2, .optimizer = {.lr = 0.01}},
                         .seed = 7};
  const CounterfactualConfig cf{.rollouts = 2, .pairs_per_course = 4};

  auto run = [&](bool augment) {
    Rng rng(8);
    RecModel m(RecConfig{.rgcn = {.dim = kDim, .layers = 1, .num_bases = 2}}, hkg, w.item, rng);
    CounterfactualAugmenter aug(sim, user_pairs(ds, *w.kg), w.item, cf);
    std::vector<std::size_t> seen;
    CourseResult r = train_cfcrs(m, real, valid, augment ? &aug : nullptr, cfg,
                                 [&](const CourseLog& l) { seen.push_back(l.course); });
    CHECK(seen == std::vector<std::size_t>{1, 2, 3});
    return std::pair{std::move(r), m.params()};
  };
  const auto [a, pa] = run(true);
  const auto [b, pb] = run(true);
  REQUIRE(a.log.size() == 3);
  CHECK(a.simulated.size() == 12);
  for (const CourseLog& l : a.log) {
    CHECK(l.simulated_dialogues == 4);
    CHECK(l.simulated_samples <= 2 * real.size());
    CHECK(nlohmann::json::parse(l.to_json()).at("course").get<std::size_t>() == l.course);
  }
  CHECK(a.log[1].lambda == curriculum_lambda(cfg.curriculum, 2));
  CHECK(a.best_course <= 3);
  for (const std::string& name : pa.names()) CHECK(pa.get(name) == pb.get(name));
  for (std::size_t i = 0; i < a.simulated.size(); ++i) CHECK(a.simulated[i] == b.simulated[i]);

  const auto [plain, pp] = run(false);
  CHECK(plain.simulated.empty());
  for (const CourseLog& l : plain.log) CHECK(l.simulated_samples == 0);
}
