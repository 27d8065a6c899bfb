#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "cfcrs/error.hpp"
#include "cfcrs/kg_store.hpp"
#include "fixtures.hpp"

using namespace cfcrs;

namespace {

using fixtures::throws_code;

// Undirected hop distance over the raw triples, by repeated relaxation.
bool oracle_connected(const KnowledgeGraph& kg, EntityId a, EntityId b, std::size_t hops) {
  if (a == b) return false;
  std::set<EntityId> frontier = {a}, seen = {a};
  for (std::size_t h = 0; h < hops; ++h) {
    std::set<EntityId> next;
    for (const Triple& t : kg.triples()) {
      if (frontier.count(t.head) && !seen.count(t.tail)) next.insert(t.tail);
      if (frontier.count(t.tail) && !seen.count(t.head)) next.insert(t.head);
    }
    if (next.count(b)) return true;
    seen.insert(next.begin(), next.end());
    frontier = next;
  }
  return false;
}

std::vector<std::vector<EntityId>> enumerate_paths(const KnowledgeGraph& kg,
                                                   const FlowSchema& schema, std::size_t hops) {
  std::vector<std::vector<EntityId>> out = {{}};
  for (std::size_t j = 0; j < schema.size(); ++j) {
    std::vector<std::vector<EntityId>> next;
    for (const auto& prefix : out) {
      for (EntityId e = 0; e < static_cast<EntityId>(kg.num_entities()); ++e) {
        if (kg.type_of(e) != schema.types[j]) continue;
        if (!prefix.empty() && !oracle_connected(kg, prefix.back(), e, hops)) continue;
        auto p = prefix;
        p.push_back(e);
        next.push_back(std::move(p));
      }
    }
    out = std::move(next);
  }
  return out;
}

std::shared_ptr<const KnowledgeGraph> toy_kg() {
  // Six entities: two genres, three items, one actor linking items.
  return fixtures::kg_from(
      "i1\tg\tg1\ni2\tg\tg1\ni3\tg\tg2\ni2\tstar\ta1\ni3\tstar\ta1\n",
      "g1\tgenre\ng2\tgenre\ni1\titem\ni2\titem\ni3\titem\na1\tactor\n");
}

}  // namespace

TEST_CASE("load_kg: empty input") {
  auto kg = fixtures::kg_from("", "");
  CHECK(kg->num_entities() == 0);
  CHECK(kg->triples().empty());
}

TEST_CASE("load_kg: counts, first-appearance ids and dedup") {
  auto kg = fixtures::kg_from("a\tr\tb\nb\tr\tc\nc\ts\td\n",
                              "d\tt2\na\tt1\nb\tt1\nc\tt2\n");
  CHECK(kg->num_entities() == 4);
  CHECK(kg->triples().size() == 3);
  CHECK(kg->entity_id("a") == 0);
  CHECK(kg->entity_id("d") == 3);
  CHECK(kg->relation_name(1) == "s");

  std::string repeated;
  for (int i = 0; i < 5; ++i) repeated += "x\tr\ty\n";
  auto dup = fixtures::kg_from(repeated, "x\tt\ny\tt\n");
  CHECK(dup->triples().size() == 1);
}

TEST_CASE("load_kg: type-map-only entities are appended") {
  auto kg = fixtures::kg_from("a\tr\tb\n", "z\tt\na\tt\nb\tt\n");
  CHECK(kg->num_entities() == 3);
  CHECK(kg->entity_id("z") == 2);
}

TEST_CASE("load_kg: errors") {
  CHECK(throws_code(ErrorCode::kMissingType, [] { fixtures::kg_from("a\tr\tb\n", "a\tt\n"); }));
  CHECK(throws_code(ErrorCode::kMalformedRecord, [] { fixtures::kg_from("a\tr\n", "a\tt\n"); }));
}

TEST_CASE("attach_users") {
  auto kg = toy_kg();
  HeterogeneousKG h = attach_users(kg, {{"u1", {0}}, {"u2", {1, 2}}});
  CHECK(h.user_edges().size() == 3);
  CHECK(h.base().triples() == kg->triples());
  CHECK(h.num_nodes() == kg->num_entities() + 2);

  HeterogeneousKG empty = attach_users(kg, {});
  CHECK(empty.num_users() == 0);
  CHECK(empty.base().triples() == kg->triples());

  CHECK(throws_code(ErrorCode::kUnknownEntity, [&] { attach_users(kg, {{"u", {99}}}); }));
  CHECK(throws_code(ErrorCode::kEmptyInteractionList, [&] { attach_users(kg, {{"u", {}}}); }));
}

TEST_CASE("sample_path: forced choice and unreachable schema") {
  auto kg = toy_kg();
  HeterogeneousKG h = attach_users(kg, {});
  Rng rng(1);
  const TypeId actor = *kg->find_type("actor");
  auto forced = sample_path(h, FlowSchema{{actor}}, rng);
  REQUIRE(forced);
  CHECK(forced->entities == std::vector<EntityId>{kg->entity_id("a1")});

  auto island = fixtures::kg_from("a\tr\tb\nc\tr\td\n", "a\tx\nb\tx\nc\ty\nd\ty\n");
  HeterogeneousKG hi = attach_users(island, {});
  const TypeId x = *island->find_type("x"), y = *island->find_type("y");
  CHECK_FALSE(sample_path(hi, FlowSchema{{x, y}}, rng, PathOptions{.hop_limit = 1}));
  CHECK(throws_code(ErrorCode::kUnknownType, [&] { sample_path(hi, FlowSchema{{7}}, rng); }));
}

TEST_CASE("sample_path: uniform over the enumerated valid paths") {
  auto kg = toy_kg();
  HeterogeneousKG h = attach_users(kg, {});
  const FlowSchema schema{{*kg->find_type("genre"), *kg->find_type("item")}};
  for (std::size_t hops : {1u, 2u}) {
    const auto valid = enumerate_paths(*kg, schema, hops);
    REQUIRE(!valid.empty());
    std::map<std::vector<EntityId>, int> counts;
    Rng rng(42 + hops);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      auto f = sample_path(h, schema, rng, PathOptions{.hop_limit = hops});
      REQUIRE(f);
      CHECK(is_valid_flow(*kg, f->entities, schema, hops));
      ++counts[f->entities];
    }
    CHECK(counts.size() == valid.size());
    const double p = 1.0 / static_cast<double>(valid.size());
    const double sigma = std::sqrt(n * p * (1 - p));
    for (const auto& path : valid) CHECK(std::abs(counts[path] - n * p) < 3 * sigma);
  }
}

TEST_CASE("sample_path: longer schema matches enumeration and is reproducible") {
  auto kg = toy_kg();
  HeterogeneousKG h = attach_users(kg, {});
  const FlowSchema schema{
      {*kg->find_type("genre"), *kg->find_type("item"), *kg->find_type("actor"),
       *kg->find_type("item")}};
  const auto valid = enumerate_paths(*kg, schema, 2);
  std::set<std::vector<EntityId>> seen;
  Rng a(5), b(5);
  for (int i = 0; i < 2000; ++i) {
    auto fa = sample_path(h, schema, a);
    auto fb = sample_path(h, schema, b);
    REQUIRE(fa);
    CHECK(fa->entities == fb->entities);
    seen.insert(fa->entities);
  }
  CHECK(seen == std::set<std::vector<EntityId>>(valid.begin(), valid.end()));
}

TEST_CASE("connectivity excludes the entity itself") {
  auto kg = toy_kg();
  const TypeId item = *kg->find_type("item");
  const EntityId i1 = kg->entity_id("i1");
  CHECK_FALSE(is_valid_flow(*kg, std::vector<EntityId>{i1, i1}, FlowSchema{{item, item}}, 2));
  PathIndex index(kg, 2);
  for (EntityId a = 0; a < 6; ++a) {
    for (EntityId b = 0; b < 6; ++b) CHECK(index.connected(a, b) == oracle_connected(*kg, a, b, 2));
  }
}
