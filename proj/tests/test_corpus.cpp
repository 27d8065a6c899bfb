#include <doctest.h>

#include <sstream>

#include "cfcrs/corpus.hpp"
#include "cfcrs/error.hpp"
#include "fixtures.hpp"

using namespace cfcrs;
using fixtures::throws_code;
using fixtures::turn;

namespace {

std::vector<std::string> names(const KnowledgeGraph& kg, const std::vector<EntityId>& ids) {
  std::vector<std::string> out;
  for (EntityId e : ids) out.push_back(kg.entity_name(e));
  return out;
}

}  // namespace

TEST_CASE("load_dialogues: empty stream and blank lines") {
  std::istringstream empty("");
  CHECK(load_dialogues(empty).empty());
  std::istringstream blanks("\n\n");
  CHECK(load_dialogues(blanks).empty());
}

TEST_CASE("load_dialogues: round trip preserves order and content") {
  Dialogue a = fixtures::jump_street_dialogue("a");
  Dialogue b = fixtures::jump_street_dialogue("b");
  b.seeker_id = "alice";
  std::ostringstream out;
  const std::vector<Dialogue> ds = {a, b};
  write_dialogues(out, ds);
  std::istringstream in(out.str());
  const auto loaded = load_dialogues(in);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0] == a);
  CHECK(loaded[1] == b);
}

TEST_CASE("load_dialogues: errors") {
  std::istringstream past_end(
      R"({"dialogue_id":"x","turns":[{"speaker":"seeker","text":"hi","mentions":[{"entity":"e","start":1,"end":9}]}]})");
  CHECK(throws_code(ErrorCode::kSpanOutOfBounds, [&] { load_dialogues(past_end); }));
  std::istringstream overlap(
      R"({"dialogue_id":"x","turns":[{"speaker":"seeker","text":"hello","mentions":[{"entity":"e","start":0,"end":3},{"entity":"f","start":2,"end":4}]}]})");
  CHECK(throws_code(ErrorCode::kSpanOutOfBounds, [&] { load_dialogues(overlap); }));
  std::istringstream junk("{\"dialogue_id\":\"ok\",\"turns\":[]}\nnot json\n");
  CHECK(throws_code(ErrorCode::kParseError, [&] { load_dialogues(junk); }));
  std::istringstream bad_speaker(
      R"({"dialogue_id":"x","turns":[{"speaker":"narrator","text":"hi","mentions":[]}]})");
  CHECK(throws_code(ErrorCode::kParseError, [&] { load_dialogues(bad_speaker); }));
}

TEST_CASE("extract_flow: two-turn example") {
  auto kg = fixtures::movie_kg();
  const FlowAndSchema fs = extract_flow(fixtures::jump_street_dialogue(), *kg);
  CHECK(names(*kg, fs.flow.entities) ==
        std::vector<std::string>{"comedy", "21 Jump Street", "Jonah Hill", "comedy", "Superbad"});
  std::vector<std::string> types;
  for (TypeId t : fs.schema.types) types.push_back(kg->type_name(t));
  CHECK(types == std::vector<std::string>{"genre", "item", "actor", "genre", "item"});
  CHECK(fs.flow.turn_index == std::vector<std::size_t>{0, 1, 2, 3, 3});
  CHECK(fs.flow.speakers[1] == Speaker::kRecommender);
}

TEST_CASE("extract_flow: zero mentions and one mention per turn") {
  auto kg = fixtures::movie_kg();
  Dialogue quiet = fixtures::dialogue("q", {turn(Speaker::kSeeker, "Hello!", {}),
                                            turn(Speaker::kRecommender, "Hi.", {})});
  const FlowAndSchema none = extract_flow(quiet, *kg);
  CHECK(none.flow.empty());
  CHECK(none.schema.empty());

  Dialogue four = fixtures::dialogue("f", {turn(Speaker::kSeeker, "comedy please", {"comedy"}),
                                           turn(Speaker::kRecommender, "Superbad?", {"Superbad"}),
                                           turn(Speaker::kSeeker, "or horror", {"horror"}),
                                           turn(Speaker::kRecommender, "Get Out!", {"Get Out"})});
  const FlowAndSchema fs = extract_flow(four, *kg);
  CHECK(fs.flow.size() == 4);
  CHECK(fs.flow.turn_index == std::vector<std::size_t>{0, 1, 2, 3});

  Dialogue unknown = fixtures::dialogue("u", {turn(Speaker::kSeeker, "Alien", {"Alien"})});
  CHECK(throws_code(ErrorCode::kUnknownEntity, [&] { extract_flow(unknown, *kg); }));
}

TEST_CASE("extract_templates: delexicalization") {
  auto kg = fixtures::kg_from("", "scary\tgenre\n21 Jump Street\titem\n");
  Dialogue d = fixtures::dialogue("t", {turn(Speaker::kSeeker, "I am in a mood for something scary", {"scary"}),
                                        turn(Speaker::kRecommender, "Have you seen 21 Jump Street?", {"21 Jump Street"}),
                                        turn(Speaker::kSeeker, "Hello!", {})});
  const auto ts = extract_templates(d, *kg);
  REQUIRE(ts.size() == 3);
  CHECK(ts[0].text == "I am in a mood for something <genre>");
  CHECK(ts[0].slots == std::vector<TypeId>{*kg->find_type("genre")});
  CHECK(ts[1].text == "Have you seen <item>?");
  CHECK(ts[1].speaker == Speaker::kRecommender);
  CHECK(ts[2].text == "Hello!");
  CHECK(ts[2].slots.empty());
  CHECK(ts[2].source_dialogue == "t");
}

TEST_CASE("templates round-trip to the source turns and cover the flow") {
  auto kg = fixtures::movie_kg();
  const Dialogue d = fixtures::jump_street_dialogue();
  const auto ts = extract_templates(d, *kg);
  std::size_t slots = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    std::vector<std::string> entities;
    for (const Mention& m : d.turns[i].mentions) entities.push_back(m.entity);
    const Turn filled = fill_template(ts[i], entities, entities);
    CHECK(filled.text == d.turns[i].text);
    CHECK(filled.mentions == d.turns[i].mentions);
    CHECK(ts[i].literals.size() == ts[i].slots.size() + 1);
    slots += ts[i].slots.size();
  }
  CHECK(slots == extract_flow(d, *kg).flow.size());
}

TEST_CASE("derive_interactions") {
  auto kg = fixtures::movie_kg();
  Dialogue one = fixtures::dialogue("d1", {turn(Speaker::kSeeker, "comedy, Superbad and comedy", {"comedy", "Superbad", "comedy"}),
                                           turn(Speaker::kRecommender, "Hello!", {})});
  one.seeker_id = "alice";
  Dialogue two = fixtures::dialogue("d2", {turn(Speaker::kSeeker, "horror or Superbad or It", {"horror", "Superbad", "It"}),
                                           turn(Speaker::kRecommender, "Get Out", {"Get Out"})});
  two.seeker_id = "alice";
  const std::vector<Dialogue> ds = {one, two};
  const auto users = derive_interactions(ds, *kg);
  REQUIRE(users.size() == 2);
  CHECK(users[0].user == "alice");
  // Hand-merged: comedy, Superbad from d1, then horror, It from d2.
  CHECK(names(*kg, users[0].entities) ==
        std::vector<std::string>{"comedy", "Superbad", "horror", "It"});
  CHECK(users[1].user == user_id(two, Speaker::kRecommender));
  CHECK(names(*kg, users[1].entities) == std::vector<std::string>{"Get Out"});
}
