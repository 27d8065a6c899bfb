#include "cfcrs/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "cfcrs/random.hpp"

namespace cfcrs {

namespace {

constexpr std::size_t kItems = 80;
constexpr std::size_t kActors = 30;
constexpr std::size_t kDirectors = 12;

const std::vector<std::string> kGenres = {"comedy",  "drama",  "horror",    "thriller",
                                          "romance", "action", "animation", "documentary"};

// Minor attribute types and how many entities each has (70 in total).
const std::vector<std::pair<std::string, std::size_t>> kMinorTypes = {
    {"writer", 5},   {"composer", 5}, {"studio", 5},   {"country", 5},   {"language", 5},
    {"decade", 5},   {"award", 4},    {"keyword", 4},  {"franchise", 4}, {"producer", 4},
    {"editor", 4},   {"rating", 4},   {"setting", 4},  {"era", 4},       {"format", 4},
    {"character", 4}};

struct Entity {
  std::string name;
  std::string type;
};

struct Item {
  std::size_t id;  // index into entities
  std::size_t genre;
  std::vector<std::size_t> genres;
  std::vector<std::size_t> actors;
  std::size_t director;
  std::vector<std::size_t> minor;
  double popularity;
};

struct World {
  std::vector<Entity> entities;
  std::vector<Item> items;
  std::vector<std::size_t> genre_ids;
  std::vector<std::size_t> actor_ids;
  std::vector<std::size_t> director_ids;
  std::vector<std::size_t> actor_genre;     // per actor index
  std::vector<std::size_t> director_genre;  // per director index
  std::vector<std::size_t> minor_ids;
  std::map<std::size_t, std::vector<std::size_t>> items_of;  // entity -> item indices
  std::vector<std::tuple<std::size_t, std::string, std::size_t>> triples;
};

std::string numbered(const std::string& stem, std::size_t i) {
  return stem + " " + (i + 1 < 10 ? "0" : "") + std::to_string(i + 1);
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[uniform_index(rng, v.size())];
}

World build_world(Rng& rng) {
  World w;
  auto add = [&w](std::string name, std::string type) {
    w.entities.push_back(Entity{std::move(name), std::move(type)});
    return w.entities.size() - 1;
  };
  for (const auto& g : kGenres) w.genre_ids.push_back(add(g, "genre"));
  for (std::size_t i = 0; i < kActors; ++i) {
    w.actor_ids.push_back(add(numbered("Actor", i), "actor"));
    w.actor_genre.push_back(i % kGenres.size());
  }
  for (std::size_t i = 0; i < kDirectors; ++i) {
    w.director_ids.push_back(add(numbered("Director", i), "director"));
    w.director_genre.push_back(i % kGenres.size());
  }
  std::vector<std::vector<std::size_t>> minor_by_type;
  for (const auto& [type, count] : kMinorTypes) {
    minor_by_type.emplace_back();
    std::string stem = type;
    stem[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(stem[0])));
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t id = add(stem + " " + std::string(1, static_cast<char>('A' + i)), type);
      minor_by_type.back().push_back(id);
      w.minor_ids.push_back(id);
    }
  }
  std::vector<double> pop(kItems);
  for (std::size_t i = 0; i < kItems; ++i) pop[i] = 1.0 / std::pow(static_cast<double>(i + 1), 0.8);
  std::shuffle(pop.begin(), pop.end(), rng);
  for (std::size_t i = 0; i < kItems; ++i) {
    Item it;
    it.id = add(numbered("Film", i), "item");
    it.genre = i % kGenres.size();
    it.genres = {it.genre};
    if (uniform01(rng) < 0.3) {
      const std::size_t second = uniform_index(rng, kGenres.size());
      if (second != it.genre) it.genres.push_back(second);
    }
    std::vector<std::size_t> cast;
    for (std::size_t a = 0; a < kActors; ++a) {
      if (w.actor_genre[a] == it.genre) cast.push_back(a);
    }
    std::shuffle(cast.begin(), cast.end(), rng);
    cast.resize(std::min<std::size_t>(2, cast.size()));
    if (uniform01(rng) < 0.5) {
      const std::size_t guest = uniform_index(rng, kActors);
      if (std::find(cast.begin(), cast.end(), guest) == cast.end()) cast.push_back(guest);
    }
    it.actors = cast;
    std::vector<std::size_t> dirs;
    for (std::size_t d = 0; d < kDirectors; ++d) {
      if (w.director_genre[d] == it.genre) dirs.push_back(d);
    }
    it.director = pick(dirs, rng);
    std::vector<std::size_t> types(kMinorTypes.size());
    std::iota(types.begin(), types.end(), 0);
    std::shuffle(types.begin(), types.end(), rng);
    for (std::size_t k = 0; k < 3; ++k) it.minor.push_back(pick(minor_by_type[types[k]], rng));
    it.popularity = pop[i];
    w.items.push_back(std::move(it));
  }
  for (std::size_t i = 0; i < w.items.size(); ++i) {
    const Item& it = w.items[i];
    for (std::size_t g : it.genres) {
      w.triples.emplace_back(it.id, "has_genre", w.genre_ids[g]);
      w.items_of[w.genre_ids[g]].push_back(i);
    }
    for (std::size_t a : it.actors) {
      w.triples.emplace_back(it.id, "starring", w.actor_ids[a]);
      w.items_of[w.actor_ids[a]].push_back(i);
    }
    w.triples.emplace_back(it.id, "directed_by", w.director_ids[it.director]);
    w.items_of[w.director_ids[it.director]].push_back(i);
    for (std::size_t m : it.minor) {
      w.triples.emplace_back(it.id, "related_to", m);
      w.items_of[m].push_back(i);
    }
  }
  return w;
}

class TurnBuilder {
 public:
  TurnBuilder(const World& w, Speaker s) : w_(w) { turn_.speaker = s; }
  TurnBuilder& text(const std::string& t) {
    turn_.text += t;
    return *this;
  }
  TurnBuilder& mention(std::size_t entity) {
    const std::string& name = w_.entities[entity].name;
    const std::size_t start = turn_.text.size();
    turn_.text += name;
    turn_.mentions.push_back(Mention{name, start, turn_.text.size()});
    return *this;
  }
  Turn done() { return std::move(turn_); }

 private:
  const World& w_;
  Turn turn_;
};

class DialogueMaker {
 public:
  DialogueMaker(const World& w, Rng& rng) : w_(w), rng_(rng) {}

  Dialogue make(const std::string& id) {
    Dialogue d;
    d.dialogue_id = id;
    used_.clear();
    const std::size_t genre = uniform_index(rng_, kGenres.size());
    if (uniform01(rng_) < 0.5) {
      static const std::vector<std::string> hi = {"Hi there!", "Hello!", "Hey, can you help me?"};
      d.turns.push_back(TurnBuilder(w_, Speaker::kSeeker).text(pick(hi, rng_)).done());
    }
    const double weights[] = {3, 2, 2, 2, 2, 1, 1, 1};
    switch (sample_weighted(rng_, weights)) {
      case 0: {  // genre -> item
        const std::size_t g = w_.genre_ids[genre];
        d.turns.push_back(seeker_genre(g));
        d.turns.push_back(recommend(item_for(g, genre)));
        break;
      }
      case 1: {  // genre -> item -> item
        const std::size_t g = w_.genre_ids[genre];
        d.turns.push_back(seeker_genre(g));
        d.turns.push_back(recommend(item_for(g, genre)));
        static const std::vector<std::string> seen = {"I have seen that one. Anything else?",
                                                      "Already watched it. Something else?"};
        d.turns.push_back(TurnBuilder(w_, Speaker::kSeeker).text(pick(seen, rng_)).done());
        d.turns.push_back(recommend(item_for(g, genre)));
        break;
      }
      case 2: {  // actor -> item
        const std::size_t a = actor_of_genre(genre);
        d.turns.push_back(seeker_person(a));
        d.turns.push_back(recommend(item_for(a, genre)));
        break;
      }
      case 3: {  // genre -> item -> actor -> item
        const std::size_t g = w_.genre_ids[genre];
        d.turns.push_back(seeker_genre(g));
        const std::size_t first = item_for(g, genre);
        d.turns.push_back(recommend(first));
        const std::size_t a = w_.actor_ids[pick(w_.items[first].actors, rng_)];
        d.turns.push_back(TurnBuilder(w_, Speaker::kSeeker)
                              .text("Nice, I really like ")
                              .mention(a)
                              .text(" in that one.")
                              .done());
        d.turns.push_back(TurnBuilder(w_, Speaker::kRecommender)
                              .text("Then try ")
                              .mention(w_.items[item_for(a, genre)].id)
                              .text(" too.")
                              .done());
        break;
      }
      case 4: {  // item -> item
        const std::size_t g = w_.genre_ids[genre];
        const std::size_t liked = item_for(g, genre);
        d.turns.push_back(TurnBuilder(w_, Speaker::kSeeker)
                              .text("I recently watched ")
                              .mention(w_.items[liked].id)
                              .text(" and loved it.")
                              .done());
        d.turns.push_back(recommend(item_for(g, genre)));
        break;
      }
      case 5: {  // director -> item
        std::vector<std::size_t> dirs;
        for (std::size_t k = 0; k < kDirectors; ++k) {
          if (w_.director_genre[k] == genre) dirs.push_back(w_.director_ids[k]);
        }
        const std::size_t dir = pick(dirs, rng_);
        d.turns.push_back(seeker_person(dir));
        d.turns.push_back(recommend(item_for(dir, genre)));
        break;
      }
      case 6: {  // genre + actor -> item
        const std::size_t g = w_.genre_ids[genre];
        const std::size_t a = actor_of_genre(genre);
        d.turns.push_back(TurnBuilder(w_, Speaker::kSeeker)
                              .text("I like ")
                              .mention(g)
                              .text(" movies with ")
                              .mention(a)
                              .text(".")
                              .done());
        d.turns.push_back(recommend(item_for(a, genre)));
        break;
      }
      default: {  // minor attribute -> item
        std::size_t m;
        do {
          m = pick(w_.minor_ids, rng_);
        } while (w_.items_of.find(m) == w_.items_of.end());
        d.turns.push_back(TurnBuilder(w_, Speaker::kSeeker)
                              .text("Do you know anything connected to ")
                              .mention(m)
                              .text("?")
                              .done());
        d.turns.push_back(recommend(item_for(m, genre)));
        break;
      }
    }
    if (uniform01(rng_) < 0.5) {
      static const std::vector<std::string> bye = {"Thanks, I will check it out!",
                                                   "Great, thank you!", "Sounds good, bye!"};
      d.turns.push_back(TurnBuilder(w_, Speaker::kSeeker).text(pick(bye, rng_)).done());
    }
    return d;
  }

 private:
  std::size_t actor_of_genre(std::size_t genre) {
    std::vector<std::size_t> cands;
    for (std::size_t k = 0; k < kActors; ++k) {
      if (w_.actor_genre[k] == genre) cands.push_back(w_.actor_ids[k]);
    }
    return pick(cands, rng_);
  }

  // Item linked to `anchor`, weighted by popularity and by the seeker's genre.
  std::size_t item_for(std::size_t anchor, std::size_t genre) {
    const auto& linked = w_.items_of.at(anchor);
    std::vector<std::size_t> cands;
    std::vector<double> weights;
    for (std::size_t i : linked) {
      if (used_.count(i)) continue;
      const Item& it = w_.items[i];
      const bool match =
          std::find(it.genres.begin(), it.genres.end(), genre) != it.genres.end();
      cands.push_back(i);
      weights.push_back(it.popularity * (match ? 4.0 : 1.0));
    }
    if (cands.empty()) {
      for (std::size_t i : linked) cands.push_back(i);
      weights.assign(cands.size(), 1.0);
    }
    const std::size_t i = cands[sample_weighted(rng_, weights)];
    used_.insert(i);
    return i;
  }

  Turn seeker_genre(std::size_t g) {
    switch (uniform_index(rng_, 3)) {
      case 0:
        return TurnBuilder(w_, Speaker::kSeeker).text("I love all kinds of ").mention(g).text(" movies.").done();
      case 1:
        return TurnBuilder(w_, Speaker::kSeeker).text("I'm in the mood for some ").mention(g).text(".").done();
      default:
        return TurnBuilder(w_, Speaker::kSeeker).text("Can you suggest a good ").mention(g).text(" film?").done();
    }
  }

  Turn seeker_person(std::size_t p) {
    if (uniform_index(rng_, 2) == 0) {
      return TurnBuilder(w_, Speaker::kSeeker).text("I am a big fan of ").mention(p).text(".").done();
    }
    return TurnBuilder(w_, Speaker::kSeeker).text("Anything with ").mention(p).text("?").done();
  }

  Turn recommend(std::size_t item) {
    const std::size_t e = w_.items[item].id;
    switch (uniform_index(rng_, 3)) {
      case 0:
        return TurnBuilder(w_, Speaker::kRecommender).text("Have you seen ").mention(e).text("?").done();
      case 1:
        return TurnBuilder(w_, Speaker::kRecommender).text("You might like ").mention(e).text(".").done();
      default:
        return TurnBuilder(w_, Speaker::kRecommender).mention(e).text(" is a great pick.").done();
    }
  }

  const World& w_;
  Rng& rng_;
  std::set<std::size_t> used_;
};

}  // namespace

SyntheticWorld make_synthetic_world(const SyntheticWorldConfig& config) {
  Rng rng(config.seed);
  const World w = build_world(rng);
  SyntheticWorld out;
  for (const auto& [h, r, t] : w.triples) {
    out.triples += w.entities[h].name + "\t" + r + "\t" + w.entities[t].name + "\n";
  }
  for (const Entity& e : w.entities) out.type_map += e.name + "\t" + e.type + "\n";
  DialogueMaker maker(w, rng);
  for (std::size_t i = 0; i < config.dialogues; ++i) {
    out.dialogues.push_back(maker.make("d" + std::to_string(i)));
  }
  for (std::size_t i = 0; i < config.test_dialogues; ++i) {
    out.test.push_back(maker.make("t" + std::to_string(i)));
  }
  return out;
}

}  // namespace cfcrs
