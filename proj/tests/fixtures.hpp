#pragma once

#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cfcrs/corpus.hpp"
#include "cfcrs/error.hpp"
#include "cfcrs/kg_store.hpp"
#include "cfcrs/nn/tensor.hpp"
#include "cfcrs/random.hpp"

namespace fixtures {

inline bool throws_code(cfcrs::ErrorCode code, const std::function<void()>& f) {
  try {
    f();
  } catch (const cfcrs::Error& e) {
    return e.code() == code;
  }
  return false;
}

inline std::shared_ptr<const cfcrs::KnowledgeGraph> kg_from(const std::string& triples,
                                                           const std::string& types) {
  std::istringstream t(triples), m(types);
  return std::make_shared<const cfcrs::KnowledgeGraph>(cfcrs::load_kg(t, m));
}

// comedy, 21 Jump Street, Jonah Hill, Superbad plus a horror branch.
inline const char* const kMovieTriples =
    "21 Jump Street\thas_genre\tcomedy\n"
    "Superbad\thas_genre\tcomedy\n"
    "21 Jump Street\tstarring\tJonah Hill\n"
    "Superbad\tstarring\tJonah Hill\n"
    "It\thas_genre\thorror\n"
    "Get Out\thas_genre\thorror\n";
inline const char* const kMovieTypes =
    "comedy\tgenre\nhorror\tgenre\n21 Jump Street\titem\nSuperbad\titem\n"
    "It\titem\nGet Out\titem\nJonah Hill\tactor\n";

inline std::shared_ptr<const cfcrs::KnowledgeGraph> movie_kg() {
  return kg_from(kMovieTriples, kMovieTypes);
}

inline cfcrs::Turn turn(cfcrs::Speaker s, std::string text,
                        const std::vector<std::string>& entities) {
  cfcrs::Turn t{s, std::move(text), {}};
  std::size_t from = 0;
  for (const std::string& e : entities) {
    const std::size_t at = t.text.find(e, from);
    t.mentions.push_back({e, at, at + e.size()});
    from = at + e.size();
  }
  return t;
}

inline cfcrs::Dialogue dialogue(std::string id, std::vector<cfcrs::Turn> turns) {
  cfcrs::Dialogue d;
  d.dialogue_id = std::move(id);
  d.turns = std::move(turns);
  return d;
}

inline cfcrs::Dialogue jump_street_dialogue(std::string id = "d0") {
  using cfcrs::Speaker;
  cfcrs::Dialogue d;
  d.dialogue_id = std::move(id);
  d.turns = {
      turn(Speaker::kSeeker, "I love all kinds of comedy movies.", {"comedy"}),
      turn(Speaker::kRecommender, "Have you seen 21 Jump Street?", {"21 Jump Street"}),
      turn(Speaker::kSeeker, "Yes, I love this film because Jonah Hill is in it.",
           {"Jonah Hill"}),
      turn(Speaker::kRecommender, "Try another comedy movie with him, Superbad.",
           {"comedy", "Superbad"}),
  };
  return d;
}

inline cfcrs::nn::Tensor random_matrix(std::size_t r, std::size_t c, cfcrs::Rng& rng,
                                       double scale = 1.0) {
  cfcrs::nn::Tensor t = cfcrs::nn::Tensor::matrix(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * (2.0 * cfcrs::uniform01(rng) - 1.0);
  return t;
}

}  // namespace fixtures
