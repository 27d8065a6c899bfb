#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfcrs/corpus.hpp"

namespace cfcrs {

// A small movie-domain world with known structure: 200 entities over 20
// types (80 items, 8 genres, 30 actors, 12 directors, 70 entities of 16
// minor types), actors and directors tied to a home genre, a skewed item
// popularity, and dialogues produced by a handful of conversation patterns
// whose recommended items are always within two hops of the previous
// mention.
struct SyntheticWorldConfig {
  std::size_t dialogues = 500;
  std::size_t test_dialogues = 200;
  std::uint64_t seed = 0;
};

struct SyntheticWorld {
  std::string triples;   // head<TAB>relation<TAB>tail lines
  std::string type_map;  // entity<TAB>type lines
  std::vector<Dialogue> dialogues;
  std::vector<Dialogue> test;
};

SyntheticWorld make_synthetic_world(const SyntheticWorldConfig& config);

}  // namespace cfcrs
