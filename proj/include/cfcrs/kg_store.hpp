#pragma once

#include <istream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfcrs/flow.hpp"
#include "cfcrs/random.hpp"

namespace cfcrs {

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  auto operator<=>(const Triple&) const = default;
};

// Typed entity graph. Immutable after construction; safe to share across
// threads.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  // Validates the invariants (dense ids, one type per entity, triples over
  // known ids, no duplicate triples) and builds the lookup indexes.
  KnowledgeGraph(std::vector<std::string> entity_names, std::vector<TypeId> entity_types,
                 std::vector<std::string> type_names,
                 std::vector<std::string> relation_names, std::vector<Triple> triples);

  std::size_t num_entities() const { return entity_names_.size(); }
  std::size_t num_types() const { return type_names_.size(); }
  std::size_t num_relations() const { return relation_names_.size(); }

  const std::string& entity_name(EntityId e) const { return entity_names_[e]; }
  TypeId type_of(EntityId e) const { return entity_types_[e]; }
  const std::string& type_name(TypeId t) const { return type_names_[t]; }
  const std::string& relation_name(RelationId r) const { return relation_names_[r]; }
  const std::vector<std::string>& type_names() const { return type_names_; }
  const std::vector<std::string>& relation_names() const { return relation_names_; }
  const std::vector<Triple>& triples() const { return triples_; }

  std::optional<EntityId> find_entity(std::string_view name) const;
  std::optional<TypeId> find_type(std::string_view name) const;
  // Throws UnknownEntity.
  EntityId entity_id(std::string_view name) const;

  std::span<const EntityId> entities_of_type(TypeId t) const { return by_type_[t]; }
  // Undirected, deduplicated, sorted neighbours over all relations.
  std::span<const EntityId> neighbors(EntityId e) const { return neighbors_[e]; }

 private:
  std::vector<std::string> entity_names_;
  std::vector<TypeId> entity_types_;
  std::vector<std::string> type_names_;
  std::vector<std::string> relation_names_;
  std::vector<Triple> triples_;
  std::unordered_map<std::string, EntityId> entity_index_;
  std::unordered_map<std::string, TypeId> type_index_;
  std::vector<std::vector<EntityId>> by_type_;
  std::vector<std::vector<EntityId>> neighbors_;
};

// Reads `head<TAB>relation<TAB>tail` triples and `entity<TAB>type` records.
// Entity ids follow first appearance in the triples; type-map entities that
// never occur in a triple are appended in type-map order. Type and relation
// ids follow first appearance. Blank lines are skipped.
KnowledgeGraph load_kg(std::istream& triples, std::istream& type_map);

struct UserInteractions {
  std::string user;
  std::vector<EntityId> entities;
};

// Knowledge graph plus user nodes linked to the entities they interacted with.
class HeterogeneousKG {
 public:
  static constexpr std::string_view kInteracted = "interacted";

  HeterogeneousKG(std::shared_ptr<const KnowledgeGraph> base,
                  std::vector<UserInteractions> users);

  const KnowledgeGraph& base() const { return *base_; }
  std::shared_ptr<const KnowledgeGraph> base_ptr() const { return base_; }
  std::size_t num_users() const { return users_.size(); }
  const std::vector<UserInteractions>& users() const { return users_; }
  const UserInteractions& user(std::size_t u) const { return users_[u]; }
  std::optional<std::size_t> find_user(std::string_view name) const;
  // (user index, entity) pairs, one per interaction, in user order.
  const std::vector<std::pair<std::size_t, EntityId>>& user_edges() const {
    return user_edges_;
  }
  // Nodes are entities followed by users.
  std::size_t num_nodes() const { return base_->num_entities() + users_.size(); }

 private:
  std::shared_ptr<const KnowledgeGraph> base_;
  std::vector<UserInteractions> users_;
  std::unordered_map<std::string, std::size_t> user_index_;
  std::vector<std::pair<std::size_t, EntityId>> user_edges_;
};

// Throws UnknownEntity / EmptyInteractionList.
HeterogeneousKG attach_users(KnowledgeGraph kg, std::vector<UserInteractions> interactions);
HeterogeneousKG attach_users(std::shared_ptr<const KnowledgeGraph> kg,
                             std::vector<UserInteractions> interactions);

struct PathOptions {
  std::size_t hop_limit = 2;
};

class PathIndex;

// Completion counts of one schema over the base graph: how many valid flows
// continue from entity e at position j. Supports exact uniform sampling over
// all valid flows and constrained decoding.
class SchemaPlan {
 public:
  bool reachable() const { return total_ > 0.0; }
  double total_paths() const { return total_; }
  std::size_t size() const { return types_.size(); }
  const std::vector<TypeId>& types() const { return types_; }

  // Entities allowed at `position` given the previous entity (ignored at
  // position 0): type matches, connected to the previous entity, and at least
  // one valid completion exists. Sorted ascending.
  std::vector<EntityId> candidates(std::size_t position,
                                   std::optional<EntityId> previous) const;
  double completions(std::size_t position, EntityId e) const {
    return counts_[position][static_cast<std::size_t>(e)];
  }
  // Uniform over valid flows. Requires reachable().
  ConversationFlow sample(Rng& rng) const;

 private:
  friend class PathIndex;
  const PathIndex* index_ = nullptr;
  std::vector<TypeId> types_;
  std::vector<std::vector<double>> counts_;
  double total_ = 0.0;
};

// Hop-limited undirected reachability over the base graph.
class PathIndex {
 public:
  PathIndex(std::shared_ptr<const KnowledgeGraph> kg, std::size_t hop_limit);

  const KnowledgeGraph& graph() const { return *kg_; }
  std::size_t hop_limit() const { return hop_limit_; }
  // Entities at distance 1..hop_limit from e, sorted ascending.
  std::span<const EntityId> reachable(EntityId e) const { return reach_[e]; }
  bool connected(EntityId a, EntityId b) const;
  // Throws UnknownType for a type id outside the graph.
  SchemaPlan plan(const FlowSchema& schema) const;

 private:
  std::shared_ptr<const KnowledgeGraph> kg_;
  std::size_t hop_limit_;
  std::vector<std::vector<EntityId>> reach_;
};

// Samples a flow uniformly among all flows that match the schema position by
// position and whose consecutive entities are within hop_limit edges.
// Returns nullopt when no such flow exists.
std::optional<ConversationFlow> sample_path(const HeterogeneousKG& hkg,
                                            const FlowSchema& schema, Rng& rng,
                                            const PathOptions& options = {});

// Breadth-first check of type match and hop-limited connectivity.
bool is_valid_flow(const KnowledgeGraph& kg, std::span<const EntityId> flow,
                   const FlowSchema& schema, std::size_t hop_limit);

}  // namespace cfcrs
