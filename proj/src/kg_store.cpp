#include "cfcrs/kg_store.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <sstream>

#include "cfcrs/error.hpp"

namespace cfcrs {

std::string_view to_string(Speaker s) {
  return s == Speaker::kSeeker ? "seeker" : "recommender";
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

// --- KnowledgeGraph -------------------------------------------------------

KnowledgeGraph::KnowledgeGraph(std::vector<std::string> entity_names,
                               std::vector<TypeId> entity_types,
                               std::vector<std::string> type_names,
                               std::vector<std::string> relation_names,
                               std::vector<Triple> triples)
    : entity_names_(std::move(entity_names)),
      entity_types_(std::move(entity_types)),
      type_names_(std::move(type_names)),
      relation_names_(std::move(relation_names)),
      triples_(std::move(triples)) {
  if (entity_names_.size() != entity_types_.size()) {
    throw Error(ErrorCode::kMalformedRecord, "one type per entity required");
  }
  for (TypeId t = 0; t < static_cast<TypeId>(type_names_.size()); ++t) {
    if (!type_index_.emplace(type_names_[t], t).second) {
      throw Error(ErrorCode::kMalformedRecord, "duplicate type " + type_names_[t]);
    }
  }
  by_type_.resize(type_names_.size());
  for (EntityId e = 0; e < static_cast<EntityId>(entity_names_.size()); ++e) {
    if (!entity_index_.emplace(entity_names_[e], e).second) {
      throw Error(ErrorCode::kMalformedRecord, "duplicate entity " + entity_names_[e]);
    }
    const TypeId t = entity_types_[e];
    if (t < 0 || t >= static_cast<TypeId>(type_names_.size())) {
      throw Error(ErrorCode::kMissingType, entity_names_[e]);
    }
    by_type_[t].push_back(e);
  }
  std::set<Triple> seen;
  neighbors_.resize(entity_names_.size());
  const auto ne = static_cast<EntityId>(entity_names_.size());
  const auto nr = static_cast<RelationId>(relation_names_.size());
  for (const Triple& tr : triples_) {
    if (tr.head < 0 || tr.head >= ne || tr.tail < 0 || tr.tail >= ne || tr.relation < 0 ||
        tr.relation >= nr) {
      throw Error(ErrorCode::kMalformedRecord, "triple references unknown id");
    }
    if (!seen.insert(tr).second) {
      throw Error(ErrorCode::kMalformedRecord, "duplicate triple");
    }
    if (tr.head != tr.tail) {
      neighbors_[tr.head].push_back(tr.tail);
      neighbors_[tr.tail].push_back(tr.head);
    }
  }
  for (auto& n : neighbors_) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
}

std::optional<EntityId> KnowledgeGraph::find_entity(std::string_view name) const {
  auto it = entity_index_.find(std::string(name));
  if (it == entity_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<TypeId> KnowledgeGraph::find_type(std::string_view name) const {
  auto it = type_index_.find(std::string(name));
  if (it == type_index_.end()) return std::nullopt;
  return it->second;
}

EntityId KnowledgeGraph::entity_id(std::string_view name) const {
  auto e = find_entity(name);
  if (!e) throw Error(ErrorCode::kUnknownEntity, std::string(name));
  return *e;
}

KnowledgeGraph load_kg(std::istream& triples, std::istream& type_map) {
  // Type map first so triples can be checked as they are read.
  std::unordered_map<std::string, std::string> type_of;
  std::vector<std::string> type_map_order;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(type_map, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw Error(ErrorCode::kMalformedRecord, "type map line " + std::to_string(line_no));
    }
    auto [it, inserted] = type_of.emplace(fields[0], fields[1]);
    if (!inserted && it->second != fields[1]) {
      throw Error(ErrorCode::kMalformedRecord,
                  "type map line " + std::to_string(line_no) + ": conflicting type for " +
                      fields[0]);
    }
    if (inserted) type_map_order.push_back(fields[0]);
  }

  std::vector<std::string> entity_names;
  std::unordered_map<std::string, EntityId> entity_ids;
  std::vector<std::string> relation_names;
  std::unordered_map<std::string, RelationId> relation_ids;
  std::vector<Triple> out_triples;
  std::set<Triple> seen;

  auto intern_entity = [&](const std::string& name) {
    auto it = entity_ids.find(name);
    if (it != entity_ids.end()) return it->second;
    if (!type_of.count(name)) throw Error(ErrorCode::kMissingType, name);
    const auto id = static_cast<EntityId>(entity_names.size());
    entity_names.push_back(name);
    entity_ids.emplace(name, id);
    return id;
  };

  line_no = 0;
  while (std::getline(triples, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw Error(ErrorCode::kMalformedRecord, "triples line " + std::to_string(line_no));
    }
    const EntityId head = intern_entity(fields[0]);
    auto [rit, rnew] =
        relation_ids.emplace(fields[1], static_cast<RelationId>(relation_names.size()));
    if (rnew) relation_names.push_back(fields[1]);
    const EntityId tail = intern_entity(fields[2]);
    const Triple tr{head, rit->second, tail};
    if (seen.insert(tr).second) out_triples.push_back(tr);
  }
  for (const std::string& name : type_map_order) {
    if (!entity_ids.count(name)) intern_entity(name);
  }

  std::vector<std::string> type_names;
  std::unordered_map<std::string, TypeId> type_ids;
  std::vector<TypeId> entity_types;
  entity_types.reserve(entity_names.size());
  for (const std::string& name : entity_names) {
    const std::string& tn = type_of.at(name);
    auto [it, inserted] = type_ids.emplace(tn, static_cast<TypeId>(type_names.size()));
    if (inserted) type_names.push_back(tn);
    entity_types.push_back(it->second);
  }
  return KnowledgeGraph(std::move(entity_names), std::move(entity_types),
                        std::move(type_names), std::move(relation_names),
                        std::move(out_triples));
}

// --- HeterogeneousKG -------------------------------------------------------

HeterogeneousKG::HeterogeneousKG(std::shared_ptr<const KnowledgeGraph> base,
                                 std::vector<UserInteractions> users)
    : base_(std::move(base)), users_(std::move(users)) {
  const auto ne = static_cast<EntityId>(base_->num_entities());
  for (std::size_t u = 0; u < users_.size(); ++u) {
    const UserInteractions& ui = users_[u];
    if (ui.entities.empty()) throw Error(ErrorCode::kEmptyInteractionList, ui.user);
    if (!user_index_.emplace(ui.user, u).second) {
      throw Error(ErrorCode::kMalformedRecord, "duplicate user " + ui.user);
    }
    for (EntityId e : ui.entities) {
      if (e < 0 || e >= ne) {
        throw Error(ErrorCode::kUnknownEntity,
                    ui.user + " -> entity " + std::to_string(e));
      }
      user_edges_.emplace_back(u, e);
    }
  }
}

std::optional<std::size_t> HeterogeneousKG::find_user(std::string_view name) const {
  auto it = user_index_.find(std::string(name));
  if (it == user_index_.end()) return std::nullopt;
  return it->second;
}

HeterogeneousKG attach_users(KnowledgeGraph kg, std::vector<UserInteractions> interactions) {
  return attach_users(std::make_shared<const KnowledgeGraph>(std::move(kg)),
                      std::move(interactions));
}

HeterogeneousKG attach_users(std::shared_ptr<const KnowledgeGraph> kg,
                             std::vector<UserInteractions> interactions) {
  return HeterogeneousKG(std::move(kg), std::move(interactions));
}

// --- paths ----------------------------------------------------------------

PathIndex::PathIndex(std::shared_ptr<const KnowledgeGraph> kg, std::size_t hop_limit)
    : kg_(std::move(kg)), hop_limit_(hop_limit) {
  if (hop_limit_ < 1) throw Error(ErrorCode::kConfigError, "hop_limit must be >= 1");
  const std::size_t n = kg_->num_entities();
  reach_.resize(n);
  std::vector<std::size_t> depth(n, 0);
  std::vector<EntityId> touched;
  std::vector<char> visited(n, 0);
  for (EntityId src = 0; src < static_cast<EntityId>(n); ++src) {
    std::deque<EntityId> queue{src};
    visited[src] = 1;
    depth[src] = 0;
    touched.assign(1, src);
    while (!queue.empty()) {
      const EntityId cur = queue.front();
      queue.pop_front();
      if (depth[cur] == hop_limit_) continue;
      for (EntityId nb : kg_->neighbors(cur)) {
        if (visited[nb]) continue;
        visited[nb] = 1;
        depth[nb] = depth[cur] + 1;
        touched.push_back(nb);
        queue.push_back(nb);
      }
    }
    auto& r = reach_[src];
    for (EntityId e : touched) {
      if (e != src) r.push_back(e);
      visited[e] = 0;
    }
    std::sort(r.begin(), r.end());
  }
}

bool PathIndex::connected(EntityId a, EntityId b) const {
  const auto& r = reach_[a];
  return std::binary_search(r.begin(), r.end(), b);
}

SchemaPlan PathIndex::plan(const FlowSchema& schema) const {
  SchemaPlan p;
  p.index_ = this;
  p.types_ = schema.types;
  const std::size_t n = schema.size();
  const std::size_t ne = kg_->num_entities();
  for (TypeId t : schema.types) {
    if (t < 0 || t >= static_cast<TypeId>(kg_->num_types())) {
      throw Error(ErrorCode::kUnknownType, std::to_string(t));
    }
  }
  p.counts_.assign(n, std::vector<double>(ne, 0.0));
  if (n == 0) return p;
  for (EntityId e : kg_->entities_of_type(schema.types[n - 1])) p.counts_[n - 1][e] = 1.0;
  for (std::size_t j = n - 1; j-- > 0;) {
    const auto& next = p.counts_[j + 1];
    for (EntityId e : kg_->entities_of_type(schema.types[j])) {
      double c = 0.0;
      for (EntityId nb : reach_[e]) c += next[nb];
      p.counts_[j][e] = c;
    }
  }
  for (EntityId e : kg_->entities_of_type(schema.types[0])) p.total_ += p.counts_[0][e];
  return p;
}

std::vector<EntityId> SchemaPlan::candidates(std::size_t position,
                                             std::optional<EntityId> previous) const {
  std::vector<EntityId> out;
  const KnowledgeGraph& kg = index_->graph();
  const auto& counts = counts_[position];
  if (position == 0 || !previous) {
    for (EntityId e : kg.entities_of_type(types_[position])) {
      if (counts[e] > 0.0) out.push_back(e);
    }
  } else {
    for (EntityId e : index_->reachable(*previous)) {
      if (kg.type_of(e) == types_[position] && counts[e] > 0.0) out.push_back(e);
    }
  }
  return out;
}

ConversationFlow SchemaPlan::sample(Rng& rng) const {
  ConversationFlow flow;
  std::optional<EntityId> prev;
  std::vector<double> weights;
  for (std::size_t j = 0; j < types_.size(); ++j) {
    const auto cands = candidates(j, prev);
    weights.clear();
    for (EntityId e : cands) weights.push_back(counts_[j][e]);
    const EntityId pick = cands[sample_weighted(rng, weights)];
    flow.entities.push_back(pick);
    prev = pick;
  }
  return flow;
}

std::optional<ConversationFlow> sample_path(const HeterogeneousKG& hkg,
                                            const FlowSchema& schema, Rng& rng,
                                            const PathOptions& options) {
  if (schema.empty()) throw Error(ErrorCode::kConfigError, "empty schema");
  PathIndex index(hkg.base_ptr(), options.hop_limit);
  SchemaPlan plan = index.plan(schema);
  if (!plan.reachable()) return std::nullopt;
  return plan.sample(rng);
}

bool is_valid_flow(const KnowledgeGraph& kg, std::span<const EntityId> flow,
                   const FlowSchema& schema, std::size_t hop_limit) {
  if (flow.size() != schema.size()) return false;
  const auto ne = static_cast<EntityId>(kg.num_entities());
  for (std::size_t j = 0; j < flow.size(); ++j) {
    if (flow[j] < 0 || flow[j] >= ne) return false;
    if (kg.type_of(flow[j]) != schema.types[j]) return false;
  }
  for (std::size_t j = 1; j < flow.size(); ++j) {
    const EntityId from = flow[j - 1], to = flow[j];
    if (from == to) return false;
    std::vector<std::size_t> dist(kg.num_entities(), SIZE_MAX);
    std::deque<EntityId> q{from};
    dist[from] = 0;
    bool found = false;
    while (!q.empty() && !found) {
      const EntityId cur = q.front();
      q.pop_front();
      if (dist[cur] >= hop_limit) continue;
      for (EntityId nb : kg.neighbors(cur)) {
        if (dist[nb] != SIZE_MAX) continue;
        dist[nb] = dist[cur] + 1;
        if (nb == to) {
          found = true;
          break;
        }
        q.push_back(nb);
      }
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace cfcrs
