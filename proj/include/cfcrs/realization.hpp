#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfcrs/corpus.hpp"
#include "cfcrs/flow.hpp"
#include "cfcrs/kg_store.hpp"

namespace cfcrs {

// Deduplicated templates indexed by slot signature. Templates whose
// signature contains the item type are usable only as recommender turns,
// all others only as seeker turns; templates spoken by the other role are
// kept but never chosen. With fallbacks enabled, one single-slot template
// per type ("What about <type>?") guarantees that every schema can be tiled.
class TemplateBank {
 public:
  TemplateBank(std::vector<Template> templates, const KnowledgeGraph& kg, TypeId item_type,
               bool add_fallbacks = true);

  const std::vector<Template>& templates() const { return templates_; }
  const Template& at(std::size_t id) const { return templates_[id]; }
  bool is_fallback(std::size_t id) const { return id >= first_fallback_; }
  TypeId item_type() const { return item_type_; }
  std::size_t max_signature() const { return max_signature_; }

  // Usable template ids with exactly this signature; empty when none.
  std::span<const std::size_t> with_signature(std::span<const TypeId> signature) const;
  // Mention-free templates (chit-chat).
  std::span<const std::size_t> chit_chat() const { return chit_chat_; }

 private:
  std::vector<Template> templates_;
  std::map<std::vector<TypeId>, std::vector<std::size_t>> by_signature_;
  std::vector<std::size_t> chit_chat_;
  std::size_t first_fallback_ = 0;
  std::size_t max_signature_ = 0;
  TypeId item_type_ = 0;
};

struct RealizeOptions {
  std::string dialogue_id = "sim-0";
  // Probability of a chit-chat turn before each mention-bearing turn.
  double chit_chat_rate = 0.0;
};

struct RealizedDialogue {
  Dialogue dialogue;
  ConversationFlow flow;
  FlowSchema schema;
  std::vector<std::size_t> template_ids;  // one per turn
  std::size_t fallback_turns = 0;
};

// Tiles the schema left to right, taking at each point the longest usable
// signature and a uniformly chosen template for it, then fills the slots
// with the entity names. Throws NoCoveringSegmentation when some position
// has no usable template (only possible without fallbacks).
RealizedDialogue realize(const ConversationFlow& flow, const FlowSchema& schema,
                         const TemplateBank& bank, const KnowledgeGraph& kg, Rng& rng,
                         const RealizeOptions& options = {});

// Training example for the recommender: the entities mentioned before a
// recommender turn and one item that turn recommends.
struct RecSample {
  std::vector<EntityId> context;
  EntityId label = 0;
  bool simulated = false;
  std::string dialogue_id;
};

// One sample per distinct item mentioned in a recommender turn, unless the item is
// already in the context. Context = every mention of earlier turns in order,
// duplicates kept. Throws UnknownEntity.
std::vector<RecSample> to_rec_samples(const Dialogue& d, const KnowledgeGraph& kg,
                                      TypeId item_type, bool simulated = false);
std::vector<RecSample> to_rec_samples(const RealizedDialogue& d, const KnowledgeGraph& kg,
                                      TypeId item_type);

}  // namespace cfcrs
