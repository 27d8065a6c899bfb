#include "cfcrs/realization.hpp"

#include <algorithm>
#include <set>

#include "cfcrs/error.hpp"

namespace cfcrs {

namespace {

Speaker preferred_role(std::span<const TypeId> signature, TypeId item_type) {
  const bool has_item =
      std::find(signature.begin(), signature.end(), item_type) != signature.end();
  return has_item ? Speaker::kRecommender : Speaker::kSeeker;
}

Template fallback_template(const KnowledgeGraph& kg, TypeId t, TypeId item_type) {
  Template f;
  f.speaker = t == item_type ? Speaker::kRecommender : Speaker::kSeeker;
  f.literals = {"What about ", "?"};
  f.slots = {t};
  f.text = "What about <" + kg.type_name(t) + ">?";
  f.source_dialogue = "";
  return f;
}

}  // namespace

TemplateBank::TemplateBank(std::vector<Template> templates, const KnowledgeGraph& kg,
                           TypeId item_type, bool add_fallbacks)
    : item_type_(item_type) {
  std::set<std::pair<Speaker, std::string>> seen;
  for (Template& t : templates) {
    if (!seen.emplace(t.speaker, t.text).second) continue;
    templates_.push_back(std::move(t));
  }
  first_fallback_ = templates_.size();
  if (add_fallbacks) {
    for (TypeId t = 0; t < static_cast<TypeId>(kg.num_types()); ++t) {
      templates_.push_back(fallback_template(kg, t, item_type));
    }
  }
  for (std::size_t id = 0; id < templates_.size(); ++id) {
    const Template& t = templates_[id];
    if (t.slots.empty()) {
      chit_chat_.push_back(id);
      continue;
    }
    if (t.speaker != preferred_role(t.slots, item_type)) continue;
    by_signature_[t.slots].push_back(id);
    max_signature_ = std::max(max_signature_, t.slots.size());
  }
}

std::span<const std::size_t> TemplateBank::with_signature(std::span<const TypeId> signature) const {
  auto it = by_signature_.find(std::vector<TypeId>(signature.begin(), signature.end()));
  if (it == by_signature_.end()) return {};
  return it->second;
}

RealizedDialogue realize(const ConversationFlow& flow, const FlowSchema& schema,
                         const TemplateBank& bank, const KnowledgeGraph& kg, Rng& rng,
                         const RealizeOptions& options) {
  if (flow.size() != schema.size()) {
    throw Error(ErrorCode::kShapeMismatch, "flow and schema lengths differ");
  }
  for (std::size_t j = 0; j < flow.size(); ++j) {
    if (kg.type_of(flow.entities[j]) != schema.types[j]) {
      throw Error(ErrorCode::kTypeMismatch, "position " + std::to_string(j));
    }
  }
  RealizedDialogue out;
  out.dialogue.dialogue_id = options.dialogue_id;
  out.flow.entities = flow.entities;
  out.schema = schema;
  const std::span<const TypeId> types(schema.types);
  std::size_t pos = 0;
  while (pos < types.size()) {
    if (options.chit_chat_rate > 0.0 && !bank.chit_chat().empty() &&
        uniform01(rng) < options.chit_chat_rate) {
      const auto cc = bank.chit_chat();
      const std::size_t id = cc[uniform_index(rng, cc.size())];
      out.dialogue.turns.push_back(fill_template(bank.at(id), {}, {}));
      out.template_ids.push_back(id);
    }
    std::size_t len = std::min(bank.max_signature(), types.size() - pos);
    std::span<const std::size_t> choices;
    for (; len > 0; --len) {
      choices = bank.with_signature(types.subspan(pos, len));
      if (!choices.empty()) break;
    }
    if (len == 0) {
      throw Error(ErrorCode::kNoCoveringSegmentation,
                  "no template covers type " + kg.type_name(types[pos]) + " at position " +
                      std::to_string(pos));
    }
    const std::size_t id = choices[uniform_index(rng, choices.size())];
    std::vector<std::string> names;
    for (std::size_t k = 0; k < len; ++k) names.push_back(kg.entity_name(flow.entities[pos + k]));
    Turn turn = fill_template(bank.at(id), names, names);
    for (std::size_t k = 0; k < len; ++k) {
      out.flow.turn_index.push_back(out.dialogue.turns.size());
      out.flow.speakers.push_back(turn.speaker);
    }
    out.dialogue.turns.push_back(std::move(turn));
    out.template_ids.push_back(id);
    if (bank.is_fallback(id)) ++out.fallback_turns;
    pos += len;
  }
  return out;
}

std::vector<RecSample> to_rec_samples(const Dialogue& d, const KnowledgeGraph& kg,
                                      TypeId item_type, bool simulated) {
  std::vector<RecSample> out;
  std::vector<EntityId> context;
  for (const Turn& turn : d.turns) {
    std::vector<EntityId> mentioned;
    for (const Mention& m : turn.mentions) mentioned.push_back(kg.entity_id(m.entity));
    if (turn.speaker == Speaker::kRecommender) {
      std::vector<EntityId> labels;
      for (EntityId e : mentioned) {
        if (kg.type_of(e) != item_type) continue;
        if (std::find(context.begin(), context.end(), e) != context.end()) continue;
        if (std::find(labels.begin(), labels.end(), e) != labels.end()) continue;
        labels.push_back(e);
        out.push_back(RecSample{context, e, simulated, d.dialogue_id});
      }
    }
    context.insert(context.end(), mentioned.begin(), mentioned.end());
  }
  return out;
}

std::vector<RecSample> to_rec_samples(const RealizedDialogue& d, const KnowledgeGraph& kg,
                                      TypeId item_type) {
  return to_rec_samples(d.dialogue, kg, item_type, true);
}

}  // namespace cfcrs
