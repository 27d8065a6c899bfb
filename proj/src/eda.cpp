#include <algorithm>

#include "cfcrs/counterfactual.hpp"
#include "cfcrs/error.hpp"

namespace cfcrs {

EdaResult eda_apply(const ConversationFlow& flow, const FlowSchema& schema,
                    const KnowledgeGraph& kg, EdaOp op, Rng& rng) {
  if (flow.size() != schema.size()) {
    throw Error(ErrorCode::kShapeMismatch, "flow and schema lengths differ");
  }
  EdaResult r{ConversationFlow::of(flow.entities), schema, op};
  auto& ents = r.flow.entities;
  auto& types = r.schema.types;
  const std::size_t n = ents.size();
  if (n == 0) return r;
  switch (op) {
    case EdaOp::kReplace: {
      const std::size_t i = uniform_index(rng, n);
      const auto cls = kg.entities_of_type(types[i]);
      if (cls.size() > 1) {
        EntityId pick;
        do {
          pick = cls[uniform_index(rng, cls.size())];
        } while (pick == ents[i]);
        ents[i] = pick;
      }
      break;
    }
    case EdaOp::kInsert: {
      const std::size_t i = uniform_index(rng, n + 1);
      const auto e = static_cast<EntityId>(uniform_index(rng, kg.num_entities()));
      ents.insert(ents.begin() + static_cast<std::ptrdiff_t>(i), e);
      types.insert(types.begin() + static_cast<std::ptrdiff_t>(i), kg.type_of(e));
      break;
    }
    case EdaOp::kSwap: {
      const std::size_t i = uniform_index(rng, n);
      const std::size_t j = uniform_index(rng, n);
      std::swap(ents[i], ents[j]);
      std::swap(types[i], types[j]);
      break;
    }
    case EdaOp::kDelete: {
      const std::size_t i = uniform_index(rng, n);
      ents.erase(ents.begin() + static_cast<std::ptrdiff_t>(i));
      types.erase(types.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  return r;
}

EdaResult eda_augment(const ConversationFlow& flow, const FlowSchema& schema,
                      const KnowledgeGraph& kg, Rng& rng, const EdaOpMix& mix) {
  const double weights[] = {mix.replace, mix.insert, mix.swap, mix.remove};
  const auto op = static_cast<EdaOp>(sample_weighted(rng, weights));
  return eda_apply(flow, schema, kg, op, rng);
}

EdaAugmenter::EdaAugmenter(std::vector<FlowAndSchema> flows,
                           std::shared_ptr<const TemplateBank> bank,
                           std::shared_ptr<const KnowledgeGraph> kg,
                           std::size_t dialogues_per_course, const EdaOpMix& mix)
    : bank_(std::move(bank)), kg_(std::move(kg)), per_course_(dialogues_per_course), mix_(mix) {
  for (FlowAndSchema& f : flows) {
    if (!f.flow.empty()) flows_.push_back(std::move(f));
  }
}

std::vector<RealizedDialogue> EdaAugmenter::augment(std::size_t, double, const RecScorer&,
                                                    Rng& rng, CourseLog&) {
  std::vector<RealizedDialogue> out;
  if (flows_.empty()) return out;
  for (std::size_t i = 0; i < per_course_; ++i) {
    const FlowAndSchema& src = flows_[uniform_index(rng, flows_.size())];
    EdaResult r = eda_augment(ConversationFlow::of(src.flow.entities), src.schema, *kg_, rng, mix_);
    if (r.flow.empty()) continue;
    out.push_back(realize(r.flow, r.schema, *bank_, *kg_, rng,
                          RealizeOptions{"eda-" + std::to_string(next_id_++), 0.0}));
  }
  return out;
}

}  // namespace cfcrs
