#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "cfcrs/embeddings.hpp"
#include "cfcrs/kg_store.hpp"
#include "cfcrs/nn/graph.hpp"
#include "cfcrs/nn/optimizer.hpp"
#include "cfcrs/nn/param_store.hpp"
#include "cfcrs/schema.hpp"

namespace cfcrs {

struct FlmConfig {
  std::size_t entity_dim = 128;  // width of the preference vectors
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_dim = 256;
  std::size_t max_len = 16;
};

// Pre-LN transformer encoder-decoder. The encoder reads
// [proj(e_u), proj(e_v), type(t_1) .. type(t_n)]; the decoder emits one
// entity per schema position, its input at step j being the previous
// token (BOS at j = 0) plus the position and the type t_j.
class FlowLM {
 public:
  FlowLM(const FlmConfig& config, std::shared_ptr<const KnowledgeGraph> kg, Rng& rng);
  // Wraps existing parameters, e.g. from a checkpoint.
  FlowLM(const FlmConfig& config, std::shared_ptr<const KnowledgeGraph> kg,
         nn::ParamStore params);

  const FlmConfig& config() const { return config_; }
  const KnowledgeGraph& graph() const { return *kg_; }
  std::shared_ptr<const KnowledgeGraph> graph_ptr() const { return kg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  std::size_t num_entities() const { return kg_->num_entities(); }
  // Special rows of the token table, after the entities.
  std::size_t bos() const { return num_entities(); }
  std::size_t eos() const { return num_entities() + 1; }
  std::size_t pad() const { return num_entities() + 2; }

 private:
  FlmConfig config_;
  std::shared_ptr<const KnowledgeGraph> kg_;
  nn::ParamStore params_;
};

// (n + 2) x model_dim encoder states.
nn::Expr encode_prompt(nn::Graph& g, const FlowLM& flm, nn::Expr e_u, nn::Expr e_v,
                       const FlowSchema& schema);

// Logits over entities for steps 0..prefix.size(); requires
// prefix.size() < |schema|.
nn::Expr decode_logits(nn::Graph& g, const FlowLM& flm, nn::Expr memory,
                       const FlowSchema& schema, std::span<const EntityId> prefix);

// Entities allowed at step j. Without a plan: the type class of t_j (throws
// EmptyTypeClass). With a plan: additionally within the hop limit of the
// previous entity and extendable to a full valid flow.
std::vector<EntityId> step_candidates(const KnowledgeGraph& kg, const FlowSchema& schema,
                                      const SchemaPlan* plan, std::size_t j,
                                      std::optional<EntityId> previous);

// Per-step log-probabilities (n x 1) of `flow` under the masked decoder.
// Throws TypeMismatch, VocabMiss, ConstraintViolation.
nn::Expr flow_step_log_probs(nn::Graph& g, const FlowLM& flm, nn::Expr e_u, nn::Expr e_v,
                             const FlowSchema& schema, std::span<const EntityId> flow,
                             const SchemaPlan* plan = nullptr, double temperature = 1.0);
nn::Expr flow_log_prob(nn::Graph& g, const FlowLM& flm, nn::Expr e_u, nn::Expr e_v,
                       const FlowSchema& schema, std::span<const EntityId> flow,
                       const SchemaPlan* plan = nullptr, double temperature = 1.0);
double flow_log_prob(const FlowLM& flm, const nn::Tensor& e_u, const nn::Tensor& e_v,
                     const FlowSchema& schema, std::span<const EntityId> flow,
                     const SchemaPlan* plan = nullptr, double temperature = 1.0);

struct GenerateOptions {
  double temperature = 1.0;
  bool greedy = false;  // argmax, ties to the lowest entity id
};

ConversationFlow generate_flow(const FlowLM& flm, const nn::Tensor& e_u, const nn::Tensor& e_v,
                               const FlowSchema& schema, Rng& rng,
                               const GenerateOptions& options = {},
                               const SchemaPlan* plan = nullptr);

// A training flow with the entity split that forms its user prompt.
struct FlowExample {
  FlowSchema schema;
  std::vector<EntityId> flow;
  std::vector<EntityId> seeker;
  std::vector<EntityId> recommender;
};

// Draws a catalog schema uniformly, a uniform valid path for it (redrawing
// the schema when it has none) and a uniform split of the path's entities
// into two non-empty groups (for a single entity, one group stays empty).
class PseudoFlowSampler {
 public:
  PseudoFlowSampler(const PathIndex& index, const SchemaCatalog& catalog,
                    std::size_t retry_budget = 50);
  // Throws AllSchemasUnreachable once retry_budget * |catalog| draws fail.
  FlowExample sample(Rng& rng) const;
  bool any_reachable() const;

 private:
  SchemaCatalog catalog_;
  std::vector<SchemaPlan> plans_;
  std::size_t retry_budget_;
};

FlowExample sample_pseudo_flow(const HeterogeneousKG& hkg, const SchemaCatalog& catalog,
                               Rng& rng, const PathOptions& options = {},
                               std::size_t retry_budget = 50);

// Uniform split of `flow` into two groups, each deduplicated in order.
std::pair<std::vector<EntityId>, std::vector<EntityId>> split_entities(
    std::span<const EntityId> flow, Rng& rng);

struct FlmTrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  // Fresh pseudo flows per real flow in each epoch.
  double pseudo_ratio = 4.0;
  nn::AdamW optimizer{.lr = 1e-3};
  std::uint64_t seed = 0;
};

struct FlmTrainReport {
  std::vector<double> epoch_loss;  // mean NLL per flow over the epoch's updates
  std::size_t steps = 0;
};

// Teacher-forced NLL of one example with prompts from `prompts`.
nn::Expr example_nll(nn::Graph& g, const FlowLM& flm, const FlowExample& example,
                     const PreferenceEncoder& prompts);
double example_nll(const FlowLM& flm, const FlowExample& example,
                   const PreferenceEncoder& prompts);

// Minibatch AdamW on type-masked teacher-forced NLL. Each epoch uses the
// real examples plus pseudo_ratio * |real| fresh pseudo flows when a
// sampler is given.
FlmTrainReport pretrain_flm(FlowLM& flm, std::span<const FlowExample> real,
                            const PseudoFlowSampler* pseudo, const PreferenceEncoder& prompts,
                            const FlmTrainConfig& config);

}  // namespace cfcrs
