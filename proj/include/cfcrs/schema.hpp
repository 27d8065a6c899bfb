#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfcrs/flow.hpp"
#include "cfcrs/kg_store.hpp"
#include "cfcrs/nn/graph.hpp"
#include "cfcrs/nn/optimizer.hpp"
#include "cfcrs/nn/param_store.hpp"

namespace cfcrs {

// Frequent whole-dialogue type sequences, sorted by support (desc), then
// length (asc), then lexicographically.
struct SchemaCatalog {
  std::vector<FlowSchema> schemas;
  std::vector<std::size_t> support;
  std::size_t min_support = 5;
  std::size_t max_len = 16;

  std::size_t size() const { return schemas.size(); }
  bool empty() const { return schemas.empty(); }
  std::optional<std::size_t> index_of(const FlowSchema& s) const;
};

// Counts each dialogue's full type sequence (truncated to max_len; empty
// sequences ignored) and keeps those with support >= min_support.
SchemaCatalog mine_schemas(std::span<const FlowSchema> flows, std::size_t min_support = 5,
                           std::size_t max_len = 16);

// Truncation applied by mining, exposed so callers can label dialogues.
FlowSchema clip_schema(const FlowSchema& s, std::size_t max_len);

// JSON array of {"types": [type names], "support": n}.
std::string catalog_to_json(const SchemaCatalog& catalog, const KnowledgeGraph& kg);
// Throws ParseError / UnknownType.
SchemaCatalog catalog_from_json(std::string_view text, const KnowledgeGraph& kg);

// One-hidden-layer MLP over [e_u, e_v]: schema.W1 (h x 2d), schema.b1,
// schema.W2 (|S| x h, zero), schema.b2 (zero).
void init_schema_classifier(nn::ParamStore& store, std::size_t entity_dim, std::size_t hidden,
                            std::size_t num_schemas, Rng& rng);
std::size_t classifier_outputs(const nn::ParamStore& store);

// Rows of e_u / e_v are pairs; returns pairs x |S| logits.
nn::Expr schema_logits(nn::Graph& g, const nn::ParamStore& store, nn::Expr e_u, nn::Expr e_v);

struct SchemaPrediction {
  std::vector<double> probabilities;
  std::size_t best = 0;  // argmax, earliest catalog index on ties
  // Catalog indices by decreasing probability, ties by index.
  std::vector<std::size_t> ranking;
};

// Throws EmptyCatalog.
SchemaPrediction predict_schema(const nn::Tensor& e_u, const nn::Tensor& e_v,
                                const nn::ParamStore& classifier, const SchemaCatalog& catalog);

struct SchemaPair {
  nn::Tensor e_u;  // 1 x d
  nn::Tensor e_v;  // 1 x d
  std::size_t gold = 0;
};

struct SchemaTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  nn::AdamW optimizer{.lr = 1e-3};
  std::uint64_t seed = 0;
};

struct SchemaTrainReport {
  std::vector<double> train_loss;  // per epoch, before the epoch's updates
  std::vector<double> valid_loss;
  std::size_t best_epoch = 0;
};

// Mean cross-entropy of the gold schemas.
double schema_loss(const nn::ParamStore& classifier, std::span<const SchemaPair> pairs);

// Minibatch AdamW on cross-entropy. With a non-empty validation set the
// parameters of the epoch with the lowest validation loss are kept.
// Throws IndexOutOfCatalog.
SchemaTrainReport train_schema_classifier(nn::ParamStore& classifier,
                                          std::span<const SchemaPair> train,
                                          std::span<const SchemaPair> valid,
                                          const SchemaTrainConfig& config);

}  // namespace cfcrs
