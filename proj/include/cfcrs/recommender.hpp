#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfcrs/embeddings.hpp"
#include "cfcrs/kg_store.hpp"
#include "cfcrs/nn/graph.hpp"
#include "cfcrs/nn/optimizer.hpp"
#include "cfcrs/nn/param_store.hpp"
#include "cfcrs/realization.hpp"

namespace cfcrs {

struct RecConfig {
  RgcnConfig rgcn;
  std::size_t attn_dim = 0;  // 0: same as the embedding width
};

// Entity-only recommender: R-GCN entity table, attentive pooling of the
// mentioned entities into a context vector, and an inner-product score
// against every item plus a per-item bias.
// Parameters: rgcn.*, rec.attn.W, rec.attn.b, rec.item_bias.
class RecModel {
 public:
  RecModel(const RecConfig& config, std::shared_ptr<const HeterogeneousKG> hkg, TypeId item_type,
           Rng& rng);
  RecModel(const RecConfig& config, std::shared_ptr<const HeterogeneousKG> hkg, TypeId item_type,
           nn::ParamStore params);

  const RecConfig& config() const { return config_; }
  const HeterogeneousKG& hkg() const { return *hkg_; }
  const KnowledgeGraph& graph() const { return hkg_->base(); }
  const RgcnStructure& structure() const { return *structure_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  TypeId item_type() const { return item_type_; }
  const std::vector<EntityId>& items() const { return items_; }
  std::optional<std::size_t> item_position(EntityId e) const;

 private:
  void index_items();

  RecConfig config_;
  std::shared_ptr<const HeterogeneousKG> hkg_;
  std::shared_ptr<const RgcnStructure> structure_;
  nn::ParamStore params_;
  TypeId item_type_;
  std::vector<EntityId> items_;
  std::vector<std::int32_t> item_pos_;
};

// Frozen snapshot of a RecModel for scoring without graph building.
struct RecScorer {
  PreferenceEncoder context_encoder;
  nn::Tensor item_matrix;  // items x dim
  std::vector<double> item_bias;
  std::vector<EntityId> items;
  std::vector<std::int32_t> item_pos;  // entity -> item row, -1 for non-items

  // One score per item row. An empty context scores by the bias alone.
  std::vector<double> scores(std::span<const EntityId> context) const;
  std::optional<std::size_t> item_position(EntityId e) const;
};

RecScorer make_scorer(const RecModel& model);

struct ScoredItem {
  EntityId item;
  double score;
};

// All items, best first; equal scores ordered by item id.
std::vector<ScoredItem> score_items(const RecScorer& scorer, std::span<const EntityId> context);

// 1-based rank of item row `label` in the order used by score_items.
std::size_t rank_of(std::span<const double> scores, std::span<const EntityId> items,
                    std::size_t label);

// Mean negative log-likelihood of the labels under a softmax over items.
// Throws LabelNotItem.
nn::Expr rec_loss(nn::Graph& g, const RecModel& model, std::span<const RecSample> samples);
double rec_loss(const RecScorer& scorer, std::span<const RecSample> samples);

struct MetricReport {
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> mrr;
  std::map<std::size_t, double> ndcg;
  std::map<std::size_t, double> distinct;
  std::size_t samples = 0;

  std::string to_json() const;
};

// Mean Recall/MRR/NDCG@k over 1-based label ranks. Throws EmptyTestSet.
MetricReport metrics_from_ranks(std::span<const std::size_t> ranks,
                                std::span<const std::size_t> ks);
MetricReport evaluate(const RecScorer& scorer, std::span<const RecSample> samples,
                      std::span<const std::size_t> ks);
MetricReport evaluate(const RecScorer& scorer, std::span<const RecSample> samples);

// Unique whitespace-token n-grams over all responses divided by the number
// of responses; 0 for no responses.
double distinct_n(std::span<const std::string> responses, std::size_t n);

// Fixed-width text table, one row per labelled report.
std::string format_table(std::span<const std::pair<std::string, MetricReport>> rows);

// FNV-1a based split: true for roughly `fraction` of ids.
bool in_validation_split(std::string_view dialogue_id, double fraction = 0.1);

struct RecTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::size_t patience = 3;
  std::size_t select_k = 50;
  nn::AdamW optimizer{.lr = 1e-3};
  std::uint64_t seed = 0;
};

// Model-selection key: validation Recall@k, ties broken by MRR@k.
struct SelectionScore {
  double recall = -1.0;
  double mrr = -1.0;
  double recall10 = 0.0;
  double recall50 = 0.0;
  bool improves_on(const SelectionScore& o) const {
    return recall != o.recall ? recall > o.recall : mrr > o.mrr;
  }
};

SelectionScore selection_score(const RecScorer& scorer, std::span<const RecSample> valid,
                               std::size_t k);

struct RecTrainReport {
  std::vector<double> train_loss;     // mean batch loss per epoch
  std::vector<double> valid_recall;   // Recall@select_k before training, then per epoch
  std::size_t best_epoch = 0;
};

// One shuffled pass of minibatch AdamW; returns the mean batch loss.
double train_recommender_epoch(RecModel& model, std::span<const RecSample> samples,
                               const RecTrainConfig& config, Rng& rng);

// Trains until `epochs` or until the selection score has not improved for
// `patience` epochs, then restores the best parameters. Without validation
// samples every epoch runs and the last parameters are kept.
RecTrainReport pretrain_recommender(RecModel& model, std::span<const RecSample> train,
                                    std::span<const RecSample> valid,
                                    const RecTrainConfig& config);

}  // namespace cfcrs
