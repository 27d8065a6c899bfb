#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cfcrs/kg_store.hpp"
#include "cfcrs/nn/graph.hpp"
#include "cfcrs/nn/param_store.hpp"

namespace cfcrs {

enum class Activation { kTanh, kLinear };

struct RgcnConfig {
  std::size_t dim = 128;
  std::size_t layers = 1;
  std::size_t num_bases = 8;
  Activation activation = Activation::kTanh;
};

// Message-passing structure of an HKG. Each base relation contributes two
// channels (head->tail, tail->head) and user links two more
// (user->entity, entity->user). Every channel is row-normalised by the
// target's in-degree under that channel; empty rows contribute nothing.
class RgcnStructure {
 public:
  explicit RgcnStructure(const HeterogeneousKG& hkg);

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_entities() const { return num_entities_; }
  std::size_t num_channels() const { return channels_.size(); }
  const std::vector<std::shared_ptr<const nn::SparseMatrix>>& channels() const {
    return channels_;
  }
  // users x entities, mean over each user's interacted entities. User nodes
  // start from this aggregate instead of an id embedding.
  std::shared_ptr<const nn::SparseMatrix> user_init() const { return user_init_; }

 private:
  std::size_t num_nodes_;
  std::size_t num_entities_;
  std::vector<std::shared_ptr<const nn::SparseMatrix>> channels_;
  std::shared_ptr<const nn::SparseMatrix> user_init_;
};

// Adds rgcn.entity_input, and per layer l: rgcn.l<l>.bases (B*d x d),
// rgcn.l<l>.coeff (C x B), rgcn.l<l>.self (d x d), rgcn.l<l>.bias (d).
// Throws ConfigError when num_bases exceeds the channel count.
void init_rgcn(nn::ParamStore& store, const RgcnConfig& config, std::size_t num_entities,
               std::size_t num_channels, Rng& rng);

// One layer: act( sum_c A_c H W_c + H W_self + bias ), W_c = sum_b coeff[c,b] V_b.
nn::Expr rgcn_layer(nn::Graph& g, const nn::ParamStore& store, const RgcnStructure& s,
                    const RgcnConfig& config, std::size_t layer, nn::Expr h);

// |nodes| x dim node representations; rows 0..E-1 are entities.
nn::Expr rgcn_forward(nn::Graph& g, const nn::ParamStore& store, const RgcnStructure& s,
                      const RgcnConfig& config);

struct EntityEmbeddings {
  nn::Tensor table;  // nodes x dim
  std::size_t num_entities = 0;

  std::size_t dim() const { return table.cols(); }
  // Rows for the given entities, stacked.
  nn::Tensor rows(std::span<const EntityId> entities) const;
};

EntityEmbeddings compute_embeddings(const nn::ParamStore& store, const RgcnStructure& s,
                                    const RgcnConfig& config);

struct UserPreference {
  nn::Tensor e_u;             // 1 x dim
  std::vector<double> alpha;  // one weight per entity row
};

// Adds <prefix>.W (attn_dim x dim) and <prefix>.b (attn_dim).
void init_user_encoder(nn::ParamStore& store, const std::string& prefix, std::size_t dim,
                       std::size_t attn_dim, Rng& rng);

// alpha = softmax(b^T tanh(W E_u^T)), e_u = alpha E_u. entities is k x dim.
// Throws EmptyEntitySet when k == 0. When alpha_out is set it receives the
// 1 x k attention row.
nn::Expr encode_user(nn::Expr entities, nn::Expr w, nn::Expr b, nn::Expr* alpha_out = nullptr);
UserPreference encode_user(const nn::Tensor& entities, const nn::Tensor& w, const nn::Tensor& b);

// Frozen entity table plus attention weights, used to build prompts.
struct PreferenceEncoder {
  EntityEmbeddings embeddings;
  nn::Tensor w;
  nn::Tensor b;

  std::size_t dim() const { return embeddings.dim(); }
  // 1 x dim preference vector; the zero vector for an empty list.
  nn::Tensor encode(std::span<const EntityId> entities) const;
};

}  // namespace cfcrs
