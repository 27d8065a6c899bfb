#include "cfcrs/embeddings.hpp"

#include <tuple>

#include "cfcrs/error.hpp"

namespace cfcrs {

using nn::Expr;
using nn::SparseMatrix;
using nn::Tensor;

namespace {

using Triplets = std::vector<std::tuple<std::size_t, std::size_t, double>>;

// Mean-normalises each row of a (target, source) edge list.
std::shared_ptr<const SparseMatrix> mean_matrix(std::size_t rows, std::size_t cols,
                                                const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::size_t> degree(rows, 0);
  for (const auto& [t, s] : edges) ++degree[t];
  Triplets entries;
  entries.reserve(edges.size());
  for (const auto& [t, s] : edges) {
    entries.emplace_back(t, s, 1.0 / static_cast<double>(degree[t]));
  }
  return std::make_shared<const SparseMatrix>(SparseMatrix::from_triplets(rows, cols, entries));
}

}  // namespace

RgcnStructure::RgcnStructure(const HeterogeneousKG& hkg)
    : num_nodes_(hkg.num_nodes()), num_entities_(hkg.base().num_entities()) {
  const KnowledgeGraph& kg = hkg.base();
  const std::size_t nr = kg.num_relations();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> forward(nr), inverse(nr);
  for (const Triple& t : kg.triples()) {
    const auto h = static_cast<std::size_t>(t.head);
    const auto tl = static_cast<std::size_t>(t.tail);
    forward[t.relation].emplace_back(tl, h);
    inverse[t.relation].emplace_back(h, tl);
  }
  for (std::size_t r = 0; r < nr; ++r) {
    channels_.push_back(mean_matrix(num_nodes_, num_nodes_, forward[r]));
    channels_.push_back(mean_matrix(num_nodes_, num_nodes_, inverse[r]));
  }
  std::vector<std::pair<std::size_t, std::size_t>> to_entity, to_user, init;
  for (const auto& [u, e] : hkg.user_edges()) {
    const std::size_t user_node = num_entities_ + u;
    to_entity.emplace_back(static_cast<std::size_t>(e), user_node);
    to_user.emplace_back(user_node, static_cast<std::size_t>(e));
    init.emplace_back(u, static_cast<std::size_t>(e));
  }
  channels_.push_back(mean_matrix(num_nodes_, num_nodes_, to_entity));
  channels_.push_back(mean_matrix(num_nodes_, num_nodes_, to_user));
  user_init_ = mean_matrix(hkg.num_users(), num_entities_, init);
}

void init_rgcn(nn::ParamStore& store, const RgcnConfig& config, std::size_t num_entities,
               std::size_t num_channels, Rng& rng) {
  if (config.num_bases == 0 || config.num_bases > num_channels) {
    throw Error(ErrorCode::kConfigError,
                "num_bases " + std::to_string(config.num_bases) + " not in [1, " +
                    std::to_string(num_channels) + "]");
  }
  const std::size_t d = config.dim;
  store.add("rgcn.entity_input", nn::xavier_uniform(num_entities, d, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "rgcn.l" + std::to_string(l) + ".";
    Tensor bases = Tensor::matrix(config.num_bases * d, d);
    for (std::size_t b = 0; b < config.num_bases; ++b) {
      Tensor v = nn::xavier_uniform(d, d, rng);
      std::copy(v.values().begin(), v.values().end(), bases.values().begin() + b * d * d);
    }
    store.add(p + "bases", std::move(bases));
    store.add(p + "coeff", nn::xavier_uniform(num_channels, config.num_bases, rng));
    store.add(p + "self", nn::xavier_uniform(d, d, rng));
    store.add(p + "bias", Tensor({d}));
  }
}

Expr rgcn_layer(nn::Graph& g, const nn::ParamStore& store, const RgcnStructure& s,
                const RgcnConfig& config, std::size_t layer, Expr h) {
  const std::string p = "rgcn.l" + std::to_string(layer) + ".";
  const std::size_t d = config.dim;
  const std::size_t c = s.num_channels();
  Expr bases = g.param(store, p + "bases");
  const std::size_t nb = bases.rows() / d;
  Expr stacked =
      nn::reshape(nn::matmul(g.param(store, p + "coeff"), nn::reshape(bases, nb, d * d)),
                  c * d, d);
  std::vector<Expr> messages;
  messages.reserve(c);
  for (const auto& ch : s.channels()) messages.push_back(nn::spmm(ch, h));
  Expr pre = nn::matmul(nn::concat_cols(messages), stacked) +
             nn::matmul(h, g.param(store, p + "self"));
  pre = pre + g.param(store, p + "bias");
  return config.activation == Activation::kTanh ? nn::tanh(pre) : pre;
}

Expr rgcn_forward(nn::Graph& g, const nn::ParamStore& store, const RgcnStructure& s,
                  const RgcnConfig& config) {
  Expr entities = g.param(store, "rgcn.entity_input");
  Expr h = entities;
  if (s.num_nodes() > s.num_entities()) {
    std::vector<Expr> parts{entities, nn::spmm(s.user_init(), entities)};
    h = nn::concat_rows(parts);
  }
  for (std::size_t l = 0; l < config.layers; ++l) h = rgcn_layer(g, store, s, config, l, h);
  return h;
}

Tensor EntityEmbeddings::rows(std::span<const EntityId> entities) const {
  const std::size_t d = dim();
  Tensor out = Tensor::matrix(entities.size(), d);
  for (std::size_t k = 0; k < entities.size(); ++k) {
    const auto row = table.row_span(static_cast<std::size_t>(entities[k]));
    std::copy(row.begin(), row.end(), out.values().begin() + k * d);
  }
  return out;
}

EntityEmbeddings compute_embeddings(const nn::ParamStore& store, const RgcnStructure& s,
                                    const RgcnConfig& config) {
  nn::Graph g(false);
  Expr h = rgcn_forward(g, store, s, config);
  return EntityEmbeddings{h.value(), s.num_entities()};
}

void init_user_encoder(nn::ParamStore& store, const std::string& prefix, std::size_t dim,
                       std::size_t attn_dim, Rng& rng) {
  store.add(prefix + ".W", nn::xavier_uniform(attn_dim, dim, rng));
  Tensor b = nn::xavier_uniform(1, attn_dim, rng);
  store.add(prefix + ".b", Tensor({attn_dim}, std::vector<double>(b.values().begin(),
                                                                  b.values().end())));
}

Expr encode_user(Expr entities, Expr w, Expr b, Expr* alpha_out) {
  if (entities.rows() == 0) throw Error(ErrorCode::kEmptyEntitySet, "user has no entities");
  Expr logits = nn::matmul_nt(nn::tanh(nn::matmul_nt(entities, w)), b);  // k x 1
  Expr alpha = nn::softmax_rows(nn::transpose(logits));                  // 1 x k
  if (alpha_out) *alpha_out = alpha;
  return nn::matmul(alpha, entities);
}

UserPreference encode_user(const Tensor& entities, const Tensor& w, const Tensor& b) {
  if (entities.rows() == 0 || entities.size() == 0) {
    throw Error(ErrorCode::kEmptyEntitySet, "user has no entities");
  }
  nn::Graph g(false);
  Expr alpha;
  Expr e = encode_user(g.constant(entities), g.constant(w), g.constant(b), &alpha);
  const auto a = alpha.value().values();
  return UserPreference{e.value(), std::vector<double>(a.begin(), a.end())};
}

Tensor PreferenceEncoder::encode(std::span<const EntityId> entities) const {
  if (entities.empty()) return Tensor::matrix(1, dim());
  return encode_user(embeddings.rows(entities), w, b).e_u;
}

}  // namespace cfcrs
