#include "cfcrs/flm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfcrs/error.hpp"

namespace cfcrs {

using nn::Expr;
using nn::Graph;
using nn::ParamStore;
using nn::Tensor;

namespace {

void add_layer_norm(ParamStore& s, const std::string& p, std::size_t d) {
  s.add(p + ".g", Tensor({d}, 1.0));
  s.add(p + ".b", Tensor({d}));
}

void add_attention(ParamStore& s, const std::string& p, std::size_t d, Rng& rng) {
  for (const char* w : {".wq", ".wk", ".wv", ".wo"}) s.add(p + w, nn::xavier_uniform(d, d, rng));
}

void add_ffn(ParamStore& s, const std::string& p, std::size_t d, std::size_t f, Rng& rng) {
  s.add(p + ".w1", nn::xavier_uniform(f, d, rng));
  s.add(p + ".b1", Tensor({f}));
  s.add(p + ".w2", nn::xavier_uniform(d, f, rng));
  s.add(p + ".b2", Tensor({d}));
}

Expr norm(Graph& g, const ParamStore& s, const std::string& p, Expr x) {
  return nn::layer_norm(x, g.param(s, p + ".g"), g.param(s, p + ".b"));
}

Expr attention(Graph& g, const ParamStore& s, const std::string& p, Expr query, Expr kv,
               std::size_t heads, bool causal) {
  Expr q = nn::matmul_nt(query, g.param(s, p + ".wq"));
  Expr k = nn::matmul_nt(kv, g.param(s, p + ".wk"));
  Expr v = nn::matmul_nt(kv, g.param(s, p + ".wv"));
  const std::size_t dh = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Expr> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Expr qh = heads == 1 ? q : nn::slice_cols(q, h * dh, dh);
    Expr kh = heads == 1 ? k : nn::slice_cols(k, h * dh, dh);
    Expr vh = heads == 1 ? v : nn::slice_cols(v, h * dh, dh);
    Expr a = nn::softmax_rows(scale * nn::matmul_nt(qh, kh), causal);
    outs.push_back(nn::matmul(a, vh));
  }
  Expr o = heads == 1 ? outs[0] : nn::concat_cols(outs);
  return nn::matmul_nt(o, g.param(s, p + ".wo"));
}

Expr ffn(Graph& g, const ParamStore& s, const std::string& p, Expr x) {
  Expr h = nn::gelu(nn::matmul_nt(x, g.param(s, p + ".w1")) + g.param(s, p + ".b1"));
  return nn::matmul_nt(h, g.param(s, p + ".w2")) + g.param(s, p + ".b2");
}

std::string layer_prefix(const char* stack, std::size_t l) {
  return std::string("flm.") + stack + ".l" + std::to_string(l);
}

void check_length(const FlowLM& flm, const FlowSchema& schema) {
  if (schema.size() > flm.config().max_len) {
    throw Error(ErrorCode::kConfigError, "schema length " + std::to_string(schema.size()) +
                                             " exceeds max_len " +
                                             std::to_string(flm.config().max_len));
  }
}

// Final decoder states (after the closing layer norm) for steps 0..prefix.size().
Expr decoder_states(Graph& g, const FlowLM& flm, Expr memory, const FlowSchema& schema,
                    std::span<const EntityId> prefix) {
  const ParamStore& s = flm.params();
  const FlmConfig& c = flm.config();
  const std::size_t m = prefix.size() + 1;
  if (m > schema.size()) {
    throw Error(ErrorCode::kPositionOutOfRange, "decoder prefix longer than schema");
  }
  std::vector<std::size_t> tokens{flm.bos()};
  for (EntityId e : prefix) tokens.push_back(static_cast<std::size_t>(e));
  std::vector<std::size_t> types;
  for (std::size_t j = 0; j < m; ++j) types.push_back(static_cast<std::size_t>(schema.types[j]));
  Expr y = nn::gather_rows(g.param(s, "flm.tok_emb"), std::move(tokens)) +
           nn::gather_rows(g.param(s, "flm.type_emb"), std::move(types)) +
           nn::slice_rows(g.param(s, "flm.dec_pos"), 0, m);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = layer_prefix("dec", l);
    Expr h = norm(g, s, p + ".ln1", y);
    y = y + attention(g, s, p + ".self", h, h, c.heads, true);
    y = y + attention(g, s, p + ".cross", norm(g, s, p + ".ln2", y), memory, c.heads, false);
    y = y + ffn(g, s, p + ".ffn", norm(g, s, p + ".ln3", y));
  }
  return norm(g, s, "flm.dec.ln", y);
}

Expr output_head(Graph& g, const FlowLM& flm, Expr states) {
  const ParamStore& s = flm.params();
  return nn::matmul_nt(states, g.param(s, "flm.out.W")) + g.param(s, "flm.out.b");
}

void check_flow(const FlowLM& flm, const FlowSchema& schema, std::span<const EntityId> flow) {
  if (flow.size() != schema.size()) {
    throw Error(ErrorCode::kShapeMismatch, "flow length " + std::to_string(flow.size()) +
                                               " differs from schema length " +
                                               std::to_string(schema.size()));
  }
  const auto ne = static_cast<EntityId>(flm.num_entities());
  for (std::size_t j = 0; j < flow.size(); ++j) {
    if (flow[j] < 0 || flow[j] >= ne) {
      throw Error(ErrorCode::kVocabMiss, "entity id " + std::to_string(flow[j]));
    }
    if (flm.graph().type_of(flow[j]) != schema.types[j]) {
      throw Error(ErrorCode::kTypeMismatch, "position " + std::to_string(j));
    }
  }
}

}  // namespace

FlowLM::FlowLM(const FlmConfig& config, std::shared_ptr<const KnowledgeGraph> kg, Rng& rng)
    : config_(config), kg_(std::move(kg)) {
  const std::size_t d = config.model_dim;
  if (config.heads == 0 || d % config.heads != 0) {
    throw Error(ErrorCode::kConfigError, "model_dim must be a multiple of heads");
  }
  ParamStore& s = params_;
  s.add("flm.prompt.W", nn::xavier_uniform(d, config.entity_dim, rng));
  s.add("flm.prompt.b", Tensor({d}));
  s.add("flm.type_emb", nn::xavier_uniform(kg_->num_types(), d, rng));
  s.add("flm.tok_emb", nn::xavier_uniform(kg_->num_entities() + 3, d, rng));
  s.add("flm.enc_pos", nn::xavier_uniform(config.max_len + 2, d, rng));
  s.add("flm.dec_pos", nn::xavier_uniform(config.max_len, d, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string e = layer_prefix("enc", l);
    add_layer_norm(s, e + ".ln1", d);
    add_attention(s, e + ".attn", d, rng);
    add_layer_norm(s, e + ".ln2", d);
    add_ffn(s, e + ".ffn", d, config.ffn_dim, rng);
  }
  add_layer_norm(s, "flm.enc.ln", d);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = layer_prefix("dec", l);
    add_layer_norm(s, p + ".ln1", d);
    add_attention(s, p + ".self", d, rng);
    add_layer_norm(s, p + ".ln2", d);
    add_attention(s, p + ".cross", d, rng);
    add_layer_norm(s, p + ".ln3", d);
    add_ffn(s, p + ".ffn", d, config.ffn_dim, rng);
  }
  add_layer_norm(s, "flm.dec.ln", d);
  s.add("flm.out.W", Tensor::matrix(kg_->num_entities(), d));
  s.add("flm.out.b", Tensor({kg_->num_entities()}));
}

FlowLM::FlowLM(const FlmConfig& config, std::shared_ptr<const KnowledgeGraph> kg,
               ParamStore params)
    : config_(config), kg_(std::move(kg)), params_(std::move(params)) {
  if (!params_.contains("flm.out.W") ||
      params_.get("flm.out.W").rows() != kg_->num_entities()) {
    throw Error(ErrorCode::kShapeMismatch, "flow model does not match the entity vocabulary");
  }
}

Expr encode_prompt(Graph& g, const FlowLM& flm, Expr e_u, Expr e_v, const FlowSchema& schema) {
  check_length(flm, schema);
  const ParamStore& s = flm.params();
  const FlmConfig& c = flm.config();
  Expr w = g.param(s, "flm.prompt.W");
  Expr b = g.param(s, "flm.prompt.b");
  std::vector<Expr> rows{nn::matmul_nt(e_u, w) + b, nn::matmul_nt(e_v, w) + b};
  if (!schema.empty()) {
    std::vector<std::size_t> types(schema.types.begin(), schema.types.end());
    rows.push_back(nn::gather_rows(g.param(s, "flm.type_emb"), std::move(types)));
  }
  Expr x = nn::concat_rows(rows) + nn::slice_rows(g.param(s, "flm.enc_pos"), 0, schema.size() + 2);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = layer_prefix("enc", l);
    Expr h = norm(g, s, p + ".ln1", x);
    x = x + attention(g, s, p + ".attn", h, h, c.heads, false);
    x = x + ffn(g, s, p + ".ffn", norm(g, s, p + ".ln2", x));
  }
  return norm(g, s, "flm.enc.ln", x);
}

Expr decode_logits(Graph& g, const FlowLM& flm, Expr memory, const FlowSchema& schema,
                   std::span<const EntityId> prefix) {
  return output_head(g, flm, decoder_states(g, flm, memory, schema, prefix));
}

std::vector<EntityId> step_candidates(const KnowledgeGraph& kg, const FlowSchema& schema,
                                      const SchemaPlan* plan, std::size_t j,
                                      std::optional<EntityId> previous) {
  const TypeId t = schema.types[j];
  if (kg.entities_of_type(t).empty()) {
    throw Error(ErrorCode::kEmptyTypeClass, kg.type_name(t));
  }
  if (!plan) {
    const auto cls = kg.entities_of_type(t);
    return std::vector<EntityId>(cls.begin(), cls.end());
  }
  return plan->candidates(j, previous);
}

Expr flow_step_log_probs(Graph& g, const FlowLM& flm, Expr e_u, Expr e_v,
                         const FlowSchema& schema, std::span<const EntityId> flow,
                         const SchemaPlan* plan, double temperature) {
  check_flow(flm, schema, flow);
  const std::size_t n = schema.size();
  if (n == 0) return g.constant(Tensor::matrix(0, 1));
  if (plan && plan->types() != schema.types) {
    throw Error(ErrorCode::kShapeMismatch, "plan built for a different schema");
  }
  Expr memory = encode_prompt(g, flm, e_u, e_v, schema);
  Expr logits = decode_logits(g, flm, memory, schema, flow.first(n - 1));
  auto cands = std::make_shared<std::vector<std::vector<std::int32_t>>>(n);
  std::vector<std::int32_t> targets(flow.begin(), flow.end());
  for (std::size_t j = 0; j < n; ++j) {
    std::optional<EntityId> prev;
    if (j > 0) prev = flow[j - 1];
    auto c = step_candidates(flm.graph(), schema, plan, j, prev);
    if (c.empty()) {
      throw Error(ErrorCode::kConstraintViolation, "no admissible entity at position " +
                                                       std::to_string(j));
    }
    (*cands)[j].assign(c.begin(), c.end());
  }
  return nn::log_softmax_pick(logits, std::move(cands), std::move(targets), temperature);
}

Expr flow_log_prob(Graph& g, const FlowLM& flm, Expr e_u, Expr e_v, const FlowSchema& schema,
                   std::span<const EntityId> flow, const SchemaPlan* plan, double temperature) {
  if (schema.empty()) {
    check_flow(flm, schema, flow);
    return g.constant(Tensor::scalar(0.0));
  }
  return nn::sum(flow_step_log_probs(g, flm, e_u, e_v, schema, flow, plan, temperature));
}

double flow_log_prob(const FlowLM& flm, const Tensor& e_u, const Tensor& e_v,
                     const FlowSchema& schema, std::span<const EntityId> flow,
                     const SchemaPlan* plan, double temperature) {
  Graph g(false);
  return flow_log_prob(g, flm, g.constant(e_u), g.constant(e_v), schema, flow, plan, temperature)
      .scalar();
}

ConversationFlow generate_flow(const FlowLM& flm, const Tensor& e_u, const Tensor& e_v,
                               const FlowSchema& schema, Rng& rng,
                               const GenerateOptions& options, const SchemaPlan* plan) {
  if (!options.greedy && !(options.temperature > 0.0)) {
    throw Error(ErrorCode::kConfigError, "temperature must be positive");
  }
  ConversationFlow flow;
  const std::size_t n = schema.size();
  if (n == 0) return flow;
  Graph g(false);
  Expr memory = encode_prompt(g, flm, g.constant(e_u), g.constant(e_v), schema);
  std::vector<double> weights;
  for (std::size_t j = 0; j < n; ++j) {
    std::optional<EntityId> prev;
    if (j > 0) prev = flow.entities.back();
    const auto cands = step_candidates(flm.graph(), schema, plan, j, prev);
    if (cands.empty()) {
      throw Error(ErrorCode::kConstraintViolation, "no admissible entity at position " +
                                                       std::to_string(j));
    }
    Expr states = decoder_states(g, flm, memory, schema, flow.entities);
    Expr logits = output_head(g, flm, nn::slice_rows(states, j, 1));
    const auto z = logits.value().values();
    EntityId pick = cands[0];
    if (options.greedy) {
      double best = z[static_cast<std::size_t>(cands[0])];
      for (EntityId e : cands) {
        if (z[static_cast<std::size_t>(e)] > best) {
          best = z[static_cast<std::size_t>(e)];
          pick = e;
        }
      }
    } else {
      double mx = -std::numeric_limits<double>::infinity();
      for (EntityId e : cands) mx = std::max(mx, z[static_cast<std::size_t>(e)]);
      weights.clear();
      for (EntityId e : cands) {
        weights.push_back(std::exp((z[static_cast<std::size_t>(e)] - mx) / options.temperature));
      }
      pick = cands[sample_weighted(rng, weights)];
    }
    flow.entities.push_back(pick);
  }
  return flow;
}

std::pair<std::vector<EntityId>, std::vector<EntityId>> split_entities(
    std::span<const EntityId> flow, Rng& rng) {
  const std::size_t n = flow.size();
  std::vector<bool> side(n, false);
  if (n == 1) {
    side[0] = uniform_index(rng, 2) == 1;
  } else if (n >= 2) {
    for (;;) {
      std::size_t ones = 0;
      for (std::size_t i = 0; i < n; ++i) {
        side[i] = uniform_index(rng, 2) == 1;
        ones += side[i] ? 1 : 0;
      }
      if (ones != 0 && ones != n) break;
    }
  }
  std::pair<std::vector<EntityId>, std::vector<EntityId>> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& group = side[i] ? out.second : out.first;
    if (std::find(group.begin(), group.end(), flow[i]) == group.end()) group.push_back(flow[i]);
  }
  return out;
}

PseudoFlowSampler::PseudoFlowSampler(const PathIndex& index, const SchemaCatalog& catalog,
                                     std::size_t retry_budget)
    : catalog_(catalog), retry_budget_(std::max<std::size_t>(1, retry_budget)) {
  if (catalog.empty()) throw Error(ErrorCode::kEmptyCatalog, "no schemas to sample from");
  plans_.reserve(catalog.size());
  for (const FlowSchema& s : catalog.schemas) plans_.push_back(index.plan(s));
}

bool PseudoFlowSampler::any_reachable() const {
  return std::any_of(plans_.begin(), plans_.end(),
                     [](const SchemaPlan& p) { return p.reachable(); });
}

FlowExample PseudoFlowSampler::sample(Rng& rng) const {
  const std::size_t draws = retry_budget_ * catalog_.size();
  for (std::size_t attempt = 0; attempt < draws; ++attempt) {
    const std::size_t i = uniform_index(rng, catalog_.size());
    if (!plans_[i].reachable()) continue;
    FlowExample ex;
    ex.schema = catalog_.schemas[i];
    ex.flow = plans_[i].sample(rng).entities;
    auto [a, b] = split_entities(ex.flow, rng);
    ex.seeker = std::move(a);
    ex.recommender = std::move(b);
    return ex;
  }
  throw Error(ErrorCode::kAllSchemasUnreachable,
              "no valid path after " + std::to_string(draws) + " schema draws");
}

FlowExample sample_pseudo_flow(const HeterogeneousKG& hkg, const SchemaCatalog& catalog,
                               Rng& rng, const PathOptions& options, std::size_t retry_budget) {
  PathIndex index(hkg.base_ptr(), options.hop_limit);
  return PseudoFlowSampler(index, catalog, retry_budget).sample(rng);
}

Expr example_nll(Graph& g, const FlowLM& flm, const FlowExample& example,
                 const PreferenceEncoder& prompts) {
  Expr e_u = g.constant(prompts.encode(example.seeker));
  Expr e_v = g.constant(prompts.encode(example.recommender));
  return -1.0 * flow_log_prob(g, flm, e_u, e_v, example.schema, example.flow);
}

double example_nll(const FlowLM& flm, const FlowExample& example,
                   const PreferenceEncoder& prompts) {
  Graph g(false);
  return example_nll(g, flm, example, prompts).scalar();
}

FlmTrainReport pretrain_flm(FlowLM& flm, std::span<const FlowExample> real,
                            const PseudoFlowSampler* pseudo, const PreferenceEncoder& prompts,
                            const FlmTrainConfig& config) {
  FlmTrainReport report;
  Rng rng(config.seed);
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
  const auto n_pseudo =
      pseudo ? static_cast<std::size_t>(std::llround(config.pseudo_ratio *
                                                     static_cast<double>(real.size())))
             : 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<FlowExample> pool(real.begin(), real.end());
    for (std::size_t i = 0; i < n_pseudo; ++i) pool.push_back(pseudo->sample(rng));
    if (pool.empty()) break;
    std::shuffle(pool.begin(), pool.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < pool.size(); start += batch) {
      const std::size_t n = std::min(batch, pool.size() - start);
      nn::Gradients grads;
      for (std::size_t k = 0; k < n; ++k) {
        Graph g;
        Expr nll = example_nll(g, flm, pool[start + k], prompts);
        total += nll.scalar();
        nn::accumulate(grads, g.backward(nll), 1.0 / static_cast<double>(n));
      }
      nn::optimizer_step(flm.params(), grads, config.optimizer);
      ++report.steps;
    }
    report.epoch_loss.push_back(total / static_cast<double>(pool.size()));
  }
  return report;
}

}  // namespace cfcrs
