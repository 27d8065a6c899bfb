#include "cfcrs/schema.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "cfcrs/error.hpp"

namespace cfcrs {

using nn::Expr;
using nn::Tensor;

std::optional<std::size_t> SchemaCatalog::index_of(const FlowSchema& s) const {
  auto it = std::find(schemas.begin(), schemas.end(), s);
  if (it == schemas.end()) return std::nullopt;
  return static_cast<std::size_t>(it - schemas.begin());
}

FlowSchema clip_schema(const FlowSchema& s, std::size_t max_len) {
  if (s.size() <= max_len) return s;
  return FlowSchema{std::vector<TypeId>(s.types.begin(), s.types.begin() + max_len)};
}

SchemaCatalog mine_schemas(std::span<const FlowSchema> flows, std::size_t min_support,
                           std::size_t max_len) {
  if (min_support == 0) throw Error(ErrorCode::kConfigError, "min_support must be >= 1");
  if (max_len == 0) throw Error(ErrorCode::kConfigError, "max_len must be >= 1");
  std::map<FlowSchema, std::size_t> counts;
  for (const FlowSchema& s : flows) {
    if (s.empty()) continue;
    ++counts[clip_schema(s, max_len)];
  }
  std::vector<std::pair<FlowSchema, std::size_t>> kept;
  for (auto& [s, n] : counts) {
    if (n >= min_support) kept.emplace_back(s, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    if (a.first.size() != b.first.size()) return a.first.size() < b.first.size();
    return a.first.types < b.first.types;
  });
  SchemaCatalog c;
  c.min_support = min_support;
  c.max_len = max_len;
  for (auto& [s, n] : kept) {
    c.schemas.push_back(s);
    c.support.push_back(n);
  }
  return c;
}

std::string catalog_to_json(const SchemaCatalog& catalog, const KnowledgeGraph& kg) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    nlohmann::ordered_json entry;
    nlohmann::ordered_json types = nlohmann::ordered_json::array();
    for (TypeId t : catalog.schemas[i].types) types.push_back(kg.type_name(t));
    entry["types"] = std::move(types);
    entry["support"] = catalog.support[i];
    out.push_back(std::move(entry));
  }
  return out.dump(2) + "\n";
}

SchemaCatalog catalog_from_json(std::string_view text, const KnowledgeGraph& kg) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("schema catalog: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::kParseError, "schema catalog must be an array");
  SchemaCatalog c;
  c.min_support = std::numeric_limits<std::size_t>::max();
  c.max_len = 0;
  for (const auto& entry : doc) {
    if (!entry.is_object() || !entry.contains("types") || !entry.contains("support") ||
        !entry["types"].is_array() || !entry["support"].is_number_unsigned()) {
      throw Error(ErrorCode::kParseError, "schema catalog entry needs types and support");
    }
    FlowSchema s;
    for (const auto& name : entry["types"]) {
      if (!name.is_string()) throw Error(ErrorCode::kParseError, "type names must be strings");
      auto t = kg.find_type(name.get<std::string>());
      if (!t) throw Error(ErrorCode::kUnknownType, name.get<std::string>());
      s.types.push_back(*t);
    }
    c.max_len = std::max(c.max_len, s.size());
    c.support.push_back(entry["support"].get<std::size_t>());
    c.min_support = std::min(c.min_support, c.support.back());
    c.schemas.push_back(std::move(s));
  }
  if (c.empty()) c.min_support = 1;
  return c;
}

void init_schema_classifier(nn::ParamStore& store, std::size_t entity_dim, std::size_t hidden,
                            std::size_t num_schemas, Rng& rng) {
  if (num_schemas == 0) throw Error(ErrorCode::kEmptyCatalog, "no schemas to classify");
  store.add("schema.W1", nn::xavier_uniform(hidden, 2 * entity_dim, rng));
  store.add("schema.b1", Tensor({hidden}));
  store.add("schema.W2", Tensor::matrix(num_schemas, hidden));
  store.add("schema.b2", Tensor({num_schemas}));
}

std::size_t classifier_outputs(const nn::ParamStore& store) {
  return store.get("schema.W2").rows();
}

Expr schema_logits(nn::Graph& g, const nn::ParamStore& store, Expr e_u, Expr e_v) {
  std::vector<Expr> parts{e_u, e_v};
  Expr x = nn::concat_cols(parts);
  Expr h = nn::tanh(nn::matmul_nt(x, g.param(store, "schema.W1")) + g.param(store, "schema.b1"));
  return nn::matmul_nt(h, g.param(store, "schema.W2")) + g.param(store, "schema.b2");
}

SchemaPrediction predict_schema(const Tensor& e_u, const Tensor& e_v,
                                const nn::ParamStore& classifier, const SchemaCatalog& catalog) {
  if (catalog.empty()) throw Error(ErrorCode::kEmptyCatalog, "cannot predict a schema");
  if (classifier_outputs(classifier) != catalog.size()) {
    throw Error(ErrorCode::kShapeMismatch, "classifier output size differs from catalog");
  }
  nn::Graph g(false);
  Expr logits = schema_logits(g, classifier, g.constant(e_u), g.constant(e_v));
  const auto z = logits.value().values();
  const double m = *std::max_element(z.begin(), z.end());
  SchemaPrediction p;
  p.probabilities.resize(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += p.probabilities[i] = std::exp(z[i] - m);
  for (double& v : p.probabilities) v /= total;
  p.ranking.resize(z.size());
  std::iota(p.ranking.begin(), p.ranking.end(), 0);
  std::stable_sort(p.ranking.begin(), p.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  p.best = p.ranking.front();
  return p;
}

namespace {

Expr batch_loss(nn::Graph& g, const nn::ParamStore& store, std::span<const SchemaPair> pairs,
                std::span<const std::size_t> order) {
  const std::size_t d = pairs[order[0]].e_u.size();
  Tensor eu = Tensor::matrix(order.size(), d);
  Tensor ev = Tensor::matrix(order.size(), d);
  std::vector<std::int32_t> targets;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const SchemaPair& p = pairs[order[k]];
    std::copy(p.e_u.values().begin(), p.e_u.values().end(), eu.values().begin() + k * d);
    std::copy(p.e_v.values().begin(), p.e_v.values().end(), ev.values().begin() + k * d);
    targets.push_back(static_cast<std::int32_t>(p.gold));
  }
  Expr logits = schema_logits(g, store, g.constant(std::move(eu)), g.constant(std::move(ev)));
  auto none = std::make_shared<const std::vector<std::vector<std::int32_t>>>(order.size());
  return -1.0 * nn::mean(nn::log_softmax_pick(logits, none, std::move(targets)));
}

}  // namespace

double schema_loss(const nn::ParamStore& classifier, std::span<const SchemaPair> pairs) {
  if (pairs.empty()) return 0.0;
  std::vector<std::size_t> all(pairs.size());
  std::iota(all.begin(), all.end(), 0);
  nn::Graph g(false);
  return batch_loss(g, classifier, pairs, all).scalar();
}

SchemaTrainReport train_schema_classifier(nn::ParamStore& classifier,
                                          std::span<const SchemaPair> train,
                                          std::span<const SchemaPair> valid,
                                          const SchemaTrainConfig& config) {
  const std::size_t outputs = classifier_outputs(classifier);
  for (const auto* set : {&train, &valid}) {
    for (const SchemaPair& p : *set) {
      if (p.gold >= outputs) {
        throw Error(ErrorCode::kIndexOutOfCatalog, std::to_string(p.gold));
      }
    }
  }
  SchemaTrainReport report;
  if (train.empty()) return report;
  Rng rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  nn::ParamStore best = classifier;
  double best_valid = valid.empty() ? 0.0 : schema_loss(classifier, valid);
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    report.train_loss.push_back(schema_loss(classifier, train));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      nn::Graph g;
      Expr loss = batch_loss(g, classifier, train,
                             std::span<const std::size_t>(order).subspan(start, n));
      nn::optimizer_step(classifier, g.backward(loss), config.optimizer);
    }
    if (!valid.empty()) {
      const double v = schema_loss(classifier, valid);
      report.valid_loss.push_back(v);
      if (v < best_valid) {
        best_valid = v;
        best = classifier;
        report.best_epoch = epoch + 1;
      }
    }
  }
  if (!valid.empty()) classifier = best;
  return report;
}

}  // namespace cfcrs
