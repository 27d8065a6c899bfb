#include "cfcrs/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cfcrs/error.hpp"

namespace cfcrs {

using nn::Expr;
using nn::Graph;
using nn::Tensor;

RecModel::RecModel(const RecConfig& config, std::shared_ptr<const HeterogeneousKG> hkg,
                   TypeId item_type, Rng& rng)
    : config_(config),
      hkg_(std::move(hkg)),
      structure_(std::make_shared<const RgcnStructure>(*hkg_)),
      item_type_(item_type) {
  index_items();
  const std::size_t d = config.rgcn.dim;
  init_rgcn(params_, config.rgcn, graph().num_entities(), structure_->num_channels(), rng);
  init_user_encoder(params_, "rec.attn", d, config.attn_dim ? config.attn_dim : d, rng);
  params_.add("rec.item_bias", Tensor({items_.size()}));
}

RecModel::RecModel(const RecConfig& config, std::shared_ptr<const HeterogeneousKG> hkg,
                   TypeId item_type, nn::ParamStore params)
    : config_(config),
      hkg_(std::move(hkg)),
      structure_(std::make_shared<const RgcnStructure>(*hkg_)),
      params_(std::move(params)),
      item_type_(item_type) {
  index_items();
  if (!params_.contains("rec.item_bias") || params_.get("rec.item_bias").size() != items_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "recommender does not match the item set");
  }
}

void RecModel::index_items() {
  const KnowledgeGraph& kg = graph();
  if (item_type_ < 0 || item_type_ >= static_cast<TypeId>(kg.num_types())) {
    throw Error(ErrorCode::kUnknownType, std::to_string(item_type_));
  }
  const auto cls = kg.entities_of_type(item_type_);
  items_.assign(cls.begin(), cls.end());
  std::sort(items_.begin(), items_.end());
  if (items_.empty()) throw Error(ErrorCode::kEmptyTypeClass, kg.type_name(item_type_));
  item_pos_.assign(kg.num_entities(), -1);
  for (std::size_t i = 0; i < items_.size(); ++i) {
    item_pos_[static_cast<std::size_t>(items_[i])] = static_cast<std::int32_t>(i);
  }
}

std::optional<std::size_t> RecModel::item_position(EntityId e) const {
  if (e < 0 || static_cast<std::size_t>(e) >= item_pos_.size() || item_pos_[e] < 0) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(item_pos_[e]);
}

std::optional<std::size_t> RecScorer::item_position(EntityId e) const {
  if (e < 0 || static_cast<std::size_t>(e) >= item_pos.size() || item_pos[e] < 0) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(item_pos[e]);
}

RecScorer make_scorer(const RecModel& model) {
  RecScorer s;
  s.context_encoder.embeddings =
      compute_embeddings(model.params(), model.structure(), model.config().rgcn);
  s.context_encoder.w = model.params().get("rec.attn.W");
  s.context_encoder.b = model.params().get("rec.attn.b");
  s.item_matrix = s.context_encoder.embeddings.rows(model.items());
  const auto bias = model.params().get("rec.item_bias").values();
  s.item_bias.assign(bias.begin(), bias.end());
  s.items = model.items();
  s.item_pos.assign(model.graph().num_entities(), -1);
  for (std::size_t i = 0; i < s.items.size(); ++i) {
    s.item_pos[static_cast<std::size_t>(s.items[i])] = static_cast<std::int32_t>(i);
  }
  return s;
}

std::vector<double> RecScorer::scores(std::span<const EntityId> context) const {
  std::vector<double> out = item_bias;
  if (context.empty()) return out;
  const Tensor ctx = context_encoder.encode(context);
  const std::size_t d = item_matrix.cols();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto row = item_matrix.row_span(i);
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += row[k] * ctx[k];
    out[i] += dot;
  }
  return out;
}

std::vector<ScoredItem> score_items(const RecScorer& scorer, std::span<const EntityId> context) {
  const std::vector<double> s = scorer.scores(context);
  std::vector<ScoredItem> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back(ScoredItem{scorer.items[i], s[i]});
  std::sort(out.begin(), out.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  });
  return out;
}

std::size_t rank_of(std::span<const double> scores, std::span<const EntityId> items,
                    std::size_t label) {
  const double target = scores[label];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > target || (scores[i] == target && items[i] < items[label])) ++rank;
  }
  return rank;
}

namespace {

std::vector<std::int32_t> label_positions(std::span<const RecSample> samples,
                                          const std::vector<std::int32_t>& item_pos) {
  std::vector<std::int32_t> out;
  out.reserve(samples.size());
  for (const RecSample& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= item_pos.size() ||
        item_pos[s.label] < 0) {
      throw Error(ErrorCode::kLabelNotItem, "entity id " + std::to_string(s.label));
    }
    out.push_back(item_pos[s.label]);
  }
  return out;
}

}  // namespace

Expr rec_loss(Graph& g, const RecModel& model, std::span<const RecSample> samples) {
  std::vector<std::int32_t> item_pos(model.graph().num_entities(), -1);
  for (std::size_t i = 0; i < model.items().size(); ++i) {
    item_pos[static_cast<std::size_t>(model.items()[i])] = static_cast<std::int32_t>(i);
  }
  std::vector<std::int32_t> targets = label_positions(samples, item_pos);
  if (samples.empty()) return g.constant(Tensor::scalar(0.0));
  const nn::ParamStore& p = model.params();
  Expr h = rgcn_forward(g, p, model.structure(), model.config().rgcn);
  Expr w = g.param(p, "rec.attn.W");
  Expr b = g.param(p, "rec.attn.b");
  const std::size_t d = h.cols();
  std::vector<Expr> contexts;
  contexts.reserve(samples.size());
  for (const RecSample& s : samples) {
    if (s.context.empty()) {
      contexts.push_back(g.constant(Tensor::matrix(1, d)));
      continue;
    }
    std::vector<std::size_t> rows(s.context.begin(), s.context.end());
    contexts.push_back(encode_user(nn::gather_rows(h, std::move(rows)), w, b));
  }
  std::vector<std::size_t> item_rows(model.items().begin(), model.items().end());
  Expr items = nn::gather_rows(h, std::move(item_rows));
  Expr logits = nn::matmul_nt(nn::concat_rows(contexts), items) + g.param(p, "rec.item_bias");
  auto all = std::make_shared<const std::vector<std::vector<std::int32_t>>>(samples.size());
  return -1.0 * nn::mean(nn::log_softmax_pick(logits, all, std::move(targets)));
}

double rec_loss(const RecScorer& scorer, std::span<const RecSample> samples) {
  const std::vector<std::int32_t> targets = label_positions(samples, scorer.item_pos);
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const std::vector<double> s = scorer.scores(samples[k].context);
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - mx);
    total += mx + std::log(z) - s[static_cast<std::size_t>(targets[k])];
  }
  return total / static_cast<double>(samples.size());
}

MetricReport metrics_from_ranks(std::span<const std::size_t> ranks,
                                std::span<const std::size_t> ks) {
  if (ranks.empty()) throw Error(ErrorCode::kEmptyTestSet, "no test samples");
  MetricReport r;
  r.samples = ranks.size();
  const double n = static_cast<double>(ranks.size());
  for (std::size_t k : ks) {
    double recall = 0.0, mrr = 0.0, ndcg = 0.0;
    for (std::size_t rank : ranks) {
      if (rank > k) continue;
      recall += 1.0;
      mrr += 1.0 / static_cast<double>(rank);
      ndcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
    r.recall[k] = recall / n;
    r.mrr[k] = mrr / n;
    r.ndcg[k] = ndcg / n;
  }
  return r;
}

MetricReport evaluate(const RecScorer& scorer, std::span<const RecSample> samples,
                      std::span<const std::size_t> ks) {
  if (samples.empty()) throw Error(ErrorCode::kEmptyTestSet, "no test samples");
  const std::vector<std::int32_t> targets = label_positions(samples, scorer.item_pos);
  std::vector<std::size_t> ranks;
  ranks.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const std::vector<double> s = scorer.scores(samples[k].context);
    ranks.push_back(rank_of(s, scorer.items, static_cast<std::size_t>(targets[k])));
  }
  return metrics_from_ranks(ranks, ks);
}

MetricReport evaluate(const RecScorer& scorer, std::span<const RecSample> samples) {
  static constexpr std::size_t kDefault[] = {10, 50};
  return evaluate(scorer, samples, kDefault);
}

double distinct_n(std::span<const std::string> responses, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::kConfigError, "distinct-n needs n >= 1");
  if (responses.empty()) return 0.0;
  std::set<std::vector<std::string>> grams;
  for (const std::string& text : responses) {
    std::istringstream in(text);
    std::vector<std::string> tokens{std::istream_iterator<std::string>(in),
                                    std::istream_iterator<std::string>()};
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      grams.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                    tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    }
  }
  return static_cast<double>(grams.size()) / static_cast<double>(responses.size());
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : recall) j["recall@" + std::to_string(k)] = v;
  for (const auto& [k, v] : mrr) j["mrr@" + std::to_string(k)] = v;
  for (const auto& [k, v] : ndcg) j["ndcg@" + std::to_string(k)] = v;
  for (const auto& [n, v] : distinct) j["distinct-" + std::to_string(n)] = v;
  j["samples"] = samples;
  return j.dump(2);
}

std::string format_table(std::span<const std::pair<std::string, MetricReport>> rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %9s %9s %9s %9s %9s %9s\n", "Model", "R@10", "R@50",
                "M@10", "M@50", "N@10", "N@50");
  out << buf;
  auto get = [](const std::map<std::size_t, double>& m, std::size_t k) {
    auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
  };
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f\n", name.c_str(),
                  get(r.recall, 10), get(r.recall, 50), get(r.mrr, 10), get(r.mrr, 50),
                  get(r.ndcg, 10), get(r.ndcg, 50));
    out << buf;
  }
  return out.str();
}

bool in_validation_split(std::string_view dialogue_id, double fraction) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : dialogue_id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return static_cast<double>(h % 10000) < fraction * 10000.0;
}

double train_recommender_epoch(RecModel& model, std::span<const RecSample> samples,
                               const RecTrainConfig& config, Rng& rng) {
  if (samples.empty()) return 0.0;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
  double total = 0.0;
  std::size_t batches = 0;
  std::vector<RecSample> chunk;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    chunk.clear();
    for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
      chunk.push_back(samples[order[k]]);
    }
    Graph g;
    Expr loss = rec_loss(g, model, chunk);
    total += loss.scalar();
    ++batches;
    nn::optimizer_step(model.params(), g.backward(loss), config.optimizer);
  }
  return total / static_cast<double>(batches);
}

SelectionScore selection_score(const RecScorer& scorer, std::span<const RecSample> valid,
                               std::size_t k) {
  std::vector<std::size_t> ks = {10, 50};
  if (k != 10 && k != 50) ks.push_back(k);
  const MetricReport m = evaluate(scorer, valid, ks);
  return {m.recall.at(k), m.mrr.at(k), m.recall.at(10), m.recall.at(50)};
}

RecTrainReport pretrain_recommender(RecModel& model, std::span<const RecSample> train,
                                    std::span<const RecSample> valid,
                                    const RecTrainConfig& config) {
  RecTrainReport report;
  Rng rng(config.seed);
  nn::ParamStore best = model.params();
  SelectionScore best_score;
  if (!valid.empty()) {
    best_score = selection_score(make_scorer(model), valid, config.select_k);
    report.valid_recall.push_back(best_score.recall);
  }
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    report.train_loss.push_back(train_recommender_epoch(model, train, config, rng));
    if (valid.empty()) continue;
    const SelectionScore score = selection_score(make_scorer(model), valid, config.select_k);
    report.valid_recall.push_back(score.recall);
    if (score.improves_on(best_score)) {
      best_score = score;
      best = model.params();
      report.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  if (!valid.empty()) {
    model.params() = best;
  } else {
    report.best_epoch = report.train_loss.size();
  }
  return report;
}

}  // namespace cfcrs
