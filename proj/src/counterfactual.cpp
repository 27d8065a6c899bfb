#include "cfcrs/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "cfcrs/error.hpp"

namespace cfcrs {

using nn::Expr;
using nn::Graph;
using nn::Tensor;

Simulator::Simulator(std::shared_ptr<const FlowLM> flm, PreferenceEncoder prompts,
                     nn::ParamStore classifier, SchemaCatalog catalog,
                     std::shared_ptr<const PathIndex> paths,
                     std::shared_ptr<const TemplateBank> bank, const SimulatorOptions& options)
    : prompts_(std::move(prompts)),
      classifier_(std::move(classifier)),
      catalog_(std::move(catalog)),
      paths_(std::move(paths)),
      bank_(std::move(bank)),
      options_(options) {
  if (catalog_.empty()) throw Error(ErrorCode::kEmptyCatalog, "simulator needs schemas");
  auto frozen = std::make_shared<FlowLM>(flm->config(), flm->graph_ptr(), flm->params());
  frozen->params().set_frozen(true);
  flm_ = std::move(frozen);
  classifier_.set_frozen(true);
  if (options_.path_constrained) {
    for (const FlowSchema& s : catalog_.schemas) plans_.push_back(paths_->plan(s));
  }
}

const SchemaPlan* Simulator::plan(std::size_t schema) const {
  return options_.path_constrained ? &plans_[schema] : nullptr;
}

std::size_t Simulator::choose_schema(const Tensor& e_u, const Tensor& e_v) const {
  const SchemaPrediction p = predict_schema(e_u, e_v, classifier_, catalog_);
  const KnowledgeGraph& kg = flm_->graph();
  for (std::size_t i : p.ranking) {
    if (options_.path_constrained) {
      if (plans_[i].reachable()) return i;
      continue;
    }
    const auto& types = catalog_.schemas[i].types;
    if (std::all_of(types.begin(), types.end(),
                    [&](TypeId t) { return !kg.entities_of_type(t).empty(); })) {
      return i;
    }
  }
  throw Error(ErrorCode::kAllSchemasUnreachable, "no catalog schema admits a flow");
}

Simulator::Rollout Simulator::rollout(const Tensor& e_u, const Tensor& e_v, Rng& rng) const {
  return rollout(e_u, e_v, choose_schema(e_u, e_v), rng);
}

Simulator::Rollout Simulator::rollout(const Tensor& e_u, const Tensor& e_v, std::size_t schema,
                                      Rng& rng) const {
  Rollout r;
  r.schema = schema;
  r.flow = generate_flow(*flm_, e_u, e_v, catalog_.schemas[schema], rng,
                         GenerateOptions{.temperature = options_.temperature}, plan(schema));
  return r;
}

Expr Simulator::log_prob(Graph& g, Expr e_u, Expr e_v, const Rollout& r) const {
  return flow_log_prob(g, *flm_, e_u, e_v, catalog_.schemas[r.schema], r.flow.entities,
                       plan(r.schema), options_.temperature);
}

RealizedDialogue Simulator::realize(const Rollout& r, const std::string& dialogue_id,
                                    Rng& rng) const {
  return cfcrs::realize(r.flow, catalog_.schemas[r.schema], *bank_, flm_->graph(), rng,
                        RealizeOptions{dialogue_id, options_.chit_chat_rate});
}

std::vector<UserPair> user_pairs(std::span<const Dialogue> dialogues, const KnowledgeGraph& kg) {
  std::vector<UserPair> out;
  for (const Dialogue& d : dialogues) {
    UserPair p;
    p.dialogue_id = d.dialogue_id;
    for (const Turn& t : d.turns) {
      auto& side = t.speaker == Speaker::kSeeker ? p.seeker : p.recommender;
      for (const Mention& m : t.mentions) {
        const EntityId e = kg.entity_id(m.entity);
        if (std::find(side.begin(), side.end(), e) == side.end()) side.push_back(e);
      }
    }
    if (!p.seeker.empty() || !p.recommender.empty()) out.push_back(std::move(p));
  }
  return out;
}

Tensor apply_edit(const Tensor& entities, std::span<const EntityEdit> edits) {
  Tensor out = entities;
  const std::size_t d = entities.cols();
  for (const EntityEdit& e : edits) {
    if (e.position >= entities.rows()) {
      throw Error(ErrorCode::kPositionOutOfRange, std::to_string(e.position));
    }
    if (e.delta.size() != d) throw Error(ErrorCode::kShapeMismatch, "edit width");
    for (std::size_t k = 0; k < d; ++k) out.at(e.position, k) += e.delta[k];
  }
  return out;
}

Expr edited_preference(Graph& g, const PreferenceEncoder& encoder,
                       std::span<const EntityId> entities, std::optional<std::size_t> position,
                       Expr delta) {
  if (entities.empty()) return g.constant(Tensor::matrix(1, encoder.dim()));
  Expr rows = g.constant(encoder.embeddings.rows(entities));
  if (position) {
    if (*position >= entities.size()) {
      throw Error(ErrorCode::kPositionOutOfRange, std::to_string(*position));
    }
    rows = nn::add_to_row(rows, *position, delta);
  }
  return encode_user(rows, g.constant(encoder.w), g.constant(encoder.b));
}

Tensor edited_preference(const PreferenceEncoder& encoder, std::span<const EntityId> entities,
                         std::optional<std::size_t> position, const Tensor& delta) {
  if (entities.empty()) return Tensor::matrix(1, encoder.dim());
  Tensor rows = encoder.embeddings.rows(entities);
  if (position) {
    const EntityEdit edit{*position, delta};
    rows = apply_edit(rows, std::span<const EntityEdit>(&edit, 1));
  }
  return encode_user(rows, encoder.w, encoder.b).e_u;
}

std::vector<std::size_t> select_edit_targets(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  const std::size_t m = std::min(n, k);
  for (std::size_t i = 0; i < m; ++i) std::swap(pool[i], pool[i + uniform_index(rng, n - i)]);
  pool.resize(m);
  return pool;
}

ReinforceStats reinforce_step(Augmentation& aug, const UserPair& pair, const Simulator& sim,
                              const RewardFn& reward, const ReinforceOptions& options,
                              Rng& rng) {
  const PreferenceEncoder& enc = sim.prompts();
  const Tensor e_u = edited_preference(enc, pair.seeker, aug.position_u, aug.delta_u);
  const Tensor e_v = edited_preference(enc, pair.recommender, aug.position_v, aug.delta_v);
  const std::size_t schema = sim.choose_schema(e_u, e_v);
  const double base = options.use_baseline ? aug.baseline : 0.0;
  ReinforceStats stats;
  stats.grad_u = Tensor::matrix(1, aug.delta_u.size());
  stats.grad_v = Tensor::matrix(1, aug.delta_v.size());
  const std::size_t t_count = std::max<std::size_t>(1, options.rollouts);
  for (std::size_t t = 0; t < t_count; ++t) {
    const Simulator::Rollout r = sim.rollout(e_u, e_v, schema, rng);
    const double l = reward(r);
    stats.rewards.push_back(l);
    const double weight = l - base;
    if (weight == 0.0) continue;
    Graph g;
    Expr du = g.input(aug.delta_u, "delta.u");
    Expr dv = g.input(aug.delta_v, "delta.v");
    Expr pu = edited_preference(g, enc, pair.seeker, aug.position_u, du);
    Expr pv = edited_preference(g, enc, pair.recommender, aug.position_v, dv);
    const nn::Gradients grads = g.backward(sim.log_prob(g, pu, pv, r));
    for (auto [name, target] : {std::pair{"delta.u", &stats.grad_u}, {"delta.v", &stats.grad_v}}) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      for (std::size_t k = 0; k < target->size(); ++k) (*target)[k] += weight * it->second[k];
    }
  }
  const double inv_t = 1.0 / static_cast<double>(t_count);
  for (double& v : stats.grad_u.values()) v *= inv_t;
  for (double& v : stats.grad_v.values()) v *= inv_t;
  stats.mean_reward =
      std::accumulate(stats.rewards.begin(), stats.rewards.end(), 0.0) * inv_t;

  const double decay = 1.0 - 2.0 * options.alpha * options.lambda;
  Tensor next_u = aug.delta_u;
  Tensor next_v = aug.delta_v;
  for (std::size_t k = 0; k < next_u.size(); ++k) {
    next_u[k] = next_u[k] * decay + options.alpha * stats.grad_u[k];
  }
  for (std::size_t k = 0; k < next_v.size(); ++k) {
    next_v[k] = next_v[k] * decay + options.alpha * stats.grad_v[k];
  }
  if (!next_u.all_finite() || !next_v.all_finite()) {
    throw Error(ErrorCode::kNonFiniteUpdate, "edit vector of pair " + pair.dialogue_id);
  }
  aug.delta_u = std::move(next_u);
  aug.delta_v = std::move(next_v);
  if (options.use_baseline) {
    aug.baseline = options.baseline_momentum * aug.baseline +
                   (1.0 - options.baseline_momentum) * stats.mean_reward;
  }
  return stats;
}

double curriculum_lambda(const CurriculumSchedule& schedule, std::size_t k) {
  return schedule.rho * std::pow(schedule.delta, static_cast<double>(k));
}

std::string CourseLog::to_json() const {
  nlohmann::ordered_json j;
  j["course"] = course;
  j["lambda"] = lambda;
  j["mean_reward"] = mean_reward;
  j["edit_norm"] = edit_norm;
  j["val_recall@10"] = val_recall10;
  j["val_recall@50"] = val_recall50;
  j["simulated_dialogues"] = simulated_dialogues;
  j["simulated_samples"] = simulated_samples;
  j["zero_reward_dialogues"] = zero_reward_dialogues;
  return j.dump();
}

CounterfactualAugmenter::CounterfactualAugmenter(std::shared_ptr<const Simulator> sim,
                                                 std::vector<UserPair> pairs, TypeId item_type,
                                                 const CounterfactualConfig& config)
    : sim_(std::move(sim)), pairs_(std::move(pairs)), item_type_(item_type), config_(config) {}

std::vector<RealizedDialogue> CounterfactualAugmenter::augment(std::size_t course, double lambda,
                                                               const RecScorer& recommender,
                                                               Rng& rng, CourseLog& log) {
  (void)course;
  edits_.clear();
  std::vector<RealizedDialogue> out;
  if (pairs_.empty()) return out;
  const std::size_t d = sim_->prompts().dim();
  for (std::size_t p = 0; p < config_.pairs_per_course; ++p) {
    const std::size_t pi = uniform_index(rng, pairs_.size());
    const auto tu = select_edit_targets(pairs_[pi].seeker.size(), config_.edits_per_user, rng);
    const auto tv =
        select_edit_targets(pairs_[pi].recommender.size(), config_.edits_per_user, rng);
    for (std::size_t i = 0; i < std::max(tu.size(), tv.size()); ++i) {
      Augmentation a;
      a.pair = pi;
      if (i < tu.size()) a.position_u = tu[i];
      if (i < tv.size()) a.position_v = tv[i];
      a.delta_u = Tensor::matrix(1, d);
      a.delta_v = Tensor::matrix(1, d);
      edits_.push_back(std::move(a));
    }
  }

  const KnowledgeGraph& kg = sim_->flm().graph();
  std::size_t zero_reward = 0;
  const RewardFn reward = [&](const Simulator::Rollout& r) {
    const RealizedDialogue dialogue = sim_->realize(r, "rollout", rng);
    const auto samples = to_rec_samples(dialogue, kg, item_type_);
    if (samples.empty()) {
      ++zero_reward;
      return 0.0;
    }
    return rec_loss(recommender, samples);
  };
  const ReinforceOptions options{.alpha = config_.alpha,
                                 .lambda = lambda,
                                 .rollouts = config_.rollouts,
                                 .use_baseline = config_.use_baseline};
  double reward_sum = 0.0;
  std::size_t reward_count = 0;
  for (Augmentation& a : edits_) {
    for (std::size_t s = 0; s < config_.reinforce_steps; ++s) {
      const ReinforceStats st = reinforce_step(a, pairs_[a.pair], *sim_, reward, options, rng);
      reward_sum += std::accumulate(st.rewards.begin(), st.rewards.end(), 0.0);
      reward_count += st.rewards.size();
    }
  }

  double norm_sum = 0.0;
  for (const Augmentation& a : edits_) {
    const UserPair& pair = pairs_[a.pair];
    norm_sum += std::sqrt(a.delta_u.squared_norm() + a.delta_v.squared_norm());
    const Tensor e_u = edited_preference(sim_->prompts(), pair.seeker, a.position_u, a.delta_u);
    const Tensor e_v =
        edited_preference(sim_->prompts(), pair.recommender, a.position_v, a.delta_v);
    for (std::size_t k = 0; k < config_.dialogues_per_edit; ++k) {
      const Simulator::Rollout r = sim_->rollout(e_u, e_v, rng);
      out.push_back(sim_->realize(r, "sim-" + std::to_string(next_id_++), rng));
    }
  }
  log.mean_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
  log.edit_norm = edits_.empty() ? 0.0 : norm_sum / static_cast<double>(edits_.size());
  log.zero_reward_dialogues = zero_reward;
  return out;
}

std::uint64_t CounterfactualAugmenter::state_checksum() const {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const Tensor& t) {
    for (double v : t.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffu;
        h *= 1099511628211ull;
      }
    }
  };
  for (const Augmentation& a : edits_) {
    mix(a.delta_u);
    mix(a.delta_v);
  }
  return h;
}

CourseResult train_cfcrs(RecModel& model, std::span<const RecSample> real,
                         std::span<const RecSample> valid, Augmenter* augmenter,
                         const CourseConfig& config,
                         const std::function<void(const CourseLog&)>& on_course) {
  CourseResult result;
  Rng rng(config.seed);
  nn::ParamStore best = model.params();
  SelectionScore best_score;
  if (!valid.empty()) best_score = selection_score(make_scorer(model), valid, config.rec.select_k);
  std::size_t stale = 0;
  const bool augmenting = augmenter != nullptr && config.mix_ratio > 0.0;
  for (std::size_t k = 1; k <= config.curriculum.courses; ++k) {
    CourseLog log;
    log.course = k;
    log.lambda = curriculum_lambda(config.curriculum, k);
    std::vector<RecSample> train(real.begin(), real.end());
    if (augmenting) {
      const std::uint64_t before = model.params().checksum();
      const RecScorer frozen = make_scorer(model);
      std::vector<RealizedDialogue> dialogues =
          augmenter->augment(k, log.lambda, frozen, rng, log);
      if (model.params().checksum() != before) {
        throw std::logic_error("augmentation phase modified the recommender");
      }
      std::vector<RecSample> simulated;
      for (RealizedDialogue& d : dialogues) {
        auto s = to_rec_samples(d, model.graph(), model.item_type());
        simulated.insert(simulated.end(), s.begin(), s.end());
        result.simulated.push_back(std::move(d.dialogue));
      }
      const auto wanted = static_cast<std::size_t>(
          std::llround(config.mix_ratio * static_cast<double>(real.size())));
      if (simulated.size() > wanted) {
        std::shuffle(simulated.begin(), simulated.end(), rng);
        simulated.resize(wanted);
      }
      log.simulated_dialogues = dialogues.size();
      log.simulated_samples = simulated.size();
      train.insert(train.end(), simulated.begin(), simulated.end());
    }
    const std::uint64_t edits_before = augmenter ? augmenter->state_checksum() : 0;
    train_recommender_epoch(model, train, config.rec, rng);
    if (augmenter && augmenter->state_checksum() != edits_before) {
      throw std::logic_error("recommender phase modified the edit vectors");
    }
    SelectionScore score;
    if (!valid.empty()) score = selection_score(make_scorer(model), valid, config.rec.select_k);
    log.val_recall10 = score.recall10;
    log.val_recall50 = score.recall50;
    result.log.push_back(log);
    if (on_course) on_course(log);
    if (valid.empty()) continue;
    if (score.improves_on(best_score)) {
      best_score = score;
      best = model.params();
      result.best_course = k;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  if (!valid.empty()) {
    model.params() = best;
  } else {
    result.best_course = result.log.size();
  }
  return result;
}

}  // namespace cfcrs
