#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfcrs/embeddings.hpp"
#include "cfcrs/flm.hpp"
#include "cfcrs/realization.hpp"
#include "cfcrs/recommender.hpp"
#include "cfcrs/schema.hpp"

namespace cfcrs {

struct SimulatorOptions {
  double temperature = 1.0;
  // Restrict decoding to hop-connected flows (otherwise type classes only).
  bool path_constrained = true;
  double chit_chat_rate = 0.0;
};

// Frozen dialogue simulator: schema classifier, flow model and template
// realization, with prompts built from a fixed preference encoder.
class Simulator {
 public:
  struct Rollout {
    std::size_t schema = 0;  // catalog index
    ConversationFlow flow;
  };

  Simulator(std::shared_ptr<const FlowLM> flm, PreferenceEncoder prompts,
            nn::ParamStore classifier, SchemaCatalog catalog,
            std::shared_ptr<const PathIndex> paths, std::shared_ptr<const TemplateBank> bank,
            const SimulatorOptions& options = {});

  const FlowLM& flm() const { return *flm_; }
  const PreferenceEncoder& prompts() const { return prompts_; }
  const SchemaCatalog& catalog() const { return catalog_; }
  const TemplateBank& bank() const { return *bank_; }
  const SimulatorOptions& options() const { return options_; }
  const SchemaPlan* plan(std::size_t schema) const;

  // Most probable catalog schema that admits at least one valid flow.
  // Throws AllSchemasUnreachable.
  std::size_t choose_schema(const nn::Tensor& e_u, const nn::Tensor& e_v) const;
  Rollout rollout(const nn::Tensor& e_u, const nn::Tensor& e_v, Rng& rng) const;
  Rollout rollout(const nn::Tensor& e_u, const nn::Tensor& e_v, std::size_t schema,
                  Rng& rng) const;
  // log pi of the rollout's flow under the same decoding rule.
  nn::Expr log_prob(nn::Graph& g, nn::Expr e_u, nn::Expr e_v, const Rollout& r) const;
  RealizedDialogue realize(const Rollout& r, const std::string& dialogue_id, Rng& rng) const;

 private:
  std::shared_ptr<const FlowLM> flm_;
  PreferenceEncoder prompts_;
  nn::ParamStore classifier_;
  SchemaCatalog catalog_;
  std::shared_ptr<const PathIndex> paths_;
  std::vector<SchemaPlan> plans_;
  std::shared_ptr<const TemplateBank> bank_;
  SimulatorOptions options_;
};

// Entities mentioned by each side of one real dialogue.
struct UserPair {
  std::string dialogue_id;
  std::vector<EntityId> seeker;
  std::vector<EntityId> recommender;
};

std::vector<UserPair> user_pairs(std::span<const Dialogue> dialogues, const KnowledgeGraph& kg);

// A disturbance added to one row of an entity matrix.
struct EntityEdit {
  std::size_t position = 0;
  nn::Tensor delta;  // 1 x dim
};

// Rows named by the edits get their delta added. Throws PositionOutOfRange.
nn::Tensor apply_edit(const nn::Tensor& entities, std::span<const EntityEdit> edits);

// Preference vector of `entities` with `delta` added to row `position`;
// the zero vector for an empty list.
nn::Expr edited_preference(nn::Graph& g, const PreferenceEncoder& encoder,
                           std::span<const EntityId> entities,
                           std::optional<std::size_t> position, nn::Expr delta);
nn::Tensor edited_preference(const PreferenceEncoder& encoder, std::span<const EntityId> entities,
                             std::optional<std::size_t> position, const nn::Tensor& delta);

// min(k, n) distinct positions of 0..n-1, uniformly without replacement.
std::vector<std::size_t> select_edit_targets(std::size_t n, std::size_t k, Rng& rng);

// One counterfactual augmentation: a user pair with one edited entity per
// side (none when that side has no entities).
struct Augmentation {
  std::size_t pair = 0;
  std::optional<std::size_t> position_u;
  std::optional<std::size_t> position_v;
  nn::Tensor delta_u;  // 1 x dim
  nn::Tensor delta_v;
  double baseline = 0.0;
};

struct ReinforceOptions {
  double alpha = 1e-4;
  double lambda = 0.0;
  std::size_t rollouts = 4;
  bool use_baseline = false;
  double baseline_momentum = 0.9;
};

struct ReinforceStats {
  double mean_reward = 0.0;
  std::vector<double> rewards;
  // Gradient estimate (1/T) sum_t (L_t - b) d log pi(C_t) / d delta.
  nn::Tensor grad_u;
  nn::Tensor grad_v;
};

// Reward of a rollout, i.e. the recommender loss on its dialogue.
using RewardFn = std::function<double(const Simulator::Rollout&)>;

// delta <- delta (1 - 2 alpha lambda) + alpha * grad, i.e. gradient ascent
// on the expected reward with an L2 penalty lambda |delta|^2. Throws
// NonFiniteUpdate.
ReinforceStats reinforce_step(Augmentation& aug, const UserPair& pair, const Simulator& sim,
                              const RewardFn& reward, const ReinforceOptions& options,
                              Rng& rng);

struct CurriculumSchedule {
  double rho = 0.1;
  double delta = 0.9;
  std::size_t courses = 20;
};

// rho * delta^k.
double curriculum_lambda(const CurriculumSchedule& schedule, std::size_t k);

struct CourseLog {
  std::size_t course = 0;
  double lambda = 0.0;
  double mean_reward = 0.0;
  double edit_norm = 0.0;
  double val_recall10 = 0.0;
  double val_recall50 = 0.0;
  std::size_t simulated_dialogues = 0;
  std::size_t simulated_samples = 0;
  std::size_t zero_reward_dialogues = 0;

  std::string to_json() const;
};

// Produces the simulated dialogues of one course from a frozen recommender.
class Augmenter {
 public:
  virtual ~Augmenter() = default;
  virtual std::vector<RealizedDialogue> augment(std::size_t course, double lambda,
                                                const RecScorer& recommender, Rng& rng,
                                                CourseLog& log) = 0;
  // Hash of the augmenter's trainable state.
  virtual std::uint64_t state_checksum() const { return 0; }
};

struct CounterfactualConfig {
  double alpha = 1e-4;
  std::size_t rollouts = 4;          // T
  std::size_t reinforce_steps = 1;   // per augmentation and course
  std::size_t edits_per_user = 1;    // k
  std::size_t pairs_per_course = 64;
  std::size_t dialogues_per_edit = 1;
  bool use_baseline = false;
};

// Learns per-augmentation edit vectors by REINFORCE against the frozen
// recommender, then simulates dialogues from the edited preferences.
// Edits restart from zero every course.
class CounterfactualAugmenter : public Augmenter {
 public:
  CounterfactualAugmenter(std::shared_ptr<const Simulator> sim, std::vector<UserPair> pairs,
                          TypeId item_type, const CounterfactualConfig& config);

  std::vector<RealizedDialogue> augment(std::size_t course, double lambda,
                                        const RecScorer& recommender, Rng& rng,
                                        CourseLog& log) override;
  std::uint64_t state_checksum() const override;
  const std::vector<Augmentation>& edits() const { return edits_; }

 private:
  std::shared_ptr<const Simulator> sim_;
  std::vector<UserPair> pairs_;
  TypeId item_type_;
  CounterfactualConfig config_;
  std::vector<Augmentation> edits_;
  std::size_t next_id_ = 0;
};

enum class EdaOp { kReplace, kInsert, kSwap, kDelete };

struct EdaOpMix {
  double replace = 1.0;
  double insert = 1.0;
  double swap = 1.0;
  double remove = 1.0;
};

struct EdaResult {
  ConversationFlow flow;
  FlowSchema schema;
  EdaOp op = EdaOp::kReplace;
};

// Applies one random edit; flow and schema stay aligned. An empty flow is
// returned unchanged.
EdaResult eda_augment(const ConversationFlow& flow, const FlowSchema& schema,
                      const KnowledgeGraph& kg, Rng& rng, const EdaOpMix& mix = {});
EdaResult eda_apply(const ConversationFlow& flow, const FlowSchema& schema,
                    const KnowledgeGraph& kg, EdaOp op, Rng& rng);

// Random edits of real flows, realized with the template bank.
class EdaAugmenter : public Augmenter {
 public:
  EdaAugmenter(std::vector<FlowAndSchema> flows, std::shared_ptr<const TemplateBank> bank,
               std::shared_ptr<const KnowledgeGraph> kg, std::size_t dialogues_per_course,
               const EdaOpMix& mix = {});

  std::vector<RealizedDialogue> augment(std::size_t course, double lambda,
                                        const RecScorer& recommender, Rng& rng,
                                        CourseLog& log) override;

 private:
  std::vector<FlowAndSchema> flows_;
  std::shared_ptr<const TemplateBank> bank_;
  std::shared_ptr<const KnowledgeGraph> kg_;
  std::size_t per_course_;
  EdaOpMix mix_;
  std::size_t next_id_ = 0;
};

struct CourseConfig {
  CurriculumSchedule curriculum;
  double mix_ratio = 1.0;  // simulated : real samples per course
  std::size_t patience = 3;
  RecTrainConfig rec;
  std::uint64_t seed = 0;
};

struct CourseResult {
  std::vector<CourseLog> log;
  std::vector<Dialogue> simulated;
  std::size_t best_course = 0;  // 0: the starting parameters were best
};

// Alternates, for k = 1..N: augmentation against the frozen recommender,
// then one recommender epoch on the real samples plus mix_ratio * |real|
// simulated samples. Early-stops on the validation selection score and restores the
// best parameters. Parameter checksums assert that each phase leaves the
// other phase's parameters untouched. A null augmenter or mix_ratio 0
// trains on real samples only.
CourseResult train_cfcrs(RecModel& model, std::span<const RecSample> real,
                         std::span<const RecSample> valid, Augmenter* augmenter,
                         const CourseConfig& config,
                         const std::function<void(const CourseLog&)>& on_course = {});

}  // namespace cfcrs
