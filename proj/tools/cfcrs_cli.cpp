#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfcrs/config.hpp"
#include "cfcrs/error.hpp"
#include "cfcrs/nn/checkpoint.hpp"
#include "cfcrs/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cfcrs;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Tracks every file a command writes so the manifest lists them all.
class Output {
 public:
  explicit Output(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  const fs::path& dir() const { return dir_; }

  void text(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary);
    out << content;
    if (!out) throw Error(ErrorCode::kMissingArtifact, "cannot write " + (dir_ / name).string());
    files_.push_back(name);
  }

  void checkpoint(const std::string& name, const nn::ParamStore& store, nn::DType dtype) {
    nn::save_checkpoint(store, dir_ / name, dtype);
    files_.push_back(name);
  }

  void dialogues(const std::string& name, std::span<const Dialogue> ds) {
    std::ostringstream s;
    write_dialogues(s, ds);
    text(name, s.str());
  }

  void write_manifest(const std::string& command) const {
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const std::string& name : files_) {
      const std::string bytes = read_file(dir_ / name);
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
      files.push_back({{"file", name}, {"bytes", bytes.size()}, {"fnv1a64", hex}});
    }
    nlohmann::ordered_json m = {{"command", command}, {"files", files}};
    std::ofstream(dir_ / "manifest.json") << m.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

nn::DType dtype_of(const RunConfig& c) {
  return c.precision == "f32" ? nn::DType::kF32 : nn::DType::kF64;
}

std::string jsonl(std::span<const CourseLog> log) {
  std::string s;
  for (const CourseLog& c : log) s += c.to_json() + "\n";
  return s;
}

void print_table(const std::string& name, const MetricReport& r) {
  const std::vector<std::pair<std::string, MetricReport>> rows = {{name, r}};
  std::cout << format_table(rows);
}

void log_stage(const std::string& msg) { std::cerr << "[cfcrs] " << msg << '\n'; }

std::function<void(const CourseLog&)> course_printer() {
  return [](const CourseLog& c) {
    std::cerr << "[cfcrs] course " << c.course << " lambda=" << c.lambda
              << " reward=" << c.mean_reward << " val_recall@50=" << c.val_recall50 << '\n';
  };
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string checkpoint;
  std::size_t count = 10;
  std::size_t world_dialogues = 500;
  std::size_t world_test = 200;
};

RunConfig resolve_config(const Options& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw Error(ErrorCode::kConfigError, "cannot open config " + o.config_path);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfigError, std::string("config: ") + e.what());
    }
  }
  if (!doc.contains("workers")) doc["workers"] = default_workers();
  if (!o.out_dir.empty()) doc["paths"]["output_dir"] = o.out_dir;
  apply_overrides(doc, o.overrides);
  RunConfig c = config_from_json(doc);
  c.validate();
  return c;
}

void cmd_ingest(const RunConfig& c, Output& out) {
  const Dataset data = load_dataset(c);
  const SampleSets samples = rec_samples(data);
  const auto hkg = build_hkg(data);
  nlohmann::ordered_json j = {
      {"entities", data.kg->num_entities()},
      {"types", data.kg->num_types()},
      {"relations", data.kg->num_relations()},
      {"triples", data.kg->triples().size()},
      {"items", data.kg->entities_of_type(data.item_type).size()},
      {"users", hkg->num_users()},
      {"dialogues", {{"train", data.train.size()}, {"valid", data.valid.size()},
                     {"test", data.test.size()}}},
      {"rec_samples", {{"train", samples.train.size()}, {"valid", samples.valid.size()},
                       {"test", samples.test.size()}}}};
  out.text("ingest.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
}

void cmd_mine(const RunConfig& c, Output& out) {
  const Dataset data = load_dataset(c);
  const SchemaCatalog catalog = mine_stage(data, c);
  out.text("catalog.json", catalog_to_json(catalog, *data.kg) + "\n");
  std::cout << catalog.size() << " schemas\n";
}

void cmd_pretrain_rec(const RunConfig& c, Output& out) {
  const Dataset data = load_dataset(c);
  const SampleSets samples = rec_samples(data);
  RecTrainReport report;
  auto model = pretrain_rec_stage(data, build_hkg(data), samples, c, &report);
  out.checkpoint("rec.ckpt", model->params(), dtype_of(c));
  std::string log;
  for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
    nlohmann::ordered_json j = {{"epoch", e + 1}, {"train_loss", report.train_loss[e]}};
    if (e + 1 < report.valid_recall.size()) {
      j["val_recall@" + std::to_string(c.recommender.select_k)] = report.valid_recall[e + 1];
    }
    log += j.dump() + "\n";
  }
  out.text("rec_log.jsonl", log);
  if (!samples.test.empty()) {
    const MetricReport m = evaluate(make_scorer(*model), samples.test);
    out.text("metrics.json", m.to_json() + "\n");
    print_table("pretrained", m);
  }
}

void cmd_pretrain_flm(const RunConfig& c, Output& out) {
  const Dataset data = load_dataset(c);
  const SampleSets samples = rec_samples(data);
  log_stage("pretraining recommender, classifier and flow model");
  const PretrainedSystem s = pretrain_system(data, samples, c);
  out.checkpoint("rec.ckpt", s.recommender->params(), dtype_of(c));
  out.text("catalog.json", catalog_to_json(s.catalog, *data.kg) + "\n");
  out.checkpoint("classifier.ckpt", s.classifier, dtype_of(c));
  out.checkpoint("flm.ckpt", s.flm->params(), dtype_of(c));
  std::string log;
  for (std::size_t e = 0; e < s.flm_report.epoch_loss.size(); ++e) {
    log += nlohmann::ordered_json({{"epoch", e + 1}, {"nll", s.flm_report.epoch_loss[e]}}).dump() +
           "\n";
  }
  out.text("flm_log.jsonl", log);
}

void run_training(const RunConfig& c, Output& out, Variant variant) {
  const Dataset data = load_dataset(c);
  const SampleSets samples = rec_samples(data);
  const bool augment = c.curriculum.courses > 0;
  VariantResult r;
  if (!augment) {
    // Baseline only: no simulator is needed.
    RecTrainReport report;
    r.model = pretrain_rec_stage(data, build_hkg(data), samples, c, &report);
    if (!samples.test.empty()) r.test = evaluate(make_scorer(*r.model), samples.test);
  } else {
    log_stage("pretraining");
    const PretrainedSystem s = pretrain_system(data, samples, c);
    log_stage(std::string("training with ") + std::string(to_string(variant)) + " augmentation");
    r = run_variant(s, data, samples, variant, c, course_printer());
  }
  const std::string name = !augment ? "baseline" : std::string(to_string(variant));
  out.checkpoint(name + ".ckpt", r.model->params(), dtype_of(c));
  if (augment) {
    out.text(name == "cfcrs" ? "train_log.jsonl" : name + "_log.jsonl", jsonl(r.courses.log));
    out.dialogues(name == "cfcrs" ? "simulated.jsonl" : name + "_simulated.jsonl",
                  r.courses.simulated);
  }
  if (!samples.test.empty()) {
    out.text("metrics.json", r.test.to_json() + "\n");
    print_table(name, r.test);
  }
}

void cmd_simulate(const RunConfig& c, Output& out, std::size_t count) {
  const Dataset data = load_dataset(c);
  const SampleSets samples = rec_samples(data);
  const PretrainedSystem s = pretrain_system(data, samples, c);
  const auto sim = make_simulator(s, c);
  const std::vector<UserPair> pairs = user_pairs(data.train, *data.kg);
  if (pairs.empty()) throw Error(ErrorCode::kEmptyInteractionList, "no user pairs");
  Rng rng(derive_seed(c.seed, 20));
  std::vector<Dialogue> dialogues;
  std::string flows;
  for (std::size_t i = 0; i < count; ++i) {
    const UserPair& p = pairs[i % pairs.size()];
    const nn::Tensor e_u = s.prompts.encode(p.seeker);
    const nn::Tensor e_v = s.prompts.encode(p.recommender);
    const Simulator::Rollout roll = sim->rollout(e_u, e_v, rng);
    const std::string id = "sim-" + std::to_string(i);
    RealizedDialogue d = sim->realize(roll, id, rng);
    nlohmann::ordered_json j;
    j["dialogue_id"] = id;
    j["source"] = p.dialogue_id;
    j["schema"] = nlohmann::json::array();
    for (TypeId t : s.catalog.schemas[roll.schema].types) j["schema"].push_back(data.kg->type_name(t));
    j["flow"] = nlohmann::json::array();
    for (EntityId e : roll.flow.entities) j["flow"].push_back(data.kg->entity_name(e));
    flows += j.dump() + "\n";
    dialogues.push_back(std::move(d.dialogue));
  }
  out.text("flows.jsonl", flows);
  out.dialogues("simulated.jsonl", dialogues);
  std::cout << dialogues.size() << " dialogues\n";
}

void cmd_evaluate(const RunConfig& c, Output& out, const std::string& checkpoint) {
  const Dataset data = load_dataset(c);
  const SampleSets samples = rec_samples(data);
  if (samples.test.empty()) throw Error(ErrorCode::kEmptyTestSet, "no test samples");
  RecModel model(c.rec(), build_hkg(data), data.item_type, nn::load_checkpoint(checkpoint));
  const MetricReport m = evaluate(make_scorer(model), samples.test);
  out.text("metrics.json", m.to_json() + "\n");
  print_table(fs::path(checkpoint).stem().string(), m);
}

void cmd_sweep(const RunConfig& c, Output& out) {
  const Dataset data = load_dataset(c);
  const SampleSets samples = rec_samples(data);
  const PretrainedSystem s = pretrain_system(data, samples, c);
  std::string log;
  for (double rho : c.sweep.rho) {
    for (double delta : c.sweep.delta) {
      for (double mix : c.sweep.mix_ratio) {
        RunConfig run = c;
        run.curriculum.rho = rho;
        run.curriculum.delta = delta;
        run.mix_ratio = mix;
        log_stage("rho=" + std::to_string(rho) + " delta=" + std::to_string(delta) +
                  " mix=" + std::to_string(mix));
        const VariantResult r = run_variant(s, data, samples, Variant::kCounterfactual, run);
        nlohmann::ordered_json j = {{"rho", rho}, {"delta", delta}, {"mix_ratio", mix},
                                    {"best_course", r.courses.best_course}};
        if (!r.courses.log.empty()) j["val_recall@50"] = r.courses.log.back().val_recall50;
        if (!samples.test.empty()) j["test"] = nlohmann::json::parse(r.test.to_json());
        log += j.dump() + "\n";
      }
    }
  }
  out.text("sweep.jsonl", log);
}

void cmd_synth_world(const RunConfig& c, Output& out, const Options& o) {
  SyntheticWorldConfig wc;
  wc.dialogues = o.world_dialogues;
  wc.test_dialogues = o.world_test;
  wc.seed = c.seed;
  const SyntheticWorld w = make_synthetic_world(wc);
  out.text("kg.tsv", w.triples);
  out.text("types.tsv", w.type_map);
  out.dialogues("dialogues.jsonl", w.dialogues);
  out.dialogues("test.jsonl", w.test);
  RunConfig world = c;
  world.paths.kg = (out.dir() / "kg.tsv").string();
  world.paths.type_map = (out.dir() / "types.tsv").string();
  world.paths.dialogues = (out.dir() / "dialogues.jsonl").string();
  world.paths.test_dialogues = (out.dir() / "test.jsonl").string();
  out.text("config.json", to_json(world).dump(2) + "\n");
}

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::kConfig:
      return kExitConfig;
    case ErrorCategory::kData:
      return kExitData;
    case ErrorCategory::kNumeric:
      return kExitNumeric;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual data simulation for conversational recommendation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "JSON run configuration");
    sub->add_option("-s,--set", o.overrides, "Override a config field, e.g. curriculum.courses=5");
    sub->add_option("-o,--out", o.out_dir, "Output directory (paths.output_dir)");
    return sub;
  };
  common(app.add_subcommand("ingest", "Validate the inputs and summarise them"));
  common(app.add_subcommand("mine-schemas", "Mine the flow schema catalog"));
  common(app.add_subcommand("pretrain-rec", "Pre-train the recommender"));
  common(app.add_subcommand("pretrain-flm", "Pre-train recommender, schema classifier and flow model"));
  common(app.add_subcommand("train", "Curriculum training with counterfactual augmentation"));
  auto* simulate = common(app.add_subcommand("simulate", "Generate dialogues from the simulator"));
  simulate->add_option("-n,--count", o.count, "Number of dialogues");
  auto* eval = common(app.add_subcommand("evaluate", "Evaluate a recommender checkpoint on the test set"));
  eval->add_option("--checkpoint", o.checkpoint, "Recommender checkpoint")->required();
  common(app.add_subcommand("eda-baseline", "Curriculum training with EDA augmentation"));
  common(app.add_subcommand("sweep", "Grid over rho, delta and mix ratio"));
  auto* synth = common(app.add_subcommand("synth-world", "Write the synthetic benchmark world"));
  synth->add_option("--dialogues", o.world_dialogues, "Training dialogues");
  synth->add_option("--test-dialogues", o.world_test, "Test dialogues");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const RunConfig config = resolve_config(o);
    Output out(config.paths.output_dir);
    out.text("resolved_config.json", to_json(config).dump(2) + "\n");
    if (command == "ingest") {
      cmd_ingest(config, out);
    } else if (command == "mine-schemas") {
      cmd_mine(config, out);
    } else if (command == "pretrain-rec") {
      cmd_pretrain_rec(config, out);
    } else if (command == "pretrain-flm") {
      cmd_pretrain_flm(config, out);
    } else if (command == "train") {
      run_training(config, out, Variant::kCounterfactual);
    } else if (command == "eda-baseline") {
      run_training(config, out, Variant::kEda);
    } else if (command == "simulate") {
      cmd_simulate(config, out, o.count);
    } else if (command == "evaluate") {
      cmd_evaluate(config, out, o.checkpoint);
    } else if (command == "sweep") {
      cmd_sweep(config, out);
    } else if (command == "synth-world") {
      cmd_synth_world(config, out, o);
    }
    out.write_manifest(command);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
