#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "prismer/config_io.hpp"
#include "prismer/dataset.hpp"
#include "prismer/error.hpp"
#include "prismer/harness.hpp"
#include "prismer/inference.hpp"
#include "prismer/rng.hpp"
#include "prismer/training.hpp"

namespace fs = std::filesystem;
using namespace prismer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitFailedRun = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

 private:
  using Clock = std::chrono::steady_clock;
  Clock::time_point start_ = Clock::now();
};

// Wall-clock sidecar written next to every command's outputs.
class TimingLog {
 public:
  explicit TimingLog(std::string command) : command_(std::move(command)) {}
  void add(const std::string& phase, double seconds) { rows_.emplace_back(phase, seconds); }
  void write(const fs::path& dir) const {
    std::ofstream out(dir / "timing.csv");
    out << "command,phase,wall_seconds\n";
    for (const auto& [phase, s] : rows_) out << command_ << "," << phase << "," << s << "\n";
    if (!out) throw IoError("cannot write " + (dir / "timing.csv").string());
  }

 private:
  std::string command_;
  std::vector<std::pair<std::string, double>> rows_;
};

RunConfig load_config(const Globals& g) {
  auto config = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) {
    config.train.seed = *g.seed;
    config.data.seed = *g.seed;
  }
  return config;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required for this command");
  fs::create_directories(g.out);
  return g.out;
}

std::uint64_t model_seed(const RunConfig& config) { return derive_seed(config.train.seed, "model"); }

std::vector<QuestionKind> parse_question_kinds(const std::vector<std::string>& names) {
  std::vector<QuestionKind> out;
  for (const auto& n : names) out.push_back(parse_question_kind(n));
  return out;
}

TaskKind parse_task(const std::string& name) {
  if (name == "caption") return TaskKind::kCaptioning;
  if (name == "qa") return TaskKind::kQuestionAnswering;
  throw ConfigError("unknown task '" + name + "' (caption or qa)");
}

// Records either loaded from a built dataset or generated from the config.
std::vector<SceneRecord> obtain_records(const std::string& data_dir, const RunConfig& config) {
  if (!data_dir.empty()) return load_dataset(data_dir).records;
  auto spec = config.data;
  if (spec.experts.empty()) spec.experts = config.model.experts;
  return make_records(spec, ExpertPipeline::create(spec.pipeline_seed()));
}

std::vector<SceneRecord> records_for(const PrismerModel& model, const std::vector<SceneRecord>& records) {
  return select_experts(records, model.config().experts, {});
}

int cmd_gen_data(const Globals& g, std::optional<std::size_t> scenes, std::optional<int> difficulty,
                 const std::string& experts, std::optional<double> corruption) {
  auto config = load_config(g);
  auto spec = config.data;
  if (scenes) spec.scenes = *scenes;
  if (difficulty) spec.difficulty = *difficulty;
  if (!experts.empty()) spec.experts = parse_expert_list(experts);
  if (corruption) {
    spec.corruption.fraction = *corruption;
    if (spec.corruption.kinds.empty()) spec.corruption.kinds = spec.experts;
  }
  spec.validate();
  const auto out = require_out(g);
  TimingLog timing("gen-data");
  Stopwatch watch;
  build_dataset(spec, out);
  timing.add("build", watch.seconds());
  const auto loaded = load_dataset(out);
  std::cout << "scenes=" << spec.scenes << "\nfingerprint=" << dataset_fingerprint(loaded.records) << "\n";
  timing.write(out);
  return kExitOk;
}

int cmd_train(const Globals& g, const std::string& data_dir, const std::string& task,
              const std::vector<std::string>& questions, std::optional<std::size_t> steps) {
  auto config = load_config(g);
  if (steps) {
    config.train.total_steps = *steps;
    config.train.warmup_steps = std::min(config.train.warmup_steps, *steps);
  }
  config.train.validate();
  const auto out = require_out(g);
  TimingLog timing("train");
  Stopwatch watch;
  PrismerModel model(config.model, model_seed(config));
  const auto records = records_for(model, obtain_records(data_dir, config));
  const auto examples = make_examples(records, parse_task(task), parse_question_kinds(questions));
  timing.add("data", watch.seconds());

  Stopwatch train_watch;
  TrainResult result;
  int code = kExitOk;
  try {
    result = train_loop(model, examples, config.train);
  } catch (const NumericError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    code = kExitFailedRun;
  }
  timing.add("train", train_watch.seconds());
  write_trace(out / "trace.csv", result.trace);
  if (code == kExitOk) {
    save_checkpoint(out / "checkpoint", model);
    to_key_values(config).save(out / "run.cfg");
    if (!result.trace.empty()) std::cout << "final_loss=" << result.trace.back().loss << "\n";
    std::cout << "trainable_params=" << model.parameters().trainable_count()
              << "\ntotal_params=" << model.parameters().total_count() << "\n";
  }
  timing.write(out);
  return code;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& data_dir, const std::string& metric,
             const std::vector<std::string>& questions, std::size_t beam) {
  const auto config = load_config(g);
  Stopwatch watch;
  const auto model = load_checkpoint(checkpoint);
  const auto records = records_for(model, obtain_records(data_dir, config));
  double value = 0.0;
  switch (parse_metric(metric)) {
    case Metric::kQaAccuracy:
      value = qa_accuracy(model, records, parse_question_kinds(questions), config.train.seed);
      break;
    case Metric::kCaptionExactMatch:
      value = caption_exact_match(model, records, beam);
      break;
    case Metric::kFinalLoss:
      throw ConfigError("final-loss is a training metric; read it from trace.csv");
  }
  std::cout << metric << "=" << value << "\n";
  if (!g.out.empty()) {
    const auto out = require_out(g);
    std::ofstream(out / "metrics.csv") << "metric,value,records\n" << metric << "," << value << "," << records.size()
                                       << "\n";
    TimingLog timing("eval");
    timing.add("eval", watch.seconds());
    timing.write(out);
  }
  return kExitOk;
}

int cmd_decode(const Globals& g, const std::string& checkpoint, const std::string& data_dir, std::size_t scene,
               std::size_t beam, std::size_t max_len, const std::string& prompt,
               const std::vector<std::string>& candidates) {
  const auto config = load_config(g);
  const auto& vocab = Vocabulary::toy();
  Stopwatch watch;
  const auto model = load_checkpoint(checkpoint);
  const auto records = records_for(model, obtain_records(data_dir, config));
  if (scene >= records.size()) {
    throw RangeError("scene " + std::to_string(scene) + " outside dataset of " + std::to_string(records.size()));
  }
  const auto& record = records[scene];
  NoGradGuard no_grad;
  const auto z = model.encoder_forward(record.rgb, record.experts);
  const auto prompt_ids = vocab.encode(prompt);

  if (candidates.empty()) {
    const auto result = generate(model, z, prompt_ids, {beam, max_len});
    std::cout << vocab.decode(result.tokens) << "\n";
    nlohmann::json line = {{"text", vocab.decode(result.tokens)}, {"score", result.score},
                           {"truncated", result.truncated}};
    std::cout << line.dump() << "\n";
  } else {
    std::vector<std::vector<int>> encoded;
    for (const auto& c : candidates) encoded.push_back(vocab.encode(c));
    const auto ranked = rank_closed_ended(model, z, prompt_ids, encoded);
    std::cout << candidates[ranked.index] << "\n";
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      nlohmann::json line = {{"index", i},
                             {"candidate", candidates[i]},
                             {"score", ranked.scores[i]},
                             {"chosen", i == ranked.index}};
      std::cout << line.dump() << "\n";
    }
  }
  if (!g.out.empty()) {
    TimingLog timing("decode");
    timing.add("decode", watch.seconds());
    timing.write(require_out(g));
  }
  return kExitOk;
}

int cmd_ablate(const Globals& g, const std::string& plan_name, std::size_t seeds, std::optional<std::size_t> steps,
               std::optional<std::size_t> train_scenes, std::optional<std::size_t> eval_scenes,
               const std::string& metric, const std::vector<std::string>& questions) {
  const auto config = load_config(g);
  PlanSettings settings;
  settings.model = config.model;
  settings.train = config.train;
  if (steps) {
    settings.train.total_steps = *steps;
    settings.train.warmup_steps = std::min(settings.train.warmup_steps, *steps);
  }
  settings.difficulty = config.data.difficulty;
  settings.train_scenes = train_scenes.value_or(config.data.scenes);
  settings.eval_scenes = eval_scenes.value_or(std::max<std::size_t>(1, settings.train_scenes / 2));
  settings.metric = parse_metric(metric);
  if (!questions.empty()) settings.question_kinds = parse_question_kinds(questions);
  settings.seeds.clear();
  const auto base = g.seed.value_or(0);
  for (std::size_t i = 0; i < seeds; ++i) settings.seeds.push_back(base + i);
  const auto plan = make_plan(parse_plan_kind(plan_name), settings);
  plan.validate();

  const auto out = require_out(g);
  const auto result = run_plan(plan, [](const MetricsRow& row) {
    std::cerr << row.arm << " seed=" << row.seed << " " << (row.failed ? "failed" : std::to_string(row.value)) << " ("
              << row.wall_seconds << "s)\n";
  });
  std::ofstream(out / "metrics.csv") << metrics_csv(result.rows);
  std::ofstream(out / "summary.csv") << summary_csv(result.summary);
  std::ofstream(out / "timing.csv") << timing_csv(result.rows);
  std::cout << summary_csv(result.summary);
  return result.any_failed() ? kExitFailedRun : kExitOk;
}

int cmd_cost(const Globals& g, std::optional<std::size_t> tokens, std::optional<std::size_t> examples,
             const std::string& policy) {
  const auto config = load_config(g);
  config.model.validate();
  const auto p = policy.empty() ? config.train.policy : parse_freeze_policy(policy, config.train.phase);
  const auto t = tokens.value_or(config.model.max_seq_len);
  const auto n = examples.value_or(config.train.total_steps * config.train.batch_size);
  const auto cost = estimate_cost(config.model, p, t, n);
  KeyValueFile kv;
  kv.set("policy", std::string(freeze_policy_name(p, config.train.phase)));
  kv.set("tokens_per_example", std::to_string(t));
  kv.set("examples", std::to_string(n));
  kv.set("trainable_params", std::to_string(cost.trainable_params));
  kv.set("total_params", std::to_string(cost.total_params));
  kv.set("external_params", std::to_string(cost.external_params));
  kv.set("trainable_share", std::to_string(cost.trainable_share()));
  std::ostringstream flops;
  flops << std::scientific << cost.training_flops;
  kv.set("training_flops", flops.str());
  flops.str("");
  flops << cost.inference_flops;
  kv.set("inference_flops", flops.str());
  std::cout << kv.str();
  if (!g.out.empty()) kv.save(require_out(g) / "cost.txt");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prismer desk-scale driver: synthetic data, training, evaluation and ablations"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration (key = value file)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the data and training seed");
  app.add_option("--out", g.out, "Output directory");

  std::optional<std::size_t> scenes, steps, train_scenes, eval_scenes, tokens, examples;
  std::optional<int> difficulty;
  std::optional<double> corruption;
  std::string experts, data_dir, task = "caption", checkpoint, metric = "qa-accuracy", prompt = kCaptionPrompt,
                                 plan_name, policy;
  std::vector<std::string> questions, candidates;
  std::size_t beam = 3, max_len = 20, scene = 0, seeds = 3;
  std::function<int()> action;

  auto* gen = app.add_subcommand("gen-data", "Render scenes and expert labels into a dataset directory");
  gen->add_option("--scenes", scenes, "Number of scenes");
  gen->add_option("--difficulty", difficulty, "Scene difficulty (0 = one object)");
  gen->add_option("--experts", experts, "Comma-separated expert kinds");
  gen->add_option("--corruption", corruption, "Fraction of expert sites replaced by noise");
  gen->callback([&] { action = [&] { return cmd_gen_data(g, scenes, difficulty, experts, corruption); }; });

  auto* train = app.add_subcommand("train", "Train a model and write checkpoint, trace and timing");
  train->add_option("--data", data_dir, "Dataset directory (generated from the config when omitted)");
  train->add_option("--task", task, "caption or qa");
  train->add_option("--questions", questions, "Question kinds for the qa task")->delimiter(',');
  train->add_option("--steps", steps, "Override total training steps");
  train->callback([&] { action = [&] { return cmd_train(g, data_dir, task, questions, steps); }; });

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  eval->add_option("--data", data_dir, "Dataset directory");
  eval->add_option("--metric", metric, "qa-accuracy or caption-exact-match");
  eval->add_option("--questions", questions, "Question kinds")->delimiter(',');
  eval->add_option("--beam", beam, "Beam width for captioning");
  eval->callback([&] { action = [&] { return cmd_eval(g, checkpoint, data_dir, metric, questions, beam); }; });

  auto* decode = app.add_subcommand("decode", "Generate text, or rank candidate answers, for one scene");
  decode->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  decode->add_option("--data", data_dir, "Dataset directory");
  decode->add_option("--scene", scene, "Scene index");
  decode->add_option("--beam", beam, "Beam width");
  decode->add_option("--max-len", max_len, "Maximum generated tokens");
  decode->add_option("--prompt", prompt, "Prompt text");
  decode->add_option("--candidate", candidates, "Closed-ended candidate answer (repeatable)");
  decode->callback([&] {
    action = [&] { return cmd_decode(g, checkpoint, data_dir, scene, beam, max_len, prompt, candidates); };
  });

  auto* ablate = app.add_subcommand("ablate", "Run an ablation plan and write metrics, summary and timing CSVs");
  ablate->add_option("--plan", plan_name, "Plan kind")->required();
  ablate->add_option("--seeds", seeds, "Number of paired seeds");
  ablate->add_option("--steps", steps, "Override total training steps");
  ablate->add_option("--train-scenes", train_scenes, "Training scenes per seed");
  ablate->add_option("--eval-scenes", eval_scenes, "Evaluation scenes per seed");
  ablate->add_option("--metric", metric, "qa-accuracy, caption-exact-match or final-loss");
  ablate->add_option("--questions", questions, "Question kinds")->delimiter(',');
  ablate->callback([&] {
    action = [&] {
      return cmd_ablate(g, plan_name, seeds, steps, train_scenes, eval_scenes, metric, questions);
    };
  });

  auto* cost = app.add_subcommand("cost", "Parameter and FLOP accounting for a configuration");
  cost->add_option("--tokens", tokens, "Tokens per example");
  cost->add_option("--examples", examples, "Training examples processed");
  cost->add_option("--policy", policy, "Freeze policy name");
  cost->callback([&] { action = [&] { return cmd_cost(g, tokens, examples, policy); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailedRun;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
