#include "prismer/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "prismer/error.hpp"
#include "prismer/inference.hpp"
#include "prismer/rng.hpp"

namespace prismer {

namespace {

constexpr PlanKind kAllPlans[] = {
    PlanKind::kExpertCountSweep,      PlanKind::kCorruptionSweep,      PlanKind::kNoiseExpert,
    PlanKind::kResamplerLatentsSweep, PlanKind::kResamplerLayersSweep, PlanKind::kAdaptorRatioSweep,
    PlanKind::kFreezePolicySweep,     PlanKind::kPrismerVsPrismerZ,
};

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

ModelConfig with_experts(ModelConfig base, std::vector<ExpertKind> experts) {
  if (experts.empty()) return ModelConfig::prismer_z(base);
  base.mode = ModelMode::kPrismer;
  if (base.resampler == ResamplerVariant::kNone) base.resampler = ResamplerVariant::kLearned;
  base.experts = std::move(experts);
  return base;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

// Tables read by index rather than multiplied with activations.
bool is_lookup(const std::string& name) {
  return name == "vision.positions" || name == "language.positions" || name == "experts.instance_embedding" ||
         name == "resampler.latents";
}

}  // namespace

std::string_view plan_kind_name(PlanKind kind) {
  switch (kind) {
    case PlanKind::kExpertCountSweep:
      return "expert-count-sweep";
    case PlanKind::kCorruptionSweep:
      return "corruption-sweep";
    case PlanKind::kNoiseExpert:
      return "noise-expert";
    case PlanKind::kResamplerLatentsSweep:
      return "resampler-latents-sweep";
    case PlanKind::kResamplerLayersSweep:
      return "resampler-layers-sweep";
    case PlanKind::kAdaptorRatioSweep:
      return "adaptor-ratio-sweep";
    case PlanKind::kFreezePolicySweep:
      return "freeze-policy-sweep";
    case PlanKind::kPrismerVsPrismerZ:
      return "prismer-vs-prismerz";
  }
  return "unknown";
}

PlanKind parse_plan_kind(std::string_view name) {
  for (auto kind : kAllPlans)
    if (plan_kind_name(kind) == name) return kind;
  throw ConfigError("unknown plan kind '" + std::string(name) + "'");
}

std::string_view metric_name(Metric metric) {
  switch (metric) {
    case Metric::kQaAccuracy:
      return "qa-accuracy";
    case Metric::kCaptionExactMatch:
      return "caption-exact-match";
    case Metric::kFinalLoss:
      return "final-loss";
  }
  return "unknown";
}

Metric parse_metric(std::string_view name) {
  for (auto m : {Metric::kQaAccuracy, Metric::kCaptionExactMatch, Metric::kFinalLoss})
    if (metric_name(m) == name) return m;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

const std::vector<ExpertKind>& expert_sweep_order() {
  static const std::vector<ExpertKind> order = {ExpertKind::kDepth,  ExpertKind::kSegmentation,
                                                ExpertKind::kObjectDetection, ExpertKind::kNormal,
                                                ExpertKind::kEdge,   ExpertKind::kOcrDetection};
  return order;
}

void ExperimentPlan::validate() const {
  if (arms.size() < 2) throw ConfigError("a plan needs at least two arms");
  if (settings.seeds.empty()) throw ConfigError("a plan needs at least one seed");
  if (settings.train_scenes == 0 || settings.eval_scenes == 0) throw ConfigError("plan needs train and eval scenes");
  std::set<std::string> labels;
  for (const auto& arm : arms) {
    if (!labels.insert(arm.label).second) throw ConfigError("duplicate arm label '" + arm.label + "'");
    arm.model.validate();
    arm.train.validate();
    for (auto kind : arm.corruption.kinds) {
      if (std::find(arm.model.experts.begin(), arm.model.experts.end(), kind) == arm.model.experts.end()) {
        throw ConfigError("arm '" + arm.label + "' corrupts an expert it does not use");
      }
    }
  }
}

ExperimentPlan make_plan(PlanKind kind, const PlanSettings& settings) {
  ExperimentPlan plan;
  plan.name = std::string(plan_kind_name(kind));
  plan.settings = settings;
  const auto& order = expert_sweep_order();
  const auto first = [&](std::size_t n) { return std::vector<ExpertKind>(order.begin(), order.begin() + n); };
  const auto arm = [&](std::string label, ModelConfig model, CorruptionSpec corruption = {}) {
    plan.arms.push_back({std::move(label), std::move(model), settings.train, std::move(corruption)});
  };
  const auto two = with_experts(settings.model, first(2));

  switch (kind) {
    case PlanKind::kExpertCountSweep:
      arm("RGB", with_experts(settings.model, {}));
      for (std::size_t n : {2, 4, 6}) arm("+" + std::to_string(n) + " Exps", with_experts(settings.model, first(n)));
      break;
    case PlanKind::kCorruptionSweep: {
      const auto depth = with_experts(settings.model, {ExpertKind::kDepth});
      arm("25% N.", depth, {{ExpertKind::kDepth}, 0.25});
      arm("10% N.", depth, {{ExpertKind::kDepth}, 0.10});
      arm("No N.", depth, {{ExpertKind::kDepth}, 0.0});
      break;
    }
    case PlanKind::kNoiseExpert:
      arm("RGB", with_experts(settings.model, {}));
      arm("RGB + Noise", with_experts(settings.model, {ExpertKind::kNoise}));
      break;
    case PlanKind::kResamplerLatentsSweep:
      for (std::size_t n : {4, 16, 64}) {
        auto m = two;
        m.latents = n;
        arm("latents=" + std::to_string(n), m);
      }
      break;
    case PlanKind::kResamplerLayersSweep:
      for (std::size_t n : {1, 2, 4}) {
        auto m = two;
        m.resampler_layers = n;
        arm("layers=" + std::to_string(n), m);
      }
      {
        auto m = two;
        m.resampler = ResamplerVariant::kRandomSampling;
        arm("random-sampling", m);
      }
      break;
    case PlanKind::kAdaptorRatioSweep:
      for (double r : {0.25, 0.5, 1.0}) {
        auto m = two;
        m.adaptor_ratio = r;
        arm("ratio=" + format_double(r), m);
      }
      break;
    case PlanKind::kFreezePolicySweep:
      for (auto p : {FreezePolicy::kFreezeVisionAndLanguage, FreezePolicy::kFreezeVisionOnly,
                     FreezePolicy::kFreezeLanguageOnly, FreezePolicy::kAllTrainable}) {
        plan.arms.push_back({std::string(freeze_policy_name(p, settings.train.phase)), two, settings.train, {}});
        plan.arms.back().train.policy = p;
      }
      break;
    case PlanKind::kPrismerVsPrismerZ:
      arm("PrismerZ", with_experts(settings.model, {}));
      arm("Prismer", two);
      break;
  }
  return plan;
}

std::vector<SceneRecord> select_experts(const std::vector<SceneRecord>& records, const std::vector<ExpertKind>& kinds,
                                        const CorruptionSpec& corruption) {
  std::vector<SceneRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    SceneRecord copy;
    copy.seed = r.seed;
    copy.scene = r.scene;
    copy.rgb = r.rgb;
    copy.text = r.text;
    for (auto kind : kinds) {
      const auto it =
          std::find_if(r.experts.begin(), r.experts.end(), [&](const ExpertLabelMap& e) { return e.kind == kind; });
      if (it == r.experts.end()) throw ConfigError("record lacks expert '" + std::string(expert_name(kind)) + "'");
      auto label = *it;
      const bool corrupt = corruption.fraction > 0.0 &&
                           std::find(corruption.kinds.begin(), corruption.kinds.end(), kind) != corruption.kinds.end();
      if (corrupt) {
        label = corrupt_uniform(label, corruption.fraction, derive_seed(r.seed, "corrupt." + std::string(expert_name(kind))));
      }
      copy.experts.push_back(std::move(label));
    }
    out.push_back(std::move(copy));
  }
  return out;
}

double qa_accuracy(const PrismerModel& model, const std::vector<SceneRecord>& records,
                   const std::vector<QuestionKind>& kinds, std::uint64_t order_seed) {
  NoGradGuard no_grad;
  std::size_t total = 0, correct = 0;
  for (const auto& r : records) {
    const auto z = model.decoder_context(model.encoder_forward(r.rgb, r.experts));
    for (std::size_t q = 0; q < r.text.qa.size(); ++q) {
      const auto& qa = r.text.qa[q];
      if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), qa.kind) == kinds.end()) continue;
      // the answer sits at a seeded slot so that ties carry no positional bias
      auto candidates = qa.distractors;
      const auto slot = derive_seed(derive_seed(order_seed, r.seed), q) % (candidates.size() + 1);
      candidates.insert(candidates.begin() + static_cast<std::ptrdiff_t>(slot), qa.answer);
      const auto ranked = rank_closed_ended(model, z, qa.question, candidates);
      ++total;
      if (ranked.index == slot) ++correct;
    }
  }
  if (total == 0) throw ContractError("no questions of the requested kinds");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double caption_exact_match(const PrismerModel& model, const std::vector<SceneRecord>& records, std::size_t beam) {
  if (records.empty()) throw ContractError("no records to caption");
  std::size_t hits = 0;
  for (const auto& r : records) {
    const auto out = caption(model, r.rgb, r.experts, {beam, model.config().max_seq_len});
    if (!out.truncated && out.tokens == r.text.caption) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

bool PlanResult::any_failed() const {
  return std::any_of(rows.begin(), rows.end(), [](const MetricsRow& r) { return r.failed; });
}

const ArmSummary& PlanResult::arm(std::string_view label) const {
  for (const auto& s : summary)
    if (s.arm == label) return s;
  throw ConfigError("no arm labelled '" + std::string(label) + "'");
}

PlanResult run_plan(const ExperimentPlan& plan, const ProgressFn& progress) {
  plan.validate();
  const auto& settings = plan.settings;
  std::vector<ExpertKind> all_kinds;
  for (const auto& arm : plan.arms)
    for (auto kind : arm.model.experts)
      if (std::find(all_kinds.begin(), all_kinds.end(), kind) == all_kinds.end()) all_kinds.push_back(kind);
  const auto task = settings.metric == Metric::kCaptionExactMatch ? TaskKind::kCaptioning : TaskKind::kQuestionAnswering;

  PlanResult result;
  for (auto seed : settings.seeds) {
    DatasetSpec train_spec;
    train_spec.scenes = settings.train_scenes;
    train_spec.difficulty = settings.difficulty;
    train_spec.experts = all_kinds;
    train_spec.seed = derive_seed(seed, "data");
    train_spec.height = static_cast<int>(settings.model.image_height);
    train_spec.width = static_cast<int>(settings.model.image_width);
    auto eval_spec = train_spec;
    eval_spec.scenes = settings.eval_scenes;
    eval_spec.seed = derive_seed(seed, "eval");
    const auto pipeline = ExpertPipeline::create(train_spec.pipeline_seed());
    const auto train_records = make_records(train_spec, pipeline);
    const auto eval_records = make_records(eval_spec, pipeline);

    for (const auto& arm : plan.arms) {
      const auto start = std::chrono::steady_clock::now();
      MetricsRow row;
      row.plan = plan.name;
      row.arm = arm.label;
      row.seed = seed;
      try {
        const auto arm_train = select_experts(train_records, arm.model.experts, arm.corruption);
        const auto examples = make_examples(arm_train, task, settings.question_kinds);
        PrismerModel model(arm.model, derive_seed(seed, "model"));
        auto train = arm.train;
        train.seed = derive_seed(seed, "train");
        const auto trace = train_loop(model, examples, train).trace;
        row.trainable_params = model.parameters().trainable_count();
        const auto arm_eval = select_experts(eval_records, arm.model.experts, arm.corruption);
        switch (settings.metric) {
          case Metric::kQaAccuracy:
            row.value = qa_accuracy(model, arm_eval, settings.question_kinds, derive_seed(seed, "order"));
            break;
          case Metric::kCaptionExactMatch:
            row.value = caption_exact_match(model, arm_eval);
            break;
          case Metric::kFinalLoss: {
            const auto tail = std::min<std::size_t>(10, trace.size());
            double total = 0.0;
            for (std::size_t i = trace.size() - tail; i < trace.size(); ++i) total += trace[i].loss;
            row.value = tail ? total / static_cast<double>(tail) : 0.0;
            break;
          }
        }
      } catch (const NumericError& e) {
        row.failed = true;
        row.failure = e.what();
      }
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (progress) progress(row);
      result.rows.push_back(std::move(row));
    }
  }

  std::sort(result.rows.begin(), result.rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    return std::tie(a.arm, a.seed) < std::tie(b.arm, b.seed);
  });
  for (const auto& arm : plan.arms) {
    ArmSummary s;
    s.arm = arm.label;
    std::vector<double> values;
    for (const auto& row : result.rows) {
      if (row.arm != arm.label) continue;
      ++s.runs;
      if (row.failed) ++s.failed;
      else values.push_back(row.value);
    }
    if (!values.empty()) {
      for (double v : values) s.mean += v;
      s.mean /= static_cast<double>(values.size());
      if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
      }
    } else {
      s.mean = std::nan("");
    }
    result.summary.push_back(s);
  }
  return result;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "plan,arm,seed,value,trainable_params,status\n";
  for (const auto& r : rows) {
    out += r.plan + "," + r.arm + "," + std::to_string(r.seed) + "," + (r.failed ? "" : format_double(r.value)) + "," +
           std::to_string(r.trainable_params) + "," + (r.failed ? "failed" : "ok") + "\n";
  }
  return out;
}

std::string summary_csv(const std::vector<ArmSummary>& summary) {
  std::string out = "arm,mean,std,runs,failed\n";
  for (const auto& s : summary) {
    out += s.arm + "," + format_double(s.mean) + "," + format_double(s.stddev) + "," + std::to_string(s.runs) + "," +
           std::to_string(s.failed) + "\n";
  }
  return out;
}

std::string timing_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "plan,arm,seed,wall_seconds\n";
  for (const auto& r : rows) {
    out += r.plan + "," + r.arm + "," + std::to_string(r.seed) + "," + format_double(r.wall_seconds) + "\n";
  }
  return out;
}

CostEstimate estimate_cost(const ModelConfig& config, FreezePolicy policy, std::size_t tokens_per_example,
                           std::size_t examples) {
  CostEstimate cost;
  cost.external_params = config.external_expert_params;
  const bool vision_frozen = policy_freezes(policy, ParameterGroup::kVisionBackbone);
  const bool language_frozen = policy_freezes(policy, ParameterGroup::kLanguageBackbone);
  for (const auto& spec : parameter_layout(config)) {
    const auto n = spec.numel();
    cost.total_params += n;
    if (!policy_freezes(policy, spec.group)) cost.trainable_params += n;
    if (is_lookup(spec.name)) continue;
    cost.forward_params += n;
    // Frozen blocks that run before the first trainable parameter on their
    // stream need no backward pass.
    const bool skipped_vision = vision_frozen && (starts_with(spec.name, "vision.stem.") ||
                                                  (starts_with(spec.name, "vision.layer0.") &&
                                                   !starts_with(spec.name, "vision.layer0.adaptor.")));
    const bool skipped_language = language_frozen && (starts_with(spec.name, "language.layer0.ln_self.") ||
                                                      starts_with(spec.name, "language.layer0.self_attn."));
    if (!skipped_vision && !skipped_language) cost.backward_path_params += n;
  }
  const double tokens = static_cast<double>(tokens_per_example);
  cost.training_flops = (2.0 * static_cast<double>(cost.forward_params) +
                         4.0 * static_cast<double>(cost.backward_path_params)) *
                        tokens * static_cast<double>(examples);
  cost.inference_flops = 2.0 * static_cast<double>(cost.forward_params + cost.external_params) * tokens;
  return cost;
}

}  // namespace prismer
