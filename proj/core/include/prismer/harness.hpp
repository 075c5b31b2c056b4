#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "prismer/dataset.hpp"
#include "prismer/model.hpp"
#include "prismer/training.hpp"

namespace prismer {

enum class PlanKind {
  kExpertCountSweep,
  kCorruptionSweep,
  kNoiseExpert,
  kResamplerLatentsSweep,
  kResamplerLayersSweep,
  kAdaptorRatioSweep,
  kFreezePolicySweep,
  kPrismerVsPrismerZ,
};
std::string_view plan_kind_name(PlanKind kind);
PlanKind parse_plan_kind(std::string_view name);

enum class Metric { kQaAccuracy, kCaptionExactMatch, kFinalLoss };
std::string_view metric_name(Metric metric);
Metric parse_metric(std::string_view name);

// Experts in the order the count sweep enables them.
const std::vector<ExpertKind>& expert_sweep_order();

struct ArmSpec {
  std::string label;
  ModelConfig model;  // model.experts selects the arm's expert maps
  TrainConfig train;
  CorruptionSpec corruption;
};

// Shared, arm-independent setup of a plan.
struct PlanSettings {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  std::size_t train_scenes = 500;
  std::size_t eval_scenes = 200;
  int difficulty = 1;
  // Questions trained and scored; empty means all kinds.
  std::vector<QuestionKind> question_kinds = {QuestionKind::kColorOfShape, QuestionKind::kShapeOfNearest,
                                              QuestionKind::kWhereNearest};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  Metric metric = Metric::kQaAccuracy;
};

struct ExperimentPlan {
  std::string name;
  PlanSettings settings;
  std::vector<ArmSpec> arms;

  void validate() const;
};

ExperimentPlan make_plan(PlanKind kind, const PlanSettings& settings);

struct MetricsRow {
  std::string plan;
  std::string arm;
  std::uint64_t seed = 0;
  double value = 0.0;
  std::size_t trainable_params = 0;
  bool failed = false;
  std::string failure;
  double wall_seconds = 0.0;
};

struct ArmSummary {
  std::string arm;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t runs = 0;
  std::size_t failed = 0;
};

struct PlanResult {
  std::vector<MetricsRow> rows;  // sorted by (arm, seed)
  std::vector<ArmSummary> summary;
  bool any_failed() const;
  const ArmSummary& arm(std::string_view label) const;
};

using ProgressFn = std::function<void(const MetricsRow&)>;

// Every arm sees the same scenes for a given seed; arms differ only in their
// overrides. Arms whose training diverges are reported as failed.
PlanResult run_plan(const ExperimentPlan& plan, const ProgressFn& progress = {});

// Evaluation of a trained model on prepared records.
double qa_accuracy(const PrismerModel& model, const std::vector<SceneRecord>& records,
                   const std::vector<QuestionKind>& kinds, std::uint64_t order_seed);
double caption_exact_match(const PrismerModel& model, const std::vector<SceneRecord>& records, std::size_t beam = 3);

// Selects the arm's expert maps from records rendered with a superset of
// kinds and applies the arm's corruption.
std::vector<SceneRecord> select_experts(const std::vector<SceneRecord>& records, const std::vector<ExpertKind>& kinds,
                                        const CorruptionSpec& corruption);

// Metrics CSV without wall time, so that reruns are byte-identical.
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string summary_csv(const std::vector<ArmSummary>& summary);
std::string timing_csv(const std::vector<MetricsRow>& rows);

struct CostEstimate {
  std::uint64_t trainable_params = 0;
  std::uint64_t total_params = 0;         // every registry parameter
  std::uint64_t external_params = 0;      // expert networks outside the registry
  std::uint64_t forward_params = 0;       // parameters applied per token (lookup tables excluded)
  std::uint64_t backward_path_params = 0;  // forward parameters the backward pass traverses
  double training_flops = 0.0;
  double inference_flops = 0.0;

  double trainable_share() const {
    return static_cast<double>(trainable_params) / static_cast<double>(total_params + external_params);
  }
};

// Per-token approximation: training 6 * backward-path params * tokens,
// inference 2 * (forward + external) params * tokens.
CostEstimate estimate_cost(const ModelConfig& config, FreezePolicy policy, std::size_t tokens_per_example,
                           std::size_t examples);

}  // namespace prismer
