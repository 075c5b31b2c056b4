#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "prismer/model.hpp"
#include "prismer/parameters.hpp"

namespace prismer {

enum class TrainPhase { kPretrain, kFinetune };

enum class FreezePolicy { kFreezeVisionAndLanguage, kFreezeVisionOnly, kFreezeLanguageOnly, kAllTrainable };

// Policy names differ slightly by phase: pre-training says
// "freeze-vision-only", fine-tuning says "freeze-vision".
std::string_view freeze_policy_name(FreezePolicy policy, TrainPhase phase = TrainPhase::kPretrain);
FreezePolicy parse_freeze_policy(std::string_view name, TrainPhase phase);
std::string_view phase_name(TrainPhase phase);
TrainPhase parse_phase(std::string_view name);

struct TrainConfig {
  double peak_lr = 1e-3;
  std::size_t warmup_steps = 2000;
  std::size_t total_steps = 10000;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  TrainPhase phase = TrainPhase::kPretrain;
  FreezePolicy policy = FreezePolicy::kFreezeVisionAndLanguage;
  // Global gradient-norm cap; 0 disables clipping.
  double grad_clip = 0.0;

  void validate() const;
};

struct Partition {
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
  std::size_t trainable_count = 0;
  std::size_t frozen_count = 0;
};

// Which groups a policy freezes. Model-added groups are never frozen.
bool policy_freezes(FreezePolicy policy, ParameterGroup group);

// Applies the policy to the store's freeze flags and reports the split.
Partition partition_parameters(ParameterStore& store, FreezePolicy policy);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

using GradientMap = std::map<std::string, std::vector<double>>;

// Bias and layer-norm gain parameters are exempt from weight decay.
bool decays(const std::string& name);

// One decoupled-decay Adam update of every trainable parameter. Throws
// ContractError when `grads` names a frozen parameter or misses a trainable one.
void adamw_step(ParameterStore& store, const GradientMap& grads, double lr, const AdamWOptions& options = {});

// Gradients of all trainable parameters after backward(); parameters the
// loss does not reach get zeros.
GradientMap collect_gradients(const ParameterStore& store);
double global_norm(const GradientMap& grads);

// Linear warmup to the peak, then cosine annealing to zero at total_steps.
double lr_at(std::size_t step, const TrainConfig& config);

// One image with the token sequences trained against its features.
struct TrainingExample {
  Tensor rgb;
  std::vector<ExpertLabelMap> experts;
  std::vector<TokenSequence> sequences;
};

struct TraceRow {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
};

// Mean of the per-sequence prefix-LM losses over the batch.
Tensor batch_loss(const PrismerModel& model, std::span<const TrainingExample* const> batch, std::uint64_t sample_seed);

// Batches are drawn from seeded per-epoch permutations. Applies the freeze
// policy before the first step. Throws NumericError naming the step when the
// loss becomes non-finite.
TrainResult train_loop(PrismerModel& model, std::span<const TrainingExample> dataset, const TrainConfig& config);

std::string trace_csv(const std::vector<TraceRow>& trace);
void write_trace(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

// Directory with manifest.txt (config, parameter names, freeze flags) and one
// <name>.pten per parameter.
void save_checkpoint(const std::filesystem::path& dir, const PrismerModel& model);
PrismerModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace prismer
