#pragma once

#include <filesystem>
#include <string>

#include "prismer/dataset.hpp"
#include "prismer/kv_file.hpp"
#include "prismer/model.hpp"
#include "prismer/training.hpp"

namespace prismer {

// Keys live under "model.", "train.", "data." and "experts.". Absent keys keep
// their defaults; unknown keys in these sections and malformed values raise
// ConfigError.
void write_model_config(KeyValueFile& kv, const ModelConfig& config);
ModelConfig read_model_config(const KeyValueFile& kv, ModelConfig base = ModelConfig::desk());

void write_train_config(KeyValueFile& kv, const TrainConfig& config);
TrainConfig read_train_config(const KeyValueFile& kv, TrainConfig base = {});

void write_dataset_spec(KeyValueFile& kv, const DatasetSpec& spec);
DatasetSpec read_dataset_spec(const KeyValueFile& kv, DatasetSpec base = {});

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  DatasetSpec data;
};

RunConfig read_run_config(const KeyValueFile& kv, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
KeyValueFile to_key_values(const RunConfig& config);

std::string join_expert_kinds(const std::vector<ExpertKind>& kinds);
std::vector<ExpertKind> parse_expert_list(const std::string& text);

}  // namespace prismer
