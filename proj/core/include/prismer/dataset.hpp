#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "prismer/expert_pipeline.hpp"
#include "prismer/kv_file.hpp"
#include "prismer/training.hpp"

namespace prismer {

// Uniform corruption of the listed expert kinds.
struct CorruptionSpec {
  std::vector<ExpertKind> kinds;
  double fraction = 0.0;
};

struct DatasetSpec {
  std::size_t scenes = 64;
  int difficulty = 1;
  std::vector<ExpertKind> experts;
  CorruptionSpec corruption;
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;

  void validate() const;
  // Seed of scene `index`; also determines its expert noise.
  std::uint64_t scene_seed(std::size_t index) const;
  // Seed of the frozen embedding table and PCA.
  std::uint64_t pipeline_seed() const;
};

struct SceneRecord {
  std::uint64_t seed = 0;
  SceneSpec scene;
  Tensor rgb;
  std::vector<ExpertLabelMap> experts;
  SceneText text;
};

// Renders one scene and its expert maps (with corruption applied).
SceneRecord make_record(std::uint64_t scene_seed, const DatasetSpec& spec, const ExpertPipeline& pipeline);
std::vector<SceneRecord> make_records(const DatasetSpec& spec, const ExpertPipeline& pipeline);

// Writes one sub-directory per scene plus manifest.txt; returns the manifest.
KeyValueFile build_dataset(const DatasetSpec& spec, const std::filesystem::path& dir, const ExpertPipeline& pipeline);
KeyValueFile build_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);

struct LoadedDataset {
  DatasetSpec spec;
  std::vector<SceneRecord> records;  // scene specs regenerated from the recorded seeds
};
LoadedDataset load_dataset(const std::filesystem::path& dir);

inline constexpr const char* kCaptionPrompt = "a picture of";

// Prompt + caption + EOS with the prompt as prefix.
TokenSequence caption_sequence(const SceneText& text, const Vocabulary& vocab = Vocabulary::toy());
// Question + answer + EOS with the question as prefix.
TokenSequence qa_sequence(const QaPair& qa);

enum class TaskKind { kCaptioning, kQuestionAnswering };

// Restricts the examples to the listed question kinds (empty means all).
std::vector<TrainingExample> make_examples(const std::vector<SceneRecord>& records, TaskKind task,
                                           const std::vector<QuestionKind>& question_kinds = {});

// Digest over everything except the expert maps: RGB, caption and QA tokens.
std::string dataset_fingerprint(const std::vector<SceneRecord>& records);

}  // namespace prismer
