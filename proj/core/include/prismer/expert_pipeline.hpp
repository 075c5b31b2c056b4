#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prismer/pca.hpp"
#include "prismer/tensor.hpp"
#include "prismer/vocab.hpp"

namespace prismer {

enum class ShapeKind { kSquare = 0, kCircle = 1, kTriangle = 2, kDiamond = 3 };
inline constexpr std::size_t kShapeKinds = 4;
inline constexpr std::size_t kColors = 6;
inline constexpr std::size_t kTextWords = 4;

std::string_view shape_name(ShapeKind kind);
std::string_view color_name(int color);
std::string_view text_word(int word);

// Expert label kinds. `kNoise` is the uninformative expert used by the
// robustness studies; it is treated as a low-level, single-channel map.
enum class ExpertKind { kDepth, kNormal, kEdge, kSegmentation, kObjectDetection, kOcrDetection, kNoise };

std::string_view expert_name(ExpertKind kind);
ExpertKind parse_expert_kind(std::string_view name);
bool is_high_level(ExpertKind kind);
std::size_t expert_channels(ExpertKind kind);

inline constexpr std::size_t kSemanticDim = 256;
inline constexpr std::size_t kHighLevelChannels = 64;
inline constexpr std::size_t kInstanceSlots = 128;
inline constexpr std::size_t kHighLevelDownsample = 4;

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Region {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
  bool operator==(const Region&) const = default;
};

struct SceneObject {
  ShapeKind shape = ShapeKind::kSquare;
  int color = 0;
  int semantic_class = 1;
  int instance_id = 1;
  double depth = 0.5;
  Region region;
  bool operator==(const SceneObject&) const = default;
};

struct TextItem {
  int word = 0;
  int instance_id = 0;
  Region region;
  bool operator==(const TextItem&) const = default;
};

// Synthetic ground truth from which RGB, expert labels and text are rendered.
struct SceneSpec {
  int height = 64;
  int width = 64;
  std::vector<SceneObject> objects;
  std::optional<TextItem> text;
  int background_class = 0;
  double background_depth = 0.9;
  std::uint64_t seed = 0;
  int difficulty = 0;
  bool operator==(const SceneSpec&) const = default;
};

// Semantic ids shared by segmentation, detection and OCR embeddings.
int semantic_id_for_shape(ShapeKind kind);
int semantic_id_for_text(int word);

// Deterministic, seeded scene. Difficulty 0 has exactly one object; higher
// difficulties have two or three, and from 2 on an optional text sign.
SceneSpec generate_scene(std::uint64_t seed, int difficulty, int height = 64, int width = 64);
// Throws ContractError when a scene breaks its invariants.
void validate_scene(const SceneSpec& scene);

// Index of the object visible at each pixel (nearest wins), -1 for background.
std::vector<int> visible_objects(const SceneSpec& scene);
// True where the text item is visible.
std::vector<bool> visible_text(const SceneSpec& scene);
// Membership test of the object's silhouette.
bool object_covers(const SceneObject& object, int x, int y);
// Index of the object with the smallest depth.
std::size_t nearest_object(const SceneSpec& scene);

// [H x W x 3] in [0, 1].
Tensor render_rgb(const SceneSpec& scene);

// One expert's post-processed output. `grid` is [H' x W' x C]. High-level
// kinds also carry per-site instance ids (-1 where no instance); the trainable
// instance embedding is added by the model.
struct ExpertLabelMap {
  ExpertKind kind = ExpertKind::kDepth;
  Tensor grid;
  std::vector<int> instance_ids;

  std::size_t height() const { return grid.dim(0); }
  std::size_t width() const { return grid.dim(1); }
  std::size_t channels() const { return grid.dim(2); }
};

// Seeded unit vectors standing in for text-model class embeddings.
class SemanticEmbeddingTable {
 public:
  explicit SemanticEmbeddingTable(std::uint64_t seed, std::size_t dim = kSemanticDim);
  const std::vector<double>& embedding(int id) const;
  std::size_t dim() const { return dim_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  mutable std::map<int, std::vector<double>> cache_;
};

// Maps instance ids to one of 128 slots.
inline std::size_t instance_slot(int instance_id) {
  return static_cast<std::size_t>(instance_id) % kInstanceSlots;
}

// Owns the frozen post-processing state: embedding table and fitted PCA.
class ExpertPipeline {
 public:
  // Fits the PCA on tiled embeddings of `calibration_scenes` seeded scenes.
  static ExpertPipeline create(std::uint64_t seed, std::size_t calibration_scenes = 8);
  ExpertPipeline(SemanticEmbeddingTable table, PcaProjection pca);

  const SemanticEmbeddingTable& table() const { return table_; }
  const PcaProjection& pca() const { return pca_; }
  // PCA-projected embedding for a semantic id.
  const std::vector<double>& projected(int semantic_id) const;

 private:
  SemanticEmbeddingTable table_;
  PcaProjection pca_;
  mutable std::map<int, std::vector<double>> projected_cache_;
};

// Per-site semantic ids and instance ids for a high-level kind at 1/4 scale.
struct SemanticSiteMap {
  std::size_t height = 0, width = 0;
  std::vector<int> semantic;
  std::vector<int> instance;
};
SemanticSiteMap semantic_sites(const SceneSpec& scene, ExpertKind kind);

// Min-max re-normalisation to [-1, 1]; a constant map becomes all zeros.
void renormalise(std::vector<double>& values);

// Renders the stand-in expert output and applies the post-processing rules.
// Throws ConfigError for kNoise (use make_noise_expert).
ExpertLabelMap render_expert_label(const SceneSpec& scene, ExpertKind kind, const ExpertPipeline& pipeline);

// Grid with the instance embedding added at instance-bearing sites.
Tensor apply_instance_embeddings(const ExpertLabelMap& map, const Tensor& instance_table);

// Replaces exactly round(p * H'W') sites (all channels) with Uniform(-1, 1).
ExpertLabelMap corrupt_uniform(const ExpertLabelMap& label, double fraction, std::uint64_t seed);
ExpertLabelMap make_noise_expert(std::size_t height, std::size_t width, std::size_t channels, std::uint64_t seed);

enum class QuestionKind { kColorOfShape, kShapeOfNearest, kWhereNearest, kCount, kSignText };
std::string_view question_kind_name(QuestionKind kind);
QuestionKind parse_question_kind(std::string_view name);

struct QaPair {
  QuestionKind kind = QuestionKind::kColorOfShape;
  std::vector<int> question;
  std::vector<int> answer;
  std::vector<std::vector<int>> distractors;
};

struct SceneText {
  std::vector<int> caption;
  std::vector<QaPair> qa;
};

// Template caption (objects listed nearest first) and every question the
// scene supports, each with three distinct distractor answers.
SceneText build_caption_and_qa(const SceneSpec& scene, const Vocabulary& vocab = Vocabulary::toy());

// Canvas quadrant of the nearest object: "left", "right", "top" or "bottom".
std::string_view nearest_direction(const SceneSpec& scene);

}  // namespace prismer
