#include "prismer/expert_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prismer/error.hpp"
#include "prismer/ops.hpp"
#include "prismer/rng.hpp"

namespace prismer {

namespace {

constexpr std::array<std::string_view, kShapeKinds> kShapeNames = {"square", "circle", "triangle", "diamond"};
constexpr std::array<std::string_view, kColors> kColorNames = {"red", "green", "blue", "yellow", "purple", "orange"};
constexpr std::array<std::string_view, kTextWords> kTextNames = {"stop", "exit", "open", "shop"};
constexpr std::array<std::array<double, 3>, kColors> kColorRgb = {{
    {0.90, 0.10, 0.10},
    {0.10, 0.80, 0.20},
    {0.15, 0.25, 0.90},
    {0.95, 0.90, 0.10},
    {0.60, 0.20, 0.80},
    {1.00, 0.55, 0.05},
}};
constexpr std::array<unsigned, kTextWords> kGlyphBits = {0b10110010u, 0b11001101u, 0b10011011u, 0b11100101u};
constexpr double kBackgroundGray = 0.5;

struct KindInfo {
  ExpertKind kind;
  std::string_view name;
};
constexpr std::array<KindInfo, 7> kKinds = {{
    {ExpertKind::kDepth, "depth"},
    {ExpertKind::kNormal, "normal"},
    {ExpertKind::kEdge, "edge"},
    {ExpertKind::kSegmentation, "segmentation"},
    {ExpertKind::kObjectDetection, "object-detection"},
    {ExpertKind::kOcrDetection, "ocr-detection"},
    {ExpertKind::kNoise, "noise"},
}};

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

std::string_view shape_name(ShapeKind kind) { return kShapeNames.at(static_cast<std::size_t>(kind)); }
std::string_view color_name(int color) { return kColorNames.at(static_cast<std::size_t>(color)); }
std::string_view text_word(int word) { return kTextNames.at(static_cast<std::size_t>(word)); }

std::string_view expert_name(ExpertKind kind) {
  for (const auto& k : kKinds) {
    if (k.kind == kind) return k.name;
  }
  throw ConfigError("unsupported expert kind");
}

ExpertKind parse_expert_kind(std::string_view name) {
  for (const auto& k : kKinds) {
    if (k.name == name) return k.kind;
  }
  throw ConfigError("unknown expert kind '" + std::string(name) + "'");
}

bool is_high_level(ExpertKind kind) {
  return kind == ExpertKind::kSegmentation || kind == ExpertKind::kObjectDetection ||
         kind == ExpertKind::kOcrDetection;
}

std::size_t expert_channels(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::kNormal:
      return 3;
    case ExpertKind::kSegmentation:
    case ExpertKind::kObjectDetection:
    case ExpertKind::kOcrDetection:
      return kHighLevelChannels;
    default:
      return 1;
  }
}

int semantic_id_for_shape(ShapeKind kind) { return 1 + static_cast<int>(kind); }
int semantic_id_for_text(int word) { return 1 + static_cast<int>(kShapeKinds) + word; }

// ---------------------------------------------------------------------------
// Scenes

bool object_covers(const SceneObject& object, int x, int y) {
  const auto& r = object.region;
  if (!r.contains(x, y)) return false;
  const double px = x + 0.5, py = y + 0.5;
  const double rx = 0.5 * (r.x1 - r.x0), ry = 0.5 * (r.y1 - r.y0);
  const double dx = (px - r.cx()) / rx, dy = (py - r.cy()) / ry;
  switch (object.shape) {
    case ShapeKind::kSquare:
      return true;
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= 1.0;
    case ShapeKind::kTriangle: {
      // apex at the top edge, base at the bottom edge
      const double t = (py - r.y0) / (r.y1 - r.y0);
      return std::abs(dx) <= t;
    }
    case ShapeKind::kDiamond:
      return std::abs(dx) + std::abs(dy) <= 1.0;
  }
  return false;
}

std::vector<int> visible_objects(const SceneSpec& scene) {
  std::vector<int> ids(static_cast<std::size_t>(scene.height * scene.width), -1);
  std::vector<std::size_t> order(scene.objects.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // paint far to near
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scene.objects[a].depth > scene.objects[b].depth;
  });
  for (auto idx : order) {
    const auto& o = scene.objects[idx];
    for (int y = std::max(0, o.region.y0); y < std::min(scene.height, o.region.y1); ++y)
      for (int x = std::max(0, o.region.x0); x < std::min(scene.width, o.region.x1); ++x)
        if (object_covers(o, x, y)) ids[static_cast<std::size_t>(y * scene.width + x)] = static_cast<int>(idx);
  }
  return ids;
}

std::vector<bool> visible_text(const SceneSpec& scene) {
  std::vector<bool> mask(static_cast<std::size_t>(scene.height * scene.width), false);
  if (!scene.text) return mask;
  const auto objects = visible_objects(scene);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x) {
      const auto i = static_cast<std::size_t>(y * scene.width + x);
      mask[i] = scene.text->region.contains(x, y) && objects[i] < 0;
    }
  return mask;
}

std::size_t nearest_object(const SceneSpec& scene) {
  if (scene.objects.empty()) throw ContractError("scene has no objects");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scene.objects.size(); ++i)
    if (scene.objects[i].depth < scene.objects[best].depth) best = i;
  return best;
}

std::string_view nearest_direction(const SceneSpec& scene) {
  const auto& o = scene.objects[nearest_object(scene)];
  const double dx = o.region.cx() - 0.5 * scene.width;
  const double dy = o.region.cy() - 0.5 * scene.height;
  if (std::abs(dx) >= std::abs(dy)) return dx < 0 ? "left" : "right";
  return dy < 0 ? "top" : "bottom";
}

namespace {

std::size_t silhouette_area(const SceneObject& o) {
  std::size_t n = 0;
  for (int y = o.region.y0; y < o.region.y1; ++y)
    for (int x = o.region.x0; x < o.region.x1; ++x) n += object_covers(o, x, y) ? 1 : 0;
  return n;
}

// Every object keeps at least 30% of its silhouette, text at least half of
// its sign, and the nearest object's quadrant is clear of the diagonals.
bool well_posed(const SceneSpec& scene) {
  const auto ids = visible_objects(scene);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto visible = static_cast<std::size_t>(std::count(ids.begin(), ids.end(), static_cast<int>(i)));
    if (visible * 10 < silhouette_area(scene.objects[i]) * 3 || visible == 0) return false;
  }
  if (scene.text) {
    const auto mask = visible_text(scene);
    const auto& r = scene.text->region;
    const auto visible = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    if (visible * 2 < static_cast<std::size_t>((r.x1 - r.x0) * (r.y1 - r.y0))) return false;
  }
  const auto& o = scene.objects[nearest_object(scene)];
  const double margin = 2.0 * std::min(scene.height, scene.width) / 64.0;
  const double dx = std::abs(o.region.cx() - 0.5 * scene.width);
  const double dy = std::abs(o.region.cy() - 0.5 * scene.height);
  return std::abs(dx - dy) >= margin && std::max(dx, dy) >= margin;
}

Region place(Rng& rng, double half_w, double half_h, int width, int height) {
  const double cx = rng.uniform(half_w, width - half_w);
  const double cy = rng.uniform(half_h, height - half_h);
  Region r;
  r.x0 = std::max(0, static_cast<int>(std::lround(cx - half_w)));
  r.y0 = std::max(0, static_cast<int>(std::lround(cy - half_h)));
  r.x1 = std::min(width, std::max(r.x0 + 1, static_cast<int>(std::lround(cx + half_w))));
  r.y1 = std::min(height, std::max(r.y0 + 1, static_cast<int>(std::lround(cy + half_h))));
  return r;
}

template <typename T>
std::vector<T> distinct_sample(Rng& rng, std::vector<T> pool, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(count);
  return pool;
}

}  // namespace

SceneSpec generate_scene(std::uint64_t seed, int difficulty, int height, int width) {
  if (height < 16 || width < 16) throw ConfigError("scene canvas must be at least 16x16");
  difficulty = std::max(difficulty, 0);
  Rng rng(derive_seed(seed, "scene"));
  const double scale = std::min(height, width) / 64.0;

  for (;;) {
    SceneSpec scene;
    scene.height = height;
    scene.width = width;
    scene.seed = seed;
    scene.difficulty = difficulty;

    const std::size_t count = difficulty == 0 ? 1 : 2 + (difficulty >= 2 ? rng.below(2) : 0);
    std::vector<int> shape_pool(kShapeKinds), color_pool(kColors), instance_pool(255);
    std::iota(shape_pool.begin(), shape_pool.end(), 0);
    std::iota(color_pool.begin(), color_pool.end(), 0);
    std::iota(instance_pool.begin(), instance_pool.end(), 1);
    const auto shapes = distinct_sample(rng, shape_pool, count);
    const auto colors = distinct_sample(rng, color_pool, count);
    const auto instances = distinct_sample(rng, instance_pool, count + 1);

    std::vector<double> depths;
    while (depths.size() < count) {
      const double d = rng.uniform(0.1, 0.8);
      if (std::all_of(depths.begin(), depths.end(), [d](double e) { return std::abs(d - e) >= 0.05; }))
        depths.push_back(d);
    }

    for (std::size_t i = 0; i < count; ++i) {
      SceneObject o;
      o.shape = static_cast<ShapeKind>(shapes[i]);
      o.color = colors[i];
      o.semantic_class = semantic_id_for_shape(o.shape);
      o.instance_id = instances[i];
      o.depth = depths[i];
      const double half = std::max(2.0, rng.uniform(6.0, 13.0) * scale);
      o.region = place(rng, half, half, width, height);
      scene.objects.push_back(o);
    }
    if (difficulty >= 2 && rng.uniform() < 0.5) {
      TextItem t;
      t.word = static_cast<int>(rng.below(kTextWords));
      t.instance_id = instances[count];
      t.region = place(rng, 10.0 * scale, 3.0 * scale, width, height);
      scene.text = t;
    }
    if (well_posed(scene)) return scene;
  }
}

void validate_scene(const SceneSpec& scene) {
  if (scene.height <= 0 || scene.width <= 0) throw ContractError("scene canvas must be non-empty");
  if (scene.objects.empty()) throw ContractError("scene needs at least one object");
  std::vector<int> ids;
  const auto inside = [&](const Region& r) {
    return r.x0 >= 0 && r.y0 >= 0 && r.x1 <= scene.width && r.y1 <= scene.height && r.x0 < r.x1 && r.y0 < r.y1;
  };
  for (const auto& o : scene.objects) {
    if (!inside(o.region)) throw ContractError("object region outside canvas");
    if (!(o.depth > 0.0 && o.depth < 1.0)) throw ContractError("object depth must lie in (0, 1)");
    if (o.color < 0 || o.color >= static_cast<int>(kColors)) throw ContractError("object color out of range");
    ids.push_back(o.instance_id);
  }
  if (scene.text) {
    if (!inside(scene.text->region)) throw ContractError("text region outside canvas");
    ids.push_back(scene.text->instance_id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ContractError("instance ids must be unique");
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    for (std::size_t j = i + 1; j < scene.objects.size(); ++j)
      if (scene.objects[i].depth == scene.objects[j].depth) throw ContractError("object depths must be distinct");
}

Tensor render_rgb(const SceneSpec& scene) {
  const auto h = static_cast<std::size_t>(scene.height), w = static_cast<std::size_t>(scene.width);
  std::vector<double> rgb(h * w * 3, kBackgroundGray);
  const auto ids = visible_objects(scene);
  const auto text = visible_text(scene);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (ids[i] >= 0) {
      const auto& c = kColorRgb[static_cast<std::size_t>(scene.objects[static_cast<std::size_t>(ids[i])].color)];
      std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>(3 * i));
    } else if (text[i]) {
      const auto x = static_cast<int>(i % w);
      const auto bit = (kGlyphBits[static_cast<std::size_t>(scene.text->word)] >> (((x - scene.text->region.x0) / 2) % 8)) & 1u;
      std::fill_n(rgb.begin() + static_cast<std::ptrdiff_t>(3 * i), 3, bit ? 0.95 : 0.05);
    }
  }
  return Tensor::from({h, w, 3}, std::move(rgb));
}

// ---------------------------------------------------------------------------
// Embeddings and post-processing

SemanticEmbeddingTable::SemanticEmbeddingTable(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim == 0) throw ConfigError("semantic embedding dimension must be positive");
}

const std::vector<double>& SemanticEmbeddingTable::embedding(int id) const {
  auto it = cache_.find(id);
  if (it != cache_.end()) return it->second;
  Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(id)));
  std::vector<double> v(dim_);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return cache_.emplace(id, std::move(v)).first->second;
}

ExpertPipeline::ExpertPipeline(SemanticEmbeddingTable table, PcaProjection pca)
    : table_(std::move(table)), pca_(std::move(pca)) {}

ExpertPipeline ExpertPipeline::create(std::uint64_t seed, std::size_t calibration_scenes) {
  SemanticEmbeddingTable table(derive_seed(seed, "semantic-table"));
  std::vector<std::vector<double>> samples;
  for (std::size_t s = 0; s < std::max<std::size_t>(calibration_scenes, 1); ++s) {
    const auto scene = generate_scene(derive_seed(seed, s), 3);
    for (auto kind : {ExpertKind::kSegmentation, ExpertKind::kObjectDetection, ExpertKind::kOcrDetection}) {
      const auto sites = semantic_sites(scene, kind);
      for (int id : sites.semantic) samples.push_back(table.embedding(id));
    }
  }
  auto pca = pca_fit(samples, kHighLevelChannels);
  return ExpertPipeline(std::move(table), std::move(pca));
}

const std::vector<double>& ExpertPipeline::projected(int semantic_id) const {
  auto it = projected_cache_.find(semantic_id);
  if (it != projected_cache_.end()) return it->second;
  return projected_cache_.emplace(semantic_id, pca_.project(table_.embedding(semantic_id))).first->second;
}

SemanticSiteMap semantic_sites(const SceneSpec& scene, ExpertKind kind) {
  if (!is_high_level(kind)) throw ConfigError("semantic_sites needs a high-level kind");
  const int down = static_cast<int>(kHighLevelDownsample);
  SemanticSiteMap map;
  map.height = static_cast<std::size_t>(ceil_div(scene.height, down));
  map.width = static_cast<std::size_t>(ceil_div(scene.width, down));
  map.semantic.assign(map.height * map.width, scene.background_class);
  map.instance.assign(map.height * map.width, -1);
  const auto visible = visible_objects(scene);
  const auto text = visible_text(scene);
  for (std::size_t i = 0; i < map.height; ++i) {
    for (std::size_t j = 0; j < map.width; ++j) {
      const int y = std::min(static_cast<int>(i) * down + down / 2, scene.height - 1);
      const int x = std::min(static_cast<int>(j) * down + down / 2, scene.width - 1);
      const auto pixel = static_cast<std::size_t>(y * scene.width + x);
      const auto site = i * map.width + j;
      switch (kind) {
        case ExpertKind::kSegmentation:
          if (visible[pixel] >= 0) map.semantic[site] = scene.objects[static_cast<std::size_t>(visible[pixel])].semantic_class;
          break;
        case ExpertKind::kObjectDetection: {
          // boxes; overlaps go to the nearer object
          const SceneObject* best = nullptr;
          for (const auto& o : scene.objects)
            if (o.region.contains(x, y) && (!best || o.depth < best->depth)) best = &o;
          if (best) {
            map.semantic[site] = best->semantic_class;
            map.instance[site] = best->instance_id;
          }
          break;
        }
        case ExpertKind::kOcrDetection:
          if (text[pixel]) {
            map.semantic[site] = semantic_id_for_text(scene.text->word);
            map.instance[site] = scene.text->instance_id;
          }
          break;
        default:
          break;
      }
    }
  }
  return map;
}

void renormalise(std::vector<double>& values) {
  if (values.empty()) return;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double a = *lo, b = *hi;
  if (b == a) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  for (auto& v : values) v = std::clamp(2.0 * (v - a) / (b - a) - 1.0, -1.0, 1.0);
}

ExpertLabelMap render_expert_label(const SceneSpec& scene, ExpertKind kind, const ExpertPipeline& pipeline) {
  const auto h = static_cast<std::size_t>(scene.height), w = static_cast<std::size_t>(scene.width);
  ExpertLabelMap map;
  map.kind = kind;
  if (is_high_level(kind)) {
    const auto sites = semantic_sites(scene, kind);
    std::vector<double> grid;
    grid.reserve(sites.semantic.size() * kHighLevelChannels);
    for (int id : sites.semantic) {
      const auto& v = pipeline.projected(id);
      grid.insert(grid.end(), v.begin(), v.end());
    }
    map.grid = Tensor::from({sites.height, sites.width, kHighLevelChannels}, std::move(grid));
    map.instance_ids = sites.instance;
    return map;
  }

  const auto ids = visible_objects(scene);
  std::vector<double> grid;
  switch (kind) {
    case ExpertKind::kDepth: {
      grid.resize(h * w);
      for (std::size_t i = 0; i < h * w; ++i)
        grid[i] = ids[i] >= 0 ? scene.objects[static_cast<std::size_t>(ids[i])].depth : scene.background_depth;
      break;
    }
    case ExpertKind::kNormal: {
      grid.resize(h * w * 3);
      for (std::size_t i = 0; i < h * w; ++i) {
        std::array<double, 3> n = {0.0, 0.0, 1.0};
        if (ids[i] >= 0) {
          const auto& o = scene.objects[static_cast<std::size_t>(ids[i])];
          const double px = static_cast<double>(i % w) + 0.5, py = static_cast<double>(i / w) + 0.5;
          switch (o.shape) {
            case ShapeKind::kCircle: {
              const double dx = (px - o.region.cx()) / (0.5 * (o.region.x1 - o.region.x0));
              const double dy = (py - o.region.cy()) / (0.5 * (o.region.y1 - o.region.y0));
              const double r2 = std::min(dx * dx + dy * dy, 1.0);
              n = {dx, dy, std::sqrt(1.0 - r2)};
              break;
            }
            case ShapeKind::kTriangle:
              n = {0.6, 0.0, 0.8};
              break;
            case ShapeKind::kDiamond:
              n = {0.0, -0.6, 0.8};
              break;
            case ShapeKind::kSquare:
              break;
          }
        }
        std::copy(n.begin(), n.end(), grid.begin() + static_cast<std::ptrdiff_t>(3 * i));
      }
      break;
    }
    case ExpertKind::kEdge: {
      const auto text = visible_text(scene);
      const auto label = [&](std::size_t i) { return ids[i] >= 0 ? ids[i] : (text[i] ? -2 : -1); };
      grid.assign(h * w, 0.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const auto i = y * w + x;
          if ((x + 1 < w && label(i) != label(i + 1)) || (y + 1 < h && label(i) != label(i + w))) grid[i] = 1.0;
        }
      break;
    }
    default:
      throw ConfigError("render_expert_label: unsupported kind '" + std::string(expert_name(kind)) + "'");
  }
  renormalise(grid);
  map.grid = Tensor::from({h, w, expert_channels(kind)}, std::move(grid));
  return map;
}

Tensor apply_instance_embeddings(const ExpertLabelMap& map, const Tensor& instance_table) {
  const auto sites = map.height() * map.width();
  auto flat = ops::reshape(map.grid, {sites, map.channels()});
  if (map.instance_ids.empty()) return flat;
  std::vector<int> slots(map.instance_ids.size());
  for (std::size_t i = 0; i < slots.size(); ++i)
    slots[i] = map.instance_ids[i] < 0 ? -1 : static_cast<int>(instance_slot(map.instance_ids[i]));
  return ops::add_indexed_rows(flat, instance_table, slots);
}

ExpertLabelMap corrupt_uniform(const ExpertLabelMap& label, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw RangeError("corrupt_uniform: fraction must lie in [0, 1], got " + std::to_string(fraction));
  }
  const auto sites = label.height() * label.width();
  const auto channels = label.channels();
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(sites)));
  std::vector<double> grid(label.grid.data().begin(), label.grid.data().end());
  Rng rng(seed);
  std::vector<std::size_t> order(sites);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(order[i], order[i + rng.below(sites - i)]);
    for (std::size_t c = 0; c < channels; ++c) grid[order[i] * channels + c] = rng.uniform(-1.0, 1.0);
  }
  ExpertLabelMap out;
  out.kind = label.kind;
  out.grid = Tensor::from(label.grid.shape(), std::move(grid));
  out.instance_ids = label.instance_ids;
  return out;
}

ExpertLabelMap make_noise_expert(std::size_t height, std::size_t width, std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> grid(height * width * channels);
  for (auto& v : grid) v = rng.uniform(-1.0, 1.0);
  ExpertLabelMap out;
  out.kind = ExpertKind::kNoise;
  out.grid = Tensor::from({height, width, channels}, std::move(grid));
  return out;
}

// ---------------------------------------------------------------------------
// Text

namespace {

constexpr std::array<std::string_view, 4> kDirections = {"left", "right", "top", "bottom"};
constexpr std::array<std::string_view, 4> kNumbers = {"one", "two", "three", "four"};

struct QuestionName {
  QuestionKind kind;
  std::string_view name;
};
constexpr std::array<QuestionName, 5> kQuestionNames = {{
    {QuestionKind::kColorOfShape, "color"},
    {QuestionKind::kShapeOfNearest, "nearest-shape"},
    {QuestionKind::kWhereNearest, "nearest-where"},
    {QuestionKind::kCount, "count"},
    {QuestionKind::kSignText, "sign"},
}};

template <std::size_t N>
QaPair make_qa(QuestionKind kind, const Vocabulary& vocab, std::string_view question, std::string_view answer,
               const std::array<std::string_view, N>& pool, Rng& rng) {
  QaPair qa;
  qa.kind = kind;
  qa.question = vocab.encode(question);
  qa.answer = vocab.encode(answer);
  std::vector<std::string_view> others;
  for (auto w : pool)
    if (w != answer) others.push_back(w);
  for (std::size_t i = 0; i < 3; ++i) {
    std::swap(others[i], others[i + rng.below(others.size() - i)]);
    qa.distractors.push_back(vocab.encode(others[i]));
  }
  return qa;
}

}  // namespace

std::string_view question_kind_name(QuestionKind kind) {
  for (const auto& q : kQuestionNames)
    if (q.kind == kind) return q.name;
  throw ConfigError("unknown question kind");
}

QuestionKind parse_question_kind(std::string_view name) {
  for (const auto& q : kQuestionNames)
    if (q.name == name) return q.kind;
  throw ConfigError("unknown question kind '" + std::string(name) + "'");
}

SceneText build_caption_and_qa(const SceneSpec& scene, const Vocabulary& vocab) {
  validate_scene(scene);
  SceneText out;

  std::vector<std::size_t> by_depth(scene.objects.size());
  std::iota(by_depth.begin(), by_depth.end(), std::size_t{0});
  std::stable_sort(by_depth.begin(), by_depth.end(), [&](std::size_t a, std::size_t b) {
    return scene.objects[a].depth < scene.objects[b].depth;
  });
  std::string caption;
  for (std::size_t k = 0; k < by_depth.size(); ++k) {
    const auto& o = scene.objects[by_depth[k]];
    if (k) caption += " and ";
    caption += "a " + std::string(color_name(o.color)) + " " + std::string(shape_name(o.shape));
  }
  if (scene.text) caption += " with the word " + std::string(text_word(scene.text->word));
  caption += " on a gray background";
  out.caption = vocab.encode(caption);

  Rng rng(derive_seed(scene.seed, "qa"));
  for (const auto& o : scene.objects) {
    out.qa.push_back(make_qa(QuestionKind::kColorOfShape, vocab, "what color is the " + std::string(shape_name(o.shape)),
                             color_name(o.color), kColorNames, rng));
  }
  const auto& near = scene.objects[nearest_object(scene)];
  out.qa.push_back(make_qa(QuestionKind::kShapeOfNearest, vocab, "what shape is the nearest object",
                           shape_name(near.shape), kShapeNames, rng));
  out.qa.push_back(make_qa(QuestionKind::kWhereNearest, vocab, "where is the nearest object", nearest_direction(scene),
                           kDirections, rng));
  out.qa.push_back(make_qa(QuestionKind::kCount, vocab, "how many objects are there",
                           kNumbers.at(scene.objects.size() - 1), kNumbers, rng));
  if (scene.text) {
    out.qa.push_back(make_qa(QuestionKind::kSignText, vocab, "what does the sign say", text_word(scene.text->word),
                             kTextNames, rng));
  }
  return out;
}

}  // namespace prismer
