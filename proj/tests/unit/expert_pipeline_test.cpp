#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include "prismer/error.hpp"
#include "prismer/expert_pipeline.hpp"
#include "prismer/ops.hpp"
#include "prismer/tensor_io.hpp"
#include "test_support.hpp"

namespace prismer {
namespace {

const ExpertPipeline& pipeline() {
  static const ExpertPipeline p = ExpertPipeline::create(99);
  return p;
}

SceneObject flat_square(int x0, int y0, int x1, int y1, double depth, int color, int instance) {
  SceneObject o;
  o.shape = ShapeKind::kSquare;
  o.color = color;
  o.semantic_class = semantic_id_for_shape(o.shape);
  o.instance_id = instance;
  o.depth = depth;
  o.region = {x0, y0, x1, y1};
  return o;
}

SceneSpec canvas(int h = 64, int w = 64) {
  SceneSpec s;
  s.height = h;
  s.width = w;
  return s;
}

TEST(Scene, SameSeedSameScene) {
  for (int difficulty : {0, 1, 2, 3}) EXPECT_EQ(generate_scene(17, difficulty), generate_scene(17, difficulty));
  EXPECT_NE(generate_scene(17, 1), generate_scene(18, 1));
}

TEST(Scene, DifficultyZeroHasOneObject) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(generate_scene(seed, 0).objects.size(), 1u);
}

TEST(Scene, ThousandSeedsKeepInvariants) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = generate_scene(seed, static_cast<int>(seed % 4));
    std::set<int> ids;
    std::size_t expected = s.objects.size();
    for (const auto& o : s.objects) ids.insert(o.instance_id);
    if (s.text) {
      ids.insert(s.text->instance_id);
      ++expected;
    }
    ASSERT_EQ(ids.size(), expected) << "seed " << seed;
    EXPECT_NO_THROW(validate_scene(s)) << "seed " << seed;
  }
}

TEST(Scene, ValidateRejectsBrokenScenes) {
  auto s = canvas();
  EXPECT_THROW(validate_scene(s), ContractError);
  s.objects = {flat_square(0, 0, 10, 10, 0.3, 0, 1), flat_square(5, 5, 20, 20, 0.3, 1, 2)};
  EXPECT_THROW(validate_scene(s), ContractError);  // equal depths
  s.objects[1].depth = 0.4;
  s.objects[1].instance_id = 1;
  EXPECT_THROW(validate_scene(s), ContractError);  // duplicate instance
  s.objects[1].instance_id = 2;
  s.objects[1].region.x1 = 70;
  EXPECT_THROW(validate_scene(s), ContractError);  // outside canvas
}

TEST(ExpertLabel, FlatObjectDepthIsTwoLevel) {
  auto s = canvas();
  s.objects = {flat_square(10, 10, 30, 30, 0.3, 0, 1)};
  s.background_depth = 0.9;
  const auto m = render_expert_label(s, ExpertKind::kDepth, pipeline());
  std::set<double> values(m.grid.data().begin(), m.grid.data().end());
  EXPECT_EQ(values, (std::set<double>{-1.0, 1.0}));
  EXPECT_DOUBLE_EQ(m.grid.at({20, 20, 0}), -1.0);
  EXPECT_DOUBLE_EQ(m.grid.at({0, 0, 0}), 1.0);
}

TEST(ExpertLabel, BackgroundOnlySegmentationIsConstant) {
  const auto s = canvas();
  const auto m = render_expert_label(s, ExpertKind::kSegmentation, pipeline());
  ASSERT_EQ(m.grid.shape(), (Shape{16, 16, 64}));
  const auto data = m.grid.data();
  for (std::size_t site = 1; site < 256; ++site)
    for (std::size_t c = 0; c < 64; ++c) ASSERT_EQ(data[site * 64 + c], data[c]);
  for (int id : m.instance_ids) EXPECT_EQ(id, -1);
}

TEST(ExpertLabel, DepthOrderingMatchesScene) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = generate_scene(seed, 2);
    const auto m = render_expert_label(s, ExpertKind::kDepth, pipeline());
    const auto visible = visible_objects(s);
    // nearer scene depth at a pixel implies a smaller normalised value
    std::map<int, double> value_of;
    for (std::size_t i = 0; i < visible.size(); ++i) value_of[visible[i]] = m.grid.data()[i];
    for (const auto& [a, va] : value_of)
      for (const auto& [b, vb] : value_of) {
        const double da = a < 0 ? s.background_depth : s.objects[static_cast<std::size_t>(a)].depth;
        const double db = b < 0 ? s.background_depth : s.objects[static_cast<std::size_t>(b)].depth;
        if (da < db) {
          EXPECT_LT(va, vb) << "seed " << seed;
        }
      }
  }
}

TEST(ExpertLabel, LowLevelRangeAndHighLevelShape) {
  for (int side : {64, 50, 17}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto s = generate_scene(seed, 3, side, side + 6);
      for (auto kind : {ExpertKind::kDepth, ExpertKind::kNormal, ExpertKind::kEdge}) {
        const auto m = render_expert_label(s, kind, pipeline());
        EXPECT_EQ(m.grid.shape(), (Shape{static_cast<std::size_t>(side), static_cast<std::size_t>(side + 6),
                                         expert_channels(kind)}));
        for (double v : m.grid.data()) {
          ASSERT_GE(v, -1.0);
          ASSERT_LE(v, 1.0);
        }
      }
      for (auto kind : {ExpertKind::kSegmentation, ExpertKind::kObjectDetection, ExpertKind::kOcrDetection}) {
        const auto m = render_expert_label(s, kind, pipeline());
        const auto h = static_cast<std::size_t>((side + 3) / 4), w = static_cast<std::size_t>((side + 6 + 3) / 4);
        EXPECT_EQ(m.grid.shape(), (Shape{h, w, 64}));
        EXPECT_EQ(m.instance_ids.size(), h * w);
      }
    }
  }
  EXPECT_EQ(expert_channels(ExpertKind::kDepth), 1u);
  EXPECT_EQ(expert_channels(ExpertKind::kNormal), 3u);
  EXPECT_EQ(expert_channels(ExpertKind::kEdge), 1u);
}

TEST(ExpertLabel, NoiseKindIsNotRenderable) {
  EXPECT_THROW(render_expert_label(generate_scene(1, 1), ExpertKind::kNoise, pipeline()), ConfigError);
  EXPECT_THROW(parse_expert_kind("thermal"), ConfigError);
}

TEST(ExpertLabel, DetectionOverlapGoesToNearerObject) {
  auto s = canvas();
  s.objects = {flat_square(0, 0, 40, 40, 0.6, 0, 5), flat_square(20, 20, 60, 60, 0.2, 1, 9)};
  const auto sites = semantic_sites(s, ExpertKind::kObjectDetection);
  // site (7, 7) samples pixel (30, 30), inside both boxes
  EXPECT_EQ(sites.instance[7 * sites.width + 7], 9);
  EXPECT_EQ(sites.instance[2 * sites.width + 2], 5);
  EXPECT_EQ(sites.instance[15 * sites.width + 0], -1);
}

TEST(ExpertLabel, InstanceEmbeddingsAddAtInstanceSites) {
  ExpertLabelMap m;
  m.kind = ExpertKind::kObjectDetection;
  m.grid = testing::random_tensor({2, 1, 3}, 1);
  m.instance_ids = {-1, 130};
  const auto table = testing::random_tensor({128, 3}, 2);
  const auto out = apply_instance_embeddings(m, table);
  ASSERT_EQ(out.shape(), (Shape{2, 3}));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(out.at({0, c}), m.grid.data()[c]);
    EXPECT_DOUBLE_EQ(out.at({1, c}), m.grid.data()[3 + c] + table.at({2, c}));  // 130 mod 128
  }
}

TEST(SemanticTable, DeterministicUnitVectors) {
  const SemanticEmbeddingTable a(7), b(7);
  for (int id = 0; id < 10; ++id) {
    const auto& v = a.embedding(id);
    EXPECT_EQ(v, b.embedding(id));
    double n = 0.0;
    for (double x : v) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(PipelinePca, OrthonormalComponents) {
  const auto& p = pipeline().pca();
  ASSERT_EQ(p.output_dim, 64u);
  ASSERT_EQ(p.input_dim, kSemanticDim);
  for (std::size_t a = 0; a < 64; ++a)
    for (std::size_t b = a; b < 64; ++b) {
      double d = 0.0;
      for (std::size_t i = 0; i < p.input_dim; ++i) d += p.component(i, a) * p.component(i, b);
      ASSERT_NEAR(d, a == b ? 1.0 : 0.0, 1e-8);
    }
  for (std::size_t j = 1; j < 64; ++j) EXPECT_LE(p.explained_variance[j], p.explained_variance[j - 1]);
}

ExpertLabelMap depth_map_of(std::uint64_t seed) {
  return render_expert_label(generate_scene(seed, 1), ExpertKind::kDepth, pipeline());
}

TEST(Corruption, ZeroFractionIsIdentity) {
  const auto m = depth_map_of(3);
  const auto c = corrupt_uniform(m, 0.0, 1);
  EXPECT_EQ(tensor_sha256(m.grid), tensor_sha256(c.grid));
}

TEST(Corruption, QuarterChangesExactCount) {
  const auto m = depth_map_of(4);
  const auto c = corrupt_uniform(m, 0.25, 2);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < m.grid.numel(); ++i) differ += m.grid.data()[i] != c.grid.data()[i] ? 1 : 0;
  EXPECT_EQ(differ, 1024u);
}

TEST(Corruption, ChangesWholeSitesAcrossChannels) {
  const auto s = generate_scene(5, 1);
  const auto m = render_expert_label(s, ExpertKind::kNormal, pipeline());
  const auto c = corrupt_uniform(m, 0.1, 3);
  const auto expected = static_cast<std::size_t>(std::llround(0.1 * 64 * 64));
  std::size_t sites = 0;
  for (std::size_t site = 0; site < 64 * 64; ++site) {
    std::size_t changed = 0;
    for (std::size_t ch = 0; ch < 3; ++ch) changed += m.grid.data()[site * 3 + ch] != c.grid.data()[site * 3 + ch];
    if (changed) ++sites;
  }
  // a replaced value equal to the original has probability zero
  EXPECT_EQ(sites, expected);
  for (double v : c.grid.data()) {
    ASSERT_GE(v, -1.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Corruption, FullReplacementHasZeroMean) {
  const auto c = corrupt_uniform(depth_map_of(6), 1.0, 4);
  double mean = 0.0;
  for (double v : c.grid.data()) mean += v;
  mean /= static_cast<double>(c.grid.numel());
  EXPECT_GE(mean, -0.05);
  EXPECT_LE(mean, 0.05);
}

TEST(Corruption, DeterministicPerSeedAndRangeChecked) {
  const auto m = depth_map_of(7);
  EXPECT_EQ(tensor_sha256(corrupt_uniform(m, 0.3, 9).grid), tensor_sha256(corrupt_uniform(m, 0.3, 9).grid));
  EXPECT_NE(tensor_sha256(corrupt_uniform(m, 0.3, 9).grid), tensor_sha256(corrupt_uniform(m, 0.3, 10).grid));
  EXPECT_THROW(corrupt_uniform(m, 1.5, 1), RangeError);
  EXPECT_THROW(corrupt_uniform(m, -0.1, 1), RangeError);
}

TEST(NoiseExpert, DeterministicWithUniformMoments) {
  const auto a = make_noise_expert(64, 64, 1, 11);
  EXPECT_EQ(tensor_sha256(a.grid), tensor_sha256(make_noise_expert(64, 64, 1, 11).grid));
  double mean = 0.0, sq = 0.0;
  for (double v : a.grid.data()) {
    ASSERT_GE(v, -1.0);
    ASSERT_LE(v, 1.0);
    mean += v;
  }
  mean /= 4096.0;
  for (double v : a.grid.data()) sq += (v - mean) * (v - mean);
  const double var = sq / 4095.0;
  EXPECT_NEAR(var, 1.0 / 3.0, 0.05 / 3.0);
}

TEST(Text, SingleRedSquareCaption) {
  auto s = canvas();
  s.objects = {flat_square(10, 10, 30, 30, 0.3, 0, 1)};
  const auto& vocab = Vocabulary::toy();
  const auto text = build_caption_and_qa(s);
  EXPECT_EQ(vocab.decode(text.caption), "a red square on a gray background");
  const auto color = std::find_if(text.qa.begin(), text.qa.end(),
                                  [](const QaPair& q) { return q.kind == QuestionKind::kColorOfShape; });
  ASSERT_NE(color, text.qa.end());
  EXPECT_EQ(vocab.decode(color->question), "what color is the square");
  EXPECT_EQ(vocab.decode(color->answer), "red");
  ASSERT_EQ(color->distractors.size(), 3u);
  std::set<std::string> words;
  for (const auto& d : color->distractors) words.insert(vocab.decode(d));
  EXPECT_EQ(words.size(), 3u);
  EXPECT_EQ(words.count("red"), 0u);
  for (const auto& w : words) EXPECT_NO_THROW(vocab.id(w));
}

// Reads answers from the rendered image and depth map rather than from the
// template code: colours from pixel values, nearest object from the depth
// minimum, count from the number of distinct object colours.
class RuleReader {
 public:
  explicit RuleReader(const SceneSpec& scene)
      : scene_(scene),
        rgb_(render_rgb(scene)),
        depth_(render_expert_label(scene, ExpertKind::kDepth, pipeline())) {}

  std::string color_of(ShapeKind shape) const {
    for (std::size_t k = 0; k < scene_.objects.size(); ++k)
      if (scene_.objects[k].shape == shape) return pixel_color(some_visible_pixel(k));
    return "?";
  }

  std::size_t nearest() const {
    const auto d = depth_.grid.data();
    const auto pixel = static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
    const int x = static_cast<int>(pixel % static_cast<std::size_t>(scene_.width));
    const int y = static_cast<int>(pixel / static_cast<std::size_t>(scene_.width));
    for (std::size_t k = 0; k < scene_.objects.size(); ++k)
      if (object_covers(scene_.objects[k], x, y) && pixel_color(pixel) == std::string(color_name(scene_.objects[k].color)))
        return k;
    return scene_.objects.size();
  }

  std::string where_nearest() const {
    const auto& r = scene_.objects.at(nearest()).region;
    const double dx = (r.x0 + r.x1) / 2.0 - scene_.width / 2.0;
    const double dy = (r.y0 + r.y1) / 2.0 - scene_.height / 2.0;
    if (std::abs(dx) >= std::abs(dy)) return dx < 0 ? "left" : "right";
    return dy < 0 ? "top" : "bottom";
  }

  std::string count() const {
    std::set<std::string> colors;
    const auto n = static_cast<std::size_t>(scene_.height * scene_.width);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = pixel_color(i);
      if (!c.empty()) colors.insert(c);
    }
    static const std::array<std::string, 4> numbers = {"one", "two", "three", "four"};
    return colors.empty() ? "?" : numbers.at(colors.size() - 1);
  }

 private:
  std::size_t some_visible_pixel(std::size_t k) const {
    const auto& o = scene_.objects[k];
    for (int y = o.region.y0; y < o.region.y1; ++y)
      for (int x = o.region.x0; x < o.region.x1; ++x) {
        if (!object_covers(o, x, y)) continue;
        bool occluded = false;
        for (const auto& other : scene_.objects)
          if (&other != &o && other.depth < o.depth && object_covers(other, x, y)) occluded = true;
        if (!occluded) return static_cast<std::size_t>(y * scene_.width + x);
      }
    return 0;
  }

  // Nearest reference colour within a tolerance; empty for background/text.
  std::string pixel_color(std::size_t pixel) const {
    static const std::array<std::pair<const char*, std::array<double, 3>>, 6> palette = {{
        {"red", {0.9, 0.1, 0.1}},
        {"green", {0.1, 0.8, 0.2}},
        {"blue", {0.15, 0.25, 0.9}},
        {"yellow", {0.95, 0.9, 0.1}},
        {"purple", {0.6, 0.2, 0.8}},
        {"orange", {1.0, 0.55, 0.05}},
    }};
    const auto d = rgb_.data();
    for (const auto& [name, ref] : palette) {
      double err = 0.0;
      for (std::size_t c = 0; c < 3; ++c) err += std::abs(d[pixel * 3 + c] - ref[c]);
      if (err < 0.05) return name;
    }
    return "";
  }

  const SceneSpec& scene_;
  Tensor rgb_;
  ExpertLabelMap depth_;
};

TEST(Text, RuleReaderRecoversEveryAnswer) {
  const auto& vocab = Vocabulary::toy();
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto scene = generate_scene(seed, static_cast<int>(seed % 4));
    const auto text = build_caption_and_qa(scene);
    const RuleReader reader(scene);
    for (const auto& qa : text.qa) {
      const auto answer = vocab.decode(qa.answer);
      const auto question = vocab.decode(qa.question);
      std::set<std::string> options = {answer};
      for (const auto& d : qa.distractors) options.insert(vocab.decode(d));
      ASSERT_EQ(options.size(), 4u) << question;
      switch (qa.kind) {
        case QuestionKind::kColorOfShape: {
          const auto shape_word = question.substr(question.rfind(' ') + 1);
          ShapeKind shape = ShapeKind::kSquare;
          for (std::size_t k = 0; k < kShapeKinds; ++k)
            if (shape_name(static_cast<ShapeKind>(k)) == shape_word) shape = static_cast<ShapeKind>(k);
          EXPECT_EQ(reader.color_of(shape), answer) << "seed " << seed;
          break;
        }
        case QuestionKind::kShapeOfNearest:
          EXPECT_EQ(std::string(shape_name(scene.objects.at(reader.nearest()).shape)), answer) << "seed " << seed;
          break;
        case QuestionKind::kWhereNearest:
          EXPECT_EQ(reader.where_nearest(), answer) << "seed " << seed;
          break;
        case QuestionKind::kCount:
          EXPECT_EQ(reader.count(), answer) << "seed " << seed;
          break;
        case QuestionKind::kSignText:
          ASSERT_TRUE(scene.text.has_value());
          EXPECT_EQ(std::string(text_word(scene.text->word)), answer) << "seed " << seed;
          break;
      }
    }
  }
}

TEST(Text, CaptionListsObjectsNearestFirst) {
  const auto& vocab = Vocabulary::toy();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto scene = generate_scene(seed, 2);
    const auto caption = vocab.decode(build_caption_and_qa(scene).caption);
    const auto& near = scene.objects[nearest_object(scene)];
    const auto head = "a " + std::string(color_name(near.color)) + " " + std::string(shape_name(near.shape));
    EXPECT_EQ(caption.rfind(head, 0), 0u) << caption;
    EXPECT_NE(caption.find("on a gray background"), std::string::npos);
  }
}

}  // namespace
}  // namespace prismer
