#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "prismer/model.hpp"
#include "prismer/rng.hpp"
#include "prismer/tensor.hpp"

namespace prismer::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = false, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

inline Tensor uniform_tensor(Shape shape, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(values));
}

// Smallest configuration that still exercises every block: 8x8 images give a
// single RGB token and 2x2 high-level sites.
inline ModelConfig micro_config(std::vector<ExpertKind> experts = {ExpertKind::kDepth, ExpertKind::kSegmentation}) {
  ModelConfig c;
  c.image_height = 8;
  c.image_width = 8;
  c.width = 16;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.ffn_multiplier = 2;
  c.latents = 4;
  c.resampler_layers = 1;
  c.vocab_size = 12;
  c.max_seq_len = 8;
  c.experts = std::move(experts);
  if (c.experts.empty()) c = ModelConfig::prismer_z(c);
  return c;
}

// Expert map of the right extent for `config` with seeded values in [-1, 1]
// and instance ids on high-level kinds.
inline ExpertLabelMap synthetic_expert(const ModelConfig& config, ExpertKind kind, std::uint64_t seed) {
  ExpertLabelMap m;
  m.kind = kind;
  const bool high = is_high_level(kind);
  const std::size_t h = high ? (config.image_height + 3) / 4 : config.image_height;
  const std::size_t w = high ? (config.image_width + 3) / 4 : config.image_width;
  m.grid = uniform_tensor({h, w, expert_channels(kind)}, seed, -1.0, 1.0);
  if (high) {
    Rng rng(derive_seed(seed, "ids"));
    m.instance_ids.resize(h * w);
    for (auto& id : m.instance_ids) id = rng.uniform() < 0.5 ? -1 : static_cast<int>(rng.below(5));
  }
  return m;
}

inline std::vector<ExpertLabelMap> synthetic_experts(const ModelConfig& config, std::uint64_t seed) {
  std::vector<ExpertLabelMap> out;
  for (std::size_t i = 0; i < config.experts.size(); ++i) {
    out.push_back(synthetic_expert(config, config.experts[i], derive_seed(seed, i)));
  }
  return out;
}

inline Tensor synthetic_rgb(const ModelConfig& config, std::uint64_t seed) {
  return uniform_tensor({config.image_height, config.image_width, 3}, seed, 0.0, 1.0);
}

// Fresh directory under the system temp dir, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("prismer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace prismer::testing
