#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prismer/expert_pipeline.hpp"
#include "prismer/parameters.hpp"
#include "prismer/tensor.hpp"

namespace prismer {

enum class ModelMode { kPrismer, kPrismerZ };
enum class ResamplerVariant { kLearned, kRandomSampling, kNone };

std::string_view mode_name(ModelMode mode);
ModelMode parse_mode(std::string_view name);
std::string_view resampler_name(ResamplerVariant variant);
ResamplerVariant parse_resampler(std::string_view name);

struct ModelConfig {
  ModelMode mode = ModelMode::kPrismer;
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t ffn_multiplier = 4;
  std::size_t latents = 16;
  std::size_t resampler_layers = 2;
  ResamplerVariant resampler = ResamplerVariant::kLearned;
  // Layer norms inside the resampler. Disabled only for scalar oracle checks.
  bool resampler_norm = true;
  double adaptor_ratio = 1.0;
  std::size_t vocab_size = 50;
  std::size_t max_seq_len = 32;
  std::vector<ExpertKind> experts;
  // Per-layer channel counts of the convolutional stems; empty means
  // {w/8, w/4, w/2, w, w} for encoder width w.
  std::vector<std::size_t> stem_channels;
  // Parameters of external expert networks, counted for inference accounting
  // only (no tensors are created for them).
  std::uint64_t external_expert_params = 0;

  static ModelConfig desk();
  static ModelConfig prismer_z(ModelConfig base);

  // Throws ConfigError on inconsistent settings.
  void validate() const;
  std::vector<std::size_t> resolved_stem_channels() const;
  std::size_t bottleneck() const;
  std::size_t head_dim() const { return width / heads; }
  // Token grid side lengths after the 16x stem reduction.
  std::size_t grid_height() const { return (image_height + 15) / 16; }
  std::size_t grid_width() const { return (image_width + 15) / 16; }
  std::size_t rgb_tokens() const { return grid_height() * grid_width(); }
  std::size_t feature_tokens() const;
  bool uses_instance_embeddings() const;
};

// Stride schedule of the five stem convolutions. High-level inputs are
// already at quarter resolution.
std::vector<std::size_t> stem_strides(bool high_level);

// Every parameter of a configuration, without allocating anything.
std::vector<ParameterSpec> parameter_layout(const ModelConfig& config);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormWeights {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const;
};

struct AttentionWeights {
  Linear query, key, value, output;
};

struct FeedForward {
  Linear up, down;
  Tensor operator()(const Tensor& x) const;
};

// Residual bottleneck: x + up(squared_relu(down(x))).
struct AdaptorWeights {
  Linear down, up;
};
Tensor adaptor_forward(const AdaptorWeights& adaptor, const Tensor& x);

// Multi-head scaled dot-product attention. `mask`, when given, is added to
// the [queries x keys] score matrix of every head.
Tensor attention_forward(const AttentionWeights& weights, const Tensor& queries, const Tensor& keys_values,
                         std::size_t heads, const Tensor* mask = nullptr);

// Attention over precomputed key/value projections.
Tensor attend(const AttentionWeights& weights, const Tensor& queries, const Tensor& keys, const Tensor& values,
              std::size_t heads, const Tensor* mask = nullptr);

// Seeded choice of `count` rows: without replacement when enough rows exist,
// otherwise with replacement.
std::vector<std::size_t> sample_token_indices(std::size_t available, std::size_t count, std::uint64_t seed);

// Token ids plus the number of leading tokens that condition but are not
// predicted.
struct TokenSequence {
  std::vector<int> tokens;
  std::size_t prefix = 0;
};

// Per-layer cross-attention keys and values of one feature sequence z,
// shared by every text sequence decoded against it.
struct DecoderContext {
  std::vector<Tensor> keys;
  std::vector<Tensor> values;
  std::size_t tokens = 0;
};

class PrismerModel {
 public:
  PrismerModel(ModelConfig config, std::uint64_t seed);
  // Adopts an existing store (checkpoint restore). Names must match the layout.
  PrismerModel(ModelConfig config, ParameterStore store);

  PrismerModel(const PrismerModel&) = delete;
  PrismerModel& operator=(const PrismerModel&) = delete;
  PrismerModel(PrismerModel&&) = default;
  PrismerModel& operator=(PrismerModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  // RGB image [H x W x 3] -> [S x width] tokens with positions added.
  Tensor stem_forward(const Tensor& rgb) const;
  // Expert map -> [S x width] tokens through the kind's own stem.
  Tensor stem_forward(const ExpertLabelMap& label) const;

  // Variable number of expert token grids -> [latents x width].
  Tensor resampler_forward(std::span<const Tensor> expert_tokens, std::uint64_t sample_seed = 0) const;

  // RGB features from the frozen encoder with adaptors.
  Tensor encode_rgb(const Tensor& rgb) const;
  // z = [RGB features ; resampled expert tokens] (RGB features only in
  // prismer-z mode). Expert kinds must match the configuration.
  Tensor encoder_forward(const Tensor& rgb, std::span<const ExpertLabelMap> experts,
                         std::uint64_t sample_seed = 0) const;

  DecoderContext decoder_context(const Tensor& z) const;
  // [T x vocab] logits; row t depends on tokens[0..t] and z.
  Tensor decoder_forward(const Tensor& z, std::span<const int> tokens) const;
  Tensor decoder_forward(const DecoderContext& context, std::span<const int> tokens) const;

  // Mean next-token cross entropy over positions prefix..T-1, with the decoder
  // fed [BOS, y_0, ..., y_{T-2}].
  Tensor prefix_lm_loss(const Tensor& z, const TokenSequence& sequence) const;
  Tensor prefix_lm_loss(const DecoderContext& context, const TokenSequence& sequence) const;

  const AdaptorWeights& encoder_adaptor(std::size_t layer) const { return encoder_layers_.at(layer).adaptor; }
  const AdaptorWeights& decoder_adaptor(std::size_t layer) const { return decoder_layers_.at(layer).adaptor; }
  const Tensor& latents() const { return latents_; }

 private:
  struct Stem {
    std::vector<Tensor> kernels;
    std::vector<Tensor> biases;
    std::vector<std::size_t> strides;
    std::size_t in_channels = 0;
    Linear proj;
  };
  struct EncoderLayer {
    LayerNormWeights ln_attn, ln_ffn;
    AttentionWeights attn;
    FeedForward ffn;
    AdaptorWeights adaptor;
  };
  struct ResamplerLayer {
    LayerNormWeights ln_latents, ln_context, ln_ffn;
    AttentionWeights attn;
    FeedForward ffn;
  };
  struct DecoderLayer {
    LayerNormWeights ln_self, ln_cross, ln_context, ln_ffn;
    AttentionWeights self_attn, cross_attn;
    FeedForward ffn;
    AdaptorWeights adaptor;
  };

  void bind();
  Tensor run_stem(const Stem& stem, const Tensor& input) const;
  Tensor add_positions(const Tensor& tokens) const;

  ModelConfig config_;
  ParameterStore store_;

  Stem rgb_stem_;
  std::vector<std::pair<ExpertKind, Stem>> expert_stems_;
  Tensor vision_positions_;
  std::vector<EncoderLayer> encoder_layers_;
  LayerNormWeights encoder_final_;
  Tensor instance_table_;
  Tensor latents_;
  std::vector<ResamplerLayer> resampler_layers_;
  LayerNormWeights resampler_final_;
  Tensor token_embedding_;
  Tensor text_positions_;
  std::vector<DecoderLayer> decoder_layers_;
  LayerNormWeights decoder_final_;
};

}  // namespace prismer
