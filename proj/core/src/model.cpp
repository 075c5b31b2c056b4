#include "prismer/model.hpp"

#include <algorithm>
#include <cmath>

#include "prismer/error.hpp"
#include "prismer/ops.hpp"
#include "prismer/rng.hpp"

namespace prismer {

namespace {

constexpr double kMaskedScore = -1e30;

std::string layer_name(const std::string& prefix, std::size_t index) {
  return prefix + ".layer" + std::to_string(index);
}

class LayoutBuilder {
 public:
  explicit LayoutBuilder(std::vector<ParameterSpec>& out) : out_(out) {}

  void tensor(const std::string& name, Shape shape, ParameterGroup group, InitKind init, double stddev = 0.0) {
    out_.push_back({name, std::move(shape), group, init, stddev});
  }
  void linear(const std::string& prefix, std::size_t in, std::size_t out, ParameterGroup group,
              bool zero_weight = false) {
    if (zero_weight) {
      tensor(prefix + ".weight", {in, out}, group, InitKind::kZeros);
    } else {
      tensor(prefix + ".weight", {in, out}, group, InitKind::kNormal, 1.0 / std::sqrt(static_cast<double>(in)));
    }
    tensor(prefix + ".bias", {out}, group, InitKind::kZeros);
  }
  void layer_norm(const std::string& prefix, std::size_t d, ParameterGroup group) {
    tensor(prefix + ".gain", {d}, group, InitKind::kOnes);
    tensor(prefix + ".bias", {d}, group, InitKind::kZeros);
  }
  void attention(const std::string& prefix, std::size_t d, ParameterGroup group) {
    for (const char* p : {".query", ".key", ".value", ".output"}) linear(prefix + p, d, d, group);
  }
  void ffn(const std::string& prefix, std::size_t d, std::size_t hidden, ParameterGroup group) {
    linear(prefix + ".up", d, hidden, group);
    linear(prefix + ".down", hidden, d, group);
  }
  void adaptor(const std::string& prefix, std::size_t d, std::size_t bottleneck) {
    linear(prefix + ".down", d, bottleneck, ParameterGroup::kAdaptor);
    linear(prefix + ".up", bottleneck, d, ParameterGroup::kAdaptor, /*zero_weight=*/true);
  }
  void stem(const std::string& prefix, std::size_t in_channels, const std::vector<std::size_t>& channels,
            std::size_t width, ParameterGroup group) {
    std::size_t cin = in_channels;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const auto name = prefix + ".conv" + std::to_string(i);
      tensor(name + ".weight", {3, 3, cin, channels[i]}, group, InitKind::kNormal,
             std::sqrt(2.0 / (9.0 * static_cast<double>(cin))));
      tensor(name + ".bias", {channels[i]}, group, InitKind::kZeros);
      cin = channels[i];
    }
    linear(prefix + ".proj", cin, width, group);
  }

 private:
  std::vector<ParameterSpec>& out_;
};

}  // namespace

std::string_view mode_name(ModelMode mode) { return mode == ModelMode::kPrismer ? "prismer" : "prismer-z"; }

ModelMode parse_mode(std::string_view name) {
  if (name == "prismer") return ModelMode::kPrismer;
  if (name == "prismer-z") return ModelMode::kPrismerZ;
  throw ConfigError("unknown model mode '" + std::string(name) + "'");
}

std::string_view resampler_name(ResamplerVariant variant) {
  switch (variant) {
    case ResamplerVariant::kLearned:
      return "learned";
    case ResamplerVariant::kRandomSampling:
      return "random-sampling";
    case ResamplerVariant::kNone:
      return "none";
  }
  return "none";
}

ResamplerVariant parse_resampler(std::string_view name) {
  if (name == "learned") return ResamplerVariant::kLearned;
  if (name == "random-sampling") return ResamplerVariant::kRandomSampling;
  if (name == "none") return ResamplerVariant::kNone;
  throw ConfigError("unknown resampler variant '" + std::string(name) + "'");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.vocab_size = Vocabulary::toy().size();
  c.experts = {ExpertKind::kDepth, ExpertKind::kSegmentation};
  return c;
}

ModelConfig ModelConfig::prismer_z(ModelConfig base) {
  base.mode = ModelMode::kPrismerZ;
  base.resampler = ResamplerVariant::kNone;
  base.experts.clear();
  return base;
}

void ModelConfig::validate() const {
  if (width == 0 || heads == 0) throw ConfigError("width and heads must be positive");
  if (width % heads != 0) {
    throw ConfigError("width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (image_height == 0 || image_width == 0) throw ConfigError("image extents must be positive");
  if (vocab_size < 2) throw ConfigError("vocabulary must hold at least the special tokens");
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
  if (!(adaptor_ratio > 0.0)) throw ConfigError("adaptor ratio must be positive");
  if (ffn_multiplier == 0) throw ConfigError("ffn multiplier must be positive");
  if (!stem_channels.empty() && stem_channels.size() != 5) throw ConfigError("stem needs exactly 5 channel counts");
  if (std::find(stem_channels.begin(), stem_channels.end(), 0u) != stem_channels.end()) {
    throw ConfigError("stem channel counts must be positive");
  }
  if (mode == ModelMode::kPrismerZ) {
    if (resampler != ResamplerVariant::kNone || !experts.empty()) {
      throw ConfigError("prismer-z mode takes no experts and no resampler");
    }
    return;
  }
  if (resampler == ResamplerVariant::kNone) throw ConfigError("prismer mode needs a resampler variant");
  if (experts.empty()) throw ConfigError("prismer mode needs at least one expert (use prismer-z for RGB only)");
  if (latents == 0) throw ConfigError("latent count must be positive");
  auto sorted = experts;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("duplicate expert kind");
}

std::vector<std::size_t> ModelConfig::resolved_stem_channels() const {
  if (!stem_channels.empty()) return stem_channels;
  const auto at_least_one = [](std::size_t v) { return std::max<std::size_t>(v, 1); };
  return {at_least_one(width / 8), at_least_one(width / 4), at_least_one(width / 2), width, width};
}

std::size_t ModelConfig::bottleneck() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(width) * adaptor_ratio)));
}

std::size_t ModelConfig::feature_tokens() const {
  return rgb_tokens() + (mode == ModelMode::kPrismer ? latents : 0);
}

bool ModelConfig::uses_instance_embeddings() const {
  return std::any_of(experts.begin(), experts.end(), [](ExpertKind k) {
    return k == ExpertKind::kObjectDetection || k == ExpertKind::kOcrDetection;
  });
}

std::vector<std::size_t> stem_strides(bool high_level) {
  if (high_level) return {2, 2, 1, 1, 1};
  return {2, 2, 2, 2, 1};
}

std::vector<ParameterSpec> parameter_layout(const ModelConfig& config) {
  config.validate();
  std::vector<ParameterSpec> layout;
  LayoutBuilder b(layout);
  const auto d = config.width;
  const auto hidden = d * config.ffn_multiplier;
  const auto channels = config.resolved_stem_channels();
  const auto inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  // Vision backbone (frozen stand-in for a pre-trained ViT) with adaptors.
  b.stem("vision.stem", 3, channels, d, ParameterGroup::kVisionBackbone);
  b.tensor("vision.positions", {config.rgb_tokens(), d}, ParameterGroup::kVisionBackbone, InitKind::kNormal, 0.1);
  for (std::size_t l = 0; l < config.encoder_layers; ++l) {
    const auto p = layer_name("vision", l);
    b.layer_norm(p + ".ln_attn", d, ParameterGroup::kVisionBackbone);
    b.attention(p + ".attn", d, ParameterGroup::kVisionBackbone);
    b.layer_norm(p + ".ln_ffn", d, ParameterGroup::kVisionBackbone);
    b.ffn(p + ".ffn", d, hidden, ParameterGroup::kVisionBackbone);
    b.adaptor(p + ".adaptor", d, config.bottleneck());
  }
  b.layer_norm("vision.ln_final", d, ParameterGroup::kVisionBackbone);

  if (config.mode == ModelMode::kPrismer) {
    for (auto kind : config.experts) {
      b.stem("experts." + std::string(expert_name(kind)), expert_channels(kind), channels, d,
             ParameterGroup::kExpertStem);
    }
    if (config.uses_instance_embeddings()) {
      b.tensor("experts.instance_embedding", {kInstanceSlots, kHighLevelChannels},
               ParameterGroup::kInstanceEmbedding, InitKind::kNormal, 0.1);
    }
    if (config.resampler == ResamplerVariant::kLearned) {
      b.tensor("resampler.latents", {config.latents, d}, ParameterGroup::kResampler, InitKind::kNormal, 1.0);
      for (std::size_t l = 0; l < config.resampler_layers; ++l) {
        const auto p = layer_name("resampler", l);
        if (config.resampler_norm) {
          b.layer_norm(p + ".ln_latents", d, ParameterGroup::kResampler);
          b.layer_norm(p + ".ln_context", d, ParameterGroup::kResampler);
        }
        b.attention(p + ".attn", d, ParameterGroup::kResampler);
        if (config.resampler_norm) b.layer_norm(p + ".ln_ffn", d, ParameterGroup::kResampler);
        b.ffn(p + ".ffn", d, hidden, ParameterGroup::kResampler);
      }
      if (config.resampler_norm) b.layer_norm("resampler.ln_final", d, ParameterGroup::kResampler);
    }
  }

  // Language backbone (frozen stand-in for a pre-trained LM) with new
  // cross-attention blocks and adaptors.
  b.tensor("language.token_embedding", {config.vocab_size, d}, ParameterGroup::kLanguageBackbone, InitKind::kNormal,
           inv_sqrt_d);
  b.tensor("language.positions", {config.max_seq_len, d}, ParameterGroup::kLanguageBackbone, InitKind::kNormal,
           0.5 * inv_sqrt_d);
  for (std::size_t l = 0; l < config.decoder_layers; ++l) {
    const auto p = layer_name("language", l);
    b.layer_norm(p + ".ln_self", d, ParameterGroup::kLanguageBackbone);
    b.attention(p + ".self_attn", d, ParameterGroup::kLanguageBackbone);
    b.layer_norm(p + ".ln_cross", d, ParameterGroup::kCrossAttention);
    b.layer_norm(p + ".ln_context", d, ParameterGroup::kCrossAttention);
    b.attention(p + ".cross_attn", d, ParameterGroup::kCrossAttention);
    b.layer_norm(p + ".ln_ffn", d, ParameterGroup::kLanguageBackbone);
    b.ffn(p + ".ffn", d, hidden, ParameterGroup::kLanguageBackbone);
    b.adaptor(p + ".adaptor", d, config.bottleneck());
  }
  b.layer_norm("language.ln_final", d, ParameterGroup::kLanguageBackbone);
  return layout;
}

// ---------------------------------------------------------------------------
// Layers

Tensor Linear::operator()(const Tensor& x) const { return ops::add_bias(ops::matmul(x, weight), bias); }

Tensor LayerNormWeights::operator()(const Tensor& x) const {
  if (!gain.defined()) return x;
  return ops::layer_norm(x, gain, bias);
}

Tensor FeedForward::operator()(const Tensor& x) const { return down(ops::gelu(up(x))); }

Tensor adaptor_forward(const AdaptorWeights& adaptor, const Tensor& x) {
  return ops::add(x, adaptor.up(ops::squared_relu(adaptor.down(x))));
}

Tensor attend(const AttentionWeights& weights, const Tensor& queries, const Tensor& keys, const Tensor& values,
              std::size_t heads, const Tensor* mask) {
  const auto q = weights.query(queries);
  const auto width = q.dim(1);
  if (heads == 0 || width % heads != 0) throw ConfigError("attention width not divisible by head count");
  const auto head_dim = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const auto head = [&](const Tensor& qh, const Tensor& kh, const Tensor& vh) {
    auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), scale);
    if (mask) scores = ops::add(scores, *mask);
    return ops::matmul(ops::softmax(scores, 1), vh);
  };
  if (heads == 1) return weights.output(head(q, keys, values));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(head(ops::slice_cols(q, h * head_dim, head_dim), ops::slice_cols(keys, h * head_dim, head_dim),
                        ops::slice_cols(values, h * head_dim, head_dim)));
  }
  return weights.output(ops::concat_cols(outs));
}

Tensor attention_forward(const AttentionWeights& weights, const Tensor& queries, const Tensor& keys_values,
                         std::size_t heads, const Tensor* mask) {
  return attend(weights, queries, weights.key(keys_values), weights.value(keys_values), heads, mask);
}

std::vector<std::size_t> sample_token_indices(std::size_t available, std::size_t count, std::uint64_t seed) {
  if (available == 0) throw ContractError("cannot sample from zero tokens");
  Rng rng(seed);
  std::vector<std::size_t> picked;
  picked.reserve(count);
  if (available >= count) {
    std::vector<std::size_t> pool(available);
    for (std::size_t i = 0; i < available; ++i) pool[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      std::swap(pool[i], pool[i + rng.below(available - i)]);
      picked.push_back(pool[i]);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) picked.push_back(rng.below(available));
  }
  return picked;
}

// ---------------------------------------------------------------------------
// Model

PrismerModel::PrismerModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), store_(ParameterStore::create(parameter_layout(config_), seed)) {
  bind();
}

PrismerModel::PrismerModel(ModelConfig config, ParameterStore store)
    : config_(std::move(config)), store_(std::move(store)) {
  const auto layout = parameter_layout(config_);
  if (layout.size() != store_.names().size()) throw ConfigError("parameter store does not match the configuration");
  for (const auto& spec : layout) {
    if (!store_.contains(spec.name)) throw ConfigError("parameter store lacks '" + spec.name + "'");
    if (store_.get(spec.name).shape() != spec.shape) {
      throw DimensionError("parameter '" + spec.name + "' has shape " + shape_to_string(store_.get(spec.name).shape()) +
                           ", expected " + shape_to_string(spec.shape));
    }
  }
  bind();
}

void PrismerModel::bind() {
  const auto get = [this](const std::string& name) { return store_.get(name); };
  const auto linear = [&](const std::string& p) { return Linear{get(p + ".weight"), get(p + ".bias")}; };
  const auto norm = [&](const std::string& p) {
    if (!store_.contains(p + ".gain")) return LayerNormWeights{};
    return LayerNormWeights{get(p + ".gain"), get(p + ".bias")};
  };
  const auto attention = [&](const std::string& p) {
    return AttentionWeights{linear(p + ".query"), linear(p + ".key"), linear(p + ".value"), linear(p + ".output")};
  };
  const auto ffn = [&](const std::string& p) { return FeedForward{linear(p + ".up"), linear(p + ".down")}; };
  const auto adaptor = [&](const std::string& p) { return AdaptorWeights{linear(p + ".down"), linear(p + ".up")}; };
  const auto stem = [&](const std::string& p, std::size_t in_channels, bool high_level) {
    Stem s;
    s.in_channels = in_channels;
    s.strides = stem_strides(high_level);
    for (std::size_t i = 0; i < s.strides.size(); ++i) {
      s.kernels.push_back(get(p + ".conv" + std::to_string(i) + ".weight"));
      s.biases.push_back(get(p + ".conv" + std::to_string(i) + ".bias"));
    }
    s.proj = linear(p + ".proj");
    return s;
  };

  rgb_stem_ = stem("vision.stem", 3, false);
  vision_positions_ = get("vision.positions");
  encoder_layers_.clear();
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const auto p = layer_name("vision", l);
    encoder_layers_.push_back(
        {norm(p + ".ln_attn"), norm(p + ".ln_ffn"), attention(p + ".attn"), ffn(p + ".ffn"), adaptor(p + ".adaptor")});
  }
  encoder_final_ = norm("vision.ln_final");

  expert_stems_.clear();
  resampler_layers_.clear();
  if (config_.mode == ModelMode::kPrismer) {
    for (auto kind : config_.experts) {
      expert_stems_.emplace_back(kind, stem("experts." + std::string(expert_name(kind)), expert_channels(kind),
                                            is_high_level(kind)));
    }
    if (config_.uses_instance_embeddings()) instance_table_ = get("experts.instance_embedding");
    if (config_.resampler == ResamplerVariant::kLearned) {
      latents_ = get("resampler.latents");
      for (std::size_t l = 0; l < config_.resampler_layers; ++l) {
        const auto p = layer_name("resampler", l);
        resampler_layers_.push_back({norm(p + ".ln_latents"), norm(p + ".ln_context"), norm(p + ".ln_ffn"),
                                     attention(p + ".attn"), ffn(p + ".ffn")});
      }
      resampler_final_ = norm("resampler.ln_final");
    }
  }

  token_embedding_ = get("language.token_embedding");
  text_positions_ = get("language.positions");
  decoder_layers_.clear();
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const auto p = layer_name("language", l);
    decoder_layers_.push_back({norm(p + ".ln_self"), norm(p + ".ln_cross"), norm(p + ".ln_context"),
                               norm(p + ".ln_ffn"), attention(p + ".self_attn"), attention(p + ".cross_attn"),
                               ffn(p + ".ffn"), adaptor(p + ".adaptor")});
  }
  decoder_final_ = norm("language.ln_final");
}

Tensor PrismerModel::run_stem(const Stem& stem, const Tensor& input) const {
  if (input.rank() != 3 || input.dim(2) != stem.in_channels) {
    throw ConfigError("stem expects [H x W x " + std::to_string(stem.in_channels) + "] input, got " +
                      shape_to_string(input.shape()));
  }
  auto x = input;
  std::size_t h = 0, w = 0;
  Tensor flat;
  for (std::size_t i = 0; i < stem.kernels.size(); ++i) {
    auto y = ops::conv2d(x, stem.kernels[i], stem.strides[i], 1);
    h = y.dim(0);
    w = y.dim(1);
    const auto c = y.dim(2);
    flat = ops::add_bias(ops::reshape(y, {h * w, c}), stem.biases[i]);
    if (i + 1 < stem.kernels.size()) x = ops::reshape(ops::gelu(flat), {h, w, c});
  }
  if (h != config_.grid_height() || w != config_.grid_width()) {
    throw DimensionError("stem produced a " + std::to_string(h) + "x" + std::to_string(w) + " grid, expected " +
                         std::to_string(config_.grid_height()) + "x" + std::to_string(config_.grid_width()));
  }
  return add_positions(stem.proj(flat));
}

Tensor PrismerModel::add_positions(const Tensor& tokens) const {
  const auto count = tokens.dim(0);
  if (count > vision_positions_.dim(0)) throw LengthError("token grid exceeds the positional table");
  return ops::add(tokens, ops::slice_rows(vision_positions_, 0, count));
}

Tensor PrismerModel::stem_forward(const Tensor& rgb) const { return run_stem(rgb_stem_, rgb); }

Tensor PrismerModel::stem_forward(const ExpertLabelMap& label) const {
  const auto it = std::find_if(expert_stems_.begin(), expert_stems_.end(),
                               [&](const auto& entry) { return entry.first == label.kind; });
  if (it == expert_stems_.end()) {
    throw ConfigError("no stem registered for expert '" + std::string(expert_name(label.kind)) + "'");
  }
  if (label.grid.rank() != 3 || label.channels() != expert_channels(label.kind)) {
    throw ConfigError("expert '" + std::string(expert_name(label.kind)) + "' expects " +
                      std::to_string(expert_channels(label.kind)) + " channels, got " +
                      shape_to_string(label.grid.shape()));
  }
  if (instance_table_.defined() && !label.instance_ids.empty()) {
    auto augmented = apply_instance_embeddings(label, instance_table_);
    return run_stem(it->second, ops::reshape(augmented, label.grid.shape()));
  }
  return run_stem(it->second, label.grid);
}

Tensor PrismerModel::resampler_forward(std::span<const Tensor> expert_tokens, std::uint64_t sample_seed) const {
  if (expert_tokens.empty()) throw ContractError("resampler needs at least one expert (use prismer-z instead)");
  if (config_.mode != ModelMode::kPrismer) throw ContractError("prismer-z has no resampler");
  const auto context = ops::concat_rows(expert_tokens);

  if (config_.resampler == ResamplerVariant::kRandomSampling) {
    const auto picked = sample_token_indices(context.dim(0), config_.latents, sample_seed);
    return ops::gather_rows(context, picked);
  }

  auto latents = latents_;
  for (const auto& layer : resampler_layers_) {
    // keys/values: expert tokens first, then the current latents
    const Tensor parts[] = {context, latents};
    const auto kv = layer.ln_context(ops::concat_rows(parts));
    latents = ops::add(latents, attention_forward(layer.attn, layer.ln_latents(latents), kv, config_.heads));
    latents = ops::add(latents, layer.ffn(layer.ln_ffn(latents)));
  }
  return resampler_final_(latents);
}

Tensor PrismerModel::encode_rgb(const Tensor& rgb) const {
  auto x = stem_forward(rgb);
  for (const auto& layer : encoder_layers_) {
    const auto h = layer.ln_attn(x);
    x = ops::add(x, attention_forward(layer.attn, h, h, config_.heads));
    x = ops::add(x, layer.ffn(layer.ln_ffn(x)));
    x = adaptor_forward(layer.adaptor, x);
  }
  return encoder_final_(x);
}

Tensor PrismerModel::encoder_forward(const Tensor& rgb, std::span<const ExpertLabelMap> experts,
                                     std::uint64_t sample_seed) const {
  if (config_.mode == ModelMode::kPrismerZ) {
    if (!experts.empty()) throw ConfigError("prismer-z mode takes no expert inputs");
    return encode_rgb(rgb);
  }
  std::vector<ExpertKind> given;
  for (const auto& e : experts) given.push_back(e.kind);
  auto expected = config_.experts;
  std::sort(given.begin(), given.end());
  std::sort(expected.begin(), expected.end());
  if (given != expected) throw ConfigError("expert inputs do not match the configured expert kinds");

  std::vector<Tensor> tokens;
  for (auto kind : config_.experts) {
    const auto& label = *std::find_if(experts.begin(), experts.end(), [&](const auto& e) { return e.kind == kind; });
    tokens.push_back(stem_forward(label));
  }
  const Tensor parts[] = {encode_rgb(rgb), resampler_forward(tokens, sample_seed)};
  return ops::concat_rows(parts);
}

DecoderContext PrismerModel::decoder_context(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != config_.width) {
    throw DimensionError("decoder expects z of width " + std::to_string(config_.width) + ", got " +
                         shape_to_string(z.shape()));
  }
  DecoderContext context;
  context.tokens = z.dim(0);
  for (const auto& layer : decoder_layers_) {
    const auto normed = layer.ln_context(z);
    context.keys.push_back(layer.cross_attn.key(normed));
    context.values.push_back(layer.cross_attn.value(normed));
  }
  return context;
}

Tensor PrismerModel::decoder_forward(const Tensor& z, std::span<const int> tokens) const {
  return decoder_forward(decoder_context(z), tokens);
}

Tensor PrismerModel::decoder_forward(const DecoderContext& context, std::span<const int> tokens) const {
  const auto length = tokens.size();
  if (length == 0) throw ContractError("decoder needs at least one token");
  if (length > config_.max_seq_len) {
    throw LengthError("sequence of " + std::to_string(length) + " tokens exceeds max length " +
                      std::to_string(config_.max_seq_len));
  }
  if (context.keys.size() != decoder_layers_.size()) throw ContractError("decoder context built for another model");
  std::vector<std::size_t> ids(length);
  for (std::size_t t = 0; t < length; ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= config_.vocab_size) {
      throw RangeError("token id " + std::to_string(tokens[t]) + " outside vocabulary");
    }
    ids[t] = static_cast<std::size_t>(tokens[t]);
  }

  std::vector<double> causal(length * length, 0.0);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = i + 1; j < length; ++j) causal[i * length + j] = kMaskedScore;
  const auto mask = Tensor::from({length, length}, std::move(causal));

  auto x = ops::add(ops::gather_rows(token_embedding_, ids), ops::slice_rows(text_positions_, 0, length));
  for (std::size_t l = 0; l < decoder_layers_.size(); ++l) {
    const auto& layer = decoder_layers_[l];
    const auto h = layer.ln_self(x);
    x = ops::add(x, attention_forward(layer.self_attn, h, h, config_.heads, &mask));
    x = ops::add(x, attend(layer.cross_attn, layer.ln_cross(x), context.keys[l], context.values[l], config_.heads));
    x = ops::add(x, layer.ffn(layer.ln_ffn(x)));
    x = adaptor_forward(layer.adaptor, x);
  }
  // output head tied to the token embedding
  return ops::matmul(decoder_final_(x), ops::transpose(token_embedding_));
}

Tensor PrismerModel::prefix_lm_loss(const Tensor& z, const TokenSequence& sequence) const {
  return prefix_lm_loss(decoder_context(z), sequence);
}

Tensor PrismerModel::prefix_lm_loss(const DecoderContext& context, const TokenSequence& sequence) const {
  const auto length = sequence.tokens.size();
  if (sequence.prefix >= length) {
    throw EmptyLossError("prefix covers the whole sequence; nothing to predict");
  }
  std::vector<int> inputs;
  inputs.reserve(length);
  inputs.push_back(kBosToken);
  inputs.insert(inputs.end(), sequence.tokens.begin(), sequence.tokens.end() - 1);
  std::vector<bool> mask(length, false);
  for (std::size_t t = sequence.prefix; t < length; ++t) mask[t] = true;
  return ops::cross_entropy(decoder_forward(context, inputs), sequence.tokens, mask);
}

}  // namespace prismer
