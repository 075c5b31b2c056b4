#include "prismer/config_io.hpp"

#include <charconv>
#include <set>
#include <sstream>

#include "prismer/error.hpp"

namespace prismer {

namespace {

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ConfigError("'" + key + "' expects an unsigned integer, got '" + text + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& text) {
  int v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ConfigError("'" + key + "' expects an integer, got '" + text + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + text + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_u64(key, item));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

// Visits every key of `section` and rejects the ones no handler accepted.
template <typename Handler>
void read_section(const KeyValueFile& kv, const std::string& section, Handler&& handle) {
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind(section, 0) != 0) continue;
    const auto field = key.substr(section.size());
    if (!handle(field, key, value)) throw ConfigError("unknown configuration key '" + key + "'");
  }
}

}  // namespace

std::string join_expert_kinds(const std::vector<ExpertKind>& kinds) {
  std::string out;
  for (std::size_t i = 0; i < kinds.size(); ++i) out += (i ? "," : "") + std::string(expert_name(kinds[i]));
  return out;
}

std::vector<ExpertKind> parse_expert_list(const std::string& text) {
  std::vector<ExpertKind> out;
  if (text.empty() || text == "none") return out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_expert_kind(item));
  return out;
}

void write_model_config(KeyValueFile& kv, const ModelConfig& c) {
  kv.set("model.mode", std::string(mode_name(c.mode)));
  kv.set("model.image_height", std::to_string(c.image_height));
  kv.set("model.image_width", std::to_string(c.image_width));
  kv.set("model.width", std::to_string(c.width));
  kv.set("model.heads", std::to_string(c.heads));
  kv.set("model.encoder_layers", std::to_string(c.encoder_layers));
  kv.set("model.decoder_layers", std::to_string(c.decoder_layers));
  kv.set("model.ffn_multiplier", std::to_string(c.ffn_multiplier));
  kv.set("model.latents", std::to_string(c.latents));
  kv.set("model.resampler_layers", std::to_string(c.resampler_layers));
  kv.set("model.resampler", std::string(resampler_name(c.resampler)));
  kv.set("model.resampler_norm", c.resampler_norm ? "true" : "false");
  kv.set("model.adaptor_ratio", format_double(c.adaptor_ratio));
  kv.set("model.vocab_size", std::to_string(c.vocab_size));
  kv.set("model.max_seq_len", std::to_string(c.max_seq_len));
  kv.set("model.experts", join_expert_kinds(c.experts));
  kv.set("model.stem_channels", join_sizes(c.stem_channels));
  kv.set("model.external_expert_params", std::to_string(c.external_expert_params));
}

ModelConfig read_model_config(const KeyValueFile& kv, ModelConfig c) {
  read_section(kv, "model.", [&](const std::string& f, const std::string& key, const std::string& v) {
    if (f == "mode") c.mode = parse_mode(v);
    else if (f == "image_height") c.image_height = parse_u64(key, v);
    else if (f == "image_width") c.image_width = parse_u64(key, v);
    else if (f == "width") c.width = parse_u64(key, v);
    else if (f == "heads") c.heads = parse_u64(key, v);
    else if (f == "encoder_layers") c.encoder_layers = parse_u64(key, v);
    else if (f == "decoder_layers") c.decoder_layers = parse_u64(key, v);
    else if (f == "ffn_multiplier") c.ffn_multiplier = parse_u64(key, v);
    else if (f == "latents") c.latents = parse_u64(key, v);
    else if (f == "resampler_layers") c.resampler_layers = parse_u64(key, v);
    else if (f == "resampler") c.resampler = parse_resampler(v);
    else if (f == "resampler_norm") c.resampler_norm = parse_bool(key, v);
    else if (f == "adaptor_ratio") c.adaptor_ratio = parse_double(key, v);
    else if (f == "vocab_size") c.vocab_size = parse_u64(key, v);
    else if (f == "max_seq_len") c.max_seq_len = parse_u64(key, v);
    else if (f == "experts") c.experts = parse_expert_list(v);
    else if (f == "stem_channels") c.stem_channels = parse_size_list(key, v);
    else if (f == "external_expert_params") c.external_expert_params = parse_u64(key, v);
    else return false;
    return true;
  });
  c.validate();
  return c;
}

void write_train_config(KeyValueFile& kv, const TrainConfig& c) {
  kv.set("train.peak_lr", format_double(c.peak_lr));
  kv.set("train.warmup_steps", std::to_string(c.warmup_steps));
  kv.set("train.total_steps", std::to_string(c.total_steps));
  kv.set("train.weight_decay", format_double(c.weight_decay));
  kv.set("train.beta1", format_double(c.beta1));
  kv.set("train.beta2", format_double(c.beta2));
  kv.set("train.eps", format_double(c.eps));
  kv.set("train.batch_size", std::to_string(c.batch_size));
  kv.set("train.seed", std::to_string(c.seed));
  kv.set("train.phase", std::string(phase_name(c.phase)));
  kv.set("train.policy", std::string(freeze_policy_name(c.policy, c.phase)));
  kv.set("train.grad_clip", format_double(c.grad_clip));
}

TrainConfig read_train_config(const KeyValueFile& kv, TrainConfig c) {
  // the policy name depends on the phase, so it is resolved last
  std::optional<std::string> policy;
  read_section(kv, "train.", [&](const std::string& f, const std::string& key, const std::string& v) {
    if (f == "peak_lr") c.peak_lr = parse_double(key, v);
    else if (f == "warmup_steps") c.warmup_steps = parse_u64(key, v);
    else if (f == "total_steps") c.total_steps = parse_u64(key, v);
    else if (f == "weight_decay") c.weight_decay = parse_double(key, v);
    else if (f == "beta1") c.beta1 = parse_double(key, v);
    else if (f == "beta2") c.beta2 = parse_double(key, v);
    else if (f == "eps") c.eps = parse_double(key, v);
    else if (f == "batch_size") c.batch_size = parse_u64(key, v);
    else if (f == "seed") c.seed = parse_u64(key, v);
    else if (f == "phase") c.phase = parse_phase(v);
    else if (f == "policy") policy = v;
    else if (f == "grad_clip") c.grad_clip = parse_double(key, v);
    else return false;
    return true;
  });
  if (policy) c.policy = parse_freeze_policy(*policy, c.phase);
  c.validate();
  return c;
}

void write_dataset_spec(KeyValueFile& kv, const DatasetSpec& s) {
  kv.set("data.scenes", std::to_string(s.scenes));
  kv.set("data.difficulty", std::to_string(s.difficulty));
  kv.set("data.seed", std::to_string(s.seed));
  kv.set("data.height", std::to_string(s.height));
  kv.set("data.width", std::to_string(s.width));
  kv.set("experts.kinds", join_expert_kinds(s.experts));
  kv.set("experts.corruption", format_double(s.corruption.fraction));
  kv.set("experts.corrupt_kinds", join_expert_kinds(s.corruption.kinds));
}

DatasetSpec read_dataset_spec(const KeyValueFile& kv, DatasetSpec s) {
  read_section(kv, "data.", [&](const std::string& f, const std::string& key, const std::string& v) {
    if (f == "scenes") s.scenes = parse_u64(key, v);
    else if (f == "difficulty") s.difficulty = parse_int(key, v);
    else if (f == "seed") s.seed = parse_u64(key, v);
    else if (f == "height") s.height = parse_int(key, v);
    else if (f == "width") s.width = parse_int(key, v);
    else return false;
    return true;
  });
  read_section(kv, "experts.", [&](const std::string& f, const std::string& key, const std::string& v) {
    if (f == "kinds") s.experts = parse_expert_list(v);
    else if (f == "corruption") s.corruption.fraction = parse_double(key, v);
    else if (f == "corrupt_kinds") s.corruption.kinds = parse_expert_list(v);
    else return false;
    return true;
  });
  return s;
}

RunConfig read_run_config(const KeyValueFile& kv, RunConfig base) {
  RunConfig out;
  out.model = read_model_config(kv, base.model);
  out.train = read_train_config(kv, base.train);
  out.data = read_dataset_spec(kv, base.data);
  // expert lists default to each other so one section suffices
  if (!kv.contains("experts.kinds") && kv.contains("model.experts")) out.data.experts = out.model.experts;
  if (!kv.contains("model.experts") && kv.contains("experts.kinds")) {
    out.model.experts = out.data.experts;
    if (out.model.experts.empty()) out.model = ModelConfig::prismer_z(out.model);
    out.model.validate();
  }
  for (const auto& [key, _] : kv.entries()) {
    const auto dot = key.find('.');
    static const std::set<std::string> sections = {"model", "train", "data", "experts"};
    if (dot == std::string::npos || !sections.count(key.substr(0, dot))) {
      throw ConfigError("configuration key '" + key + "' lies outside the model/train/data/experts sections");
    }
  }
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  return read_run_config(KeyValueFile::load(path), std::move(base));
}

KeyValueFile to_key_values(const RunConfig& config) {
  KeyValueFile kv;
  write_model_config(kv, config.model);
  write_train_config(kv, config.train);
  write_dataset_spec(kv, config.data);
  return kv;
}

}  // namespace prismer
