#include "prismer/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "prismer/config_io.hpp"
#include "prismer/error.hpp"
#include "prismer/kv_file.hpp"
#include "prismer/ops.hpp"
#include "prismer/rng.hpp"
#include "prismer/tensor_io.hpp"

namespace prismer {

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

std::string_view phase_name(TrainPhase phase) { return phase == TrainPhase::kPretrain ? "pretrain" : "finetune"; }

TrainPhase parse_phase(std::string_view name) {
  if (name == "pretrain") return TrainPhase::kPretrain;
  if (name == "finetune") return TrainPhase::kFinetune;
  throw ConfigError("unknown training phase '" + std::string(name) + "'");
}

std::string_view freeze_policy_name(FreezePolicy policy, TrainPhase phase) {
  switch (policy) {
    case FreezePolicy::kFreezeVisionAndLanguage:
      return "freeze-vision-and-language";
    case FreezePolicy::kFreezeVisionOnly:
      return phase == TrainPhase::kPretrain ? "freeze-vision-only" : "freeze-vision";
    case FreezePolicy::kFreezeLanguageOnly:
      return "freeze-language-only";
    case FreezePolicy::kAllTrainable:
      return "all-trainable";
  }
  return "all-trainable";
}

FreezePolicy parse_freeze_policy(std::string_view name, TrainPhase phase) {
  for (auto policy : {FreezePolicy::kFreezeVisionAndLanguage, FreezePolicy::kFreezeVisionOnly,
                      FreezePolicy::kFreezeLanguageOnly, FreezePolicy::kAllTrainable}) {
    if (freeze_policy_name(policy, phase) == name) return policy;
  }
  throw ConfigError("unknown freeze policy '" + std::string(name) + "' for phase " + std::string(phase_name(phase)));
}

void TrainConfig::validate() const {
  if (warmup_steps > total_steps) {
    throw ConfigError("warmup steps (" + std::to_string(warmup_steps) + ") exceed total steps (" +
                      std::to_string(total_steps) + ")");
  }
  if (!(peak_lr > 0.0)) throw ConfigError("peak learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("gradient clip must be non-negative");
}

bool policy_freezes(FreezePolicy policy, ParameterGroup group) {
  const bool vision = group == ParameterGroup::kVisionBackbone;
  const bool language = group == ParameterGroup::kLanguageBackbone;
  switch (policy) {
    case FreezePolicy::kFreezeVisionAndLanguage:
      return vision || language;
    case FreezePolicy::kFreezeVisionOnly:
      return vision;
    case FreezePolicy::kFreezeLanguageOnly:
      return language;
    case FreezePolicy::kAllTrainable:
      return false;
  }
  return false;
}

Partition partition_parameters(ParameterStore& store, FreezePolicy policy) {
  Partition out;
  for (const auto& name : store.names()) {
    const bool frozen = policy_freezes(policy, store.group(name));
    store.set_frozen(name, frozen);
    const auto n = store.get(name).numel();
    if (frozen) {
      out.frozen.push_back(name);
      out.frozen_count += n;
    } else {
      out.trainable.push_back(name);
      out.trainable_count += n;
    }
  }
  return out;
}

bool decays(const std::string& name) { return !ends_with(name, ".bias") && !ends_with(name, ".gain"); }

void adamw_step(ParameterStore& store, const GradientMap& grads, double lr, const AdamWOptions& options) {
  for (const auto& [name, _] : grads) {
    if (store.is_frozen(name)) throw ContractError("gradient supplied for frozen parameter '" + name + "'");
  }
  const auto trainable = store.trainable_names();
  for (const auto& name : trainable) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("no gradient for trainable parameter '" + name + "'");
    if (it->second.size() != store.get(name).numel()) {
      throw DimensionError("gradient for '" + name + "' has " + std::to_string(it->second.size()) + " entries");
    }
  }

  const auto t = static_cast<double>(store.step() + 1);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  for (const auto& name : trainable) {
    const auto& g = grads.at(name);
    auto values = store.get(name).mutable_data();
    auto& state = store.moments()[name];
    if (state.first.empty()) {
      state.first.assign(values.size(), 0.0);
      state.second.assign(values.size(), 0.0);
    }
    const double decay = decays(name) ? lr * options.weight_decay : 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] -= decay * values[i];
      state.first[i] = options.beta1 * state.first[i] + (1.0 - options.beta1) * g[i];
      state.second[i] = options.beta2 * state.second[i] + (1.0 - options.beta2) * g[i] * g[i];
      const double m_hat = state.first[i] / correction1;
      const double v_hat = state.second[i] / correction2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
  store.set_step(store.step() + 1);
}

GradientMap collect_gradients(const ParameterStore& store) {
  GradientMap grads;
  for (const auto& name : store.trainable_names()) {
    const auto& tensor = store.get(name);
    if (tensor.has_grad()) {
      const auto g = tensor.grad();
      grads.emplace(name, std::vector<double>(g.begin(), g.end()));
    } else {
      grads.emplace(name, std::vector<double>(tensor.numel(), 0.0));
    }
  }
  return grads;
}

double global_norm(const GradientMap& grads) {
  double total = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g) total += v * v;
  return std::sqrt(total);
}

double lr_at(std::size_t step, const TrainConfig& config) {
  if (step > config.total_steps) {
    throw RangeError("step " + std::to_string(step) + " beyond total " + std::to_string(config.total_steps));
  }
  if (step < config.warmup_steps) {
    return config.peak_lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  if (config.total_steps == config.warmup_steps) return config.peak_lr;
  const double progress = static_cast<double>(step - config.warmup_steps) /
                          static_cast<double>(config.total_steps - config.warmup_steps);
  return config.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Tensor batch_loss(const PrismerModel& model, std::span<const TrainingExample* const> batch, std::uint64_t sample_seed) {
  std::vector<Tensor> losses;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& example = *batch[i];
    const auto context =
        model.decoder_context(model.encoder_forward(example.rgb, example.experts, derive_seed(sample_seed, i)));
    for (const auto& seq : example.sequences) {
      losses.push_back(ops::reshape(model.prefix_lm_loss(context, seq), {1, 1}));
    }
  }
  if (losses.empty()) throw EmptyLossError("batch holds no token sequences");
  return ops::mean(ops::concat_rows(losses));
}

TrainResult train_loop(PrismerModel& model, std::span<const TrainingExample> dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw ContractError("training needs a non-empty dataset");
  auto& store = model.parameters();
  partition_parameters(store, config.policy);
  const AdamWOptions adam{config.beta1, config.beta2, config.eps, config.weight_decay};

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::size_t epoch = 0;
  const auto reshuffle = [&] {
    order.resize(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(derive_seed(config.seed, "epoch"), epoch++));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    cursor = 0;
  };
  reshuffle();

  TrainResult result;
  std::vector<const TrainingExample*> batch;
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) reshuffle();
      batch.push_back(&dataset[order[cursor++]]);
    }
    store.zero_grad();
    Tensor loss;
    try {
      loss = batch_loss(model, batch, derive_seed(derive_seed(config.seed, "sample"), step));
    } catch (const NumericError& e) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (" + e.what() + ")");
    }
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(step));
    loss.backward();

    auto grads = collect_gradients(store);
    const double norm = global_norm(grads);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step));
    if (config.grad_clip > 0.0 && norm > config.grad_clip) {
      const double factor = config.grad_clip / norm;
      for (auto& [_, g] : grads)
        for (auto& v : g) v *= factor;
    }
    const double lr = lr_at(step, config);
    adamw_step(store, grads, lr, adam);
    result.trace.push_back({step, value, lr, norm});
  }
  store.zero_grad();
  return result;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "step,loss,lr,grad_norm\n";
  for (const auto& row : trace) {
    out += std::to_string(row.step) + "," + format_double(row.loss) + "," + format_double(row.lr) + "," +
           format_double(row.grad_norm) + "\n";
  }
  return out;
}

void write_trace(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  const auto text = trace_csv(trace);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_checkpoint(const std::filesystem::path& dir, const PrismerModel& model) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  const auto& store = model.parameters();
  KeyValueFile manifest;
  manifest.set("format", "prismer-checkpoint-1");
  manifest.set("step", std::to_string(store.step()));
  write_model_config(manifest, model.config());
  const auto names = store.names();
  manifest.set("param.count", std::to_string(names.size()));
  for (const auto& name : names) {
    manifest.set("param." + name, store.is_frozen(name) ? "frozen" : "trainable");
    write_pten(dir / (name + ".pten"), store.get(name));
  }
  manifest.save(dir / "manifest.txt");
}

PrismerModel load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest = KeyValueFile::load(dir / "manifest.txt");
  if (manifest.require("format") != "prismer-checkpoint-1") throw IoError("unrecognised checkpoint format");
  PrismerModel model(read_model_config(manifest), 0);
  auto& store = model.parameters();
  const auto names = store.names();
  if (std::to_string(names.size()) != manifest.require("param.count")) {
    throw ConfigError("checkpoint parameter count does not match its configuration");
  }
  for (const auto& name : names) {
    const auto flag = manifest.require("param." + name);
    if (flag != "frozen" && flag != "trainable") throw ConfigError("bad freeze flag for '" + name + "'");
    const auto tensor = read_pten(dir / (name + ".pten"));
    if (tensor.shape() != store.get(name).shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_to_string(tensor.shape()));
    }
    store.assign(name, tensor.data());
    store.set_frozen(name, flag == "frozen");
  }
  store.set_step(static_cast<std::size_t>(std::stoull(manifest.require("step"))));
  return model;
}

}  // namespace prismer
