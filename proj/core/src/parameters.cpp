#include "prismer/parameters.hpp"

#include "prismer/error.hpp"
#include "prismer/rng.hpp"

namespace prismer {

std::string_view group_name(ParameterGroup group) {
  switch (group) {
    case ParameterGroup::kVisionBackbone:
      return "vision-backbone";
    case ParameterGroup::kLanguageBackbone:
      return "language-backbone";
    case ParameterGroup::kExpertStem:
      return "expert-stem";
    case ParameterGroup::kInstanceEmbedding:
      return "instance-embedding";
    case ParameterGroup::kResampler:
      return "resampler";
    case ParameterGroup::kAdaptor:
      return "adaptor";
    case ParameterGroup::kCrossAttention:
      return "cross-attention";
  }
  return "unknown";
}

bool is_backbone(ParameterGroup group) {
  return group == ParameterGroup::kVisionBackbone || group == ParameterGroup::kLanguageBackbone;
}

ParameterStore ParameterStore::create(const std::vector<ParameterSpec>& layout, std::uint64_t seed) {
  ParameterStore store;
  for (const auto& spec : layout) {
    if (store.entries_.count(spec.name)) throw ConfigError("duplicate parameter name '" + spec.name + "'");
    std::vector<double> values(spec.numel());
    switch (spec.init) {
      case InitKind::kZeros:
        break;
      case InitKind::kOnes:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case InitKind::kNormal: {
        Rng rng(derive_seed(seed, spec.name));
        for (auto& v : values) v = spec.stddev * rng.normal();
        break;
      }
    }
    store.entries_.emplace(spec.name, Entry{Tensor::from(spec.shape, std::move(values), true), spec.group, false});
  }
  return store;
}

const ParameterStore::Entry& ParameterStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const { return entry(name).value; }

Tensor& ParameterStore::get(const std::string& name) { return const_cast<Entry&>(entry(name)).value; }

ParameterGroup ParameterStore::group(const std::string& name) const { return entry(name).group; }

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

bool ParameterStore::is_frozen(const std::string& name) const { return entry(name).frozen; }

void ParameterStore::set_frozen(const std::string& name, bool frozen) {
  auto& e = const_cast<Entry&>(entry(name));
  e.frozen = frozen;
  e.value.set_requires_grad(!frozen);
  if (frozen) moments_.erase(name);
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (!e.frozen) out.push_back(name);
  return out;
}

std::vector<std::string> ParameterStore::frozen_names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (e.frozen) out.push_back(name);
  return out;
}

std::size_t ParameterStore::total_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.numel();
  return n;
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_)
    if (!e.frozen) n += e.value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, e] : entries_) e.value.zero_grad();
}

void ParameterStore::assign(const std::string& name, std::span<const double> values) {
  auto& t = get(name);
  if (values.size() != t.numel()) {
    throw DimensionError("parameter '" + name + "' expects " + std::to_string(t.numel()) + " values, got " +
                         std::to_string(values.size()));
  }
  auto dst = t.mutable_data();
  std::copy(values.begin(), values.end(), dst.begin());
}

}  // namespace prismer
