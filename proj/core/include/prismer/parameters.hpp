#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prismer/tensor.hpp"

namespace prismer {

// Which part of the network a parameter belongs to. Freeze policies act on
// the two backbone groups; everything else is added by the model.
enum class ParameterGroup {
  kVisionBackbone,
  kLanguageBackbone,
  kExpertStem,
  kInstanceEmbedding,
  kResampler,
  kAdaptor,
  kCrossAttention,
};

std::string_view group_name(ParameterGroup group);
bool is_backbone(ParameterGroup group);

enum class InitKind { kZeros, kOnes, kNormal };

struct ParameterSpec {
  std::string name;
  Shape shape;
  ParameterGroup group;
  InitKind init = InitKind::kNormal;
  double stddev = 0.0;

  std::size_t numel() const { return shape_numel(shape); }
};

// Adam moments for one trainable parameter.
struct MomentState {
  std::vector<double> first;
  std::vector<double> second;
};

// Flat registry of named parameters partitioned into frozen and trainable.
// The name set is fixed at construction; iteration is in name order.
class ParameterStore {
 public:
  ParameterStore() = default;
  // Each parameter draws from its own stream derived from (seed, name), so a
  // parameter's initial value does not depend on which others exist.
  static ParameterStore create(const std::vector<ParameterSpec>& layout, std::uint64_t seed);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  ParameterGroup group(const std::string& name) const;
  std::vector<std::string> names() const;

  bool is_frozen(const std::string& name) const;
  // Also toggles requires_grad and drops optimizer state of frozen entries.
  void set_frozen(const std::string& name, bool frozen);
  std::vector<std::string> trainable_names() const;
  std::vector<std::string> frozen_names() const;

  std::size_t total_count() const;
  std::size_t trainable_count() const;

  // Optimizer state, present only for trainable parameters that were stepped.
  std::map<std::string, MomentState>& moments() { return moments_; }
  const std::map<std::string, MomentState>& moments() const { return moments_; }
  std::size_t step() const { return step_; }
  void set_step(std::size_t step) { step_ = step; }

  void zero_grad();
  // Replaces values of an existing parameter (checkpoint restore).
  void assign(const std::string& name, std::span<const double> values);

 private:
  struct Entry {
    Tensor value;
    ParameterGroup group;
    bool frozen = false;
  };
  const Entry& entry(const std::string& name) const;
  std::map<std::string, Entry> entries_;
  std::map<std::string, MomentState> moments_;
  std::size_t step_ = 0;
};

}  // namespace prismer
