#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "css/tensor.hpp"

namespace css {

/// Coarse ownership tag used to decide which parameters count as shared between
/// training objectives (a group is shared when at least two active losses
/// backpropagate into it).
enum class ParamGroup { kEncoder, kFusion, kHeads };

struct ParamEntry {
  std::string name;
  ParamGroup group;
  Tensor value;
  Tensor grad;  // same shape as value
};

/// Flat named registry of trainable tensors. Iteration order is insertion order
/// and is the registry order used by optimizers, gradient flattening, and
/// checkpoints, so it must be identical across runs with the same config.
class ParamStore {
 public:
  std::size_t add(std::string name, ParamGroup group, Tensor value);

  std::size_t size() const { return entries_.size(); }
  ParamEntry& entry(std::size_t i) { return entries_[i]; }
  const ParamEntry& entry(std::size_t i) const { return entries_[i]; }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const;
  ParamEntry& at(const std::string& name) { return entries_[index_of(name)]; }
  const ParamEntry& at(const std::string& name) const { return entries_[index_of(name)]; }

  void zero_grads();
  std::size_t total_elements() const;

  /// Elements across the given entries, concatenated in registry order.
  std::vector<double> flatten_values(const std::vector<std::size_t>& entries) const;
  std::vector<double> flatten_grads(const std::vector<std::size_t>& entries) const;
  /// Inverse of flatten_grads over the same entry subset.
  void write_grads(const std::vector<std::size_t>& entries, const std::vector<double>& flat);

  std::vector<std::size_t> all_indices() const;
  std::vector<std::size_t> indices_of_group(ParamGroup g) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace css
