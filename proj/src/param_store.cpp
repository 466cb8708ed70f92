#include "css/param_store.hpp"

#include <stdexcept>

namespace css {

std::size_t ParamStore::add(std::string name, ParamGroup group, Tensor value) {
  if (index_.count(name) > 0) {
    throw std::invalid_argument("ParamStore: duplicate parameter name " + name);
  }
  Tensor grad(value.shape(), 0.0);
  std::size_t id = entries_.size();
  index_.emplace(name, id);
  entries_.push_back(ParamEntry{std::move(name), group, std::move(value), std::move(grad)});
  return id;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("ParamStore: unknown parameter " + name);
  }
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.grad.zero();
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::vector<double> ParamStore::flatten_values(const std::vector<std::size_t>& entries) const {
  std::vector<double> flat;
  for (std::size_t i : entries) {
    const auto& v = entries_[i].value;
    flat.insert(flat.end(), v.data(), v.data() + v.size());
  }
  return flat;
}

std::vector<double> ParamStore::flatten_grads(const std::vector<std::size_t>& entries) const {
  std::vector<double> flat;
  for (std::size_t i : entries) {
    const auto& g = entries_[i].grad;
    flat.insert(flat.end(), g.data(), g.data() + g.size());
  }
  return flat;
}

void ParamStore::write_grads(const std::vector<std::size_t>& entries,
                             const std::vector<double>& flat) {
  std::size_t pos = 0;
  for (std::size_t i : entries) {
    auto& g = entries_[i].grad;
    if (pos + g.size() > flat.size()) {
      throw std::invalid_argument("ParamStore::write_grads: flat vector too short");
    }
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = flat[pos + k];
    pos += g.size();
  }
  if (pos != flat.size()) {
    throw std::invalid_argument("ParamStore::write_grads: flat vector length mismatch");
  }
}

std::vector<std::size_t> ParamStore::all_indices() const {
  std::vector<std::size_t> ids(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) ids[i] = i;
  return ids;
}

std::vector<std::size_t> ParamStore::indices_of_group(ParamGroup g) const {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].group == g) ids.push_back(i);
  }
  return ids;
}

}  // namespace css
