#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "difaug/error.hpp"
#include "difaug/tape.hpp"
#include "difaug/tensor.hpp"

namespace difaug {

/// Ordered registry of named parameter tensors.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  void add(std::string name, Tensor<T> t) {
    for (const auto& e : entries_) {
      if (e.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    }
    entries_.push_back({std::move(name), std::move(t)});
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  Tensor<T>& operator[](std::size_t i) { return entries_.at(i).tensor; }
  const Tensor<T>& operator[](std::size_t i) const { return entries_.at(i).tensor; }

  Tensor<T>& at(std::string_view name) {
    for (auto& e : entries_) {
      if (e.name == name) return e.tensor;
    }
    throw ConfigError("no parameter named '" + std::string(name) + "'");
  }
  const Tensor<T>& at(std::string_view name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto& e : entries_) e.tensor.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  // Registers every tensor as a tape leaf, in registry order.
  std::vector<Var> bind(Tape<T>& tape) {
    std::vector<Var> vars;
    vars.reserve(entries_.size());
    for (auto& e : entries_) vars.push_back(tape.param(e.tensor));
    return vars;
  }

  // Same, but no gradient flows into the tensors.
  std::vector<Var> bind_frozen(Tape<T>& tape) const {
    std::vector<Var> vars;
    vars.reserve(entries_.size());
    for (const auto& e : entries_) vars.push_back(tape.frozen(e.tensor));
    return vars;
  }

  // Same names and shapes in the same order.
  bool same_layout(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (entries_[i].name != other.entries_[i].name ||
          entries_[i].tensor.shape() != other.entries_[i].tensor.shape()) {
        return false;
      }
    }
    return true;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) {
      auto t = e.tensor.template cast<U>();
      t.set_requires_grad(e.tensor.requires_grad());
      out.add(e.name, std::move(t));
    }
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name ||
          !(a.entries_[i].tensor == b.entries_[i].tensor)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
};

inline constexpr std::string_view kParamsFormatVersion = "difaug-params-v1";

/// Writes params as an 8-byte little-endian header length, a JSON header
/// (version, precision, endianness, tensor registry, caller metadata) and
/// the raw little-endian values in registry order.
template <typename T>
void save_params(const std::filesystem::path& path, const ParamSet<T>& params,
                 const nlohmann::json& metadata = nlohmann::json::object());

template <typename T>
struct LoadedParams {
  ParamSet<T> params;
  nlohmann::json metadata;
};

// Values stored at either precision are converted to T.
template <typename T>
LoadedParams<T> load_params(const std::filesystem::path& path);

}  // namespace difaug
