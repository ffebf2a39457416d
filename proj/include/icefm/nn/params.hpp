// SPDX-License-Identifier: Apache-2.0
//
// Named parameter tensors and the gradient buffers aligned with them.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "icefm/errors.hpp"
#include "icefm/tensor.hpp"

namespace icefm {

/// Disjoint roles that fine-tuning strategies select on.
enum class ParamRole { encoder_weight, encoder_bias, attn_q, attn_k, attn_v, attn_out, mlp, norm, decoder, prompt, lora };

inline constexpr ParamRole kAllRoles[] = {ParamRole::encoder_weight, ParamRole::encoder_bias, ParamRole::attn_q, ParamRole::attn_k,
                                          ParamRole::attn_v,         ParamRole::attn_out,     ParamRole::mlp,    ParamRole::norm,
                                          ParamRole::decoder,        ParamRole::prompt,       ParamRole::lora};

inline std::string_view to_string(ParamRole r) {
  switch (r) {
    case ParamRole::encoder_weight: return "encoder_weight";
    case ParamRole::encoder_bias: return "encoder_bias";
    case ParamRole::attn_q: return "attn_q";
    case ParamRole::attn_k: return "attn_k";
    case ParamRole::attn_v: return "attn_v";
    case ParamRole::attn_out: return "attn_out";
    case ParamRole::mlp: return "mlp";
    case ParamRole::norm: return "norm";
    case ParamRole::decoder: return "decoder";
    case ParamRole::prompt: return "prompt";
    case ParamRole::lora: return "lora";
  }
  return "?";
}

inline ParamRole param_role_from_string(std::string_view s) {
  for (auto r : kAllRoles)
    if (to_string(r) == s) return r;
  throw ValidationError("unknown parameter role '" + std::string(s) + "'");
}

/// True for the backbone roles that a frozen-encoder strategy locks.
inline bool is_encoder_role(ParamRole r) {
  return r != ParamRole::decoder && r != ParamRole::prompt && r != ParamRole::lora;
}

template <typename S>
struct Parameter {
  std::string path;
  ParamRole role = ParamRole::encoder_weight;
  RowMatrix<S> value;
  bool trainable = true;

  [[nodiscard]] std::int64_t count() const { return static_cast<std::int64_t>(value.size()); }
};

template <typename S>
class ParameterSet {
 public:
  std::size_t add(std::string path, ParamRole role, RowMatrix<S> init) {
    if (by_path_.count(path)) throw ValidationError("duplicate parameter path '" + path + "'");
    by_path_.emplace(path, items_.size());
    items_.push_back(Parameter<S>{std::move(path), role, std::move(init), true});
    return items_.size() - 1;
  }

  [[nodiscard]] std::size_t size() const { return items_.size(); }
  Parameter<S>& operator[](std::size_t i) { return items_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return items_[i]; }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  [[nodiscard]] std::optional<std::size_t> find(const std::string& path) const {
    auto it = by_path_.find(path);
    if (it == by_path_.end()) return std::nullopt;
    return it->second;
  }
  const RowMatrix<S>& value(std::size_t i) const { return items_[i].value; }

  [[nodiscard]] std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& p : items_) n += p.count();
    return n;
  }
  [[nodiscard]] std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& p : items_)
      if (p.trainable) n += p.count();
    return n;
  }

  template <typename T>
  [[nodiscard]] ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& p : items_) {
      out.add(p.path, p.role, p.value.template cast<T>());
      out[out.size() - 1].trainable = p.trainable;
    }
    return out;
  }

 private:
  std::vector<Parameter<S>> items_;
  std::unordered_map<std::string, std::size_t> by_path_;
};

/// Gradient storage aligned with a ParameterSet. Frozen parameters get an
/// empty slot, which layers treat as "do not compute this gradient".
template <typename S>
struct Gradients {
  std::vector<RowMatrix<S>> slots;

  static Gradients for_trainable(const ParameterSet<S>& params) {
    Gradients g;
    g.slots.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].trainable) g.slots[i] = RowMatrix<S>::Zero(params[i].value.rows(), params[i].value.cols());
    return g;
  }

  [[nodiscard]] bool wants(std::size_t i) const { return slots[i].size() > 0; }
  [[nodiscard]] bool wants_any(std::size_t first, std::size_t last) const {
    for (std::size_t i = first; i < last; ++i)
      if (wants(i)) return true;
    return false;
  }

  void add(const Gradients& other) {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (wants(i)) slots[i] += other.slots[i];
  }
  void set_zero() {
    for (auto& s : slots)
      if (s.size() > 0) s.setZero();
  }
};

}  // namespace icefm
