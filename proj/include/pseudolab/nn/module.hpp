#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pseudolab/nn/ops.hpp"
#include "pseudolab/nn/tensor.hpp"

namespace pseudolab::nn {

/// Ordered, named list of trainable tensors. Copies share storage with the
/// owning model.
struct ParameterSet {
  std::vector<std::pair<std::string, Tensor>> entries;

  void add(std::string name, Tensor t) { entries.emplace_back(std::move(name), std::move(t)); }
  void append(const ParameterSet& other, const std::string& prefix) {
    for (const auto& [n, t] : other.entries) entries.emplace_back(prefix + n, t);
  }
  [[nodiscard]] std::size_t size() const { return entries.size(); }
  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.second.numel();
    return n;
  }
  void zero_grad() {
    for (auto& e : entries) e.second.zero_grad();
  }
  [[nodiscard]] std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& e : entries) out.push_back(e.second);
    return out;
  }

  /// Copy of every parameter's values (for best-epoch snapshots).
  [[nodiscard]] std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.emplace_back(e.second.data().begin(), e.second.data().end());
    return out;
  }
  void restore(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != entries.size()) throw ShapeError("snapshot does not match parameter set");
    for (std::size_t i = 0; i < snap.size(); ++i) {
      auto d = entries[i].second.data();
      if (snap[i].size() != d.size()) throw ShapeError("snapshot entry size mismatch for " + entries[i].first);
      std::copy(snap[i].begin(), snap[i].end(), d.begin());
    }
  }
};

inline nlohmann::json to_json(const ParameterSet& params) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, t] : params.entries) {
    arr.push_back({{"name", name},
                   {"shape", t.shape()},
                   {"data", std::vector<double>(t.data().begin(), t.data().end())}});
  }
  return arr;
}

/// Loads values into an existing parameter set; names and shapes must match.
inline void load_json(ParameterSet& params, const nlohmann::json& arr) {
  if (!arr.is_array() || arr.size() != params.size()) {
    throw SchemaError("parameter document has " + std::to_string(arr.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params.entries[i];
    const auto& j = arr[i];
    if (j.at("name").get<std::string>() != name) {
      throw SchemaError("expected tensor '" + name + "', found '" + j.at("name").get<std::string>() + "'");
    }
    if (j.at("shape").get<Shape>() != t.shape()) {
      throw SchemaError("shape mismatch for '" + name + "'");
    }
    const auto data = j.at("data").get<std::vector<double>>();
    std::copy(data.begin(), data.end(), t.data().begin());
  }
}

inline Tensor uniform_param(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-limit, limit);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = u(rng);
  return {std::move(shape), std::move(v), true};
}

inline Tensor constant_param(Shape shape, double value) {
  const auto n = numel_of(shape);
  return {std::move(shape), std::vector<double>(n, value), true};
}

/// Fully connected layer y = x W + b over the last axis of x.
struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Linear() = default;
  /// Glorot-uniform weights, zero bias.
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
      : weight(uniform_param({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng)),
        bias(constant_param({out}, 0.0)) {}

  [[nodiscard]] std::size_t in_features() const { return weight.dim(0); }
  [[nodiscard]] std::size_t out_features() const { return weight.dim(1); }

  [[nodiscard]] Tensor operator()(const Tensor& x) const {
    const auto& s = x.shape();
    if (s.back() != in_features()) {
      throw ShapeError("linear: input " + shape_str(s) + " does not match weight " + shape_str(weight.shape()));
    }
    if (s.size() == 2) return add_bias(matmul(x, weight), bias);
    const std::size_t rows = x.numel() / s.back();
    Shape out_shape = s;
    out_shape.back() = out_features();
    auto y = add_bias(matmul(reshape(x, {rows, s.back()}), weight), bias);
    return reshape(y, std::move(out_shape));
  }

  [[nodiscard]] ParameterSet parameters() const {
    ParameterSet p;
    p.add("weight", weight);
    p.add("bias", bias);
    return p;
  }
};

}  // namespace pseudolab::nn
