#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "pseudolab/nn/module.hpp"
#include "pseudolab/nn/ops.hpp"

namespace pseudolab::seq {

using nn::Tensor;

/// Gate layout along the 4H axis: input, forget, cell candidate, output.
struct LstmLayer {
  Tensor w_ih;  // [in x 4H]
  Tensor w_hh;  // [H x 4H]
  Tensor bias;  // [4H]

  [[nodiscard]] nn::ParameterSet parameters() const {
    nn::ParameterSet p;
    p.add("w_ih", w_ih);
    p.add("w_hh", w_hh);
    p.add("bias", bias);
    return p;
  }
};

struct LstmSpec {
  std::size_t input_width = 0;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  double dropout = 0.5;  // between stacked layers only
};

struct LstmClassifier {
  LstmSpec spec;
  std::vector<LstmLayer> layers;
  nn::Linear head;

  LstmClassifier() = default;
  LstmClassifier(const LstmSpec& s, std::mt19937_64& rng) : spec(s) {
    if (s.layers == 0 || s.hidden == 0) throw ConfigError("lstm needs at least one layer of width > 0");
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.hidden));
    for (std::size_t l = 0; l < s.layers; ++l) {
      const std::size_t in = l == 0 ? s.input_width : s.hidden;
      layers.push_back({nn::uniform_param({in, 4 * s.hidden}, bound, rng),
                        nn::uniform_param({s.hidden, 4 * s.hidden}, bound, rng),
                        nn::uniform_param({4 * s.hidden}, bound, rng)});
    }
    head = nn::Linear(s.hidden, 1, rng);
  }

  [[nodiscard]] nn::ParameterSet parameters() const {
    nn::ParameterSet p;
    for (std::size_t l = 0; l < layers.size(); ++l) p.append(layers[l].parameters(), "lstm" + std::to_string(l) + ".");
    p.append(head.parameters(), "head.");
    return p;
  }

  /// x: [B x T x F] -> logits [B]. Zero initial states; the head reads the
  /// top layer's hidden state at the last timestep.
  [[nodiscard]] Tensor forward(const Tensor& x, bool train, std::mt19937_64& rng) const {
    if (x.rank() != 3 || x.dim(2) != spec.input_width) {
      throw ShapeError("lstm: expected [B x T x " + std::to_string(spec.input_width) + "], got " +
                       nn::shape_str(x.shape()));
    }
    const std::size_t B = x.dim(0), T = x.dim(1), H = spec.hidden;
    if (T == 0) throw ShapeError("lstm: empty window");

    // Per-timestep inputs of the current layer, each [B x in].
    std::vector<Tensor> inputs;
    inputs.reserve(T);
    for (std::size_t t = 0; t < T; ++t) inputs.push_back(nn::reshape(nn::slice(x, 1, t, 1), {B, spec.input_width}));

    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (l > 0) {
        for (auto& in : inputs) in = nn::dropout(in, spec.dropout, train, rng);
      }
      Tensor h, c;
      std::vector<Tensor> outputs;
      outputs.reserve(T);
      for (std::size_t t = 0; t < T; ++t) {
        auto gates = nn::add_bias(nn::matmul(inputs[t], L.w_ih), L.bias);
        if (h.defined()) gates = nn::add(gates, nn::matmul(h, L.w_hh));
        auto i = nn::sigmoid(nn::slice(gates, 1, 0, H));
        auto f = nn::sigmoid(nn::slice(gates, 1, H, H));
        auto g = nn::tanh(nn::slice(gates, 1, 2 * H, H));
        auto o = nn::sigmoid(nn::slice(gates, 1, 3 * H, H));
        c = c.defined() ? nn::add(nn::mul(f, c), nn::mul(i, g)) : nn::mul(i, g);
        h = nn::mul(o, nn::tanh(c));
        outputs.push_back(h);
      }
      inputs = std::move(outputs);
    }
    return nn::reshape(head(inputs.back()), {B});
  }
};

}  // namespace pseudolab::seq
