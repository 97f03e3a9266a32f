#pragma once

// Anomaly-Transformer style encoder with a classification head on the final
// timestep. Each attention block also produces a Gaussian prior association
// whose per-position width comes from a linear projection of the block input.

#include <cmath>
#include <random>
#include <vector>

#include "pseudolab/nn/module.hpp"
#include "pseudolab/nn/ops.hpp"

namespace pseudolab::seq {

using nn::Tensor;

struct TransformerSpec {
  std::size_t input_width = 0;
  std::size_t d_model = 64;
  std::size_t heads = 8;
  std::size_t layers = 3;
  std::size_t ff_hidden = 512;
  double dropout = 0.0;
  double sigma_offset = 0.1;
};

struct EncoderBlock {
  nn::Linear q, k, v, o;
  nn::Linear sigma;  // d_model -> heads
  nn::Linear ff1, ff2;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  [[nodiscard]] nn::ParameterSet parameters() const {
    nn::ParameterSet p;
    p.append(q.parameters(), "q.");
    p.append(k.parameters(), "k.");
    p.append(v.parameters(), "v.");
    p.append(o.parameters(), "o.");
    p.append(sigma.parameters(), "sigma.");
    p.append(ff1.parameters(), "ff1.");
    p.append(ff2.parameters(), "ff2.");
    p.add("ln1.gamma", ln1_gamma);
    p.add("ln1.beta", ln1_beta);
    p.add("ln2.gamma", ln2_gamma);
    p.add("ln2.beta", ln2_beta);
    return p;
  }
};

/// Series (S) and prior (P) associations of one block, each [B*heads x T x T].
struct Associations {
  Tensor series;
  Tensor prior;
};

struct TransformerOutput {
  Tensor logits;       // [B]
  Tensor discrepancy;  // scalar; undefined unless requested
  std::vector<Associations> associations;
};

/// Fixed sinusoidal table [T x d].
inline Tensor sinusoidal_encoding(std::size_t T, std::size_t d) {
  std::vector<double> pe(T * d);
  for (std::size_t pos = 0; pos < T; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double a = static_cast<double>(pos) * freq;
      pe[pos * d + i] = i % 2 == 0 ? std::sin(a) : std::cos(a);
    }
  }
  return {{T, d}, std::move(pe)};
}

/// Scaled dot-product attention with the prior association.
/// q, k, v: [G x T x dh]; sigma: [G x T] (positive). P is computed only if
/// `with_prior`. Throws NumericError naming `layer` on non-finite logits.
inline std::pair<Tensor, Associations> anomaly_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                                         const Tensor& sigma, bool with_prior,
                                                         std::size_t layer = 0) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  auto logits = nn::scale(nn::matmul_nt(q, k), inv);
  for (double z : logits.data()) {
    if (!std::isfinite(z)) throw NumericError("non-finite attention logits in layer " + std::to_string(layer));
  }
  Associations a;
  a.series = nn::softmax(logits);
  if (with_prior) a.prior = nn::gaussian_prior(sigma);
  return {nn::matmul(a.series, v), a};
}

struct TransformerClassifier {
  TransformerSpec spec;
  nn::Linear embed;
  std::vector<EncoderBlock> blocks;
  nn::Linear head;

  TransformerClassifier() = default;
  TransformerClassifier(const TransformerSpec& s, std::mt19937_64& rng) : spec(s) {
    if (s.heads == 0 || s.d_model % s.heads != 0) {
      throw ConfigError("d_model " + std::to_string(s.d_model) + " is not divisible by " +
                        std::to_string(s.heads) + " heads");
    }
    embed = nn::Linear(s.input_width, s.d_model, rng);
    for (std::size_t l = 0; l < s.layers; ++l) {
      EncoderBlock b;
      b.q = nn::Linear(s.d_model, s.d_model, rng);
      b.k = nn::Linear(s.d_model, s.d_model, rng);
      b.v = nn::Linear(s.d_model, s.d_model, rng);
      b.o = nn::Linear(s.d_model, s.d_model, rng);
      b.sigma = nn::Linear(s.d_model, s.heads, rng);
      b.ff1 = nn::Linear(s.d_model, s.ff_hidden, rng);
      b.ff2 = nn::Linear(s.ff_hidden, s.d_model, rng);
      b.ln1_gamma = nn::constant_param({s.d_model}, 1.0);
      b.ln1_beta = nn::constant_param({s.d_model}, 0.0);
      b.ln2_gamma = nn::constant_param({s.d_model}, 1.0);
      b.ln2_beta = nn::constant_param({s.d_model}, 0.0);
      blocks.push_back(std::move(b));
    }
    head = nn::Linear(s.d_model, 1, rng);
  }

  [[nodiscard]] nn::ParameterSet parameters() const {
    nn::ParameterSet p;
    p.append(embed.parameters(), "embed.");
    for (std::size_t l = 0; l < blocks.size(); ++l) p.append(blocks[l].parameters(), "block" + std::to_string(l) + ".");
    p.append(head.parameters(), "head.");
    return p;
  }

  /// [B x T x d] -> [B*heads x T x dh]
  [[nodiscard]] Tensor split_heads(const Tensor& x) const {
    const std::size_t B = x.dim(0), T = x.dim(1), H = spec.heads, dh = spec.d_model / H;
    return nn::reshape(nn::permute(nn::reshape(x, {B, T, H, dh}), {0, 2, 1, 3}), {B * H, T, dh});
  }

  [[nodiscard]] Tensor merge_heads(const Tensor& x, std::size_t B) const {
    const std::size_t T = x.dim(1), H = spec.heads, dh = spec.d_model / H;
    return nn::reshape(nn::permute(nn::reshape(x, {B, H, T, dh}), {0, 2, 1, 3}), {B, T, spec.d_model});
  }

  /// Encoder output [B x T x d] before the head.
  [[nodiscard]] Tensor encode(const Tensor& x, bool train, std::mt19937_64& rng, bool with_prior,
                              std::vector<Associations>* assoc) const {
    if (x.rank() != 3 || x.dim(2) != spec.input_width) {
      throw ShapeError("transformer: expected [B x T x " + std::to_string(spec.input_width) + "], got " +
                       nn::shape_str(x.shape()));
    }
    const std::size_t B = x.dim(0), T = x.dim(1), H = spec.heads;
    auto h = nn::add_bias(embed(x), sinusoidal_encoding(T, spec.d_model));
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& b = blocks[l];
      Tensor sigma;
      if (with_prior) {
        // [B x T x H] -> [B*H x T]
        auto raw = nn::permute(b.sigma(h), {0, 2, 1});
        sigma = nn::add_scalar(nn::softplus(nn::reshape(raw, {B * H, T})), spec.sigma_offset);
      }
      auto [ctx, a] = anomaly_attention(split_heads(b.q(h)), split_heads(b.k(h)), split_heads(b.v(h)), sigma,
                                        with_prior, l);
      if (assoc != nullptr) assoc->push_back(a);
      auto attn = nn::dropout(b.o(merge_heads(ctx, B)), spec.dropout, train, rng);
      h = nn::layer_norm(nn::add(h, attn), b.ln1_gamma, b.ln1_beta);
      auto ff = nn::dropout(b.ff2(nn::gelu(b.ff1(h))), spec.dropout, train, rng);
      h = nn::layer_norm(nn::add(h, ff), b.ln2_gamma, b.ln2_beta);
    }
    return h;
  }

  /// x: [B x T x F]. The discrepancy (mean symmetric KL between prior and
  /// series associations over blocks) is built when `with_discrepancy`.
  [[nodiscard]] TransformerOutput forward(const Tensor& x, bool train, std::mt19937_64& rng,
                                          bool with_discrepancy = false, bool capture = false) const {
    TransformerOutput out;
    std::vector<Associations> assoc;
    const bool with_prior = with_discrepancy || capture;
    auto h = encode(x, train, rng, with_prior, with_prior ? &assoc : nullptr);
    const std::size_t B = x.dim(0), T = x.dim(1);
    auto last = nn::reshape(nn::slice(h, 1, T - 1, 1), {B, spec.d_model});
    out.logits = nn::reshape(head(last), {B});
    if (with_discrepancy && !assoc.empty()) {
      Tensor total;
      for (const auto& a : assoc) {
        auto d = nn::association_discrepancy(a.prior, a.series);
        total = total.defined() ? nn::add(total, d) : d;
      }
      out.discrepancy = nn::scale(total, 1.0 / static_cast<double>(assoc.size()));
    }
    if (capture) out.associations = std::move(assoc);
    return out;
  }
};

}  // namespace pseudolab::seq
