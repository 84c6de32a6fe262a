#pragma once

// Small neural-net building blocks on top of the tape. Modules own their
// Parameters and register them by name so the optimizer, checkpoints and
// gradient checks all see one deterministic ordering.

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "hypermae/tape.hpp"

namespace hypermae::nn {

template <class T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Parameter<T>*>> items;

  void add(const std::string& name, Parameter<T>* p) { items.emplace_back(name, p); }

  Parameter<T>* find(const std::string& name) const {
    for (const auto& [n, p] : items)
      if (n == name) return p;
    return nullptr;
  }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& [name, p] : items) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, p] : items) p->zero_grad();
  }
};

struct InitStream {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  std::uint64_t next() { return derive_seed(seed, ++counter); }
};

template <class T>
Parameter<T> init_normal(InitStream& init, std::vector<std::size_t> shape, double stddev) {
  return Parameter<T>(Tensor<T>::randn(std::move(shape), init.next(), static_cast<T>(stddev)));
}

/// Adds seeded Gaussian noise to every registered parameter. Gradient checks
/// use this to evaluate at a generic point: a freshly initialized model keeps
/// its reconstruction near zero, which parks the spectral-angle term next to
/// its zero-norm singularity where finite differences are meaningless.
template <class T>
void perturb_parameters(ParamRegistry<T>& reg, std::uint64_t seed, T stddev) {
  std::uint64_t counter = 0;
  for (auto& [name, p] : reg.items) {
    Tensor<T> noise = Tensor<T>::randn(p->value.shape(), derive_seed(seed, ++counter), stddev);
    for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] += noise[i];
  }
}

template <class T>
struct Linear {
  Parameter<T> w;  // in x out
  Parameter<T> b;  // out
  std::size_t in = 0, out = 0;

  Linear() = default;
  Linear(ParamRegistry<T>& reg, const std::string& name, InitStream& init, std::size_t in_dim,
         std::size_t out_dim, double w_std = 0.02)
      : w(Tensor<T>::randn({in_dim, out_dim}, init.next(), static_cast<T>(w_std))),
        b(Tensor<T>::zeros({out_dim})),
        in(in_dim),
        out(out_dim) {
    reg.add(name + ".w", &w);
    reg.add(name + ".b", &b);
  }

  // x: [..., in] -> [..., out]
  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    const auto& s = x.shape();
    check(!s.empty() && s.back() == in,
          "linear expects trailing extent " + std::to_string(in) + ", got " + shape_str(s));
    std::size_t rows = x.numel() / in;
    auto flat = ops::reshape(x, {rows, in});
    auto y = ops::matmul(flat, tape.leaf(const_cast<Parameter<T>&>(w)));
    y = ops::add(y, tape.leaf(const_cast<Parameter<T>&>(b)));
    auto out_shape = s;
    out_shape.back() = out;
    return ops::reshape(y, out_shape);
  }
};

/// Fully connected stack with GELU between layers (none after the last).
/// scaled_init draws each layer at std sqrt(2 / fan_in) instead of a fixed
/// width, which keeps activations O(1) through deep generator stacks.
template <class T>
struct Mlp {
  // deque: registered parameter addresses must stay stable as layers append
  std::deque<Linear<T>> layers;

  Mlp() = default;
  Mlp(ParamRegistry<T>& reg, const std::string& name, InitStream& init,
      const std::vector<std::size_t>& widths, double w_std = 0.02, bool scaled_init = false) {
    check(widths.size() >= 2, "mlp needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const double std_i =
          scaled_init ? std::sqrt(2.0 / static_cast<double>(widths[i])) : w_std;
      layers.emplace_back(reg, name + ".fc" + std::to_string(i), init, widths[i], widths[i + 1],
                          std_i);
    }
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](tape, x);
      if (i + 1 < layers.size()) x = ops::gelu(x);
    }
    return x;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.value.numel() + l.b.value.numel();
    return n;
  }
};

template <class T>
struct LayerNorm {
  Parameter<T> gain;
  Parameter<T> bias;
  std::size_t dim = 0;

  LayerNorm() = default;
  LayerNorm(ParamRegistry<T>& reg, const std::string& name, InitStream&, std::size_t d)
      : gain(Tensor<T>::full({d}, T(1))), bias(Tensor<T>::zeros({d})), dim(d) {
    reg.add(name + ".gain", &gain);
    reg.add(name + ".bias", &bias);
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return ops::layer_norm(x, tape.leaf(const_cast<Parameter<T>&>(gain)),
                           tape.leaf(const_cast<Parameter<T>&>(bias)), x.shape().size() - 1);
  }
};

/// Multi-head self-attention over a [S, d] sequence (no positional encoding
/// of its own). Optionally exports the attention weights for tests.
template <class T>
struct SelfAttention {
  Linear<T> q, k, v, proj;
  std::size_t dim = 0, heads = 0;

  SelfAttention() = default;
  SelfAttention(ParamRegistry<T>& reg, const std::string& name, InitStream& init, std::size_t d,
                std::size_t h)
      : q(reg, name + ".q", init, d, d),
        k(reg, name + ".k", init, d, d),
        v(reg, name + ".v", init, d, d),
        proj(reg, name + ".proj", init, d, d),
        dim(d),
        heads(h) {
    check(d % h == 0, "attention width " + std::to_string(d) + " not divisible by " +
                          std::to_string(h) + " heads");
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x, Var<T>* attn_out = nullptr) const {
    const std::size_t S = x.shape()[0];
    const std::size_t dh = dim / heads;
    auto split = [&](Var<T> t) {
      // S x d -> heads x S x dh
      return ops::permute(ops::reshape(t, {S, heads, dh}), {1, 0, 2});
    };
    auto qh = split(q(tape, x));
    auto kh = split(k(tape, x));
    auto vh = split(v(tape, x));
    auto scores = ops::scale(ops::matmul(qh, kh, false, true),
                             static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto attn = ops::softmax(scores, 2);  // heads x S x S
    if (attn_out) *attn_out = attn;
    auto ctx = ops::matmul(attn, vh);  // heads x S x dh
    auto merged = ops::reshape(ops::permute(ctx, {1, 0, 2}), {S, dim});
    return proj(tape, merged);
  }
};

/// Pre-norm transformer block: x + attn(ln1(x)); x + mlp(ln2(x)).
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  SelfAttention<T> attn;
  Linear<T> ff1, ff2;

  TransformerBlock() = default;
  TransformerBlock(ParamRegistry<T>& reg, const std::string& name, InitStream& init,
                   std::size_t d, std::size_t heads, std::size_t ff_mult = 4)
      : ln1(reg, name + ".ln1", init, d),
        ln2(reg, name + ".ln2", init, d),
        attn(reg, name + ".attn", init, d, heads),
        ff1(reg, name + ".ff1", init, d, d * ff_mult),
        ff2(reg, name + ".ff2", init, d * ff_mult, d) {}

  Var<T> operator()(Tape<T>& tape, Var<T> x, Var<T>* attn_out = nullptr) const {
    x = ops::add(x, attn(tape, ln1(tape, x), attn_out));
    return ops::add(x, ff2(tape, ops::gelu(ff1(tape, ln2(tape, x)))));
  }
};

/// 2-D sine/cosine position table for a g x g token grid, width d (d % 4 == 0).
/// Half of the width encodes the row coordinate, half the column, each as
/// interleaved (sin, cos) pairs over a geometric frequency ladder.
template <class T>
Tensor<T> sincos_position_table(std::size_t grid, std::size_t d) {
  check(d % 4 == 0, "position width must be divisible by 4");
  const std::size_t half = d / 2;
  const std::size_t freqs = half / 2;
  Tensor<T> out({grid * grid, d});
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const std::size_t n = gy * grid + gx;
      for (std::size_t f = 0; f < freqs; ++f) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(f) /
                                                         static_cast<double>(freqs));
        out[n * d + 2 * f] = static_cast<T>(std::sin(gy * omega));
        out[n * d + 2 * f + 1] = static_cast<T>(std::cos(gy * omega));
        out[n * d + half + 2 * f] = static_cast<T>(std::sin(gx * omega));
        out[n * d + half + 2 * f + 1] = static_cast<T>(std::cos(gx * omega));
      }
    }
  return out;
}

}  // namespace hypermae::nn
