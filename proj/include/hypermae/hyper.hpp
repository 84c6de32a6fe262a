#pragma once

// Condition-driven factor generation and the two-step factorized patch
// embedding. Three fully connected stacks map each row of the condition
// matrix E to that channel's pair of low-rank factors; the bias is generated
// once from the channel mean of E. Because every weight is indexed by the
// condition width d and not by the channel count, one parameter set serves
// any number of spectral bands.

#include <string>

#include "hypermae/nn.hpp"

namespace hypermae {

template <class T>
struct HyperFactors {
  Var<T> u;     // C x rows x r
  Var<T> v;     // C x r x cols
  Var<T> bias;  // bias_dim
};

struct FactorShapes {
  std::size_t rows = 0;      // U row dim (token width D for the embed side, k^2 for recon)
  std::size_t rank = 0;      // r
  std::size_t cols = 0;      // V col dim (k^2 for the embed side, decoder width for recon)
  std::size_t bias_dim = 0;  // D for the embed side, k^2 for recon
};

template <class T>
struct FactorGenerator {
  FactorShapes shapes;
  nn::Mlp<T> f_u;  // d -> hidden -> hidden -> rows*r
  nn::Mlp<T> f_v;  // d -> hidden -> hidden -> r*cols
  nn::Mlp<T> f_b;  // d -> hidden -> hidden -> bias_dim

  FactorGenerator() = default;
  FactorGenerator(nn::ParamRegistry<T>& reg, const std::string& name, nn::InitStream& init,
                  std::size_t cond_dim, std::size_t hidden, const FactorShapes& s,
                  double base_factor_std = 0.1)
      : shapes(s),
        f_u(reg, name + ".f_u", init, {cond_dim, hidden, hidden, s.rows * s.rank}, 0.02,
            /*scaled_init=*/true),
        f_v(reg, name + ".f_v", init, {cond_dim, hidden, hidden, s.rank * s.cols}, 0.02,
            /*scaled_init=*/true),
        f_b(reg, name + ".f_b", init, {cond_dim, hidden, hidden, s.bias_dim}, 0.02,
            /*scaled_init=*/true) {
    // Seed the output-layer biases so the generated factors carry a healthy
    // condition-independent base scale from step one. With both factors of
    // the product starting near zero, the gradient of each is proportional
    // to the other and training crawls; the bias breaks that symmetry.
    auto seed_bias = [&](nn::Mlp<T>& stack, double stddev) {
      Parameter<T>& b = stack.layers.back().b;
      b.value = Tensor<T>::randn(b.value.shape(), init.next(), static_cast<T>(stddev));
    };
    seed_bias(f_u, base_factor_std);
    seed_bias(f_v, base_factor_std);
  }

  HyperFactors<T> operator()(Tape<T>& tape, Var<T> condition) const {
    check(condition.shape().size() == 2, "condition must be C x d");
    const std::size_t C = condition.shape()[0];
    auto u = ops::reshape(f_u(tape, condition), {C, shapes.rows, shapes.rank});
    auto v = ops::reshape(f_v(tape, condition), {C, shapes.rank, shapes.cols});
    auto pooled = ops::mean_axis(condition, 0, /*keepdims=*/true);  // 1 x d
    auto bias = ops::reshape(f_b(tape, pooled), {shapes.bias_dim});
    return {u, v, bias};
  }

  std::size_t param_count() const {
    return f_u.param_count() + f_v.param_count() + f_b.param_count();
  }
};

/// Factorized embed: per channel, project each k^2 patch vector into the
/// r-dim latent space (spatial pattern extraction), re-project to the token
/// width (semantic re-projection), then sum channel contributions in
/// ascending order and add the shared bias once per token. The re-projection
/// and the channel sum are one contraction over the stacked (C*r) axis, which
/// keeps the summation order channel-ascending while running as a single
/// dense product.
template <class T>
Var<T> factorized_embed(Tape<T>& tape, Var<T> patches, const HyperFactors<T>& f) {
  const auto& ps = patches.shape();  // N x C x k^2
  check(ps.size() == 3, "patches must be N x C x k^2, got " + shape_str(ps));
  const std::size_t n_tokens = ps[0], channels = ps[1];
  const std::size_t rows = f.u.shape()[1], rank = f.u.shape()[2];
  auto per_channel = ops::permute(patches, {1, 0, 2});              // C x N x k^2
  auto z = ops::matmul(per_channel, f.v, false, true);              // C x N x r
  auto z_cat = ops::reshape(ops::permute(z, {1, 0, 2}), {n_tokens, channels * rank});
  auto u_cat = ops::reshape(ops::permute(f.u, {0, 2, 1}), {channels * rank, rows});
  auto tokens = ops::matmul(z_cat, u_cat);                          // N x rows, summed over C
  return ops::add(tokens, f.bias);                                  // bias once per token
}

/// Mirrored reconstruction: replicate each latent across channels, map it
/// through that channel's factor pair back to a k^2 patch, add the shared
/// spatial bias. latents: N x D_dec -> N x C x k^2.
template <class T>
Var<T> factorized_reconstruct(Tape<T>& tape, Var<T> latents, const HyperFactors<T>& f) {
  check(latents.shape().size() == 2, "latents must be N x D_dec");
  auto z = ops::matmul(latents, f.v, false, true);  // C x N x r (latents shared over channels)
  auto o = ops::matmul(z, f.u, false, true);        // C x N x k^2
  auto patches = ops::permute(o, {1, 0, 2});        // N x C x k^2
  return ops::add(patches, f.bias);                 // bias broadcast over trailing k^2
}

}  // namespace hypermae
