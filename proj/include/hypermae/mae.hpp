#pragma once

// Masked-autoencoder backbone: token masking, encoder over visible tokens,
// decoder over the reassembled full sequence, and the pooled decoder-content
// feature that conditions the reconstruction head.

#include <algorithm>
#include <deque>
#include <random>
#include <vector>

#include "hypermae/nn.hpp"

namespace hypermae {

struct MaskPlan {
  double ratio = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> visible;  // ascending
  std::vector<std::size_t> masked;   // ascending, disjoint from visible
};

/// Uniform subset without replacement: round(ratio*N) masked tokens,
/// deterministic under the seed.
inline MaskPlan random_masking(std::size_t n_tokens, double ratio, std::uint64_t seed) {
  check(ratio >= 0.0 && ratio < 1.0, "mask ratio must lie in [0, 1)");
  MaskPlan plan;
  plan.ratio = ratio;
  plan.seed = seed;
  const std::size_t n_masked =
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_tokens)));
  std::vector<std::size_t> order(n_tokens);
  for (std::size_t i = 0; i < n_tokens; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  plan.masked.assign(order.begin(), order.begin() + n_masked);
  plan.visible.assign(order.begin() + n_masked, order.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

struct BackboneConfig {
  std::size_t patch = 8;   // k
  std::size_t dim = 192;   // encoder token width D
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t dec_dim = 128;
  std::size_t dec_depth = 2;
  std::size_t dec_heads = 4;
};

template <class T>
struct MaeBackbone {
  BackboneConfig cfg;
  std::deque<nn::TransformerBlock<T>> enc_blocks;
  nn::LayerNorm<T> enc_ln;
  nn::Linear<T> dec_embed;  // dim -> dec_dim
  Parameter<T> mask_token;  // 1 x dec_dim
  std::deque<nn::TransformerBlock<T>> dec_blocks;
  nn::LayerNorm<T> dec_ln;
  nn::TransformerBlock<T> content_block;  // refines the pooled decoder feature
  nn::LayerNorm<T> content_ln;

  MaeBackbone() = default;
  MaeBackbone(nn::ParamRegistry<T>& reg, const std::string& name, nn::InitStream& init,
              const BackboneConfig& c)
      : cfg(c),
        enc_ln(reg, name + ".enc_ln", init, c.dim),
        dec_embed(reg, name + ".dec_embed", init, c.dim, c.dec_dim),
        mask_token(Tensor<T>::randn({1, c.dec_dim}, init.next(), T(0.02))),
        dec_ln(reg, name + ".dec_ln", init, c.dec_dim),
        content_block(reg, name + ".content_tf", init, c.dec_dim, c.dec_heads),
        content_ln(reg, name + ".content_ln", init, c.dec_dim) {
    check(c.dim % c.heads == 0, "token width not divisible by head count");
    check(c.dec_dim % c.dec_heads == 0, "decoder width not divisible by head count");
    check(c.dim % 4 == 0 && c.dec_dim % 4 == 0, "widths must suit 2-D position tables");
    for (std::size_t i = 0; i < c.depth; ++i)
      enc_blocks.emplace_back(reg, name + ".enc" + std::to_string(i), init, c.dim, c.heads);
    for (std::size_t i = 0; i < c.dec_depth; ++i)
      dec_blocks.emplace_back(reg, name + ".dec" + std::to_string(i), init, c.dec_dim,
                              c.dec_heads);
    reg.add(name + ".mask_token", &mask_token);
  }

  /// Adds the 2-D position table and runs the encoder over visible tokens only.
  Var<T> encode(Tape<T>& tape, Var<T> tokens, const MaskPlan& plan, std::size_t grid) const {
    check(tokens.shape().size() == 2 && tokens.shape()[0] == grid * grid,
          "token count does not match the grid");
    auto pos = tape.constant(nn::sincos_position_table<T>(grid, cfg.dim));
    auto x = ops::add(tokens, pos);
    if (plan.visible.size() != grid * grid) x = ops::gather_rows(x, plan.visible);
    for (const auto& blk : enc_blocks) x = blk(tape, x);
    return enc_ln(tape, x);
  }

  /// Visible latents back into full-sequence order with the shared mask token
  /// at masked positions (pre-position, pre-block decoder input).
  Var<T> assemble_decoder_input(Tape<T>& tape, Var<T> latents, const MaskPlan& plan) const {
    const std::size_t n = plan.visible.size() + plan.masked.size();
    auto projected = dec_embed(tape, latents);  // V x dec_dim
    auto placed = ops::scatter_rows(projected, plan.visible, n);
    if (!plan.masked.empty()) {
      auto token = tape.leaf(const_cast<Parameter<T>&>(mask_token));
      auto fills = ops::broadcast_to(token, {plan.masked.size(), cfg.dec_dim});
      placed = ops::add(placed, ops::scatter_rows(fills, plan.masked, n));
    }
    return placed;
  }

  /// Decoder: full-length sequence in original order, N x dec_dim.
  Var<T> decode(Tape<T>& tape, Var<T> latents, const MaskPlan& plan, std::size_t grid) const {
    auto x = assemble_decoder_input(tape, latents, plan);
    auto pos = tape.constant(nn::sincos_position_table<T>(grid, cfg.dec_dim));
    x = ops::add(x, pos);
    for (const auto& blk : dec_blocks) x = blk(tape, x);
    return dec_ln(tape, x);
  }

  /// Pooled decoder-content feature broadcast to C rows: mean over tokens,
  /// lightweight transformer refinement, C x dec_dim.
  Var<T> decoder_content(Tape<T>& tape, Var<T> decoded, std::size_t channels) const {
    auto pooled = ops::mean_axis(decoded, 0, /*keepdims=*/true);  // 1 x dec_dim
    auto refined = content_ln(tape, content_block(tape, pooled));
    return ops::broadcast_to(refined, {channels, cfg.dec_dim});
  }
};

}  // namespace hypermae
