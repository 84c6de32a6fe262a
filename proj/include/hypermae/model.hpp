#pragma once

// Full model: condition encoders, the two factor generators, and the masked
// autoencoder, wired for one sample at a time. Channel count is free to vary
// between calls; no weight depends on it.

#include <memory>
#include <string>

#include "hypermae/content_encoder.hpp"
#include "hypermae/hyper.hpp"
#include "hypermae/losses.hpp"
#include "hypermae/mae.hpp"
#include "hypermae/meta_encoder.hpp"

namespace hypermae {

struct ModelConfig {
  MetaEncoderConfig meta;         // meta.dim doubles as the condition width d
  ContentEncoderConfig content;
  std::size_t rank = 4;           // latent rank r
  std::size_t hyper_hidden = 512;
  BackboneConfig backbone;
  Conditioning conditioning = Conditioning::both;
  bool pre_norm = true;           // recorded; the transformer blocks are pre-norm
  std::uint64_t init_seed = 1;

  void validate() const {
    check(meta.dim == content.dim, "meta and content widths must match");
    check(rank >= 1, "rank must be at least 1");
    check(backbone.patch >= 1, "patch size must be positive");
    check(pre_norm, "only pre-norm transformer blocks are implemented");
  }
};

template <class T>
struct ForwardResult {
  Var<T> recon;       // N x C x k^2
  Tensor<T> target;   // N x C x k^2, frozen at tokenization time
  MaskPlan plan;
  Var<T> tokens;      // N x D patch embedding (pre-mask)
  Var<T> condition;   // C x d
};

template <class T>
class Model {
 public:
  ModelConfig cfg;
  nn::ParamRegistry<T> reg;

  explicit Model(const ModelConfig& config, const TextEmbeddingProvider* provider = nullptr)
      : cfg(config),
        provider_(provider ? *provider : TextEmbeddingProvider(config.meta.provider_dim)) {
    cfg.validate();
    nn::InitStream init{cfg.init_seed, 0};
    meta_ = std::make_unique<MetaEncoder<T>>(reg, "meta", init, cfg.meta);
    content_ = std::make_unique<ContentEncoder<T>>(reg, "content", init, cfg.content);
    cond_fuse_ = std::make_unique<ConditionFuse<T>>(reg, "cond", init, cfg.meta.dim);
    embed_gen_ = std::make_unique<FactorGenerator<T>>(
        reg, "hyper", init, cfg.meta.dim, cfg.hyper_hidden,
        FactorShapes{cfg.backbone.dim, cfg.rank, cfg.backbone.patch * cfg.backbone.patch,
                     cfg.backbone.dim});
    backbone_ = std::make_unique<MaeBackbone<T>>(reg, "mae", init, cfg.backbone);
    dec_content_proj_ = std::make_unique<nn::Linear<T>>(reg, "dec_cond.proj", init,
                                                        cfg.backbone.dec_dim, cfg.meta.dim);
    dec_cond_fuse_ = std::make_unique<ConditionFuse<T>>(reg, "dec_cond", init, cfg.meta.dim);
    recon_gen_ = std::make_unique<FactorGenerator<T>>(
        reg, "dec_hyper", init, cfg.meta.dim, cfg.hyper_hidden,
        FactorShapes{cfg.backbone.patch * cfg.backbone.patch, cfg.rank, cfg.backbone.dec_dim,
                     cfg.backbone.patch * cfg.backbone.patch});
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const TextEmbeddingProvider& provider() const { return provider_; }
  const MetaEncoder<T>& meta_encoder() const { return *meta_; }
  const ContentEncoder<T>& content_encoder() const { return *content_; }
  const FactorGenerator<T>& embed_generator() const { return *embed_gen_; }
  const FactorGenerator<T>& recon_generator() const { return *recon_gen_; }
  const MaeBackbone<T>& backbone() const { return *backbone_; }

  Var<T> meta_embedding(Tape<T>& tape, const SensorSpec& spec,
                        const std::string& name_override = "") const {
    return (*meta_)(tape, spec, provider_, name_override);
  }

  /// Condition matrix E for one cube (C x d).
  Var<T> condition(Tape<T>& tape, Var<T> cube, const SensorSpec& spec,
                   const std::string& name_override = "") const {
    auto e_meta = meta_embedding(tape, spec, name_override);
    auto e_content = (*content_)(tape, cube, cfg.backbone.patch);
    return (*cond_fuse_)(tape, e_meta, e_content, cfg.conditioning);
  }

  /// Patch embedding via generated factors: cube C,H,W -> tokens N x D.
  Var<T> embed(Tape<T>& tape, Var<T> cube, Var<T> condition_matrix) const {
    auto patches = ops::unfold(cube, cfg.backbone.patch);
    auto factors = (*embed_gen_)(tape, condition_matrix);
    return factorized_embed(tape, patches, factors);
  }

  /// Full masked-reconstruction pass for one normalized cube.
  ForwardResult<T> forward_mim(Tape<T>& tape, const Tensor<T>& cube, const SensorSpec& spec,
                               double mask_ratio, std::uint64_t mask_seed,
                               const std::string& name_override = "") const {
    check(cube.rank() == 3, "cube must be C,H,W");
    check(cube.extent(0) == spec.band_count(),
          "cube channel count " + std::to_string(cube.extent(0)) +
              " does not match the sensor's " + std::to_string(spec.band_count()));
    const std::size_t k = cfg.backbone.patch;
    const std::size_t grid = cube.extent(1) / k;
    check(grid * k == cube.extent(1) && grid * k == cube.extent(2),
          "spatial extents must be divisible by the patch size");

    auto x = tape.constant(cube);
    auto e_meta = meta_embedding(tape, spec, name_override);
    auto e_content = (*content_)(tape, x, k);
    auto cond = (*cond_fuse_)(tape, e_meta, e_content, cfg.conditioning);

    auto patches = ops::unfold(x, k);
    auto factors = (*embed_gen_)(tape, cond);
    auto tokens = factorized_embed(tape, patches, factors);

    const std::size_t n_tokens = grid * grid;
    MaskPlan plan = random_masking(n_tokens, mask_ratio, mask_seed);

    auto latents = backbone_->encode(tape, tokens, plan, grid);
    auto decoded = backbone_->decode(tape, latents, plan, grid);

    auto dec_content = (*dec_content_proj_)(tape,
                                            backbone_->decoder_content(tape, decoded,
                                                                       spec.band_count()));
    auto e_dec = (*dec_cond_fuse_)(tape, e_meta, dec_content, cfg.conditioning);
    auto recon_factors = (*recon_gen_)(tape, e_dec);
    auto recon = factorized_reconstruct(tape, decoded, recon_factors);

    Tensor<T> target = ops::detail2::unfold_tensor(cube, k);
    return {recon, std::move(target), std::move(plan), tokens, cond};
  }

  /// Frozen-backbone feature for linear probing: full (unmasked) encode,
  /// mean-pooled over tokens -> D.
  Tensor<T> encode_feature(const Tensor<T>& cube, const SensorSpec& spec) const {
    Tape<T> tape;
    const std::size_t k = cfg.backbone.patch;
    const std::size_t grid = cube.extent(1) / k;
    auto x = tape.constant(cube);
    auto cond = condition(tape, x, spec);
    auto tokens = embed(tape, x, cond);
    MaskPlan plan = random_masking(grid * grid, 0.0, 0);
    auto latents = backbone_->encode(tape, tokens, plan, grid);
    auto pooled = ops::mean_axis(latents, 0);
    return pooled.val();
  }

 private:
  TextEmbeddingProvider provider_;
  std::unique_ptr<MetaEncoder<T>> meta_;
  std::unique_ptr<ContentEncoder<T>> content_;
  std::unique_ptr<ConditionFuse<T>> cond_fuse_;
  std::unique_ptr<FactorGenerator<T>> embed_gen_;
  std::unique_ptr<MaeBackbone<T>> backbone_;
  std::unique_ptr<nn::Linear<T>> dec_content_proj_;
  std::unique_ptr<ConditionFuse<T>> dec_cond_fuse_;
  std::unique_ptr<FactorGenerator<T>> recon_gen_;
};

}  // namespace hypermae
