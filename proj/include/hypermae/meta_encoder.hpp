#pragma once

// Sensor-metadata conditioning branch: per-band wavelength/FWHM encodings and
// broadcast sensor text attributes, fused and contextualized over the band
// axis by a small transformer. Output rows follow band order, so permuting
// bands together with their metadata permutes the output rows identically.

#include <deque>
#include <string>
#include <vector>

#include "hypermae/nn.hpp"
#include "hypermae/sensor.hpp"
#include "hypermae/text_provider.hpp"

namespace hypermae {

struct MetaEncoderConfig {
  std::size_t dim = 128;           // d, even (sin/cos pairing)
  std::size_t provider_dim = 64;   // text provider vector width
  std::size_t fwhm_hidden = 64;
  std::size_t tf_layers = 2;
  std::size_t tf_heads = 4;
  double wavelength_min_um = 0.350;
  double wavelength_max_um = 2.550;
};

/// Column pairs (cos 2*pi*x/lambda_i, sin 2*pi*x/lambda_i) for i in [0, d/2),
/// lambda_i log-spaced over [lo, hi]. x is each band's center wavelength.
template <class T>
Tensor<T> fourier_wavelength_encoding(const std::vector<double>& wavelengths_um, std::size_t d,
                                      double lo_um = 0.350, double hi_um = 2.550) {
  check(d % 2 == 0, "wavelength encoding width must be even, got " + std::to_string(d));
  const std::size_t half = d / 2;
  const std::size_t C = wavelengths_um.size();
  std::vector<double> lambdas(half);
  for (std::size_t i = 0; i < half; ++i) {
    const double t = half == 1 ? 0.0
                               : static_cast<double>(i) / static_cast<double>(half - 1);
    lambdas[i] = std::exp(std::log(lo_um) + t * (std::log(hi_um) - std::log(lo_um)));
  }
  Tensor<T> out({C, d});
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (std::size_t c = 0; c < C; ++c) {
    check(wavelengths_um[c] > 0, "wavelength must be positive");
    for (std::size_t i = 0; i < half; ++i) {
      const double phase = two_pi * wavelengths_um[c] / lambdas[i];
      out[c * d + 2 * i] = static_cast<T>(std::cos(phase));
      out[c * d + 2 * i + 1] = static_cast<T>(std::sin(phase));
    }
  }
  return out;
}

/// Cross-modal feature fusion: independent linear alignments, concatenation,
/// then a reduction back to width d with a residual refinement.
template <class T>
struct Cff {
  nn::Linear<T> proj_a, proj_b, reduce, res1, res2;

  Cff() = default;
  Cff(nn::ParamRegistry<T>& reg, const std::string& name, nn::InitStream& init, std::size_t d)
      : proj_a(reg, name + ".proj_a", init, d, d),
        proj_b(reg, name + ".proj_b", init, d, d),
        reduce(reg, name + ".reduce", init, 2 * d, d),
        res1(reg, name + ".res1", init, d, d),
        res2(reg, name + ".res2", init, d, d) {}

  Var<T> operator()(Tape<T>& tape, Var<T> a, Var<T> b) const {
    check(a.shape() == b.shape(), "cff operands must share shape: " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
    auto cat = ops::concat<T>({proj_a(tape, a), proj_b(tape, b)}, a.shape().size() - 1);
    auto p = reduce(tape, cat);
    return ops::add(p, res2(tape, ops::gelu(res1(tape, p))));
  }

  static std::size_t param_count(std::size_t d) {
    return 2 * (d * d + d) + (2 * d * d + d) + 2 * (d * d + d);
  }
};

template <class T>
struct MetaEncoder {
  MetaEncoderConfig cfg;
  nn::Mlp<T> fwhm_mlp;             // 1 -> hidden -> d
  nn::Linear<T> name_mlp;          // provider_dim -> d/2
  nn::Linear<T> level_mlp;         // provider_dim -> d/2
  Parameter<T> fuse_alpha, fuse_beta;
  nn::Linear<T> fuse1, fuse2;      // residual refinement of the fused spectral code
  Cff<T> cff;
  std::deque<nn::TransformerBlock<T>> blocks;
  nn::LayerNorm<T> final_ln;

  MetaEncoder() = default;
  MetaEncoder(nn::ParamRegistry<T>& reg, const std::string& name, nn::InitStream& init,
              const MetaEncoderConfig& c)
      : cfg(c),
        fwhm_mlp(reg, name + ".fwhm", init, {1, c.fwhm_hidden, c.dim}),
        name_mlp(reg, name + ".name", init, c.provider_dim, c.dim / 2),
        level_mlp(reg, name + ".level", init, c.provider_dim, c.dim / 2),
        fuse_alpha(Tensor<T>::scalar(T(1))),
        fuse_beta(Tensor<T>::scalar(T(1))),
        fuse1(reg, name + ".fuse1", init, c.dim, c.dim),
        fuse2(reg, name + ".fuse2", init, c.dim, c.dim),
        cff(reg, name + ".cff", init, c.dim),
        final_ln(reg, name + ".ln", init, c.dim) {
    check(c.dim % 2 == 0, "meta width must be even");
    check(c.dim % 4 == 0, "meta width must suit the attention heads");
    reg.add(name + ".fuse_alpha", &fuse_alpha);
    reg.add(name + ".fuse_beta", &fuse_beta);
    for (std::size_t i = 0; i < c.tf_layers; ++i)
      blocks.emplace_back(reg, name + ".tf" + std::to_string(i), init, c.dim, c.tf_heads);
  }

  Var<T> encode_fwhm(Tape<T>& tape, const std::vector<double>& fwhm_um) const {
    Tensor<T> in({fwhm_um.size(), 1});
    for (std::size_t i = 0; i < fwhm_um.size(); ++i) {
      check(fwhm_um[i] > 0, "fwhm must be positive at " + std::to_string(i));
      in[i] = static_cast<T>(fwhm_um[i]);
    }
    return fwhm_mlp(tape, tape.constant(std::move(in)));
  }

  // alpha*E_wl + beta*E_fwhm, refined as fused + mlp(fused)
  Var<T> fuse_spectral(Tape<T>& tape, Var<T> e_wl, Var<T> e_fwhm) const {
    check(e_wl.shape() == e_fwhm.shape(), "fuse_spectral operand shape mismatch");
    auto a = tape.leaf(const_cast<Parameter<T>&>(fuse_alpha));
    auto b = tape.leaf(const_cast<Parameter<T>&>(fuse_beta));
    auto fused = ops::add(ops::mul(e_wl, a), ops::mul(e_fwhm, b));
    return ops::add(fused, fuse2(tape, ops::gelu(fuse1(tape, fused))));
  }

  // provider vector -> half-width embedding row, broadcast across all C bands
  Var<T> encode_text(Tape<T>& tape, const nn::Linear<T>& mlp, const std::string& text,
                     const TextEmbeddingProvider& provider, std::size_t C) const {
    const auto& vec = provider.embed(text);
    check(vec.size() == cfg.provider_dim, "provider dimension mismatch");
    Tensor<T> row({1, vec.size()});
    for (std::size_t i = 0; i < vec.size(); ++i) row[i] = static_cast<T>(vec[i]);
    auto reduced = mlp(tape, tape.constant(std::move(row)));  // 1 x d/2
    return ops::broadcast_to(reduced, {C, cfg.dim / 2});
  }

  Var<T> concat_sensor(Tape<T>& tape, Var<T> e_name, Var<T> e_level) const {
    (void)tape;
    check(e_name.shape() == e_level.shape(), "sensor attribute halves must match");
    return ops::concat<T>({e_name, e_level}, 1);
  }

  Var<T> spectral_transformer(Tape<T>& tape, Var<T> e) const {
    for (const auto& blk : blocks) e = blk(tape, e);
    return final_ln(tape, e);
  }

  Var<T> operator()(Tape<T>& tape, const SensorSpec& spec, const TextEmbeddingProvider& provider,
                    const std::string& name_override = "") const {
    const std::size_t C = spec.band_count();
    check(C >= 1, "sensor has no bands");
    auto e_wl = tape.constant(fourier_wavelength_encoding<T>(
        spec.wavelengths_um, cfg.dim, cfg.wavelength_min_um, cfg.wavelength_max_um));
    auto e_fwhm = encode_fwhm(tape, spec.fwhm_um);
    auto e_spectral = fuse_spectral(tape, e_wl, e_fwhm);
    const std::string& sensor_name = name_override.empty() ? spec.name : name_override;
    auto e_name = encode_text(tape, name_mlp, sensor_name, provider, C);
    auto e_level = encode_text(tape, level_mlp, level_name(spec.level), provider, C);
    auto e_sensor = concat_sensor(tape, e_name, e_level);
    auto e_c = cff(tape, e_spectral, e_sensor);
    return spectral_transformer(tape, e_c);
  }
};

}  // namespace hypermae
