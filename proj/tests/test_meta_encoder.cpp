#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "hypermae/gradcheck.hpp"
#include "hypermae/meta_encoder.hpp"

using namespace hypermae;

namespace {

template <class T>
MetaEncoderConfig small_cfg(std::size_t d = 32) {
  MetaEncoderConfig c;
  c.dim = d;
  c.provider_dim = 16;
  c.fwhm_hidden = 8;
  c.tf_layers = 2;
  c.tf_heads = 4;
  return c;
}

SensorSpec toy_spec(std::size_t bands = 6) {
  return subset(builtin_sensor("AVIRIS-3", Level::L1_radiance), {40, bands});
}

}  // namespace

TEST_CASE("fourier wavelength encoding hits its anchor values") {
  const std::size_t d = 64;
  auto enc = fourier_wavelength_encoding<double>({0.350, 1.0, 2.550}, d);

  // x = 0.350 at i = 0: lambda_0 = 0.350, so the pair is (cos 2pi, sin 2pi)
  CHECK(std::abs(enc[0] - 1.0) < 1e-9);
  CHECK(std::abs(enc[1]) < 1e-9);

  // log-space endpoint: lambda_{d/2-1} = 2.550 exactly, so for x = 2.550 the
  // final pair is (1, 0) as well
  CHECK(std::abs(enc[2 * d + (d - 2)] - 1.0) < 1e-9);
  CHECK(std::abs(enc[2 * d + (d - 1)]) < 1e-9);

  // per-pair identity and boundedness
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double cv = enc[c * d + 2 * i];
      const double sv = enc[c * d + 2 * i + 1];
      CHECK(std::abs(cv * cv + sv * sv - 1.0) < 1e-9);
      CHECK(cv >= -1.0);
      CHECK(cv <= 1.0);
      CHECK(sv >= -1.0);
      CHECK(sv <= 1.0);
    }

  CHECK_THROWS(fourier_wavelength_encoding<double>({0.5}, 33));  // odd width
}

TEST_CASE("fwhm encoding maps equal widths to equal rows") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{7, 0};
  MetaEncoder<double> enc(reg, "m", init, small_cfg<double>());
  Tape<double> tape;
  auto rows = enc.encode_fwhm(tape, {0.01, 0.02, 0.01, 0.005});
  CHECK(rows.shape() == std::vector<std::size_t>{4, 32});
  for (std::size_t j = 0; j < 32; ++j) {
    CHECK(rows.val()[0 * 32 + j] == rows.val()[2 * 32 + j]);
    CHECK(rows.val()[0 * 32 + j] != rows.val()[1 * 32 + j]);
  }
  CHECK_THROWS(enc.encode_fwhm(tape, {0.01, -0.01}));

  // zero-initialized stack maps everything to zero
  nn::ParamRegistry<double> reg0;
  nn::InitStream init0{8, 0};
  MetaEncoder<double> zero_enc(reg0, "m", init0, small_cfg<double>());
  for (auto& [name, p] : reg0.items)
    if (name.rfind("m.fwhm", 0) == 0) std::fill(p->value.vec().begin(), p->value.vec().end(), 0.0);
  Tape<double> t2;
  auto z = zero_enc.encode_fwhm(t2, {0.01, 0.02});
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.val()[i] == 0.0);
}

TEST_CASE("text attribute path: determinism, reserved token, broadcast") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{9, 0};
  auto cfg = small_cfg<double>();
  MetaEncoder<double> enc(reg, "m", init, cfg);
  TextEmbeddingProvider provider(cfg.provider_dim);
  Tape<double> tape;
  auto a = enc.encode_text(tape, enc.name_mlp, "AVIRIS-NG", provider, 5);
  auto b = enc.encode_text(tape, enc.name_mlp, "AVIRIS-NG", provider, 5);
  CHECK(a.val().vec() == b.val().vec());
  CHECK(a.shape() == std::vector<std::size_t>{5, 16});
  // broadcast: all rows identical
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t j = 0; j < 16; ++j) CHECK(a.val()[r * 16 + j] == a.val()[j]);
  // empty string resolves to the reserved row
  auto empty = enc.encode_text(tape, enc.name_mlp, "", provider, 2);
  auto unknown = enc.encode_text(tape, enc.name_mlp, "unknown", provider, 2);
  CHECK(empty.val().vec() == unknown.val().vec());
}

TEST_CASE("spectral fusion degenerates to the wavelength encoding") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{10, 0};
  MetaEncoder<double> enc(reg, "m", init, small_cfg<double>());
  // alpha=1, beta=0, zero refinement -> output equals E_wl exactly
  for (auto& [name, p] : reg.items)
    if (name.rfind("m.fuse1", 0) == 0 || name.rfind("m.fuse2", 0) == 0)
      std::fill(p->value.vec().begin(), p->value.vec().end(), 0.0);
  enc.fuse_alpha.value[0] = 1.0;
  enc.fuse_beta.value[0] = 0.0;
  Tape<double> tape;
  Tensor<double> wl = fourier_wavelength_encoding<double>({0.5, 1.5}, 32);
  auto out = enc.fuse_spectral(tape, tape.constant(wl), tape.constant(Tensor<double>::randn({2, 32}, 3)));
  for (std::size_t i = 0; i < wl.numel(); ++i) CHECK(out.val()[i] == doctest::Approx(wl[i]));
  CHECK(out.shape() == std::vector<std::size_t>{2, 32});
}

TEST_CASE("fusion weights are differentiable") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{11, 0};
  MetaEncoder<double> enc(reg, "m", init, small_cfg<double>());
  Tensor<double> wl = fourier_wavelength_encoding<double>({0.5, 1.5, 2.0}, 32);
  Tensor<double> fw = Tensor<double>::randn({3, 32}, 4);
  Tensor<double> w = Tensor<double>::randn({3, 32}, 5);
  auto loss_fn = [&](bool with_grad) {
    Tape<double> tape;
    auto out = enc.fuse_spectral(tape, tape.constant(wl), tape.constant(fw));
    auto loss = ops::sum_all(ops::mul(out, tape.constant(w)));
    if (with_grad) tape.backward(loss);
    return loss.val()[0];
  };
  auto report = finite_diff_check<decltype(loss_fn)&>(
      {{"alpha", &enc.fuse_alpha}, {"beta", &enc.fuse_beta}}, loss_fn);
  CHECK(report.pass);
  CHECK(report.worst < 1e-4);
}

TEST_CASE("sensor attribute concat is ordered and band-constant") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{12, 0};
  auto cfg = small_cfg<double>();
  MetaEncoder<double> enc(reg, "m", init, cfg);
  TextEmbeddingProvider provider(cfg.provider_dim);
  Tape<double> tape;
  auto n = enc.encode_text(tape, enc.name_mlp, "AVIRIS-NG", provider, 4);
  auto l = enc.encode_text(tape, enc.level_mlp, "L1_radiance", provider, 4);
  auto cat = enc.concat_sensor(tape, n, l);
  CHECK(cat.shape() == std::vector<std::size_t>{4, 32});
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t j = 0; j < 32; ++j) CHECK(cat.val()[r * 32 + j] == cat.val()[j]);
  auto swapped = enc.concat_sensor(tape, l, n);
  CHECK(swapped.val().vec() != cat.val().vec());
}

TEST_CASE("cross-modal fusion block behaviour") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{13, 0};
  Cff<double> cff(reg, "cff", init, 32);

  // zero inputs with zero-init weights produce exactly zero
  {
    nn::ParamRegistry<double> reg0;
    nn::InitStream init0{14, 0};
    Cff<double> zero_cff(reg0, "cff", init0, 32);
    for (auto& [name, p] : reg0.items) std::fill(p->value.vec().begin(), p->value.vec().end(), 0.0);
    Tape<double> tape;
    auto z = tape.constant(Tensor<double>::zeros({3, 32}));
    auto out = zero_cff(tape, z, z);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.val()[i] == 0.0);
  }

  // output is finite and bounded under default init for random normal input
  std::mt19937_64 rng(200);
  for (int iter = 0; iter < 10; ++iter) {
    Tape<double> tape;
    Tensor<double> a = Tensor<double>::randn({5, 32}, rng());
    Tensor<double> b = Tensor<double>::randn({5, 32}, rng());
    double in_norm = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) in_norm += a[i] * a[i] + b[i] * b[i];
    in_norm = std::sqrt(in_norm);
    auto out = cff(tape, tape.constant(a), tape.constant(b));
    CHECK(out.val().all_finite());
    double out_norm = 0;
    for (std::size_t i = 0; i < out.numel(); ++i) out_norm += out.val()[i] * out.val()[i];
    out_norm = std::sqrt(out_norm);
    CHECK(out_norm < 10 * in_norm);
  }

  // asymmetric: cff(a,b) != cff(b,a) for a random instance
  Tape<double> tape;
  Tensor<double> a = Tensor<double>::randn({4, 32}, 77);
  Tensor<double> b = Tensor<double>::randn({4, 32}, 78);
  auto ab = cff(tape, tape.constant(a), tape.constant(b));
  auto ba = cff(tape, tape.constant(b), tape.constant(a));
  CHECK(ab.val().vec() != ba.val().vec());

  Tape<double> t2;
  CHECK_THROWS(cff(t2, t2.constant(Tensor<double>::zeros({2, 32})),
                   t2.constant(Tensor<double>::zeros({3, 32}))));
}

TEST_CASE("band transformer: single token, row permutation, attention rows") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{15, 0};
  auto cfg = small_cfg<double>();
  MetaEncoder<double> enc(reg, "m", init, cfg);

  // C = 1 is well-defined, and duplicated identical rows map to the same output
  Tape<double> tape;
  Tensor<double> one = Tensor<double>::randn({1, 32}, 6);
  auto single = enc.spectral_transformer(tape, tape.constant(one));
  CHECK(single.val().all_finite());
  Tensor<double> two({2, 32});
  for (int j = 0; j < 32; ++j) two[j] = two[32 + j] = one[j];
  auto dup = enc.spectral_transformer(tape, tape.constant(two));
  for (int j = 0; j < 32; ++j) {
    CHECK(dup.val()[j] == doctest::Approx(single.val()[j]).epsilon(1e-10));
    CHECK(dup.val()[32 + j] == doctest::Approx(single.val()[j]).epsilon(1e-10));
  }

  // permutation equivariance: no positional encoding over the band axis
  Tensor<double> x = Tensor<double>::randn({7, 32}, 8);
  auto y = enc.spectral_transformer(tape, tape.constant(x));
  std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  Tensor<double> xp({7, 32});
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t j = 0; j < 32; ++j) xp[r * 32 + j] = x[perm[r] * 32 + j];
  auto yp = enc.spectral_transformer(tape, tape.constant(xp));
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t j = 0; j < 32; ++j)
      CHECK(yp.val()[r * 32 + j] == doctest::Approx(y.val()[perm[r] * 32 + j]).epsilon(1e-9));

  // attention weights per query sum to 1
  Var<double> attn;
  enc.blocks[0].attn(tape, tape.constant(x), &attn);
  const auto& as = attn.shape();  // heads x S x S
  for (std::size_t h = 0; h < as[0]; ++h)
    for (std::size_t q = 0; q < as[1]; ++q) {
      double row = 0;
      for (std::size_t kk = 0; kk < as[2]; ++kk)
        row += attn.val()[(h * as[1] + q) * as[2] + kk];
      CHECK(std::abs(row - 1.0) < 1e-6);
    }
}

TEST_CASE("meta_encode end to end") {
  nn::ParamRegistry<float> reg;
  nn::InitStream init{16, 0};
  MetaEncoderConfig cfg;
  cfg.dim = 128;
  cfg.provider_dim = 64;
  MetaEncoder<float> enc(reg, "m", init, cfg);
  TextEmbeddingProvider provider(64);

  // AVIRIS-3 L1: 284 bands -> 284 x 128
  Tape<float> tape;
  auto out = enc(tape, builtin_sensor("AVIRIS-3", Level::L1_radiance), provider);
  CHECK(out.shape() == std::vector<std::size_t>{284, 128});
  CHECK(out.val().all_finite());

  // level difference changes the embedding
  auto l2 = enc(tape, builtin_sensor("AVIRIS-3", Level::L2_reflectance), provider);
  CHECK(l2.val().vec() != out.val().vec());

  // deterministic across calls
  Tape<float> t2;
  auto again = enc(t2, builtin_sensor("AVIRIS-3", Level::L1_radiance), provider);
  CHECK(again.val().vec() == out.val().vec());
}

TEST_CASE("meta_encode is finite for all builtins at d in {64,128,256}") {
  for (std::size_t d : {64u, 128u, 256u}) {
    nn::ParamRegistry<float> reg;
    nn::InitStream init{17, 0};
    MetaEncoderConfig cfg;
    cfg.dim = d;
    cfg.provider_dim = 32;
    MetaEncoder<float> enc(reg, "m", init, cfg);
    TextEmbeddingProvider provider(32);
    for (const auto& spec : builtin_sensors()) {
      Tape<float> tape;
      auto out = enc(tape, spec, provider);
      CHECK(out.val().all_finite());
      CHECK(out.shape() == std::vector<std::size_t>{spec.band_count(), d});
    }
  }
}

TEST_CASE("band permutation equivariance of the full meta encoder") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{18, 0};
  auto cfg = small_cfg<double>();
  MetaEncoder<double> enc(reg, "m", init, cfg);
  TextEmbeddingProvider provider(cfg.provider_dim);

  SensorSpec spec = toy_spec(6);
  Tape<double> tape;
  auto base = enc(tape, spec, provider);

  std::vector<std::size_t> perm{4, 2, 0, 5, 1, 3};
  SensorSpec permuted = spec;  // sensor text is band-constant, so only rows move
  for (std::size_t i = 0; i < perm.size(); ++i) {
    permuted.wavelengths_um[i] = spec.wavelengths_um[perm[i]];
    permuted.fwhm_um[i] = spec.fwhm_um[perm[i]];
  }
  auto moved = enc(tape, permuted, provider);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < cfg.dim; ++j)
      CHECK(moved.val()[r * cfg.dim + j] ==
            doctest::Approx(base.val()[perm[r] * cfg.dim + j]).epsilon(1e-9));
}

TEST_CASE("meta encoder gradients pass finite differences on a toy spec") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{19, 0};
  MetaEncoderConfig cfg;
  cfg.dim = 16;
  cfg.provider_dim = 8;
  cfg.fwhm_hidden = 4;
  cfg.tf_layers = 1;
  cfg.tf_heads = 2;
  MetaEncoder<double> enc(reg, "m", init, cfg);
  TextEmbeddingProvider provider(8);
  SensorSpec spec = toy_spec(6);
  Tensor<double> w = Tensor<double>::randn({6, 16}, 99);

  auto loss_fn = [&](bool with_grad) {
    Tape<double> tape;
    auto out = enc(tape, spec, provider);
    auto loss = ops::sum_all(ops::mul(out, tape.constant(w)));
    if (with_grad) {
      reg.zero_grads();
      tape.backward(loss);
    }
    return loss.val()[0];
  };
  std::vector<std::pair<std::string, Parameter<double>*>> params;
  for (auto& [name, p] : reg.items) params.emplace_back(name, p);
  auto report = finite_diff_check<decltype(loss_fn)&>(params, loss_fn, 1e-5, 1e-4, 6, 42);
  CHECK(report.pass);
}
