#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <random>

#include "doctest.h"
#include "hypermae/content_encoder.hpp"
#include "hypermae/gradcheck.hpp"

using namespace hypermae;

TEST_CASE("dual pooling basics") {
  Tape<double> tape;

  // constant cube: avg == max == c everywhere
  auto c = tape.constant(Tensor<double>::full({3, 8, 8}, 2.5));
  auto [avg, mx] = dual_pool(tape, c, 4);
  CHECK(avg.shape() == std::vector<std::size_t>{3, 4});
  for (std::size_t i = 0; i < avg.numel(); ++i) {
    CHECK(avg.val()[i] == 2.5);
    CHECK(mx.val()[i] == 2.5);
  }

  // 1x8x8 with values 1..64, k=8: avg = 32.5 (direct sum oracle), max = 64
  Tensor<double> ramp({1, 8, 8});
  double direct_sum = 0;
  for (int i = 0; i < 64; ++i) {
    ramp[i] = i + 1;
    direct_sum += i + 1;
  }
  auto [ra, rm] = dual_pool(tape, tape.constant(ramp), 8);
  CHECK(ra.val()[0] == doctest::Approx(direct_sum / 64));  // 32.5
  CHECK(rm.val()[0] == 64.0);

  // paper geometry: 224 x 224 at k = 8 -> N = 784
  auto big = tape.constant(Tensor<double>::zeros({1, 224, 224}));
  auto [ba, bm] = dual_pool(tape, big, 8);
  CHECK(ba.shape() == std::vector<std::size_t>{1, 784});
  (void)bm;

  // non-divisible extents rejected
  CHECK_THROWS(dual_pool(tape, tape.constant(Tensor<double>::zeros({1, 10, 10})), 4));
}

TEST_CASE("max >= avg per cell, equality only for constant cells") {
  std::mt19937_64 rng(31);
  Tape<double> tape;
  Tensor<double> cube = Tensor<double>::randn({4, 16, 16}, rng());
  auto [avg, mx] = dual_pool(tape, tape.constant(cube), 4);
  for (std::size_t i = 0; i < avg.numel(); ++i) CHECK(mx.val()[i] >= avg.val()[i]);
  // random cells are non-constant almost surely
  for (std::size_t i = 0; i < avg.numel(); ++i) CHECK(mx.val()[i] > avg.val()[i]);
}

TEST_CASE("content projection") {
  ContentEncoderConfig cfg;
  cfg.dim = 32;
  cfg.grid = 4;
  cfg.hidden = 16;

  // zero pools with zero-init weights give a zero embedding
  {
    nn::ParamRegistry<double> reg;
    nn::InitStream init{21, 0};
    ContentEncoder<double> enc(reg, "c", init, cfg);
    for (auto& [name, p] : reg.items) std::fill(p->value.vec().begin(), p->value.vec().end(), 0.0);
    Tape<double> tape;
    auto z = tape.constant(Tensor<double>::zeros({3, 16}));
    auto out = enc.project_pooled(tape, z, z);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.val()[i] == 0.0);
  }

  nn::ParamRegistry<double> reg;
  nn::InitStream init{22, 0};
  ContentEncoder<double> enc(reg, "c", init, cfg);
  Tape<double> tape;

  // identical pooled stats -> identical rows (shared per-channel map)
  Tensor<double> cube({2, 16, 16});
  for (std::size_t i = 0; i < 16 * 16; ++i) cube[i] = cube[16 * 16 + i] = std::sin(0.1 * i);
  auto out = enc(tape, tape.constant(cube), 4);
  CHECK(out.shape() == std::vector<std::size_t>{2, 32});
  for (std::size_t j = 0; j < 32; ++j) CHECK(out.val()[j] == out.val()[32 + j]);

  // token-count mismatch against the configured width is rejected
  auto bad = tape.constant(Tensor<double>::zeros({2, 9}));
  CHECK_THROWS(enc.project_pooled(tape, bad, bad));
}

TEST_CASE("paper-scale projection shape: C=100, N=784, d=256") {
  ContentEncoderConfig cfg;
  cfg.dim = 256;
  cfg.grid = 28;  // 784 tokens
  cfg.hidden = 64;
  nn::ParamRegistry<float> reg;
  nn::InitStream init{23, 0};
  ContentEncoder<float> enc(reg, "c", init, cfg);
  Tape<float> tape;
  auto cube = tape.constant(Tensor<float>::randn({100, 224, 224}, 9, 0.5f));
  auto out = enc(tape, cube, 8);
  CHECK(out.shape() == std::vector<std::size_t>{100, 256});
  CHECK(out.val().all_finite());
}

TEST_CASE("adaptive re-pooling preserves the configured token count") {
  ContentEncoderConfig cfg;
  cfg.dim = 32;
  cfg.grid = 4;
  cfg.hidden = 16;
  nn::ParamRegistry<double> reg;
  nn::InitStream init{24, 0};
  ContentEncoder<double> enc(reg, "c", init, cfg);
  Tape<double> tape;
  // 32x32 at k=4 pools to an 8x8 grid; re-pooled adaptively to 4x4
  auto out = enc(tape, tape.constant(Tensor<double>::randn({3, 32, 32}, 77)), 4);
  CHECK(out.shape() == std::vector<std::size_t>{3, 32});
  CHECK(out.val().all_finite());
}

TEST_CASE("condition fuse handles the ablation switches") {
  nn::ParamRegistry<double> reg;
  nn::InitStream init{25, 0};
  ConditionFuse<double> fuse(reg, "f", init, 32);
  Tape<double> tape;
  auto em = tape.constant(Tensor<double>::randn({5, 32}, 1));
  auto ec = tape.constant(Tensor<double>::randn({5, 32}, 2));

  auto both = fuse(tape, em, ec, Conditioning::both);
  CHECK(both.shape() == std::vector<std::size_t>{5, 32});

  auto meta_only = fuse(tape, em, ec, Conditioning::meta_only);
  CHECK(meta_only.val().all_finite());
  auto content_only = fuse(tape, em, ec, Conditioning::content_only);
  CHECK(content_only.val().all_finite());
  CHECK(meta_only.val().vec() != both.val().vec());
  CHECK(content_only.val().vec() != both.val().vec());
  CHECK(meta_only.val().vec() != content_only.val().vec());

  // meta_only must not depend on the content operand at all
  auto ec2 = tape.constant(Tensor<double>::randn({5, 32}, 3));
  auto meta_only2 = fuse(tape, em, ec2, Conditioning::meta_only);
  CHECK(meta_only2.val().vec() == meta_only.val().vec());
}

TEST_CASE("channel permutation equivariance of the content path") {
  ContentEncoderConfig cfg;
  cfg.dim = 32;
  cfg.grid = 4;
  cfg.hidden = 16;
  nn::ParamRegistry<double> reg;
  nn::InitStream init{26, 0};
  ContentEncoder<double> enc(reg, "c", init, cfg);
  Tape<double> tape;
  Tensor<double> cube = Tensor<double>::randn({5, 16, 16}, 55);
  auto base = enc(tape, tape.constant(cube), 4);

  std::vector<std::size_t> perm{3, 1, 4, 0, 2};
  Tensor<double> shuffled({5, 16, 16});
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < 256; ++i) shuffled[c * 256 + i] = cube[perm[c] * 256 + i];
  auto moved = enc(tape, tape.constant(shuffled), 4);
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t j = 0; j < 32; ++j)
      CHECK(moved.val()[c * 32 + j] == doctest::Approx(base.val()[perm[c] * 32 + j]));
}

TEST_CASE("gradients flow through both pooling branches") {
  ContentEncoderConfig cfg;
  cfg.dim = 8;
  cfg.grid = 2;
  cfg.hidden = 8;
  nn::ParamRegistry<double> reg;
  nn::InitStream init{27, 0};
  ContentEncoder<double> enc(reg, "c", init, cfg);
  Parameter<double> cube(Tensor<double>::randn({2, 8, 8}, 66));
  Tensor<double> w = Tensor<double>::randn({2, 8}, 67);
  auto loss_fn = [&](bool with_grad) {
    Tape<double> tape;
    auto out = enc(tape, tape.leaf(cube), 4);
    auto loss = ops::sum_all(ops::mul(out, tape.constant(w)));
    if (with_grad) {
      reg.zero_grads();
      tape.backward(loss);
    }
    return loss.val()[0];
  };
  std::vector<std::pair<std::string, Parameter<double>*>> params{{"cube", &cube}};
  for (auto& [name, p] : reg.items) params.emplace_back(name, p);
  auto report = finite_diff_check<decltype(loss_fn)&>(params, loss_fn, 1e-5, 1e-4, 24, 7);
  CHECK(report.pass);
}
