#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "hypermae/gradcheck.hpp"
#include "hypermae/tape.hpp"

using namespace hypermae;

namespace {

// naive sum-of-products oracle for the contraction, independent of the kernels
Tensor<double> naive_contract(const Tensor<double>& a, const Tensor<double>& b, bool ta, bool tb) {
  const bool ab = a.rank() == 3, bb = b.rank() == 3;
  const std::size_t batch = ab ? a.extent(0) : (bb ? b.extent(0) : 1);
  const std::size_t m = ta ? a.extent(ab ? 2 : 1) : a.extent(ab ? 1 : 0);
  const std::size_t k = ta ? a.extent(ab ? 1 : 0) : a.extent(ab ? 2 : 1);
  const std::size_t n = tb ? b.extent(bb ? 1 : 0) : b.extent(bb ? 2 : 1);
  Tensor<double> out(ab || bb ? std::vector<std::size_t>{batch, m, n}
                              : std::vector<std::size_t>{m, n});
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double av = ta ? a[(ab ? s * k * m : 0) + kk * m + i]
                               : a[(ab ? s * m * k : 0) + i * k + kk];
          const double bv = tb ? b[(bb ? s * n * k : 0) + j * k + kk]
                               : b[(bb ? s * k * n : 0) + kk * n + j];
          acc += av * bv;
        }
        out[s * m * n + i * n + j] = acc;
      }
  return out;
}

double fd_check_unary(ops::UnaryKind kind, std::uint64_t seed, double lo, double hi) {
  Parameter<double> p(Tensor<double>::randn({3, 4}, seed));
  for (auto& x : p.value.vec()) x = lo + (hi - lo) * std::abs(std::fmod(x, 1.0));
  Tensor<double> w = Tensor<double>::randn({3, 4}, seed + 1);
  auto loss_fn = [&](bool with_grad) {
    Tape<double> tape;
    auto v = tape.leaf(p);
    auto y = ops::unary(v, kind);
    auto loss = ops::sum_all(ops::mul(y, tape.constant(w)));
    if (with_grad) tape.backward(loss);
    return loss.val()[0];
  };
  auto report = finite_diff_check<decltype(loss_fn)&>({{"p", &p}}, loss_fn);
  return report.worst;
}

}  // namespace

TEST_CASE("contraction matches the naive oracle exactly in f64 on small tensors") {
  std::mt19937_64 rng(3);
  for (int iter = 0; iter < 50; ++iter) {
    const std::size_t m = 1 + rng() % 4, k = 1 + rng() % 4, n = 1 + rng() % 4;
    const bool ta = rng() & 1, tb = rng() & 1;
    Tensor<double> a = Tensor<double>::randn(ta ? std::vector<std::size_t>{k, m}
                                                : std::vector<std::size_t>{m, k},
                                             rng());
    Tensor<double> b = Tensor<double>::randn(tb ? std::vector<std::size_t>{n, k}
                                                : std::vector<std::size_t>{k, n},
                                             rng());
    Tape<double> tape;
    auto got = ops::matmul(tape.constant(a), tape.constant(b), ta, tb);
    auto want = naive_contract(a, b, ta, tb);
    REQUIRE(got.val().numel() <= 64);
    for (std::size_t i = 0; i < want.numel(); ++i) CHECK(got.val()[i] == want[i]);
  }
}

TEST_CASE("matrix product 2x3 . 3x4 equals the triple loop") {
  Tensor<double> a = Tensor<double>::randn({2, 3}, 11);
  Tensor<double> b = Tensor<double>::randn({3, 4}, 12);
  Tape<double> tape;
  auto c = ops::matmul(tape.constant(a), tape.constant(b));
  auto want = naive_contract(a, b, false, false);
  CHECK(c.shape() == std::vector<std::size_t>{2, 4});
  for (std::size_t i = 0; i < want.numel(); ++i) CHECK(c.val()[i] == doctest::Approx(want[i]));
}

TEST_CASE("identity contraction leaves the operand unchanged") {
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  Tensor<double> b = Tensor<double>::randn({3, 3}, 21);
  Tape<double> tape;
  auto c = ops::matmul(tape.constant(eye), tape.constant(b));
  for (std::size_t i = 0; i < b.numel(); ++i) CHECK(c.val()[i] == doctest::Approx(b[i]));
}

TEST_CASE("batched contraction equals the per-slice oracle") {
  Tensor<double> a = Tensor<double>::randn({5, 2, 3}, 31);
  Tensor<double> b = Tensor<double>::randn({3, 1}, 32);  // shared across the batch
  Tape<double> tape;
  auto c = ops::matmul(tape.constant(a), tape.constant(b));
  CHECK(c.shape() == std::vector<std::size_t>{5, 2, 1});
  auto want = naive_contract(a, b, false, false);
  for (std::size_t i = 0; i < want.numel(); ++i) CHECK(c.val()[i] == doctest::Approx(want[i]));
}

TEST_CASE("contraction errors name the mismatched axis") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>::zeros({2, 3}));
  auto b = tape.constant(Tensor<double>::zeros({4, 5}));
  CHECK_THROWS_WITH_AS(ops::matmul(a, b), doctest::Contains("contracted axis"),
                       std::runtime_error);
}

TEST_CASE("elementwise examples") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2}, {1, 2}));
  auto b = tape.constant(Tensor<double>({2}, {3, 4}));
  auto s = ops::add(a, b);
  CHECK(s.val()[0] == 4);
  CHECK(s.val()[1] == 6);

  auto z = ops::gelu(tape.constant(Tensor<double>::scalar(0.0)));
  CHECK(z.val()[0] == 0.0);

  auto c = ops::cos(tape.constant(Tensor<double>::scalar(2 * std::numbers::pi)));
  CHECK(std::abs(c.val()[0] - 1.0) < 1e-12);

  CHECK_THROWS(ops::log(tape.constant(Tensor<double>::scalar(-1.0))));
  CHECK_THROWS(ops::sqrt(tape.constant(Tensor<double>::scalar(-1.0))));

  // trailing-axis broadcasting incompatibility
  auto x = tape.constant(Tensor<double>::zeros({2, 3}));
  auto y = tape.constant(Tensor<double>::zeros({4}));
  CHECK_THROWS_WITH_AS(ops::add(x, y), doctest::Contains("broadcast mismatch"),
                       std::runtime_error);
}

TEST_CASE("reductions and softmax examples") {
  Tape<double> tape;
  auto sm = ops::softmax(tape.constant(Tensor<double>({3}, {0, 0, 0})), 0);
  for (int i = 0; i < 3; ++i) CHECK(sm.val()[i] == doctest::Approx(1.0 / 3));
  double total = sm.val()[0] + sm.val()[1] + sm.val()[2];
  CHECK(std::abs(total - 1.0) < 1e-6);

  auto ones = tape.constant(Tensor<double>::full({2, 3}, 1.0));
  auto s = ops::sum_axis(ones, 1);
  CHECK(s.shape() == std::vector<std::size_t>{2});
  CHECK(s.val()[0] == 3);
  CHECK(s.val()[1] == 3);

  // layer_norm of a constant vector -> zeros before affine (gain 1, bias 0)
  auto g = tape.constant(Tensor<double>::full({4}, 1.0));
  auto bz = tape.constant(Tensor<double>::zeros({4}));
  auto ln = ops::layer_norm(tape.constant(Tensor<double>::full({4}, 5.0)), g, bz, 0);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(ln.val()[i]) < 1e-9);

  CHECK_THROWS(ops::max_axis(tape.constant(Tensor<double>::zeros({2, 0})), 1));
}

TEST_CASE("layer_norm output is standardized along the axis") {
  Tape<double> tape;
  Tensor<double> x = Tensor<double>::randn({3, 8}, 77);
  auto g = tape.constant(Tensor<double>::full({8}, 1.0));
  auto b = tape.constant(Tensor<double>::zeros({8}));
  auto y = ops::layer_norm(tape.constant(x), g, b, 1);
  for (int r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (int c = 0; c < 8; ++c) mean += y.val()[r * 8 + c];
    mean /= 8;
    for (int c = 0; c < 8; ++c) {
      double d = y.val()[r * 8 + c] - mean;
      var += d * d;
    }
    var /= 8;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("backward: analytic example and detached parameter report") {
  Parameter<double> w(Tensor<double>({2}, {1, 2}));
  Parameter<double> unused(Tensor<double>({3}, {1, 1, 1}));
  Tape<double> tape;
  auto v = tape.leaf(w);
  auto u = tape.leaf(unused);
  (void)u;
  auto loss = ops::sum_all(ops::mul(v, v));
  auto report = tape.backward(loss);
  CHECK(w.grad[0] == doctest::Approx(2.0));
  CHECK(w.grad[1] == doctest::Approx(4.0));
  REQUIRE(report.detached.size() == 1);
  CHECK(report.detached[0] == &unused);
  CHECK(unused.grad[0] == 0.0);

  Tape<double> t2;
  auto nv = t2.constant(Tensor<double>::zeros({2, 2}));
  CHECK_THROWS_WITH_AS(t2.backward(Var<double>{&t2, nv.id}), doctest::Contains("scalar"),
                       std::runtime_error);
}

TEST_CASE("every differentiable op passes central finite differences") {
  // spread 100 seeds across the op set; each seed exercises fresh random data
  using UK = ops::UnaryKind;
  struct UnarySpec {
    UK kind;
    double lo, hi;
  };
  const UnarySpec unary_specs[] = {
      {UK::gelu, -2, 2}, {UK::relu, 0.1, 2},  // relu checked away from the kink
      {UK::sqrt_, 0.5, 2}, {UK::cos_, -2, 2}, {UK::sin_, -2, 2},
      {UK::exp_, -1, 1},   {UK::log_, 0.5, 3}, {UK::neg, -2, 2},
  };
  for (const auto& spec : unary_specs)
    for (std::uint64_t seed = 0; seed < 4; ++seed)
      CHECK(fd_check_unary(spec.kind, 1000 + seed, spec.lo, spec.hi) < 1e-4);

  std::mt19937_64 rng(505);
  for (int iter = 0; iter < 12; ++iter) {
    Parameter<double> a(Tensor<double>::randn({2, 3, 4}, rng()));
    Parameter<double> b(Tensor<double>::randn({4}, rng()));
    for (auto& x : b.value.vec()) x = 0.5 + std::abs(x);  // keep div well-conditioned
    Tensor<double> w = Tensor<double>::randn({2, 3, 4}, rng());
    for (auto kind :
         {ops::BinaryKind::add, ops::BinaryKind::sub, ops::BinaryKind::mul, ops::BinaryKind::div}) {
      auto loss_fn = [&](bool with_grad) {
        Tape<double> tape;
        auto y = ops::binary(tape.leaf(a), tape.leaf(b), kind);
        auto loss = ops::sum_all(ops::mul(y, tape.constant(w)));
        if (with_grad) tape.backward(loss);
        return loss.val()[0];
      };
      auto report = finite_diff_check<decltype(loss_fn)&>({{"a", &a}, {"b", &b}}, loss_fn);
      CHECK(report.pass);
    }
  }

  for (int iter = 0; iter < 8; ++iter) {
    Parameter<double> a(Tensor<double>::randn({3, 2, 4}, rng()));
    Parameter<double> b(Tensor<double>::randn({3, 4, 5}, rng()));
    Tensor<double> w = Tensor<double>::randn({3, 2, 5}, rng());
    auto loss_fn = [&](bool with_grad) {
      Tape<double> tape;
      auto y = ops::matmul(tape.leaf(a), tape.leaf(b));
      auto loss = ops::sum_all(ops::mul(y, tape.constant(w)));
      if (with_grad) tape.backward(loss);
      return loss.val()[0];
    };
    auto report = finite_diff_check<decltype(loss_fn)&>({{"a", &a}, {"b", &b}}, loss_fn);
    CHECK(report.pass);
  }

  for (int iter = 0; iter < 6; ++iter) {
    Parameter<double> x(Tensor<double>::randn({4, 6}, rng()));
    Parameter<double> g(Tensor<double>::randn({6}, rng()));
    Parameter<double> bb(Tensor<double>::randn({6}, rng()));
    Tensor<double> w = Tensor<double>::randn({4, 6}, rng());
    auto loss_fn = [&](bool with_grad) {
      Tape<double> tape;
      auto sm = ops::softmax(tape.leaf(x), 1);
      auto ls = ops::log_softmax(ops::scale(tape.leaf(x), 0.5), 1);
      auto ln = ops::layer_norm(tape.leaf(x), tape.leaf(g), tape.leaf(bb), 1);
      auto mx = ops::max_axis(tape.leaf(x), 1);
      auto me = ops::mean_axis(tape.leaf(x), 0);
      auto loss =
          ops::sum_all(ops::mul(ops::add(sm, ops::add(ls, ln)), tape.constant(w))) +
          ops::sum_all(mx) + ops::sum_all(me);
      if (with_grad) tape.backward(loss);
      return loss.val()[0];
    };
    auto report =
        finite_diff_check<decltype(loss_fn)&>({{"x", &x}, {"g", &g}, {"b", &bb}}, loss_fn);
    CHECK(report.pass);
  }

  for (int iter = 0; iter < 4; ++iter) {
    Parameter<double> cube(Tensor<double>::randn({2, 8, 8}, rng()));
    Tensor<double> w1 = Tensor<double>::randn({2, 4, 4}, rng());
    Tensor<double> w2 = Tensor<double>::randn({16, 2, 4}, rng());
    auto loss_fn = [&](bool with_grad) {
      Tape<double> tape;
      auto v = tape.leaf(cube);
      auto ap = ops::avg_pool2d(v, 2);
      auto mp = ops::max_pool2d(v, 2);
      auto aa = ops::adaptive_avg_pool2d(v, 3);
      auto am = ops::adaptive_max_pool2d(v, 3);
      auto uf = ops::unfold(v, 2);
      auto gathered = ops::gather_rows(uf, {0, 3, 7, 9});
      auto scattered = ops::scatter_rows(gathered, {1, 5, 8, 12}, 16);
      auto loss = ops::sum_all(ops::mul(ops::add(ap, mp), tape.constant(w1))) +
                  ops::sum_all(aa) + ops::sum_all(am) +
                  ops::sum_all(ops::mul(uf, tape.constant(w2))) + ops::sum_all(scattered) +
                  ops::sum_all(ops::permute(ops::broadcast_to(ops::reshape(mp, {2, 1, 16}),
                                                              {2, 3, 16}),
                                            {1, 0, 2}));
      if (with_grad) tape.backward(loss);
      return loss.val()[0];
    };
    auto report = finite_diff_check<decltype(loss_fn)&>({{"cube", &cube}}, loss_fn);
    CHECK(report.pass);
  }
}

TEST_CASE("quadratic form gradient is exact to 1e-8") {
  Parameter<double> x(Tensor<double>::randn({6}, 9));
  Tensor<double> q = Tensor<double>::randn({6, 6}, 10);
  auto loss_fn = [&](bool with_grad) {
    Tape<double> tape;
    auto v = tape.leaf(x);
    auto row = ops::reshape(v, {1, 6});
    auto qx = ops::matmul(row, tape.constant(q));  // 1x6
    auto loss = ops::sum_all(ops::mul(qx, row));
    if (with_grad) tape.backward(loss);
    return loss.val()[0];
  };
  auto report = finite_diff_check<decltype(loss_fn)&>({{"x", &x}}, loss_fn, 1e-5, 1e-8);
  CHECK(report.pass);
  CHECK(report.worst < 1e-8);
}

TEST_CASE("dead parameter block is flagged as zero/zero") {
  Parameter<double> used(Tensor<double>::randn({3}, 4));
  Parameter<double> dead(Tensor<double>::randn({3}, 5));
  auto loss_fn = [&](bool with_grad) {
    Tape<double> tape;
    auto v = tape.leaf(used);
    tape.leaf(dead);
    auto loss = ops::sum_all(ops::mul(v, v));
    if (with_grad) tape.backward(loss);
    return loss.val()[0];
  };
  auto report = finite_diff_check<decltype(loss_fn)&>({{"used", &used}, {"dead", &dead}}, loss_fn);
  CHECK(report.pass);
  CHECK_FALSE(report.blocks[0].dead);
  CHECK(report.blocks[1].dead);
}

TEST_CASE("unfold: row-major order and exact refold inverse") {
  // 1x2x2 cube at k=2: one patch holding the four values in row-major order
  Tape<double> tape;
  Tensor<double> tiny({1, 2, 2}, {1, 2, 3, 4});
  auto p = ops::unfold(tape.constant(tiny), 2);
  CHECK(p.shape() == std::vector<std::size_t>{1, 1, 4});
  for (int i = 0; i < 4; ++i) CHECK(p.val()[i] == tiny[i]);

  std::mt19937_64 rng(8);
  for (int iter = 0; iter < 10; ++iter) {
    const std::size_t C = 1 + rng() % 4, k = 1 + rng() % 3;
    const std::size_t H = k * (1 + rng() % 4), W = k * (1 + rng() % 4);
    Tensor<double> x = Tensor<double>::randn({C, H, W}, rng());
    auto unfolded = ops::detail2::unfold_tensor(x, k);
    auto refolded = ops::detail2::refold_tensor(unfolded, C, H, W, k);
    CHECK(refolded.vec() == x.vec());  // exact inverse
  }

  CHECK_THROWS(ops::unfold(tape.constant(Tensor<double>::zeros({1, 5, 4})), 2));
}

TEST_CASE("backward is deterministic: same seed, bit-identical gradients") {
  auto run = [](std::uint64_t seed) {
    Parameter<double> a(Tensor<double>::randn({4, 4}, seed));
    Parameter<double> b(Tensor<double>::randn({4, 4}, seed + 1));
    Tape<double> tape;
    auto y = ops::matmul(tape.leaf(a), tape.leaf(b));
    auto sm = ops::softmax(y, 1);
    auto loss = ops::mean_all(ops::mul(sm, y));
    tape.backward(loss);
    auto out = a.grad.vec();
    out.insert(out.end(), b.grad.vec().begin(), b.grad.vec().end());
    return out;
  };
  auto g1 = run(42);
  auto g2 = run(42);
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}
