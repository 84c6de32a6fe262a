#pragma once

// Reusable double-precision gradient verification sweep: every primitive
// differentiable operation against central finite differences across seeded
// random instances, plus the end-to-end masked objective on toy cubes.

#include <ostream>

#include "hypermae/gradcheck.hpp"
#include "hypermae/losses.hpp"
#include "hypermae/model.hpp"

namespace hypermae {

namespace gradsuite_detail {

template <class Fn>
bool check_block(std::ostream& os, const std::string& label,
                 const std::vector<std::pair<std::string, Parameter<double>*>>& params, Fn&& fn,
                 double tol = 1e-4, std::size_t max_per_block = SIZE_MAX,
                 std::uint64_t sample_seed = 0) {
  auto report = finite_diff_check<Fn&>(params, fn, 1e-5, tol, max_per_block, sample_seed);
  os << (report.pass ? "  ok   " : "  FAIL ") << label << "  max_rel_err=" << report.worst
     << "\n";
  if (!report.pass) os << report.summary();
  return report.pass;
}

}  // namespace gradsuite_detail

/// Primitive-operation sweep: 100 seeds spread over the op set.
inline bool gradcheck_ops(std::ostream& os) {
  using namespace gradsuite_detail;
  bool pass = true;
  std::mt19937_64 rng(2024);

  struct UnaryCase {
    ops::UnaryKind kind;
    const char* name;
    double lo, hi;
  };
  const UnaryCase unary_cases[] = {
      {ops::UnaryKind::gelu, "gelu", -2, 2},   {ops::UnaryKind::relu, "relu", 0.2, 2},
      {ops::UnaryKind::sqrt_, "sqrt", 0.5, 2}, {ops::UnaryKind::cos_, "cos", -2, 2},
      {ops::UnaryKind::sin_, "sin", -2, 2},    {ops::UnaryKind::exp_, "exp", -1, 1},
      {ops::UnaryKind::log_, "log", 0.5, 3},   {ops::UnaryKind::neg, "neg", -2, 2},
  };
  for (const auto& uc : unary_cases) {
    for (int seed = 0; seed < 5; ++seed) {
      Parameter<double> p(Tensor<double>::randn({3, 5}, rng()));
      for (auto& x : p.value.vec()) x = uc.lo + (uc.hi - uc.lo) * std::abs(std::fmod(x, 1.0));
      Tensor<double> w = Tensor<double>::randn({3, 5}, rng());
      auto fn = [&](bool with_grad) {
        Tape<double> tape;
        auto y = ops::unary(tape.leaf(p), uc.kind);
        auto loss = ops::sum_all(ops::mul(y, tape.constant(w)));
        if (with_grad) tape.backward(loss);
        return loss.val()[0];
      };
      pass &= check_block(os, std::string(uc.name) + "/seed" + std::to_string(seed),
                          {{"x", &p}}, fn);
    }
  }

  const ops::BinaryKind binary_kinds[] = {ops::BinaryKind::add, ops::BinaryKind::sub,
                                          ops::BinaryKind::mul, ops::BinaryKind::div};
  const char* binary_names[] = {"add", "sub", "mul", "div"};
  for (int bi = 0; bi < 4; ++bi)
    for (int seed = 0; seed < 5; ++seed) {
      Parameter<double> a(Tensor<double>::randn({2, 3, 4}, rng()));
      Parameter<double> b(Tensor<double>::randn({4}, rng()));
      for (auto& x : b.value.vec()) x = 0.5 + std::abs(x);
      Tensor<double> w = Tensor<double>::randn({2, 3, 4}, rng());
      auto fn = [&](bool with_grad) {
        Tape<double> tape;
        auto y = ops::binary(tape.leaf(a), tape.leaf(b), binary_kinds[bi]);
        auto loss = ops::sum_all(ops::mul(y, tape.constant(w)));
        if (with_grad) tape.backward(loss);
        return loss.val()[0];
      };
      pass &= check_block(os, std::string(binary_names[bi]) + "/seed" + std::to_string(seed),
                          {{"a", &a}, {"b", &b}}, fn);
    }

  for (int seed = 0; seed < 10; ++seed) {
    const bool ta = seed & 1, tb = seed & 2;
    Parameter<double> a(Tensor<double>::randn(ta ? std::vector<std::size_t>{3, 4, 2}
                                                 : std::vector<std::size_t>{3, 2, 4},
                                              rng()));
    Parameter<double> b(Tensor<double>::randn(tb ? std::vector<std::size_t>{3, 5, 4}
                                                 : std::vector<std::size_t>{3, 4, 5},
                                              rng()));
    Tensor<double> w = Tensor<double>::randn({3, 2, 5}, rng());
    auto fn = [&](bool with_grad) {
      Tape<double> tape;
      auto y = ops::matmul(tape.leaf(a), tape.leaf(b), ta, tb);
      auto loss = ops::sum_all(ops::mul(y, tape.constant(w)));
      if (with_grad) tape.backward(loss);
      return loss.val()[0];
    };
    pass &= check_block(os, "contract/seed" + std::to_string(seed), {{"a", &a}, {"b", &b}}, fn);
  }

  for (int seed = 0; seed < 10; ++seed) {
    Parameter<double> x(Tensor<double>::randn({4, 6}, rng()));
    Parameter<double> g(Tensor<double>::randn({6}, rng()));
    Parameter<double> b(Tensor<double>::randn({6}, rng()));
    Tensor<double> w = Tensor<double>::randn({4, 6}, rng());
    auto fn = [&](bool with_grad) {
      Tape<double> tape;
      auto sm = ops::softmax(tape.leaf(x), 1);
      auto ls = ops::log_softmax(ops::scale(tape.leaf(x), 0.7), 1);
      auto ln = ops::layer_norm(tape.leaf(x), tape.leaf(g), tape.leaf(b), 1);
      auto red = ops::sum_all(ops::max_axis(tape.leaf(x), 1)) +
                 ops::sum_all(ops::mean_axis(tape.leaf(x), 0));
      auto loss =
          ops::sum_all(ops::mul(ops::add(sm, ops::add(ls, ln)), tape.constant(w))) + red;
      if (with_grad) tape.backward(loss);
      return loss.val()[0];
    };
    pass &= check_block(os, "norm+reduce/seed" + std::to_string(seed),
                        {{"x", &x}, {"g", &g}, {"b", &b}}, fn);
  }

  for (int seed = 0; seed < 10; ++seed) {
    Parameter<double> cube(Tensor<double>::randn({2, 8, 8}, rng()));
    Tensor<double> w = Tensor<double>::randn({16, 2, 4}, rng());
    auto fn = [&](bool with_grad) {
      Tape<double> tape;
      auto v = tape.leaf(cube);
      auto uf = ops::unfold(v, 2);
      auto gathered = ops::gather_rows(uf, {1, 4, 9});
      auto scattered = ops::scatter_rows(gathered, {0, 7, 15}, 16);
      auto loss = ops::sum_all(ops::mul(uf, tape.constant(w))) + ops::sum_all(scattered) +
                  ops::sum_all(ops::avg_pool2d(v, 2)) + ops::sum_all(ops::max_pool2d(v, 2)) +
                  ops::sum_all(ops::adaptive_avg_pool2d(v, 3)) +
                  ops::sum_all(ops::adaptive_max_pool2d(v, 3)) +
                  ops::sum_all(ops::permute(ops::broadcast_to(ops::reshape(v, {2, 1, 64}),
                                                              {2, 3, 64}),
                                            {1, 0, 2}));
      if (with_grad) tape.backward(loss);
      return loss.val()[0];
    };
    pass &= check_block(os, "shape+pool/seed" + std::to_string(seed), {{"cube", &cube}}, fn);
  }

  for (int seed = 0; seed < 6; ++seed) {
    Parameter<double> xhat(Tensor<double>::randn({4, 3, 4}, rng()));
    Tensor<double> x = Tensor<double>::randn({4, 3, 4}, rng());
    MaskPlan plan = random_masking(4, 0.5, rng());
    LossConfig lc;
    auto fn = [&](bool with_grad) {
      Tape<double> tape;
      auto lv = total_loss(tape, tape.leaf(xhat), x, plan, lc);
      if (with_grad) tape.backward(lv.total);
      return lv.total.val()[0];
    };
    pass &= check_block(os, "objective/seed" + std::to_string(seed), {{"xhat", &xhat}}, fn);
  }
  return pass;
}

/// End-to-end masked objective on toy cubes (C = 2..6, H = W = 16), evaluated
/// at a perturbed parameter point. `full` adds a denser sweep and a full
/// model step on an 8x8 cube.
inline bool gradcheck_model(std::ostream& os, bool full = false) {
  using namespace gradsuite_detail;
  bool pass = true;
  const std::size_t channel_cases_small[] = {2, 4, 6};
  const std::size_t channel_cases_full[] = {2, 3, 4, 5, 6};

  auto run_case = [&](std::size_t channels, std::size_t hw, std::size_t max_per_block,
                      std::uint64_t seed) {
    ModelConfig mc;
    mc.meta.dim = 16;
    mc.meta.provider_dim = 8;
    mc.meta.fwhm_hidden = 4;
    mc.meta.tf_layers = 1;
    mc.meta.tf_heads = 2;
    mc.content.dim = 16;
    mc.content.grid = hw / 4;
    mc.content.hidden = 8;
    mc.rank = 2;
    mc.hyper_hidden = 12;
    mc.backbone.patch = 4;
    mc.backbone.dim = 16;
    mc.backbone.depth = 1;
    mc.backbone.heads = 2;
    mc.backbone.dec_dim = 8;
    mc.backbone.dec_depth = 1;
    mc.backbone.dec_heads = 2;
    mc.init_seed = seed;
    Model<double> model(mc);
    nn::perturb_parameters(model.reg, derive_seed(seed, 0xF00), 0.1);

    SensorSpec spec = subset(builtin_sensor("AVIRIS-NG", Level::L1_radiance), {48, channels});
    Tensor<double> cube = Tensor<double>::randn({channels, hw, hw}, derive_seed(seed, 1), 0.5);
    LossConfig lc;
    auto fn = [&](bool with_grad) {
      Tape<double> tape;
      auto fwd = model.forward_mim(tape, cube, spec, 0.75, derive_seed(seed, 2));
      auto lv = total_loss(tape, fwd.recon, fwd.target, fwd.plan, lc);
      if (with_grad) {
        model.reg.zero_grads();
        tape.backward(lv.total);
      }
      return lv.total.val()[0];
    };
    std::vector<std::pair<std::string, Parameter<double>*>> params;
    for (auto& [name, p] : model.reg.items) params.emplace_back(name, p);
    return check_block(os,
                       "forward_mim/C" + std::to_string(channels) + "/hw" + std::to_string(hw),
                       params, fn, 1e-4, max_per_block, derive_seed(seed, 3));
  };

  if (full) {
    for (std::size_t c : channel_cases_full) pass &= run_case(c, 16, 2, 900 + c);
    // full model step on an 8x8 cube, 32 sampled weights via per-block caps
    pass &= run_case(3, 8, 1, 1200);
  } else {
    for (std::size_t c : channel_cases_small) pass &= run_case(c, 16, 1, 900 + c);
  }
  return pass;
}

}  // namespace hypermae
