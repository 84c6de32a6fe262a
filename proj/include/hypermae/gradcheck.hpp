#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hypermae/tape.hpp"

namespace hypermae {

struct FiniteDiffBlock {
  std::string name;
  std::size_t checked = 0;
  double max_rel_err = 0;
  double analytic_max = 0;
  double numeric_max = 0;
  bool dead = false;  // zero analytic, zero numeric
  bool pass = true;
};

struct FiniteDiffReport {
  std::vector<FiniteDiffBlock> blocks;
  double worst = 0;
  bool pass = true;

  std::string summary() const {
    std::ostringstream os;
    for (const auto& b : blocks) {
      os << (b.pass ? "  ok  " : " FAIL ") << b.name << "  max_rel_err=" << b.max_rel_err
         << "  checked=" << b.checked;
      if (b.dead) os << "  [zero analytic, zero numeric]";
      os << "\n";
    }
    os << (pass ? "PASS" : "FAIL") << " worst=" << worst << "\n";
    return os.str();
  }
};

/// Central-difference gradient verification. `loss_fn(with_grad)` must run a
/// fresh forward pass from the parameters' current values and return the
/// scalar loss; when with_grad is set it must also run backward so the
/// parameters' `grad` fields hold d loss / d param. The function has to be
/// deterministic for fixed parameter values. Blocks larger than
/// max_per_block are subsampled with the given seed.
template <class LossFn>
FiniteDiffReport finite_diff_check(
    const std::vector<std::pair<std::string, Parameter<double>*>>& params, LossFn&& loss_fn,
    double h = 1e-5, double tol = 1e-4, std::size_t max_per_block = SIZE_MAX,
    std::uint64_t sample_seed = 0) {
  FiniteDiffReport report;

  for (auto& [name, p] : params) p->zero_grad();
  const double base_loss = loss_fn(true);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) analytic.push_back(p->grad.vec());

  const double grad_floor = 1e-6 * std::max(1.0, std::abs(base_loss));

  for (std::size_t bi = 0; bi < params.size(); ++bi) {
    Parameter<double>& p = *params[bi].second;
    FiniteDiffBlock block;
    block.name = params[bi].first;

    std::vector<std::size_t> elems(p.value.numel());
    for (std::size_t i = 0; i < elems.size(); ++i) elems[i] = i;
    if (elems.size() > max_per_block) {
      std::mt19937_64 rng(derive_seed(sample_seed, bi));
      std::shuffle(elems.begin(), elems.end(), rng);
      elems.resize(max_per_block);
      std::sort(elems.begin(), elems.end());
    }

    double max_abs_diff = 0;
    for (std::size_t i : elems) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = loss_fn(false);
      p.value[i] = saved - h;
      const double down = loss_fn(false);
      p.value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[bi][i];
      max_abs_diff = std::max(max_abs_diff, std::abs(a - numeric));
      block.analytic_max = std::max(block.analytic_max, std::abs(a));
      block.numeric_max = std::max(block.numeric_max, std::abs(numeric));
      ++block.checked;
    }
    block.dead = block.analytic_max < 1e-12 && block.numeric_max < 1e-12;
    if (block.dead) {
      block.max_rel_err = 0;
    } else {
      block.max_rel_err =
          max_abs_diff / std::max({block.analytic_max, block.numeric_max, grad_floor});
    }
    block.pass = block.dead || block.max_rel_err < tol;
    report.worst = std::max(report.worst, block.max_rel_err);
    report.pass = report.pass && block.pass;
    report.blocks.push_back(std::move(block));
  }
  return report;
}

}  // namespace hypermae
