#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace hypermae {

/// Geometry and widths the parameter/FLOP reports are evaluated at. The
/// default is the paper-scale setting: ViT-Base token width, 224x224 input at
/// patch 8 (so N = 784), 100-channel views.
struct AccountingConfig {
  std::size_t C = 100;
  std::size_t N = 784;
  std::size_t k = 8;
  std::size_t D = 768;
  std::size_t r = 4;
  std::size_t d = 128;             // condition width
  std::size_t hyper_hidden = 512;
  std::size_t provider_dim = 64;
  std::size_t fwhm_hidden = 64;
  std::size_t content_hidden = 128;
  std::size_t tf_layers = 2;
  std::size_t dec_dim = 128;
  std::size_t vit_depth = 12;      // reference backbone for the FLOP ratio
  std::size_t vit_dim = 768;
};

struct ParamReport {
  std::vector<std::pair<std::string, std::size_t>> entries;
  std::size_t hypernetwork = 0;      // the three embed-side generator stacks
  std::size_t module_total = 0;      // condition encoders + fuse + hypernetwork
  double hypernet_share = 0;
  std::size_t vanilla_baseline = 0;  // C*k^2*D + D
  std::string to_text() const;
};

struct FlopReport {
  std::vector<std::pair<std::string, double>> entries;
  double module_flops = 0;     // condition encoding + factor generation + contractions
  double factorized_flops = 0; // 2*N*C*(k^2*r + r*D)
  double vit_forward_flops = 0;
  double ratio_to_vit = 0;
  std::string to_text() const;
};

ParamReport param_report(const AccountingConfig& cfg);
FlopReport flop_report(const AccountingConfig& cfg);

}  // namespace hypermae
