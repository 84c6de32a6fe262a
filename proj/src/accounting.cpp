#include "hypermae/accounting.hpp"

#include <sstream>

namespace hypermae {

namespace {

std::size_t linear(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t mlp3(std::size_t in, std::size_t hid, std::size_t out) {
  return linear(in, hid) + linear(hid, hid) + linear(hid, out);
}

std::size_t cff(std::size_t d) { return 6 * d * d + 5 * d; }

std::size_t tf_block(std::size_t d) { return 12 * d * d + 13 * d; }

}  // namespace

ParamReport param_report(const AccountingConfig& c) {
  ParamReport rep;
  const std::size_t d = c.d;

  const std::size_t meta = linear(1, c.fwhm_hidden) + linear(c.fwhm_hidden, d)  // fwhm stack
                           + 2 * linear(c.provider_dim, d / 2)                  // name + level
                           + 2                                                  // fuse scalars
                           + 2 * linear(d, d)                                   // fuse refinement
                           + cff(d) + c.tf_layers * tf_block(d) + 2 * d;
  const std::size_t content =
      linear(2 * c.N, c.content_hidden) + linear(c.content_hidden, d);
  const std::size_t cond = cff(d);
  const std::size_t f_u = mlp3(d, c.hyper_hidden, c.D * c.r);
  const std::size_t f_v = mlp3(d, c.hyper_hidden, c.r * c.k * c.k);
  const std::size_t f_b = mlp3(d, c.hyper_hidden, c.D);

  rep.entries.emplace_back("meta_encoder", meta);
  rep.entries.emplace_back("content_encoder", content);
  rep.entries.emplace_back("condition_fuse", cond);
  rep.entries.emplace_back("factor_stack_u", f_u);
  rep.entries.emplace_back("factor_stack_v", f_v);
  rep.entries.emplace_back("factor_stack_bias", f_b);

  rep.hypernetwork = f_u + f_v + f_b;
  rep.module_total = meta + content + cond + rep.hypernetwork;
  rep.hypernet_share =
      static_cast<double>(rep.hypernetwork) / static_cast<double>(rep.module_total);
  rep.vanilla_baseline = c.C * c.k * c.k * c.D + c.D;

  // decoder-side blocks, reported for completeness, outside the module total
  rep.entries.emplace_back("decoder_condition_proj", linear(c.dec_dim, d));
  rep.entries.emplace_back("decoder_condition_fuse", cff(d));
  rep.entries.emplace_back("decoder_factor_stack_u", mlp3(d, c.hyper_hidden, c.k * c.k * c.r));
  rep.entries.emplace_back("decoder_factor_stack_v", mlp3(d, c.hyper_hidden, c.r * c.dec_dim));
  rep.entries.emplace_back("decoder_factor_stack_bias", mlp3(d, c.hyper_hidden, c.k * c.k));
  return rep;
}

std::string ParamReport::to_text() const {
  std::ostringstream os;
  for (const auto& [name, count] : entries) os << "params." << name << " = " << count << "\n";
  os << "params.hypernetwork = " << hypernetwork << "\n";
  os << "params.module_total = " << module_total << "\n";
  os << "params.hypernet_share = " << hypernet_share << "\n";
  os << "params.vanilla_baseline = " << vanilla_baseline << "\n";
  return os.str();
}

FlopReport flop_report(const AccountingConfig& c) {
  FlopReport rep;
  const double C = static_cast<double>(c.C);
  const double N = static_cast<double>(c.N);
  const double d = static_cast<double>(c.d);
  const double D = static_cast<double>(c.D);
  const double r = static_cast<double>(c.r);
  const double k2 = static_cast<double>(c.k * c.k);
  const double hid = static_cast<double>(c.hyper_hidden);

  // 2 flops per multiply-accumulate throughout
  const double meta =
      2 * C * (static_cast<double>(c.fwhm_hidden) * (1 + d))       // fwhm stack
      + 2 * 2 * static_cast<double>(c.provider_dim) * (d / 2)      // name + level rows
      + 2 * C * 2 * d * d                                          // fuse refinement
      + 2 * C * 6 * d * d                                          // cff
      + static_cast<double>(c.tf_layers) * 2 * (12 * C * d * d + 2 * C * C * d);
  const double content = 2 * C * N * k2                             // dual pooling
                         + 2 * C *
                               (2 * N * static_cast<double>(c.content_hidden) +
                                static_cast<double>(c.content_hidden) * d);
  const double cond = 2 * C * 6 * d * d;
  const double gen_u = 2 * C * (d * hid + hid * hid + hid * D * r);
  const double gen_v = 2 * C * (d * hid + hid * hid + hid * r * k2);
  const double gen_b = 2 * (d * hid + hid * hid + hid * D);
  rep.factorized_flops = 2 * N * C * (k2 * r + r * D);

  rep.entries.emplace_back("meta_encoder", meta);
  rep.entries.emplace_back("content_encoder", content);
  rep.entries.emplace_back("condition_fuse", cond);
  rep.entries.emplace_back("factor_generation", gen_u + gen_v + gen_b);
  rep.entries.emplace_back("factorized_contractions", rep.factorized_flops);

  rep.module_flops = meta + content + cond + gen_u + gen_v + gen_b + rep.factorized_flops;

  const double vd = static_cast<double>(c.vit_dim);
  rep.vit_forward_flops =
      static_cast<double>(c.vit_depth) * 2 * (12 * N * vd * vd + 2 * N * N * vd);
  rep.ratio_to_vit = rep.module_flops / rep.vit_forward_flops;
  return rep;
}

std::string FlopReport::to_text() const {
  std::ostringstream os;
  for (const auto& [name, v] : entries) os << "flops." << name << " = " << v << "\n";
  os << "flops.module_total = " << module_flops << "\n";
  os << "flops.vit_base_forward = " << vit_forward_flops << "\n";
  os << "flops.ratio_to_vit = " << ratio_to_vit << "\n";
  return os.str();
}

}  // namespace hypermae
