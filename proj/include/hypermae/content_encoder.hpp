#pragma once

// Image-content conditioning branch: dual average/max pooling at the token
// patch size, per-channel projection of the pooled statistics, and the final
// fusion with the metadata branch into the condition matrix E.

#include <string>

#include "hypermae/meta_encoder.hpp"
#include "hypermae/nn.hpp"

namespace hypermae {

enum class Conditioning { both, meta_only, content_only };

inline const char* conditioning_name(Conditioning c) {
  switch (c) {
    case Conditioning::both: return "both";
    case Conditioning::meta_only: return "meta_only";
    case Conditioning::content_only: return "content_only";
  }
  return "both";
}

inline Conditioning conditioning_from_string(const std::string& s) {
  if (s == "both") return Conditioning::both;
  if (s == "meta_only") return Conditioning::meta_only;
  if (s == "content_only") return Conditioning::content_only;
  fail("unknown conditioning mode: '" + s + "'");
}

struct ContentEncoderConfig {
  std::size_t dim = 128;     // d, matches the meta branch
  std::size_t grid = 8;      // configured token grid; projection input is 2*grid^2
  std::size_t hidden = 128;  // projection hidden width
};

/// Non-overlapping k x k dual pooling of a C,H,W cube -> (avg, max), each
/// C x N with N = (H/k)*(W/k). When the pooled grid differs from the
/// configured one, both maps are adaptively re-pooled to it.
template <class T>
std::pair<Var<T>, Var<T>> dual_pool(Tape<T>& tape, Var<T> cube, std::size_t k) {
  auto avg = ops::avg_pool2d(cube, k);
  auto mx = ops::max_pool2d(cube, k);
  const auto& s = avg.shape();  // C, gh, gw
  const std::size_t C = s[0], N = s[1] * s[2];
  return {ops::reshape(avg, {C, N}), ops::reshape(mx, {C, N})};
}

template <class T>
struct ContentEncoder {
  ContentEncoderConfig cfg;
  nn::Mlp<T> project;  // 2N -> hidden -> d, shared across channels

  ContentEncoder() = default;
  ContentEncoder(nn::ParamRegistry<T>& reg, const std::string& name, nn::InitStream& init,
                 const ContentEncoderConfig& c)
      : cfg(c),
        project(reg, name + ".project", init, {2 * c.grid * c.grid, c.hidden, c.dim}) {}

  std::size_t configured_tokens() const { return cfg.grid * cfg.grid; }

  // pooled maps at the configured grid, as C x N each
  std::pair<Var<T>, Var<T>> pooled(Tape<T>& tape, Var<T> cube, std::size_t k) const {
    auto avg = ops::avg_pool2d(cube, k);
    auto mx = ops::max_pool2d(cube, k);
    const auto s = avg.shape();
    if (s[1] != cfg.grid || s[2] != cfg.grid) {
      check(s[1] >= cfg.grid && s[2] >= cfg.grid,
            "pooled grid " + shape_str(s) + " smaller than the configured " +
                std::to_string(cfg.grid));
      avg = ops::adaptive_avg_pool2d(avg, cfg.grid);
      mx = ops::adaptive_max_pool2d(mx, cfg.grid);
    }
    const std::size_t C = s[0], N = configured_tokens();
    return {ops::reshape(avg, {C, N}), ops::reshape(mx, {C, N})};
  }

  Var<T> operator()(Tape<T>& tape, Var<T> cube, std::size_t k) const {
    auto [avg, mx] = pooled(tape, cube, k);
    auto cat = ops::concat<T>({avg, mx}, 1);  // C x 2N
    return project(tape, cat);               // C x d
  }

  // projection from externally supplied pooled maps (must match the grid)
  Var<T> project_pooled(Tape<T>& tape, Var<T> avg, Var<T> mx) const {
    check(avg.shape() == mx.shape(), "pooled map shape mismatch");
    check(avg.shape()[1] == configured_tokens(),
          "pooled token count " + std::to_string(avg.shape()[1]) + " differs from configured " +
              std::to_string(configured_tokens()));
    return project(tape, ops::concat<T>({avg, mx}, 1));
  }
};

/// Final condition: E = CFF(E_meta, E_content), with the ablation switches
/// zeroing one branch while keeping the fused path well-defined.
template <class T>
struct ConditionFuse {
  Cff<T> cff;
  std::size_t dim = 0;

  ConditionFuse() = default;
  ConditionFuse(nn::ParamRegistry<T>& reg, const std::string& name, nn::InitStream& init,
                std::size_t d)
      : cff(reg, name, init, d), dim(d) {}

  Var<T> operator()(Tape<T>& tape, Var<T> e_meta, Var<T> e_content, Conditioning mode) const {
    switch (mode) {
      case Conditioning::meta_only:
        e_content = tape.constant(Tensor<T>::zeros(e_meta.shape()));
        break;
      case Conditioning::content_only:
        e_meta = tape.constant(Tensor<T>::zeros(e_content.shape()));
        break;
      case Conditioning::both: break;
    }
    return cff(tape, e_meta, e_content);
  }
};

}  // namespace hypermae
