#pragma once

// Checkpoint file: magic "HMCK" | version u32 | signature length u32 |
// signature text | param count u32 | per parameter: name length u16, name,
// rank u8, extents u32[], values f32 little-endian. Save/load round trips
// byte-identically; the signature must match the loading model's config.

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "hypermae/nn.hpp"

namespace hypermae {

static_assert(std::endian::native == std::endian::little,
              "checkpoints assume a little-endian host");

namespace detail_ckpt {

template <class T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(in.good(), "truncated checkpoint: " + path);
  return v;
}

}  // namespace detail_ckpt

template <class T>
void save_checkpoint(const std::string& path, const std::string& signature,
                     const nn::ParamRegistry<T>& reg) {
  using namespace detail_ckpt;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot write checkpoint: " + path);
  out.write("HMCK", 4);
  write_pod<std::uint32_t>(out, 1);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(signature.size()));
  out.write(signature.data(), static_cast<std::streamsize>(signature.size()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(reg.items.size()));
  for (const auto& [name, p] : reg.items) {
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(p->value.rank()));
    for (std::size_t e : p->value.shape())
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (std::size_t i = 0; i < p->value.numel(); ++i)
      write_pod<float>(out, static_cast<float>(p->value[i]));
  }
  check(out.good(), "checkpoint write failed: " + path);
}

/// Reads only the embedded signature (to rebuild a model before loading).
inline std::string read_checkpoint_signature(const std::string& path) {
  using namespace detail_ckpt;
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::memcmp(magic, "HMCK", 4) == 0, "bad checkpoint magic in " + path);
  const auto version = read_pod<std::uint32_t>(in, path);
  check(version == 1, "unsupported checkpoint version in " + path);
  const auto sig_len = read_pod<std::uint32_t>(in, path);
  std::string sig(sig_len, '\0');
  in.read(sig.data(), sig_len);
  check(in.good(), "truncated checkpoint signature in " + path);
  return sig;
}

template <class T>
void load_checkpoint(const std::string& path, const std::string& expected_signature,
                     nn::ParamRegistry<T>& reg) {
  using namespace detail_ckpt;
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::memcmp(magic, "HMCK", 4) == 0, "bad checkpoint magic in " + path);
  const auto version = read_pod<std::uint32_t>(in, path);
  check(version == 1, "unsupported checkpoint version in " + path);
  const auto sig_len = read_pod<std::uint32_t>(in, path);
  std::string sig(sig_len, '\0');
  in.read(sig.data(), sig_len);
  check(in.good(), "truncated checkpoint signature in " + path);
  check(sig == expected_signature,
        "checkpoint/config mismatch: the stored model signature differs (" + path + ")");

  const auto count = read_pod<std::uint32_t>(in, path);
  check(count == reg.items.size(), "checkpoint parameter count " + std::to_string(count) +
                                       " differs from the model's " +
                                       std::to_string(reg.items.size()));
  for (auto& [name, p] : reg.items) {
    const auto name_len = read_pod<std::uint16_t>(in, path);
    std::string stored(name_len, '\0');
    in.read(stored.data(), name_len);
    check(in.good() && stored == name,
          "checkpoint parameter order mismatch: expected '" + name + "', found '" + stored + "'");
    const auto rank = read_pod<std::uint8_t>(in, path);
    check(rank == p->value.rank(), "checkpoint rank mismatch for '" + name + "'");
    for (std::size_t d = 0; d < rank; ++d) {
      const auto extent = read_pod<std::uint32_t>(in, path);
      check(extent == p->value.shape()[d], "checkpoint shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < p->value.numel(); ++i)
      p->value[i] = static_cast<T>(read_pod<float>(in, path));
    p->zero_grad();
  }
}

}  // namespace hypermae
