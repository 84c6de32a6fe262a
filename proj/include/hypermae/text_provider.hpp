#pragma once

#include <map>
#include <string>
#include <vector>

#include "hypermae/common.hpp"

namespace hypermae {

/// Deterministic text-to-vector provider for sensor names and processing
/// levels. Ships a table of unit vectors for the builtin sensors plus the
/// reserved "unknown" token; unseen strings fall back to a seeded
/// hash-to-Gaussian draw, so the mapping is stable across runs with no
/// external model. Vectors are always unit-norm.
class TextEmbeddingProvider {
 public:
  explicit TextEmbeddingProvider(std::size_t dimension = 64);

  std::size_t dimension() const { return dim_; }

  // Empty strings resolve to the reserved "unknown" row.
  const std::vector<double>& embed(const std::string& text) const;

  bool has_entry(const std::string& text) const { return table_.count(text) > 0; }

  // Table file: one entry per line, "string : v0,v1,...". Loaded vectors are
  // renormalized to unit norm; dimension must match the provider's.
  void load_table(const std::string& path);
  void save_table(const std::string& path) const;

 private:
  std::vector<double> hashed_vector(const std::string& text) const;

  std::size_t dim_;
  mutable std::map<std::string, std::vector<double>> table_;
};

}  // namespace hypermae
