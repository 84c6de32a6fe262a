#include "hypermae/text_provider.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace hypermae {

namespace {

// fixed stream id so shipped table rows never move between releases
constexpr std::uint64_t kProviderStream = 0x7458764563746f72ull;

void normalize(std::vector<double>& v) {
  double n2 = 0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  check(n > 0, "text embedding has zero norm");
  for (double& x : v) x /= n;
}

}  // namespace

TextEmbeddingProvider::TextEmbeddingProvider(std::size_t dimension) : dim_(dimension) {
  check(dim_ >= 2, "text embedding dimension too small");
  const char* builtin[] = {"AVIRIS-Classic", "AVIRIS-NG",      "AVIRIS-3", "L1_radiance",
                           "L2_reflectance", "unknown"};
  for (const char* name : builtin) table_[name] = hashed_vector(name);
}

std::vector<double> TextEmbeddingProvider::hashed_vector(const std::string& text) const {
  std::mt19937_64 rng(derive_seed(kProviderStream, hash_string(text)));
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(dim_);
  for (double& x : v) x = dist(rng);
  normalize(v);
  return v;
}

const std::vector<double>& TextEmbeddingProvider::embed(const std::string& text) const {
  const std::string& key = text.empty() ? std::string("unknown") : text;
  auto it = table_.find(key);
  if (it != table_.end()) return it->second;
  auto [inserted, ok] = table_.emplace(key, hashed_vector(key));
  return inserted->second;
}

void TextEmbeddingProvider::load_table(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open embedding table: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto colon = line.find(':');
    check(colon != std::string::npos, "bad embedding table line: '" + line + "'");
    std::string key = line.substr(0, colon);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    std::vector<double> v;
    std::stringstream ss(line.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
    check(v.size() == dim_, "embedding table row for '" + key + "' has dimension " +
                                std::to_string(v.size()) + ", expected " + std::to_string(dim_));
    normalize(v);
    table_[key] = std::move(v);
  }
}

void TextEmbeddingProvider::save_table(const std::string& path) const {
  std::ofstream out(path);
  check(out.good(), "cannot write embedding table: " + path);
  for (const auto& [key, v] : table_) {
    out << key << " : ";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out << ",";
      out << v[i];
    }
    out << "\n";
  }
}

}  // namespace hypermae
