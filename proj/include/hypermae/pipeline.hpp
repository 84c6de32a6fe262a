#pragma once

// Normalization statistics, the contiguous band-view sampler, and the epoch
// batch iterator with optional prefetch workers.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hypermae/storage.hpp"

namespace hypermae {

struct BandStats {
  double p1 = 0, p99 = 0;  // clip bounds at the configured percentile
  double mean = 0, stddev = 1;
  bool degenerate = false;  // constant band, stddev floored
};

struct NormStats {
  double clip = 0.01;
  std::map<std::string, std::vector<BandStats>> per_sensor;  // key -> per-band

  const std::vector<BandStats>& for_sensor(const std::string& key) const;
  void save(const std::string& path) const;
  static NormStats load(const std::string& path);
};

/// Nearest-rank percentiles per band over a seeded pixel subsample; mean and
/// stddev are computed after clipping, on the same population.
NormStats compute_stats(const Dataset& ds, double clip = 0.01, std::uint64_t seed = 0,
                        std::size_t max_pixels_per_band = 65536);

/// In place: clip to [p1, p99], then (x - mean) / stddev per band.
/// `band_offset` selects the stats rows matching a band view.
void normalize_cube(Tensor<float>& cube, const std::vector<BandStats>& stats,
                    std::size_t band_offset = 0);

/// Candidate window starts: multiples of `stride` that keep the window in
/// range, plus the terminal start so trailing bands stay reachable.
std::vector<std::size_t> view_starts(std::size_t band_count, std::size_t window,
                                     std::size_t stride);

/// Uniform draw from the start set. Sensors with fewer bands than the window
/// fall back to the full range (flagged via *fell_back).
BandSelection sample_band_view(const SensorSpec& spec, std::size_t window, std::size_t stride,
                               std::uint64_t seed, bool* fell_back = nullptr);

struct BatchItem {
  Tensor<float> cube;  // normalized view bands
  SensorSpec spec;     // subset spec matching the view
  int label = -1;
  std::size_t entry_index = 0;
  std::size_t band_start = 0;
};

struct LoaderConfig {
  std::size_t batch = 8;
  std::size_t window = 100;
  std::size_t stride = 32;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t shards = 1;  // logical lanes: shard s at step t seeds view f(seed, s, t)
  bool normalize = true;
};

/// One epoch over the dataset: every entry exactly once, seeded order,
/// one band view per (batch, sensor). Deterministic sequence at any worker
/// count (workers only prefetch).
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, const NormStats* stats, const LoaderConfig& cfg,
                std::size_t epoch, std::vector<std::size_t> entry_subset = {});
  ~BatchIterator();

  BatchIterator(const BatchIterator&) = delete;
  BatchIterator& operator=(const BatchIterator&) = delete;

  std::optional<std::vector<BatchItem>> next();

  std::size_t batches() const { return n_batches_; }
  std::size_t samples() const { return order_.size(); }

 private:
  struct Impl;
  std::vector<BatchItem> load_batch(std::size_t batch_index) const;

  const Dataset& ds_;
  const NormStats* stats_;
  LoaderConfig cfg_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> order_;  // entry indices, epoch permutation
  std::size_t n_batches_ = 0;
  std::size_t cursor_ = 0;
  std::unique_ptr<Impl> impl_;  // prefetch state when workers > 1
};

}  // namespace hypermae
