#include "hypermae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

namespace hypermae {

const std::vector<BandStats>& NormStats::for_sensor(const std::string& key) const {
  auto it = per_sensor.find(key);
  if (it == per_sensor.end()) fail("no normalization stats for sensor '" + key + "'");
  return it->second;
}

void NormStats::save(const std::string& path) const {
  std::ofstream out(path);
  check(out.good(), "cannot write stats file: " + path);
  out.precision(17);
  out << "clip = " << clip << "\n";
  for (const auto& [key, bands] : per_sensor) {
    out << "sensor = " << key << "\n";
    for (const auto& b : bands)
      out << b.p1 << " " << b.p99 << " " << b.mean << " " << b.stddev << " "
          << (b.degenerate ? 1 : 0) << "\n";
  }
}

NormStats NormStats::load(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open stats file: " + path);
  NormStats ns;
  std::string line, current;
  while (std::getline(in, line)) {
    if (line.rfind("clip", 0) == 0) {
      ns.clip = std::stod(line.substr(line.find('=') + 1));
    } else if (line.rfind("sensor", 0) == 0) {
      current = line.substr(line.find('=') + 1);
      current.erase(0, current.find_first_not_of(" \t"));
      ns.per_sensor[current] = {};
    } else if (!line.empty()) {
      check(!current.empty(), "stats row before any sensor header in " + path);
      BandStats b;
      int degen = 0;
      std::istringstream ss(line);
      ss >> b.p1 >> b.p99 >> b.mean >> b.stddev >> degen;
      check(!ss.fail(), "bad stats row in " + path + ": '" + line + "'");
      b.degenerate = degen != 0;
      ns.per_sensor[current].push_back(b);
    }
  }
  return ns;
}

NormStats compute_stats(const Dataset& ds, double clip, std::uint64_t seed,
                        std::size_t max_pixels_per_band) {
  check(!ds.entries.empty(), "empty dataset");
  check(clip > 0 && clip < 0.5, "clip fraction out of range");
  NormStats ns;
  ns.clip = clip;

  for (const auto& sensor : ds.sensors) {
    const std::string key = sensor.key();
    std::vector<const DatasetEntry*> mine;
    for (const auto& e : ds.entries)
      if (e.sensor_key == key) mine.push_back(&e);
    check(!mine.empty(), "sensor '" + key + "' has no patches");

    const std::size_t C = sensor.band_count();
    std::vector<std::vector<float>> population(C);

    // deterministic pixel subsample: fixed stride per patch from the budget
    std::mt19937_64 rng(derive_seed(seed, hash_string(key)));
    for (const auto* e : mine) {
      PatchHeader h;
      Tensor<float> cube = read_patch(e->path, &h);
      const std::size_t plane = h.height * h.width;
      const std::size_t budget =
          std::max<std::size_t>(1, max_pixels_per_band / mine.size());
      const std::size_t stride = std::max<std::size_t>(1, plane / budget);
      const std::size_t offset = rng() % stride;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = offset; p < plane; p += stride)
          population[c].push_back(cube[c * plane + p]);
    }

    std::vector<BandStats> bands(C);
    for (std::size_t c = 0; c < C; ++c) {
      auto& v = population[c];
      check(!v.empty(), "empty pixel population for band " + std::to_string(c));
      const std::size_t n = v.size();
      // nearest-rank: ceil(q * n), 1-based
      auto rank_of = [n](double q) {
        std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
        rank = std::min(std::max<std::size_t>(rank, 1), n);
        return rank - 1;
      };
      const std::size_t lo_idx = rank_of(clip);
      const std::size_t hi_idx = rank_of(1.0 - clip);
      std::nth_element(v.begin(), v.begin() + lo_idx, v.end());
      const double p_lo = v[lo_idx];
      std::nth_element(v.begin(), v.begin() + hi_idx, v.end());
      const double p_hi = v[hi_idx];
      BandStats b;
      b.p1 = p_lo;
      b.p99 = std::max(p_hi, p_lo);

      double mean = 0;
      for (float x : v) mean += std::clamp(static_cast<double>(x), b.p1, b.p99);
      mean /= static_cast<double>(n);
      double var = 0;
      for (float x : v) {
        const double d = std::clamp(static_cast<double>(x), b.p1, b.p99) - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      b.mean = mean;
      b.stddev = std::sqrt(var);
      if (b.stddev < 1e-6) {
        b.stddev = 1e-6;
        b.degenerate = true;
      }
      bands[c] = b;
    }
    ns.per_sensor[key] = std::move(bands);
  }
  return ns;
}

void normalize_cube(Tensor<float>& cube, const std::vector<BandStats>& stats,
                    std::size_t band_offset) {
  check(cube.rank() == 3, "normalize expects C,H,W");
  const std::size_t C = cube.extent(0);
  check(band_offset + C <= stats.size(), "stats rows do not cover the band window");
  const std::size_t plane = cube.extent(1) * cube.extent(2);
  for (std::size_t c = 0; c < C; ++c) {
    const BandStats& b = stats[band_offset + c];
    const float lo = static_cast<float>(b.p1), hi = static_cast<float>(b.p99);
    const float mean = static_cast<float>(b.mean);
    const float inv = static_cast<float>(1.0 / b.stddev);
    float* row = cube.data() + c * plane;
    for (std::size_t p = 0; p < plane; ++p)
      row[p] = (std::clamp(row[p], lo, hi) - mean) * inv;
  }
}

std::vector<std::size_t> view_starts(std::size_t band_count, std::size_t window,
                                     std::size_t stride) {
  check(window >= 1 && stride >= 1, "window and stride must be positive");
  check(band_count >= window, "window exceeds the band count");
  const std::size_t last = band_count - window;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s <= last; s += stride) starts.push_back(s);
  if (starts.back() != last) starts.push_back(last);  // terminal start
  return starts;
}

BandSelection sample_band_view(const SensorSpec& spec, std::size_t window, std::size_t stride,
                               std::uint64_t seed, bool* fell_back) {
  if (fell_back) *fell_back = false;
  if (spec.band_count() < window) {
    if (fell_back) *fell_back = true;
    return {0, spec.band_count()};
  }
  const auto starts = view_starts(spec.band_count(), window, stride);
  std::mt19937_64 rng(seed);
  return {starts[rng() % starts.size()], window};
}

// ---------------------------------------------------------------------------

struct BatchIterator::Impl {
  std::vector<std::thread> threads;
  std::mutex mu;
  std::condition_variable ready_cv, slot_cv;
  std::map<std::size_t, std::vector<BatchItem>> done;
  std::size_t next_to_fetch = 0;
  std::size_t capacity = 0;
  std::size_t total = 0;
  bool stop = false;
};

BatchIterator::BatchIterator(const Dataset& ds, const NormStats* stats, const LoaderConfig& cfg,
                             std::size_t epoch, std::vector<std::size_t> entry_subset)
    : ds_(ds), stats_(stats), cfg_(cfg), epoch_(epoch) {
  check(cfg_.batch >= 1, "batch size must be positive");
  if (entry_subset.empty()) {
    order_.resize(ds.entries.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  } else {
    order_ = std::move(entry_subset);
  }
  std::mt19937_64 rng(derive_seed(cfg_.seed, 0xE70C, epoch));
  std::shuffle(order_.begin(), order_.end(), rng);
  n_batches_ = (order_.size() + cfg_.batch - 1) / cfg_.batch;

  if (cfg_.workers > 1) {
    impl_ = std::make_unique<Impl>();
    impl_->capacity = cfg_.workers * 2;
    impl_->total = n_batches_;
    for (std::size_t w = 0; w < cfg_.workers; ++w)
      impl_->threads.emplace_back([this] {
        for (;;) {
          std::size_t idx;
          {
            std::unique_lock lk(impl_->mu);
            impl_->slot_cv.wait(lk, [this] {
              return impl_->stop || (impl_->next_to_fetch < impl_->total &&
                                     impl_->done.size() < impl_->capacity);
            });
            if (impl_->stop || impl_->next_to_fetch >= impl_->total) return;
            idx = impl_->next_to_fetch++;
          }
          auto batch = load_batch(idx);
          {
            std::lock_guard lk(impl_->mu);
            impl_->done.emplace(idx, std::move(batch));
          }
          impl_->ready_cv.notify_all();
        }
      });
  }
}

BatchIterator::~BatchIterator() {
  if (impl_) {
    {
      std::lock_guard lk(impl_->mu);
      impl_->stop = true;
    }
    impl_->slot_cv.notify_all();
    for (auto& t : impl_->threads) t.join();
  }
}

std::vector<BatchItem> BatchIterator::load_batch(std::size_t batch_index) const {
  const std::size_t begin = batch_index * cfg_.batch;
  const std::size_t end = std::min(begin + cfg_.batch, order_.size());
  const std::size_t shard = cfg_.shards <= 1 ? 0 : batch_index % cfg_.shards;
  const std::uint64_t view_seed = derive_seed(cfg_.seed, 0x5EED + shard, epoch_, batch_index);

  std::vector<BatchItem> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const DatasetEntry& entry = ds_.entries[order_[i]];
    const SensorSpec& sensor = ds_.sensor(entry.sensor_key);
    // one view draw per (batch, shard); mapped into each sensor's start set
    BandSelection sel = sample_band_view(sensor, cfg_.window, cfg_.stride, view_seed);
    BatchItem item;
    item.cube = read_patch_bands(entry.path, sel.start, sel.length);
    item.spec = subset(sensor, sel);
    item.label = entry.label;
    item.entry_index = order_[i];
    item.band_start = sel.start;
    if (cfg_.normalize) {
      check(stats_ != nullptr, "loader needs normalization stats");
      normalize_cube(item.cube, stats_->for_sensor(entry.sensor_key), sel.start);
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::optional<std::vector<BatchItem>> BatchIterator::next() {
  if (cursor_ >= n_batches_) return std::nullopt;
  const std::size_t idx = cursor_++;
  if (!impl_) return load_batch(idx);
  std::unique_lock lk(impl_->mu);
  impl_->ready_cv.wait(lk, [this, idx] { return impl_->done.count(idx) > 0; });
  auto batch = std::move(impl_->done.at(idx));
  impl_->done.erase(idx);
  lk.unlock();
  impl_->slot_cv.notify_all();
  return batch;
}

}  // namespace hypermae
