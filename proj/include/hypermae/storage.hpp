#pragma once

// Patch storage. One file per patch:
//   magic "HSPC" | version u16 | bands u16 | H u16 | W u16 | dtype u8 (1=fp16)
//   | meta length u32 | meta text | payload (band-major fp16, little-endian)
// The metadata text carries sensor name, level, wavelengths and bookkeeping
// fields as key=value lines.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hypermae/sensor.hpp"
#include "hypermae/tensor.hpp"

namespace hypermae {

struct PatchHeader {
  std::uint16_t version = 1;
  std::size_t bands = 0, height = 0, width = 0;
  std::uint8_t dtype_code = 1;  // 1 = fp16
  SensorSpec sensor;
  double valid_fraction = 1.0;
  int label = -1;
};

void write_patch(const std::string& path, const SensorSpec& spec, const Tensor<float>& cube,
                 double valid_fraction = 1.0, int label = -1);

PatchHeader read_patch_header(const std::string& path);

/// Full cube, fp32. The underlying storage stays fp16.
Tensor<float> read_patch(const std::string& path, PatchHeader* header_out = nullptr);

/// Only bands [start, start+count): the payload is band-major, so a
/// contiguous window is one contiguous read.
Tensor<float> read_patch_bands(const std::string& path, std::size_t start, std::size_t count,
                               PatchHeader* header_out = nullptr);

/// Raw fp16 words (for bit-exactness tests).
std::vector<std::uint16_t> read_patch_payload(const std::string& path);

struct DatasetEntry {
  std::string path;
  std::string sensor_key;
  std::size_t bands = 0;
  int label = -1;
  double valid_fraction = 1.0;
};

struct Dataset {
  std::string dir;
  std::vector<DatasetEntry> entries;       // sorted by filename
  std::vector<SensorSpec> sensors;         // one per distinct sensor_key
  std::string stats_path;                  // empty until `stats` has run
  std::size_t rejected_low_valid = 0;      // patches dropped for missing data

  const SensorSpec& sensor(const std::string& key) const;
};

void write_manifest(const std::string& dir, const std::vector<std::string>& sensor_keys,
                    std::size_t patch_count, const std::string& stats_path);

/// Reads the manifest and scans *.hspc files (sorted). Patches with
/// valid_fraction < min_valid are rejected at load time.
Dataset open_dataset(const std::string& dir, double min_valid = 0.8);

}  // namespace hypermae
