#pragma once

#include <string>
#include <vector>

#include "hypermae/common.hpp"

namespace hypermae {

enum class Level { L1_radiance, L2_reflectance };

const char* level_name(Level l);
Level level_from_string(const std::string& s);

/// Per-sensor band metadata. Wavelengths and FWHM are stored in micrometers;
/// file loaders convert from nanometers at the boundary.
struct SensorSpec {
  std::string name;
  Level level = Level::L1_radiance;
  std::vector<double> wavelengths_um;  // ascending band centers
  std::vector<double> fwhm_um;

  std::size_t band_count() const { return wavelengths_um.size(); }
  std::string key() const { return name + "/" + level_name(level); }
};

/// Contiguous band window [start, start+length).
struct BandSelection {
  std::size_t start = 0;
  std::size_t length = 0;

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> idx(length);
    for (std::size_t i = 0; i < length; ++i) idx[i] = start + i;
    return idx;
  }
};

// Six built-in specs: {AVIRIS-Classic, AVIRIS-NG, AVIRIS-3} x {L1, L2}.
// Band grids are uniform over the published spectral range with constant FWHM.
std::vector<SensorSpec> builtin_sensors();
const SensorSpec& builtin_sensor(const std::string& name, Level level);

// Uniform grid helper: band_count centers linearly spaced over
// [range_start_um, range_end_um], constant fwhm.
SensorSpec make_uniform_sensor(std::string name, Level level, std::size_t band_count,
                               double range_start_um, double range_end_um, double fwhm_um);

// Returns the empty vector when the spec is valid; otherwise one message per
// violation, each naming the offending band index where applicable.
std::vector<std::string> validate(const SensorSpec& spec);

SensorSpec subset(const SensorSpec& spec, const BandSelection& sel);

// Sensor description file: key-value lines with name, level, wavelengths_nm,
// fwhm_nm. Lists are comma-separated. Values are converted nm -> um.
SensorSpec load_sensor_file(const std::string& path);
void save_sensor_file(const SensorSpec& spec, const std::string& path);

}  // namespace hypermae
