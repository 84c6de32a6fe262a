#pragma once

// Synthetic scene generation with known ground truth. Scenes mix a few
// continuous endmember spectra (Gaussian-bump mixtures over wavelength) with
// smooth abundance fields; cubes are rendered onto a sensor's band grid
// through a Gaussian spectral response and optionally multiplied by an
// illumination curve to imitate L1 radiance.

#include <cstdint>
#include <vector>

#include "hypermae/sensor.hpp"
#include "hypermae/tensor.hpp"

namespace hypermae {

struct GaussianBump {
  double center_um = 1.0;
  double width_um = 0.2;
  double amplitude = 0.5;
};

struct Spectrum {
  double baseline = 0.2;
  std::vector<GaussianBump> bumps;

  double eval(double wavelength_um) const;
};

struct SceneRecipe {
  std::vector<Spectrum> endmembers;
  std::size_t dominant = 0;       // scene label: index of the boosted endmember
  double dominant_boost = 1.2;    // log-domain boost of the dominant abundance
  std::size_t abundance_cells = 4;
  double abundance_roughness = 1.0;
  double noise_sigma = 0.01;
  Spectrum illumination;          // strictly positive; applied to L1 renders
  std::uint64_t seed = 0;
};

/// Seeded recipe with `endmember_count` random smooth spectra; `dominant`
/// picks the label class.
SceneRecipe random_recipe(std::size_t endmember_count, std::size_t dominant, std::uint64_t seed);

/// Per-band values of a continuous spectrum on a sensor grid: Gaussian
/// spectral response centered at each band (sigma = FWHM / 2.355), weights
/// normalized so a constant spectrum stays constant.
std::vector<double> resample_spectrum(const Spectrum& s, const SensorSpec& spec);

struct RenderedCube {
  Tensor<float> data;  // C x H x W
  int label = -1;
  double valid_fraction = 1.0;
};

/// Renders recipe onto the sensor grid. `missing_prob` optionally zeroes a
/// random rectangle to imitate flightline-edge gaps (drives valid_fraction).
RenderedCube render_cube(const SceneRecipe& recipe, const SensorSpec& spec, std::size_t height,
                         std::size_t width, std::uint64_t seed, double missing_prob = 0.0);

/// Per-pixel abundance fields (endmembers x H x W, nonnegative, sum 1).
Tensor<float> abundance_fields(const SceneRecipe& recipe, std::size_t height, std::size_t width,
                               std::uint64_t seed);

}  // namespace hypermae
