#include "hypermae/synth.hpp"

#include <cmath>
#include <random>

namespace hypermae {

double Spectrum::eval(double wavelength_um) const {
  double v = baseline;
  for (const auto& b : bumps) {
    const double z = (wavelength_um - b.center_um) / b.width_um;
    v += b.amplitude * std::exp(-0.5 * z * z);
  }
  return v;
}

SceneRecipe random_recipe(std::size_t endmember_count, std::size_t dominant,
                          std::uint64_t seed) {
  check(endmember_count >= 1, "recipe needs at least one endmember");
  check(dominant < endmember_count, "dominant endmember index out of range");
  SceneRecipe r;
  r.dominant = dominant;
  r.seed = seed;
  std::mt19937_64 rng(derive_seed(seed, 0xC0FFEE));
  std::uniform_real_distribution<double> center(0.45, 2.40);
  std::uniform_real_distribution<double> width(0.06, 0.35);
  std::uniform_real_distribution<double> amp(0.15, 0.7);
  std::uniform_real_distribution<double> base(0.1, 0.4);
  for (std::size_t m = 0; m < endmember_count; ++m) {
    Spectrum s;
    s.baseline = base(rng);
    const std::size_t n_bumps = 2 + rng() % 3;
    for (std::size_t b = 0; b < n_bumps; ++b)
      s.bumps.push_back({center(rng), width(rng), amp(rng)});
    r.endmembers.push_back(std::move(s));
  }
  // smooth positive illumination curve, peaking in the visible range
  r.illumination.baseline = 0.6;
  r.illumination.bumps = {{0.55, 0.45, 1.0}, {1.6, 0.8, 0.3}};
  r.noise_sigma = 0.01;
  return r;
}

std::vector<double> resample_spectrum(const Spectrum& s, const SensorSpec& spec) {
  std::vector<double> out(spec.band_count());
  for (std::size_t i = 0; i < spec.band_count(); ++i) {
    const double center = spec.wavelengths_um[i];
    const double sigma = spec.fwhm_um[i] / 2.355;
    // quadrature over +-4 sigma on a fine grid
    const double step = std::max(sigma / 4.0, 1e-5);
    double acc = 0, wsum = 0;
    for (double x = center - 4 * sigma; x <= center + 4 * sigma + 1e-12; x += step) {
      const double z = (x - center) / sigma;
      const double w = std::exp(-0.5 * z * z);
      acc += w * s.eval(x);
      wsum += w;
    }
    out[i] = acc / wsum;
  }
  return out;
}

Tensor<float> abundance_fields(const SceneRecipe& recipe, std::size_t height, std::size_t width,
                               std::uint64_t seed) {
  const std::size_t M = recipe.endmembers.size();
  const std::size_t G = std::max<std::size_t>(recipe.abundance_cells, 1);
  std::mt19937_64 rng(derive_seed(recipe.seed, seed, 0xAB));
  std::normal_distribution<double> noise(0.0, recipe.abundance_roughness);

  // low-resolution log-abundance grids, bilinearly upsampled for smoothness
  std::vector<std::vector<double>> grids(M, std::vector<double>((G + 1) * (G + 1)));
  for (std::size_t m = 0; m < M; ++m)
    for (auto& v : grids[m]) v = noise(rng);

  Tensor<float> fields({M, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double gy = static_cast<double>(y) / static_cast<double>(height) * G;
      const double gx = static_cast<double>(x) / static_cast<double>(width) * G;
      const std::size_t y0 = static_cast<std::size_t>(gy), x0 = static_cast<std::size_t>(gx);
      const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
      double denom = 0;
      std::vector<double> logits(M);
      for (std::size_t m = 0; m < M; ++m) {
        const auto& g = grids[m];
        const double v00 = g[y0 * (G + 1) + x0];
        const double v01 = g[y0 * (G + 1) + x0 + 1];
        const double v10 = g[(y0 + 1) * (G + 1) + x0];
        const double v11 = g[(y0 + 1) * (G + 1) + x0 + 1];
        double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        if (m == recipe.dominant) v += recipe.dominant_boost;
        logits[m] = v;
      }
      double mx = logits[0];
      for (double v : logits) mx = std::max(mx, v);
      for (std::size_t m = 0; m < M; ++m) {
        logits[m] = std::exp(logits[m] - mx);
        denom += logits[m];
      }
      for (std::size_t m = 0; m < M; ++m)
        fields[(m * height + y) * width + x] = static_cast<float>(logits[m] / denom);
    }
  return fields;
}

RenderedCube render_cube(const SceneRecipe& recipe, const SensorSpec& spec, std::size_t height,
                         std::size_t width, std::uint64_t seed, double missing_prob) {
  const std::size_t M = recipe.endmembers.size();
  const std::size_t C = spec.band_count();
  check(M >= 1 && C >= 1, "empty recipe or sensor");

  std::vector<std::vector<double>> bands(M);
  for (std::size_t m = 0; m < M; ++m) bands[m] = resample_spectrum(recipe.endmembers[m], spec);
  std::vector<double> illum;
  if (spec.level == Level::L1_radiance) illum = resample_spectrum(recipe.illumination, spec);

  Tensor<float> fields = abundance_fields(recipe, height, width, seed);

  RenderedCube out;
  out.data = Tensor<float>({C, height, width});
  out.label = static_cast<int>(recipe.dominant);
  std::mt19937_64 rng(derive_seed(recipe.seed, seed, 0xD0));
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < C; ++c) {
    const double scale = spec.level == Level::L1_radiance ? illum[c] : 1.0;
    for (std::size_t p = 0; p < plane; ++p) {
      double v = 0;
      for (std::size_t m = 0; m < M; ++m)
        v += static_cast<double>(fields[m * plane + p]) * bands[m][c];
      v = v * scale + recipe.noise_sigma * noise(rng);
      out.data[c * plane + p] = static_cast<float>(v);
    }
  }

  if (missing_prob > 0) {
    std::mt19937_64 miss_rng(derive_seed(recipe.seed, seed, 0x515));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(miss_rng) < missing_prob) {
      // zero a rectangle anchored at a flightline edge
      const std::size_t gap_w = width / 4 + miss_rng() % (width / 2);
      const std::size_t gap_h = height / 4 + miss_rng() % (height / 2);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < gap_h; ++y)
          for (std::size_t x = 0; x < gap_w; ++x) out.data[(c * height + y) * width + x] = 0.f;
      out.valid_fraction =
          1.0 - static_cast<double>(gap_w * gap_h) / static_cast<double>(plane);
    }
  }
  return out;
}

}  // namespace hypermae
