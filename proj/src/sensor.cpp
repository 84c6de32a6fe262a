#include "hypermae/sensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hypermae {

const char* level_name(Level l) { return l == Level::L1_radiance ? "L1_radiance" : "L2_reflectance"; }

Level level_from_string(const std::string& s) {
  if (s == "L1_radiance" || s == "L1" || s == "l1") return Level::L1_radiance;
  if (s == "L2_reflectance" || s == "L2" || s == "l2") return Level::L2_reflectance;
  fail("unknown processing level: '" + s + "'");
}

SensorSpec make_uniform_sensor(std::string name, Level level, std::size_t band_count,
                               double range_start_um, double range_end_um, double fwhm_um) {
  check(band_count >= 2, "uniform sensor needs at least 2 bands");
  SensorSpec s;
  s.name = std::move(name);
  s.level = level;
  s.wavelengths_um.resize(band_count);
  s.fwhm_um.assign(band_count, fwhm_um);
  const double step = (range_end_um - range_start_um) / static_cast<double>(band_count - 1);
  for (std::size_t i = 0; i < band_count; ++i)
    s.wavelengths_um[i] = range_start_um + step * static_cast<double>(i);
  s.wavelengths_um.back() = range_end_um;  // exact endpoint
  return s;
}

std::vector<SensorSpec> builtin_sensors() {
  std::vector<SensorSpec> out;
  for (Level lv : {Level::L1_radiance, Level::L2_reflectance}) {
    out.push_back(make_uniform_sensor("AVIRIS-Classic", lv, 224, 0.380, 2.500, 0.010));
    out.push_back(make_uniform_sensor("AVIRIS-NG", lv, 425, 0.380, 2.510, 0.005));
    out.push_back(make_uniform_sensor("AVIRIS-3", lv, 284, 0.390, 2.500, 0.0074));
  }
  return out;
}

const SensorSpec& builtin_sensor(const std::string& name, Level level) {
  static const std::vector<SensorSpec> all = builtin_sensors();
  for (const auto& s : all)
    if (s.name == name && s.level == level) return s;
  fail("no builtin sensor named '" + name + "' at level " + level_name(level));
}

std::vector<std::string> validate(const SensorSpec& spec) {
  std::vector<std::string> v;
  if (spec.wavelengths_um.size() != spec.fwhm_um.size())
    v.push_back("wavelength/fwhm length mismatch: " + std::to_string(spec.wavelengths_um.size()) +
                " vs " + std::to_string(spec.fwhm_um.size()));
  if (spec.wavelengths_um.empty()) v.push_back("sensor has no bands");
  for (std::size_t i = 0; i < spec.wavelengths_um.size(); ++i) {
    const double wl = spec.wavelengths_um[i];
    if (!(wl > 0.2 && wl < 3.0))
      v.push_back("wavelength out of (0.2, 3.0) um at " + std::to_string(i));
    if (i > 0 && !(wl > spec.wavelengths_um[i - 1]))
      v.push_back("non-increasing at " + std::to_string(i));
  }
  for (std::size_t i = 0; i < spec.fwhm_um.size(); ++i)
    if (!(spec.fwhm_um[i] > 0.0))
      v.push_back("fwhm must be positive at " + std::to_string(i));
  return v;
}

SensorSpec subset(const SensorSpec& spec, const BandSelection& sel) {
  check(sel.start + sel.length <= spec.band_count(),
        "band selection [" + std::to_string(sel.start) + ", " +
            std::to_string(sel.start + sel.length) + ") exceeds " +
            std::to_string(spec.band_count()) + " bands");
  check(sel.length >= 1, "band selection is empty");
  SensorSpec out;
  out.name = spec.name;
  out.level = spec.level;
  out.wavelengths_um.assign(spec.wavelengths_um.begin() + sel.start,
                            spec.wavelengths_um.begin() + sel.start + sel.length);
  out.fwhm_um.assign(spec.fwhm_um.begin() + sel.start,
                     spec.fwhm_um.begin() + sel.start + sel.length);
  return out;
}

namespace {

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

SensorSpec load_sensor_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open sensor file: " + path);
  SensorSpec s;
  bool have_name = false, have_level = false, have_wl = false, have_fwhm = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    check(eq != std::string::npos, "bad sensor file line: '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& t) {
      t.erase(0, t.find_first_not_of(" \t"));
      t.erase(t.find_last_not_of(" \t") + 1);
    };
    trim(key);
    trim(val);
    if (key == "name") {
      s.name = val;
      have_name = true;
    } else if (key == "level") {
      s.level = level_from_string(val);
      have_level = true;
    } else if (key == "wavelengths_nm") {
      s.wavelengths_um = parse_double_list(val);
      for (auto& w : s.wavelengths_um) w *= 1e-3;
      have_wl = true;
    } else if (key == "fwhm_nm") {
      s.fwhm_um = parse_double_list(val);
      for (auto& w : s.fwhm_um) w *= 1e-3;
      have_fwhm = true;
    } else {
      fail("unknown sensor file key: '" + key + "'");
    }
  }
  check(have_name && have_level && have_wl && have_fwhm,
        "sensor file missing one of name/level/wavelengths_nm/fwhm_nm: " + path);
  auto violations = validate(s);
  if (!violations.empty()) fail("invalid sensor description " + path + ": " + violations.front());
  return s;
}

void save_sensor_file(const SensorSpec& spec, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "cannot write sensor file: " + path);
  out.precision(17);
  out << "name = " << spec.name << "\n";
  out << "level = " << level_name(spec.level) << "\n";
  out << "wavelengths_nm = ";
  for (std::size_t i = 0; i < spec.wavelengths_um.size(); ++i) {
    if (i) out << ",";
    out << spec.wavelengths_um[i] * 1e3;
  }
  out << "\nfwhm_nm = ";
  for (std::size_t i = 0; i < spec.fwhm_um.size(); ++i) {
    if (i) out << ",";
    out << spec.fwhm_um[i] * 1e3;
  }
  out << "\n";
}

}  // namespace hypermae
