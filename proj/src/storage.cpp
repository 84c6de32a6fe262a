#include "hypermae/storage.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hypermae/kernels.hpp"

static_assert(std::endian::native == std::endian::little,
              "patch storage assumes a little-endian host");

namespace hypermae {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'P', 'C'};

template <class T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  check(in.good(), "truncated patch file: " + path);
  return v;
}

std::string join_list(const std::vector<double>& v, double scale) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i] * scale;
  }
  return os.str();
}

std::vector<double> split_list(const std::string& s, double scale) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item) * scale);
  return out;
}

std::string meta_text(const SensorSpec& spec, double valid_fraction, int label) {
  std::ostringstream os;
  os.precision(17);
  os << "name=" << spec.name << "\n";
  os << "level=" << level_name(spec.level) << "\n";
  os << "wavelengths_nm=" << join_list(spec.wavelengths_um, 1e3) << "\n";
  os << "fwhm_nm=" << join_list(spec.fwhm_um, 1e3) << "\n";
  os << "valid_fraction=" << valid_fraction << "\n";
  os << "label=" << label << "\n";
  return os.str();
}

PatchHeader parse_header(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::memcmp(magic, kMagic, 4) == 0, "bad magic in " + path);
  PatchHeader h;
  h.version = read_pod<std::uint16_t>(in, path);
  check(h.version == 1, "unsupported patch version " + std::to_string(h.version) + " in " + path);
  h.bands = read_pod<std::uint16_t>(in, path);
  h.height = read_pod<std::uint16_t>(in, path);
  h.width = read_pod<std::uint16_t>(in, path);
  h.dtype_code = read_pod<std::uint8_t>(in, path);
  check(h.dtype_code == 1, "unsupported dtype code in " + path);
  const std::uint32_t meta_len = read_pod<std::uint32_t>(in, path);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  check(in.good(), "truncated metadata in " + path);

  std::stringstream ss(meta);
  std::string line;
  while (std::getline(ss, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "name") h.sensor.name = val;
    else if (key == "level") h.sensor.level = level_from_string(val);
    else if (key == "wavelengths_nm") h.sensor.wavelengths_um = split_list(val, 1e-3);
    else if (key == "fwhm_nm") h.sensor.fwhm_um = split_list(val, 1e-3);
    else if (key == "valid_fraction") h.valid_fraction = std::stod(val);
    else if (key == "label") h.label = std::stoi(val);
  }
  check(h.sensor.band_count() == h.bands,
        "metadata band list does not match the header band count in " + path);
  return h;
}

}  // namespace

void write_patch(const std::string& path, const SensorSpec& spec, const Tensor<float>& cube,
                 double valid_fraction, int label) {
  check(cube.rank() == 3, "patch cube must be C,H,W");
  check(cube.extent(0) == spec.band_count(), "cube channels do not match the sensor spec");
  check(cube.extent(0) < 65536 && cube.extent(1) < 65536 && cube.extent(2) < 65536,
        "patch extents exceed the u16 header fields");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot write patch file: " + path);
  out.write(kMagic, 4);
  write_pod<std::uint16_t>(out, 1);
  write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(cube.extent(0)));
  write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(cube.extent(1)));
  write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(cube.extent(2)));
  write_pod<std::uint8_t>(out, 1);
  const std::string meta = meta_text(spec, valid_fraction, label);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));

  std::vector<std::uint16_t> half(cube.numel());
  kernels::f32_to_f16_n(cube.data(), half.data(), cube.numel());
  out.write(reinterpret_cast<const char*>(half.data()),
            static_cast<std::streamsize>(half.size() * sizeof(std::uint16_t)));
  check(out.good(), "write failed: " + path);
}

PatchHeader read_patch_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open patch file: " + path);
  return parse_header(in, path);
}

Tensor<float> read_patch_bands(const std::string& path, std::size_t start, std::size_t count,
                               PatchHeader* header_out) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open patch file: " + path);
  PatchHeader h = parse_header(in, path);
  check(start + count <= h.bands, "band window [" + std::to_string(start) + ", " +
                                      std::to_string(start + count) + ") exceeds " +
                                      std::to_string(h.bands) + " bands in " + path);
  const std::size_t plane = h.height * h.width;
  in.seekg(static_cast<std::streamoff>(start * plane * sizeof(std::uint16_t)), std::ios::cur);
  std::vector<std::uint16_t> half(count * plane);
  in.read(reinterpret_cast<char*>(half.data()),
          static_cast<std::streamsize>(half.size() * sizeof(std::uint16_t)));
  check(in.good(), "truncated payload in " + path);
  Tensor<float> cube({count, h.height, h.width});
  kernels::f16_to_f32_n(half.data(), cube.data(), half.size());
  if (header_out) *header_out = std::move(h);
  return cube;
}

Tensor<float> read_patch(const std::string& path, PatchHeader* header_out) {
  PatchHeader h = read_patch_header(path);
  return read_patch_bands(path, 0, h.bands, header_out);
}

std::vector<std::uint16_t> read_patch_payload(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open patch file: " + path);
  PatchHeader h = parse_header(in, path);
  std::vector<std::uint16_t> half(h.bands * h.height * h.width);
  in.read(reinterpret_cast<char*>(half.data()),
          static_cast<std::streamsize>(half.size() * sizeof(std::uint16_t)));
  check(in.good(), "truncated payload in " + path);
  return half;
}

const SensorSpec& Dataset::sensor(const std::string& key) const {
  for (const auto& s : sensors)
    if (s.key() == key) return s;
  fail("dataset has no sensor '" + key + "'");
}

void write_manifest(const std::string& dir, const std::vector<std::string>& sensor_keys,
                    std::size_t patch_count, const std::string& stats_path) {
  std::ofstream out(dir + "/manifest.txt");
  check(out.good(), "cannot write manifest in " + dir);
  out << "sensors = ";
  for (std::size_t i = 0; i < sensor_keys.size(); ++i) {
    if (i) out << ",";
    out << sensor_keys[i];
  }
  out << "\npatch_count = " << patch_count << "\n";
  out << "stats = " << stats_path << "\n";
}

Dataset open_dataset(const std::string& dir, double min_valid) {
  namespace fs = std::filesystem;
  check(fs::exists(dir + "/manifest.txt"), "no manifest.txt in " + dir);
  Dataset ds;
  ds.dir = dir;

  std::ifstream in(dir + "/manifest.txt");
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& t) {
      t.erase(0, t.find_first_not_of(" \t"));
      t.erase(t.find_last_not_of(" \t") + 1);
    };
    trim(key);
    trim(val);
    if (key == "stats") ds.stats_path = val;
  }

  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".hspc") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());

  for (const auto& f : files) {
    PatchHeader h = read_patch_header(f);
    if (h.valid_fraction < min_valid) {
      ++ds.rejected_low_valid;
      continue;
    }
    DatasetEntry entry;
    entry.path = f;
    entry.sensor_key = h.sensor.key();
    entry.bands = h.bands;
    entry.label = h.label;
    entry.valid_fraction = h.valid_fraction;
    ds.entries.push_back(std::move(entry));
    bool known = false;
    for (const auto& s : ds.sensors)
      if (s.key() == h.sensor.key()) known = true;
    if (!known) ds.sensors.push_back(h.sensor);
  }
  check(!ds.entries.empty(), "dataset " + dir + " has no usable patches");
  return ds;
}

}  // namespace hypermae
