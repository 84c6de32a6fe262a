#include "hypermae/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace hypermae {

void TrainConfig::validate() const {
  check(precision == "f32" || precision == "f64", "precision must be f32 or f64");
  check(lr_min <= lr_base, "lr_min must not exceed lr_base");
  check(mask_ratio >= 0 && mask_ratio < 1, "mask_ratio must lie in [0, 1)");
  check(name_dropout >= 0 && name_dropout <= 1, "name_dropout must lie in [0, 1]");
  check(batch >= 1 && accum_steps >= 1 && workers >= 1 && shards >= 1,
        "batch/accum_steps/workers/shards must be positive");
  check(!stages.empty(), "at least one stage is required");
  check(loss.epsilon > 0, "loss.epsilon must be positive");
  check(loss.alpha >= 0 && loss.beta >= 0, "loss weights must be nonnegative");
  model.validate();
}

TrainConfig default_config() {
  TrainConfig cfg;
  cfg.stages = {
      {"stage1", "AVIRIS-3/L1_radiance", 0, 20, 2},
      {"stage2", "", 32, 20, 2},  // balanced mixed subset
      {"stage3", "", 0, 20, 2},   // full set
  };
  return cfg;
}

namespace {

struct KvView {
  std::map<std::string, std::string> kv;
  std::map<std::string, bool> used;

  bool has(const std::string& k) const { return kv.count(k) > 0; }

  std::string take(const std::string& k, const std::string& fallback) {
    auto it = kv.find(k);
    if (it == kv.end()) return fallback;
    used[k] = true;
    return it->second;
  }
};

std::string trim(std::string s) {
  s.erase(0, s.find_first_not_of(" \t\r"));
  s.erase(s.find_last_not_of(" \t\r") + 1);
  return s;
}

KvView parse_kv(const std::string& text) {
  KvView view;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos,
          "config line " + std::to_string(line_no) + " is not 'key = value': '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    check(!view.kv.count(key), "duplicate config key '" + key + "'");
    view.kv[key] = trim(line.substr(eq + 1));
  }
  return view;
}

std::size_t to_size(const std::string& v, const std::string& key) {
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (...) {
    fail("config key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    return std::stod(v);
  } catch (...) {
    fail("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config key '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  KvView view = parse_kv(text);
  TrainConfig cfg = default_config();
  cfg.stages.clear();

  auto size_field = [&](const char* key, std::size_t& out) {
    if (view.has(key)) out = to_size(view.take(key, ""), key);
  };
  auto double_field = [&](const char* key, double& out) {
    if (view.has(key)) out = to_double(view.take(key, ""), key);
  };
  auto bool_field = [&](const char* key, bool& out) {
    if (view.has(key)) out = to_bool(view.take(key, ""), key);
  };
  auto string_field = [&](const char* key, std::string& out) {
    if (view.has(key)) out = view.take(key, "");
  };

  if (view.has("seed")) cfg.seed = std::stoull(view.take("seed", ""));
  string_field("precision", cfg.precision);
  double_field("lr_base", cfg.lr_base);
  double_field("lr_min", cfg.lr_min);
  size_field("batch", cfg.batch);
  double_field("mask_ratio", cfg.mask_ratio);
  double_field("name_dropout", cfg.name_dropout);
  size_field("accum_steps", cfg.accum_steps);
  size_field("workers", cfg.workers);
  size_field("shards", cfg.shards);
  size_field("band_window", cfg.band_window);
  size_field("band_stride", cfg.band_stride);
  size_field("max_steps", cfg.max_steps);
  string_field("data_dir", cfg.data_dir);
  string_field("out_dir", cfg.out_dir);
  string_field("text_table", cfg.text_table);

  double_field("loss.alpha", cfg.loss.alpha);
  double_field("loss.beta", cfg.loss.beta);
  double_field("loss.epsilon", cfg.loss.epsilon);
  bool_field("loss.masked_only", cfg.loss.masked_only);
  bool_field("loss.sam_per_pixel", cfg.loss.sam_per_pixel);

  size_field("model.dim", cfg.model.meta.dim);
  cfg.model.content.dim = cfg.model.meta.dim;
  size_field("model.provider_dim", cfg.model.meta.provider_dim);
  size_field("model.fwhm_hidden", cfg.model.meta.fwhm_hidden);
  size_field("model.tf_layers", cfg.model.meta.tf_layers);
  size_field("model.tf_heads", cfg.model.meta.tf_heads);
  size_field("model.content_grid", cfg.model.content.grid);
  size_field("model.content_hidden", cfg.model.content.hidden);
  size_field("model.rank", cfg.model.rank);
  size_field("model.hyper_hidden", cfg.model.hyper_hidden);
  bool_field("model.pre_norm", cfg.model.pre_norm);
  if (view.has("model.init_seed")) cfg.model.init_seed = std::stoull(view.take("model.init_seed", ""));
  if (view.has("model.conditioning"))
    cfg.model.conditioning = conditioning_from_string(view.take("model.conditioning", ""));

  size_field("backbone.patch", cfg.model.backbone.patch);
  size_field("backbone.dim", cfg.model.backbone.dim);
  size_field("backbone.depth", cfg.model.backbone.depth);
  size_field("backbone.heads", cfg.model.backbone.heads);
  size_field("backbone.dec_dim", cfg.model.backbone.dec_dim);
  size_field("backbone.dec_depth", cfg.model.backbone.dec_depth);
  size_field("backbone.dec_heads", cfg.model.backbone.dec_heads);

  std::size_t n_stages = 0;
  if (view.has("stages")) n_stages = to_size(view.take("stages", ""), "stages");
  if (n_stages == 0) {
    cfg.stages = default_config().stages;
  } else {
    for (std::size_t s = 1; s <= n_stages; ++s) {
      StageSpec st;
      st.name = "stage" + std::to_string(s);
      const std::string prefix = st.name + ".";
      string_field((prefix + "sensors").c_str(), st.sensors);
      size_field((prefix + "per_sensor").c_str(), st.per_sensor);
      size_field((prefix + "epochs").c_str(), st.epochs);
      size_field((prefix + "warmup").c_str(), st.warmup);
      cfg.stages.push_back(std::move(st));
    }
  }

  for (const auto& [key, value] : view.kv)
    check(view.used.count(key) > 0, "unknown config key '" + key + "'");

  cfg.validate();
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "seed = " << cfg.seed << "\n";
  os << "precision = " << cfg.precision << "\n";
  os << "lr_base = " << cfg.lr_base << "\n";
  os << "lr_min = " << cfg.lr_min << "\n";
  os << "batch = " << cfg.batch << "\n";
  os << "mask_ratio = " << cfg.mask_ratio << "\n";
  os << "name_dropout = " << cfg.name_dropout << "\n";
  os << "accum_steps = " << cfg.accum_steps << "\n";
  os << "workers = " << cfg.workers << "\n";
  os << "shards = " << cfg.shards << "\n";
  os << "band_window = " << cfg.band_window << "\n";
  os << "band_stride = " << cfg.band_stride << "\n";
  os << "max_steps = " << cfg.max_steps << "\n";
  os << "data_dir = " << cfg.data_dir << "\n";
  os << "out_dir = " << cfg.out_dir << "\n";
  os << "text_table = " << cfg.text_table << "\n";
  os << "loss.alpha = " << cfg.loss.alpha << "\n";
  os << "loss.beta = " << cfg.loss.beta << "\n";
  os << "loss.epsilon = " << cfg.loss.epsilon << "\n";
  os << "loss.masked_only = " << (cfg.loss.masked_only ? "true" : "false") << "\n";
  os << "loss.sam_per_pixel = " << (cfg.loss.sam_per_pixel ? "true" : "false") << "\n";
  os << model_signature(cfg.model);
  os << "stages = " << cfg.stages.size() << "\n";
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& st = cfg.stages[s];
    const std::string prefix = "stage" + std::to_string(s + 1) + ".";
    os << prefix << "sensors = " << st.sensors << "\n";
    os << prefix << "per_sensor = " << st.per_sensor << "\n";
    os << prefix << "epochs = " << st.epochs << "\n";
    os << prefix << "warmup = " << st.warmup << "\n";
  }
  return os.str();
}

std::string model_signature(const ModelConfig& m) {
  std::ostringstream os;
  os << "model.dim = " << m.meta.dim << "\n";
  os << "model.provider_dim = " << m.meta.provider_dim << "\n";
  os << "model.fwhm_hidden = " << m.meta.fwhm_hidden << "\n";
  os << "model.tf_layers = " << m.meta.tf_layers << "\n";
  os << "model.tf_heads = " << m.meta.tf_heads << "\n";
  os << "model.content_grid = " << m.content.grid << "\n";
  os << "model.content_hidden = " << m.content.hidden << "\n";
  os << "model.rank = " << m.rank << "\n";
  os << "model.hyper_hidden = " << m.hyper_hidden << "\n";
  os << "model.conditioning = " << conditioning_name(m.conditioning) << "\n";
  os << "model.pre_norm = " << (m.pre_norm ? "true" : "false") << "\n";
  os << "model.init_seed = " << m.init_seed << "\n";
  os << "backbone.patch = " << m.backbone.patch << "\n";
  os << "backbone.dim = " << m.backbone.dim << "\n";
  os << "backbone.depth = " << m.backbone.depth << "\n";
  os << "backbone.heads = " << m.backbone.heads << "\n";
  os << "backbone.dec_dim = " << m.backbone.dec_dim << "\n";
  os << "backbone.dec_depth = " << m.backbone.dec_depth << "\n";
  os << "backbone.dec_heads = " << m.backbone.dec_heads << "\n";
  return os.str();
}

ModelConfig parse_model_signature(const std::string& text) {
  KvView view = parse_kv(text);
  ModelConfig m;
  auto size_field = [&](const char* key, std::size_t& out) {
    if (view.has(key)) out = std::stoull(view.take(key, ""));
  };
  size_field("model.dim", m.meta.dim);
  m.content.dim = m.meta.dim;
  size_field("model.provider_dim", m.meta.provider_dim);
  size_field("model.fwhm_hidden", m.meta.fwhm_hidden);
  size_field("model.tf_layers", m.meta.tf_layers);
  size_field("model.tf_heads", m.meta.tf_heads);
  size_field("model.content_grid", m.content.grid);
  size_field("model.content_hidden", m.content.hidden);
  size_field("model.rank", m.rank);
  size_field("model.hyper_hidden", m.hyper_hidden);
  if (view.has("model.conditioning"))
    m.conditioning = conditioning_from_string(view.take("model.conditioning", ""));
  if (view.has("model.pre_norm")) m.pre_norm = view.take("model.pre_norm", "") == "true";
  if (view.has("model.init_seed")) m.init_seed = std::stoull(view.take("model.init_seed", ""));
  size_field("backbone.patch", m.backbone.patch);
  size_field("backbone.dim", m.backbone.dim);
  size_field("backbone.depth", m.backbone.depth);
  size_field("backbone.heads", m.backbone.heads);
  size_field("backbone.dec_dim", m.backbone.dec_dim);
  size_field("backbone.dec_depth", m.backbone.dec_depth);
  size_field("backbone.dec_heads", m.backbone.dec_heads);
  return m;
}

}  // namespace hypermae
