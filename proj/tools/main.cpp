// Command-line surface: synthetic data generation, normalization stats,
// staged pretraining, linear probing, accounting reports, gradient checks,
// and patch inspection.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "hypermae/accounting.hpp"
#include "hypermae/gradsuite.hpp"
#include "hypermae/kernels.hpp"
#include "hypermae/synth.hpp"
#include "hypermae/trainer.hpp"

namespace fs = std::filesystem;
using namespace hypermae;

namespace {

std::vector<std::pair<std::string, Level>> parse_sensor_list(const std::string& csv) {
  std::vector<std::pair<std::string, Level>> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    const auto slash = item.find('/');
    check(slash != std::string::npos, "sensor key must look like NAME/LEVEL: '" + item + "'");
    out.emplace_back(item.substr(0, slash), level_from_string(item.substr(slash + 1)));
  }
  return out;
}

int cmd_gen_data(const std::string& out_dir, std::size_t per_sensor, std::size_t size,
                 std::uint64_t seed, std::size_t classes, std::size_t library,
                 double missing_prob, const std::string& sensors_csv,
                 const std::string& sensor_file) {
  fs::create_directories(out_dir);
  std::vector<SensorSpec> sensors;
  for (const auto& [name, level] : parse_sensor_list(sensors_csv))
    sensors.push_back(builtin_sensor(name, level));
  if (!sensor_file.empty()) sensors.push_back(load_sensor_file(sensor_file));
  check(!sensors.empty(), "no sensors requested");
  check(library >= classes, "endmember library must cover every class");

  const std::uint64_t library_seed = derive_seed(seed, 0x11B);
  std::vector<std::string> keys;
  std::size_t written = 0;
  for (std::size_t s = 0; s < sensors.size(); ++s) {
    const SensorSpec& spec = sensors[s];
    keys.push_back(spec.key());
    for (std::size_t i = 0; i < per_sensor; ++i) {
      const std::size_t label = i % classes;
      SceneRecipe recipe = random_recipe(library, label, library_seed);
      RenderedCube cube;
      // patches below the validity floor are rejected and re-rendered
      for (std::uint64_t attempt = 0;; ++attempt) {
        cube = render_cube(recipe, spec, size, size, derive_seed(seed, s, i, attempt),
                           missing_prob);
        if (cube.valid_fraction >= 0.8) break;
      }
      char name[128];
      std::snprintf(name, sizeof(name), "%s/patch_%05zu_%zu.hspc", out_dir.c_str(), written++,
                    s);
      write_patch(name, spec, cube.data, cube.valid_fraction, cube.label);
    }
  }
  write_manifest(out_dir, keys, written, "");
  std::cout << "wrote " << written << " patches (" << size << "x" << size << ") across "
            << keys.size() << " sensors into " << out_dir << "\n";
  return 0;
}

int cmd_stats(const std::string& dir, double clip, std::uint64_t seed) {
  Dataset ds = open_dataset(dir);
  NormStats ns = compute_stats(ds, clip, seed);
  const std::string stats_path = dir + "/stats.txt";
  ns.save(stats_path);
  std::vector<std::string> keys;
  for (const auto& s : ds.sensors) keys.push_back(s.key());
  write_manifest(dir, keys, ds.entries.size(), stats_path);
  std::size_t degenerate = 0;
  for (const auto& [key, bands] : ns.per_sensor)
    for (const auto& b : bands)
      if (b.degenerate) ++degenerate;
  std::cout << "stats for " << ds.entries.size() << " patches, " << ns.per_sensor.size()
            << " sensors -> " << stats_path << "\n";
  if (degenerate) std::cout << "warning: " << degenerate << " constant bands (stddev floored)\n";
  if (ds.rejected_low_valid)
    std::cout << "note: " << ds.rejected_low_valid << " patches rejected for missing data\n";
  return 0;
}

template <class T>
int run_pretrain(const TrainConfig& cfg, const std::string& resume) {
  Dataset ds = open_dataset(cfg.data_dir);
  check(!ds.stats_path.empty(), "dataset has no stats file; run `hypermae stats` first");
  NormStats stats = NormStats::load(ds.stats_path);

  TextEmbeddingProvider provider(cfg.model.meta.provider_dim);
  if (!cfg.text_table.empty()) provider.load_table(cfg.text_table);
  Model<T> model(cfg.model, &provider);
  if (!resume.empty()) {
    load_checkpoint(resume, model_signature(cfg.model), model.reg);
    std::cout << "resumed from " << resume << "\n";
  }
  AdamW<T> opt(model.reg);

  fs::create_directories(cfg.out_dir);
  std::ofstream metrics(cfg.out_dir + "/metrics.csv");
  metrics << "epoch, lr, loss_total, loss_charbonnier, loss_sam\n";

  std::size_t epoch_offset = 0;
  std::string last_ckpt;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const std::string ckpt = cfg.out_dir + "/stage" + std::to_string(s + 1) + ".ckpt";
    auto result = run_stage(model, opt, ds, stats, cfg.stages[s], cfg, s, &metrics, ckpt,
                            &std::cout, epoch_offset);
    epoch_offset += result.epochs.size();
    last_ckpt = ckpt;
    if (cfg.max_steps > 0) break;
  }
  if (!last_ckpt.empty()) {
    fs::copy_file(last_ckpt, cfg.out_dir + "/final.ckpt", fs::copy_options::overwrite_existing);
    std::cout << "final checkpoint: " << cfg.out_dir << "/final.ckpt\n";
  }
  return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& resume) {
  TrainConfig cfg = config_path.empty() ? default_config() : parse_config_file(config_path);
  if (cfg.precision == "f64") return run_pretrain<double>(cfg, resume);
  return run_pretrain<float>(cfg, resume);
}

int cmd_probe(const std::string& ckpt, const std::string& data_dir, std::size_t classes,
              std::size_t epochs) {
  ModelConfig mc = parse_model_signature(read_checkpoint_signature(ckpt));
  Model<float> model(mc);
  load_checkpoint(ckpt, model_signature(mc), model.reg);

  Dataset ds = open_dataset(data_dir);
  check(!ds.stats_path.empty(), "dataset has no stats file; run `hypermae stats` first");
  NormStats stats = NormStats::load(ds.stats_path);

  auto pr = linear_probe(model, ds, stats, classes, epochs);
  std::cout << "probe.accuracy = " << pr.accuracy << "\n";
  std::cout << "probe.trainable_params = " << pr.head_params << "\n";
  std::cout << "probe.train_count = " << pr.train_count << "\n";
  std::cout << "probe.test_count = " << pr.test_count << "\n";

  // untrained random backbone, for contrast
  ModelConfig rc = mc;
  rc.init_seed = derive_seed(mc.init_seed, 0xBA5E);
  Model<float> control(rc);
  auto cr = linear_probe(control, ds, stats, classes, epochs);
  std::cout << "probe.random_backbone_accuracy = " << cr.accuracy << "\n";
  return 0;
}

AccountingConfig accounting_from(const std::string& config_path, std::size_t channels,
                                 std::size_t tokens) {
  AccountingConfig ac;  // paper-scale defaults (ViT-Base widths)
  if (!config_path.empty()) {
    TrainConfig cfg = parse_config_file(config_path);
    ac.d = cfg.model.meta.dim;
    ac.r = cfg.model.rank;
    ac.hyper_hidden = cfg.model.hyper_hidden;
    ac.provider_dim = cfg.model.meta.provider_dim;
    ac.fwhm_hidden = cfg.model.meta.fwhm_hidden;
    ac.content_hidden = cfg.model.content.hidden;
    ac.tf_layers = cfg.model.meta.tf_layers;
    ac.k = cfg.model.backbone.patch;
    ac.D = cfg.model.backbone.dim;
    ac.dec_dim = cfg.model.backbone.dec_dim;
    ac.N = cfg.model.content.grid * cfg.model.content.grid;
  }
  if (channels) ac.C = channels;
  if (tokens) ac.N = tokens;
  return ac;
}

int cmd_inspect(const std::string& path) {
  PatchHeader h = read_patch_header(path);
  std::cout << "file = " << path << "\n";
  std::cout << "version = " << h.version << "\n";
  std::cout << "sensor = " << h.sensor.name << "\n";
  std::cout << "level = " << level_name(h.sensor.level) << "\n";
  std::cout << "bands = " << h.bands << "\n";
  std::cout << "height = " << h.height << "\n";
  std::cout << "width = " << h.width << "\n";
  std::cout << "dtype = fp16\n";
  std::cout << "valid_fraction = " << h.valid_fraction << "\n";
  std::cout << "label = " << h.label << "\n";
  std::cout << "wavelength_range_um = " << h.sensor.wavelengths_um.front() << " .. "
            << h.sensor.wavelengths_um.back() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hypernetwork-conditioned masked-autoencoder pretraining for variable-channel "
               "hyperspectral cubes"};
  app.require_subcommand(1);
  bool force_scalar = false;
  app.add_flag("--force-scalar", force_scalar, "route all kernels to the scalar reference path");

  // gen-data
  std::string out_dir = "data";
  std::size_t per_sensor = 64, size = 64, classes = 4, library = 6;
  std::uint64_t gen_seed = 1;
  double missing_prob = 0.0;
  std::string sensors_csv =
      "AVIRIS-3/L1_radiance,AVIRIS-NG/L1_radiance,AVIRIS-Classic/L2_reflectance";
  auto* gen = app.add_subcommand("gen-data", "render a synthetic multi-sensor dataset");
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--per-sensor", per_sensor, "patches per sensor");
  gen->add_option("--size", size, "patch height/width");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--classes", classes, "number of scene classes");
  gen->add_option("--library", library, "endmember library size");
  gen->add_option("--missing-prob", missing_prob, "probability of a missing-data gap");
  gen->add_option("--sensors", sensors_csv, "comma-separated NAME/LEVEL keys");
  std::string sensor_file;
  gen->add_option("--sensor-file", sensor_file, "additional sensor description file");

  // stats
  std::string stats_dir = "data";
  double clip = 0.01;
  std::uint64_t stats_seed = 0;
  auto* st = app.add_subcommand("stats", "compute per-sensor normalization statistics");
  st->add_option("--data", stats_dir, "dataset directory");
  st->add_option("--clip", clip, "percentile clip fraction");
  st->add_option("--seed", stats_seed, "pixel sampling seed");

  // pretrain
  std::string config_path, resume;
  auto* pre = app.add_subcommand("pretrain", "run the staged pretraining loop");
  pre->add_option("--config", config_path, "key-value config file");
  pre->add_option("--resume", resume, "checkpoint to resume from");

  // probe
  std::string probe_ckpt, probe_data = "data";
  std::size_t probe_classes = 4, probe_epochs = 200;
  auto* pr = app.add_subcommand("probe", "linear probe on a frozen checkpoint");
  pr->add_option("--ckpt", probe_ckpt, "checkpoint path")->required();
  pr->add_option("--data", probe_data, "labeled dataset directory");
  pr->add_option("--classes", probe_classes, "number of classes");
  pr->add_option("--epochs", probe_epochs, "probe training epochs");

  // report
  std::string report_kind, report_config;
  std::size_t report_channels = 0, report_tokens = 0;
  auto* rep = app.add_subcommand("report", "parameter or FLOP accounting");
  rep->add_option("kind", report_kind, "params | flops")->required();
  rep->add_option("--config", report_config, "derive widths from a config file");
  rep->add_option("--channels", report_channels, "channel count C");
  rep->add_option("--tokens", report_tokens, "token count N");

  // gradcheck
  bool full = false;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc->add_flag("--full", full, "include the denser end-to-end sweep");

  // inspect
  std::string inspect_path;
  auto* ins = app.add_subcommand("inspect", "print a patch file header");
  ins->add_option("patch", inspect_path, "patch file")->required();

  CLI11_PARSE(app, argc, argv);
  kernels::set_force_scalar(force_scalar);

  try {
    if (gen->parsed())
      return cmd_gen_data(out_dir, per_sensor, size, gen_seed, classes, library, missing_prob,
                          sensors_csv, sensor_file);
    if (st->parsed()) return cmd_stats(stats_dir, clip, stats_seed);
    if (pre->parsed()) return cmd_pretrain(config_path, resume);
    if (pr->parsed()) return cmd_probe(probe_ckpt, probe_data, probe_classes, probe_epochs);
    if (rep->parsed()) {
      auto ac = accounting_from(report_config, report_channels, report_tokens);
      if (report_kind == "params") {
        std::cout << param_report(ac).to_text();
      } else if (report_kind == "flops") {
        std::cout << flop_report(ac).to_text();
      } else {
        std::cerr << "unknown report kind '" << report_kind << "' (params | flops)\n";
        return 2;
      }
      return 0;
    }
    if (gc->parsed()) {
      std::cout << "primitive operations:\n";
      bool ok = gradcheck_ops(std::cout);
      std::cout << "end-to-end objective:\n";
      ok = gradcheck_model(std::cout, full) && ok;
      std::cout << (ok ? "gradcheck PASS\n" : "gradcheck FAIL\n");
      return ok ? 0 : 1;
    }
    if (ins->parsed()) return cmd_inspect(inspect_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
