#pragma once

// Optimization loop: warmup + cosine schedule, decoupled-weight-decay Adam,
// sensor-name dropout, staged execution over the data pipeline, and the
// frozen-backbone linear probe.

#include <cmath>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "hypermae/checkpoint.hpp"
#include "hypermae/config.hpp"
#include "hypermae/pipeline.hpp"

namespace hypermae {

/// Linear ramp to lr_base over the warmup steps, then cosine decay so the
/// final step lands exactly on lr_min.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                    double base, double lr_min) {
  if (total_steps == 0) return lr_min;
  if (step >= total_steps) return lr_min;
  if (warmup_steps > 0 && step < warmup_steps)
    return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps + 1) return base;
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - 1 - warmup_steps);
  return lr_min + 0.5 * (base - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

inline std::string apply_name_dropout(const std::string& name, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < p ? std::string("unknown") : name;
}

template <class T>
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;

  explicit AdamW(const nn::ParamRegistry<T>& reg) {
    for (const auto& [name, p] : reg.items) {
      m_.push_back(Tensor<T>::zeros(p->value.shape()));
      v_.push_back(Tensor<T>::zeros(p->value.shape()));
    }
  }

  struct StepResult {
    bool applied = true;
    std::string diagnostic;
  };

  /// One decoupled-weight-decay update. A non-finite gradient anywhere aborts
  /// the step and reports the offending parameter.
  StepResult step(nn::ParamRegistry<T>& reg, double lr) {
    for (const auto& [name, p] : reg.items)
      for (std::size_t i = 0; i < p->grad.numel(); ++i)
        if (!std::isfinite(static_cast<double>(p->grad[i])))
          return {false, "non-finite gradient in '" + name + "', step aborted"};

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < reg.items.size(); ++pi) {
      Parameter<T>& p = *reg.items[pi].second;
      if (!p.trainable) continue;
      Tensor<T>& m = m_[pi];
      Tensor<T>& v = v_[pi];
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
        const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double m_hat = mi / bc1;
        const double v_hat = vi / bc2;
        double value = static_cast<double>(p.value[i]);
        value -= lr * weight_decay * value;  // decoupled decay
        value -= lr * m_hat / (std::sqrt(v_hat) + eps);
        p.value[i] = static_cast<T>(value);
      }
    }
    return {};
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based within the stage
  double lr = 0;
  double loss_total = 0;
  double loss_charbonnier = 0;
  double loss_sam = 0;
  std::size_t aborted_steps = 0;
};

struct StageResult {
  std::string stage_name;
  std::vector<EpochMetrics> epochs;
  std::vector<double> step_losses;  // per optimizer step, for determinism checks
  std::string checkpoint_path;
};

/// Entry indices matching a stage's sensor filter and per-sensor cap.
inline std::vector<std::size_t> stage_entries(const Dataset& ds, const StageSpec& stage) {
  std::set<std::string> wanted;
  if (!stage.sensors.empty()) {
    std::stringstream ss(stage.sensors);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (!item.empty()) wanted.insert(item);
    }
  }
  std::map<std::string, std::size_t> taken;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const auto& e = ds.entries[i];
    if (!wanted.empty() && !wanted.count(e.sensor_key)) continue;
    if (stage.per_sensor > 0 && taken[e.sensor_key] >= stage.per_sensor) continue;
    ++taken[e.sensor_key];
    out.push_back(i);
  }
  check(!out.empty(), "stage '" + stage.name + "' selects no patches (filter '" +
                          stage.sensors + "')");
  return out;
}

template <class T>
StageResult run_stage(Model<T>& model, AdamW<T>& opt, const Dataset& ds, const NormStats& stats,
                      const StageSpec& stage, const TrainConfig& cfg, std::size_t stage_index,
                      std::ostream* metrics_out, const std::string& checkpoint_path,
                      std::ostream* log = nullptr, std::size_t epoch_offset = 0) {
  StageResult result;
  result.stage_name = stage.name;
  const auto entries = stage_entries(ds, stage);
  const std::size_t batches_per_epoch = (entries.size() + cfg.batch - 1) / cfg.batch;
  const std::size_t opt_steps_per_epoch =
      (batches_per_epoch + cfg.accum_steps - 1) / cfg.accum_steps;
  const std::size_t total_steps = stage.epochs * opt_steps_per_epoch;
  const std::size_t warmup_steps = stage.warmup * opt_steps_per_epoch;

  LoaderConfig loader;
  loader.batch = cfg.batch;
  loader.window = cfg.band_window;
  loader.stride = cfg.band_stride;
  loader.seed = derive_seed(cfg.seed, 0x10AD, stage_index);
  loader.workers = cfg.workers;
  loader.shards = cfg.shards;

  std::size_t opt_step = 0;
  std::size_t samples_in_flight = 0;
  std::size_t pending_batches = 0;
  bool done = false;

  for (std::size_t epoch = 0; epoch < stage.epochs && !done; ++epoch) {
    BatchIterator it(ds, &stats, loader, epoch, entries);
    EpochMetrics em;
    em.epoch = epoch + 1;
    std::size_t samples_seen = 0;
    double sum_total = 0, sum_charb = 0, sum_sam = 0;
    std::size_t batch_index = 0;

    double step_sum = 0;
    std::size_t step_samples = 0;
    while (auto batch = it.next()) {
      if (samples_in_flight == 0) model.reg.zero_grads();
      const std::uint64_t step_key =
          derive_seed(cfg.seed, 0x57E9, stage_index, epoch * batches_per_epoch + batch_index);
      std::size_t sample_index = 0;
      for (auto& item : *batch) {
        std::mt19937_64 drop_rng(derive_seed(step_key, 0xD809, sample_index));
        const std::string name_override =
            apply_name_dropout(item.spec.name, cfg.name_dropout, drop_rng) == "unknown"
                ? "unknown"
                : "";
        Tensor<T> cube = item.cube.template cast<T>();
        Tape<T> tape;
        auto fwd = model.forward_mim(tape, cube, item.spec, cfg.mask_ratio,
                                     derive_seed(step_key, 0x3A5C, sample_index), name_override);
        auto lv = total_loss(tape, fwd.recon, fwd.target, fwd.plan, cfg.loss);
        tape.backward(lv.total);
        step_sum += lv.diag.total;
        ++step_samples;
        sum_total += lv.diag.total;
        sum_charb += lv.diag.charbonnier;
        sum_sam += lv.diag.sam;
        ++samples_seen;
        ++samples_in_flight;
        ++sample_index;
      }
      ++pending_batches;
      ++batch_index;

      const bool flush = pending_batches == cfg.accum_steps ||
                         (epoch + 1 == stage.epochs && batch_index == batches_per_epoch);
      if (flush) {
        const T inv = static_cast<T>(1.0 / static_cast<double>(samples_in_flight));
        for (auto& [name, p] : model.reg.items)
          for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= inv;
        const double lr = lr_at(opt_step, total_steps, warmup_steps, cfg.lr_base, cfg.lr_min);
        auto sr = opt.step(model.reg, lr);
        if (!sr.applied) {
          ++em.aborted_steps;
          if (log) *log << "[" << stage.name << "] " << sr.diagnostic << "\n";
        }
        em.lr = lr;
        result.step_losses.push_back(step_sum / static_cast<double>(step_samples));
        step_sum = 0;
        step_samples = 0;
        ++opt_step;
        samples_in_flight = 0;
        pending_batches = 0;
        if (cfg.max_steps > 0 && opt_step >= cfg.max_steps) {
          done = true;
          break;
        }
      }
    }

    em.loss_total = sum_total / static_cast<double>(std::max<std::size_t>(samples_seen, 1));
    em.loss_charbonnier = sum_charb / static_cast<double>(std::max<std::size_t>(samples_seen, 1));
    em.loss_sam = sum_sam / static_cast<double>(std::max<std::size_t>(samples_seen, 1));
    result.epochs.push_back(em);
    if (metrics_out) {
      (*metrics_out) << epoch_offset + em.epoch << ", " << em.lr << ", " << em.loss_total << ", "
                     << em.loss_charbonnier << ", " << em.loss_sam << "\n";
      metrics_out->flush();
    }
    if (log)
      *log << "[" << stage.name << "] epoch " << em.epoch << "/" << stage.epochs
           << "  lr=" << em.lr << "  loss=" << em.loss_total << " (charb=" << em.loss_charbonnier
           << ", sam=" << em.loss_sam << ")\n";
  }

  if (!checkpoint_path.empty()) {
    save_checkpoint(checkpoint_path, model_signature(model.cfg), model.reg);
    result.checkpoint_path = checkpoint_path;
  }
  return result;
}

struct ProbeResult {
  double accuracy = 0;
  std::size_t head_params = 0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  std::size_t classes = 0;
};

/// Frozen-backbone linear probe: mean-pooled encoder tokens -> one linear
/// head, trained on cached features. The backbone is never touched.
template <class T>
ProbeResult linear_probe(const Model<T>& model, const Dataset& ds, const NormStats& stats,
                         std::size_t classes, std::size_t epochs = 200,
                         std::uint64_t seed = 7, std::ostream* log = nullptr) {
  check(classes >= 2, "probe needs at least two classes");
  const std::size_t dim = model.cfg.backbone.dim;

  std::vector<Tensor<T>> features;
  std::vector<std::size_t> labels;
  for (const auto& entry : ds.entries) {
    check(entry.label >= 0 && static_cast<std::size_t>(entry.label) < classes,
          "probe patch '" + entry.path + "' lacks a label in [0, " + std::to_string(classes) +
              ")");
    Tensor<float> cube = read_patch(entry.path);
    normalize_cube(cube, stats.for_sensor(entry.sensor_key));
    features.push_back(model.encode_feature(cube.template cast<T>(), ds.sensor(entry.sensor_key)));
    labels.push_back(static_cast<std::size_t>(entry.label));
  }

  // per-class round-robin split: every 4th sample held out
  std::vector<std::size_t> train_idx, test_idx;
  std::map<std::size_t, std::size_t> seen_per_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (seen_per_class[labels[i]]++ % 4 == 3)
      test_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  check(!train_idx.empty() && !test_idx.empty(), "probe split left an empty partition");

  Tensor<T> x_train({train_idx.size(), dim});
  Tensor<T> onehot({train_idx.size(), classes});
  for (std::size_t r = 0; r < train_idx.size(); ++r) {
    std::copy_n(features[train_idx[r]].data(), dim, x_train.data() + r * dim);
    onehot[r * classes + labels[train_idx[r]]] = T(1);
  }

  nn::ParamRegistry<T> head_reg;
  nn::InitStream init{seed, 0};
  nn::Linear<T> head(head_reg, "head", init, dim, classes);
  AdamW<T> opt(head_reg);
  opt.weight_decay = 0.0;

  for (std::size_t e = 0; e < epochs; ++e) {
    head_reg.zero_grads();
    Tape<T> tape;
    auto logits = head(tape, tape.constant(x_train));
    auto logp = ops::log_softmax(logits, 1);
    auto nll = ops::neg(ops::mean_all(ops::sum_axis(ops::mul(logp, tape.constant(onehot)), 1)));
    tape.backward(nll);
    opt.step(head_reg, 1e-2);
    if (log && (e + 1) % 50 == 0)
      *log << "probe epoch " << e + 1 << " nll=" << nll.val()[0] << "\n";
  }

  std::size_t correct = 0;
  for (std::size_t i : test_idx) {
    Tape<T> tape;
    auto logits = head(tape, ops::reshape(tape.constant(features[i]), {1, dim}));
    std::size_t arg = 0;
    for (std::size_t k = 1; k < classes; ++k)
      if (logits.val()[k] > logits.val()[arg]) arg = k;
    if (arg == labels[i]) ++correct;
  }

  ProbeResult pr;
  pr.accuracy = static_cast<double>(correct) / static_cast<double>(test_idx.size());
  pr.head_params = dim * classes + classes;
  pr.train_count = train_idx.size();
  pr.test_count = test_idx.size();
  pr.classes = classes;
  return pr;
}

}  // namespace hypermae
