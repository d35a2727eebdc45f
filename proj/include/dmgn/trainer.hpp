#pragma once

#include <filesystem>
#include <memory>

#include "dmgn/checkpoint.hpp"
#include "dmgn/corpus.hpp"
#include "dmgn/metrics.hpp"

// Deterministic training loop. Per step: the critic takes one Adam step on
// real/detached-fake score means (weights clipped afterwards), then the
// generator side takes one Adam step against the updated critic. Batch
// samples run on parallel workers, each with its own tape over shared
// parameter storage; gradients are averaged in sample order, so a seed fully
// determines the run. A non-finite value anywhere aborts the run with a dump
// of the offending batch.

namespace dmgn {

struct TrainConfig {
  uint64_t seed = 1;
  std::string corpus_dir;
  ModelConfig model;
  LossWeights<float> weights;
  float lr = 2e-4f;
  int batch = 4;
  int steps = 0;        // explicit step budget; 0 derives from max_epochs
  int max_epochs = 100; // used only when steps == 0
  std::string variant = "full";
  int checkpoint_every = 0;  // extra checkpoints every k steps when > 0
  std::string out_dir;       // when set: training_log.csv, checkpoints, dumps
  bool aug_flip = false;     // random horizontal flip
  bool aug_crop = false;     // random crop (>= 3/4 side) + nearest resize back
  int workers = 0;           // parallel samples; 0 = hardware concurrency
  float disc_clip = 0.05f;   // critic weight clamp after each critic step

  void validate() const {
    model.validate();
    weights.validate();
    if (lr <= 0) throw ConfigError("lr must be > 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (max_epochs < 0 || max_epochs > 100) throw ConfigError("max_epochs must be in [0,100]");
    if (disc_clip <= 0) throw ConfigError("disc_clip must be > 0");
    VariantSpec::from_name(variant);
  }

  int effective_steps(int corpus_size) const {
    if (steps > 0) return steps;
    const int per_epoch = (corpus_size + batch - 1) / batch;
    return max_epochs * per_epoch;
  }
};

// Model wiring plus fresh optimizer state for a variant; the concrete form
// of the variant table (base / rdmc / r-rdmc / coarse / full).
inline Checkpoint build_variant(const TrainConfig& cfg) {
  cfg.validate();
  Checkpoint c;
  c.config = cfg.model;
  c.variant = cfg.variant;
  c.model_seed = cfg.seed;
  const VariantSpec v = VariantSpec::from_name(cfg.variant);
  c.model = build_model_params<float>(cfg.model, v, cfg.seed);
  c.disc = build_disc_params<float>(cfg.model, cfg.seed ^ 0xd1cful);
  std::ostringstream rng;
  rng << Rng(cfg.seed).engine();
  c.rng_state = rng.str();
  return c;
}

struct TrainLogRow {
  long step = 0;
  float total = 0;
  std::map<std::string, float> components;
  float disc = 0;
  float lr = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
  float initial_total = 0;
  float final_total = 0;
};

namespace traindetail {

inline Tensor<float> flip_w(const Tensor<float>& img) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<float> out(img.shape());
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out[(c * H + y) * W + x] = img[(c * H + y) * W + (W - 1 - x)];
  return out;
}

inline Tensor<float> crop_resize(const Tensor<float>& img, int side, int y0, int x0) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<float> out(img.shape());
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int sy = y0 + y * side / H;
        const int sx = x0 + x * side / W;
        out[(c * H + y) * W + x] = img[(c * H + sy) * W + sx];
      }
  return out;
}

struct SampleWork {
  Tensor<float> input, b_gt, r_gt;  // [1,3,H,W]
  std::unique_ptr<Tape<float>> tape;
  ParamSet<float> local_model;
  ForwardOut<float> out;
  LossReport<float> report;
  float disc_loss = 0;
  std::vector<std::vector<float>> disc_grads;  // in disc param order
};

inline std::string csv_header(const TrainLogRow& row) {
  std::ostringstream os;
  os << "step,total";
  for (const auto& [k, v] : row.components) os << "," << k;
  os << ",disc,lr";
  return os.str();
}

inline std::string csv_row(const TrainLogRow& row) {
  std::ostringstream os;
  os << row.step << "," << row.total;
  for (const auto& [k, v] : row.components) os << "," << v;
  os << "," << row.disc << "," << row.lr;
  return os.str();
}

}  // namespace traindetail

inline TrainResult train(const TrainConfig& cfg, const std::vector<ImageTriple>& corpus) {
  cfg.validate();
  if (corpus.empty()) throw ConfigError("train: empty corpus");
  const VariantSpec variant = VariantSpec::from_name(cfg.variant);
  const bool train_critic = variant.refine_phase;

  TrainResult result;
  result.checkpoint = build_variant(cfg);
  Checkpoint& ckpt = result.checkpoint;
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ull + 7);

  const int steps = cfg.effective_steps(static_cast<int>(corpus.size()));
  int workers = cfg.workers > 0 ? cfg.workers
                                : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, cfg.batch));

  std::vector<int> perm;
  size_t cursor = 0;
  auto next_sample = [&]() {
    if (cursor >= perm.size()) {
      perm.resize(corpus.size());
      for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
      for (size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
      cursor = 0;
    }
    return perm[cursor++];
  };

  std::map<std::string, std::vector<float>> grad_sum;
  std::ofstream log_file;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    log_file.open(cfg.out_dir + "/training_log.csv");
    if (!log_file) throw IoError("cannot write training log in " + cfg.out_dir);
  }

  for (long step = 1; step <= steps; ++step) {
    // assemble the batch on the main thread so all randomness stays ordered
    std::vector<traindetail::SampleWork> batch(static_cast<size_t>(cfg.batch));
    for (auto& w : batch) {
      const ImageTriple& t = corpus[static_cast<size_t>(next_sample())];
      Tensor<float> I = t.input, B = t.background, R = t.noise;
      if (cfg.aug_flip && rng.uniform() < 0.5) {
        I = traindetail::flip_w(I);
        B = traindetail::flip_w(B);
        R = traindetail::flip_w(R);
      }
      if (cfg.aug_crop) {
        const int H = I.dim(1);
        const int side = rng.uniform_int(3 * H / 4, H);
        const int y0 = rng.uniform_int(0, H - side);
        const int x0 = rng.uniform_int(0, I.dim(2) - side);
        I = traindetail::crop_resize(I, side, y0, x0);
        B = traindetail::crop_resize(B, side, y0, x0);
        R = traindetail::crop_resize(R, side, y0, x0);
      }
      const int H = I.dim(1), W = I.dim(2);
      w.input = I.with_shape({1, 3, H, W});
      w.b_gt = B.with_shape({1, 3, H, W});
      w.r_gt = R.with_shape({1, 3, H, W});
    }

    try {
      // phase 1: model forwards (kept on tape) and critic gradients
      parallel_for(cfg.batch, workers, [&](int i) {
        auto& w = batch[static_cast<size_t>(i)];
        w.tape = std::make_unique<Tape<float>>();
        w.local_model = ckpt.model;  // shared storage, private gradients
        w.local_model.watch_trainable(*w.tape);
        w.out = dmgn_forward(w.input, w.local_model, ckpt.config, variant);
        if (train_critic) {
          ParamSet<float> local_disc = ckpt.disc;
          Tape<float> tape_d;
          local_disc.watch_trainable(tape_d);
          Tensor<float> loss =
              add(neg(mean_all(disc_forward(w.b_gt, w.input, local_disc))),
                  mean_all(disc_forward(detach(w.out.refined_background), w.input, local_disc)));
          tape_d.backward(loss);
          w.disc_loss = loss.value();
          local_disc.for_each([&](const std::string&, auto& e) {
            w.disc_grads.emplace_back(e.tensor.grad(), e.tensor.grad() + e.tensor.numel());
          });
        }
      });

      // critic update first; the generator then plays against the new critic
      if (train_critic) {
        size_t pi = 0;
        ckpt.disc.for_each([&](const std::string& name, auto& e) {
          std::vector<float> g(static_cast<size_t>(e.tensor.numel()), 0.0f);
          for (const auto& w : batch)
            for (size_t k = 0; k < g.size(); ++k) g[k] += w.disc_grads[pi][k];
          for (auto& v : g) v /= static_cast<float>(cfg.batch);
          adam_step(e.tensor, g.data(), ckpt.adam_disc[name], cfg.lr);
          ++pi;
        });
        clip_params(ckpt.disc, cfg.disc_clip);
      }

      // phase 2: generator losses against the updated critic, then backward
      parallel_for(cfg.batch, workers, [&](int i) {
        auto& w = batch[static_cast<size_t>(i)];
        w.report = total_loss(w.out, w.b_gt, w.r_gt, w.input, w.local_model, ckpt.disc,
                              ckpt.config, cfg.weights, variant);
        w.tape->backward(w.report.total);
      });
    } catch (const NumericFault& fault) {
      const std::string dump_dir = (cfg.out_dir.empty() ? std::string(".") : cfg.out_dir) +
                                   "/nan_dump_step" + std::to_string(step);
      std::filesystem::create_directories(dump_dir);
      for (size_t i = 0; i < batch.size(); ++i) {
        const auto& w = batch[i];
        const int H = w.input.dim(2), W = w.input.dim(3);
        write_png(dump_dir + "/sample" + std::to_string(i) + "_I.png",
                  w.input.with_shape({3, H, W}));
        write_png(dump_dir + "/sample" + std::to_string(i) + "_B.png",
                  w.b_gt.with_shape({3, H, W}));
      }
      std::ofstream note(dump_dir + "/fault.txt");
      note << "step " << step << "\n" << fault.what() << "\n";
      throw NumericFault("training aborted at step " + std::to_string(step) + " (" +
                         fault.what() + "); batch dumped to " + dump_dir);
    }

    // averaged generator gradients, in parameter order
    ckpt.model.for_each([&](const std::string& name, auto& e) {
      if (!e.trainable) return;
      auto& g = grad_sum[name];
      g.assign(static_cast<size_t>(e.tensor.numel()), 0.0f);
      for (const auto& w : batch) {
        const float* wg = w.local_model.at(name).grad();
        for (size_t k = 0; k < g.size(); ++k) g[k] += wg[k];
      }
      for (auto& v : g) v /= static_cast<float>(cfg.batch);
      adam_step(e.tensor, g.data(), ckpt.adam_model[name], cfg.lr);
    });

    // log the batch-mean loss components
    TrainLogRow row;
    row.step = step;
    row.lr = cfg.lr;
    for (const auto& w : batch) {
      row.total += w.report.total.value() / static_cast<float>(cfg.batch);
      row.disc += w.disc_loss / static_cast<float>(cfg.batch);
      for (const auto& [k, v] : w.report.components)
        row.components[k] += v / static_cast<float>(cfg.batch);
    }
    if (step == 1) result.initial_total = row.total;
    result.final_total = row.total;
    if (log_file) {
      if (step == 1) log_file << traindetail::csv_header(row) << "\n";
      log_file << traindetail::csv_row(row) << "\n";
    }
    result.log.push_back(std::move(row));

    ckpt.step = step;
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && !cfg.out_dir.empty()) {
      std::ostringstream rs;
      rs << rng.engine();
      ckpt.rng_state = rs.str();
      save_checkpoint(ckpt, cfg.out_dir + "/checkpoint_step" + std::to_string(step) + ".bin");
    }
  }

  std::ostringstream rs;
  rs << rng.engine();
  ckpt.rng_state = rs.str();
  if (!cfg.out_dir.empty()) save_checkpoint(ckpt, cfg.out_dir + "/checkpoint_final.bin");
  return result;
}

inline TrainResult train(const TrainConfig& cfg) {
  if (cfg.corpus_dir.empty()) throw ConfigError("train: no corpus directory");
  return train(cfg, corpus_read(cfg.corpus_dir));
}

// Inference closure over a checkpoint: [3,H,W] -> restored [3,H,W].
// Safe to call from parallel workers; parameters are read-only.
inline RestoreFn make_restorer(const Checkpoint& ckpt) {
  auto params = std::make_shared<ParamSet<float>>(ckpt.model);
  const ModelConfig cfg = ckpt.config;
  const VariantSpec v = VariantSpec::from_name(ckpt.variant);
  return [params, cfg, v](const Tensor<float>& img) {
    const int H = img.dim(1), W = img.dim(2);
    auto out = dmgn_forward(img.with_shape({1, 3, H, W}), *params, cfg, v);
    return out.refined_background.with_shape({3, H, W});
  };
}

// Per-cell gating masks for one input image: a grayscale channel-mean image
// per recorded mask plus a mean-activation table (the coarse-phase
// diagnostic for how much information each cell still passes).
struct MaskDump {
  struct Item {
    std::string name;
    Tensor<float> image;  // [1,H,W] in [0,1]
    double mean = 0;
  };
  std::vector<Item> items;
  std::string table;
};

inline MaskDump dump_masks(const Checkpoint& ckpt, const Tensor<float>& img) {
  const int H = img.dim(1), W = img.dim(2);
  const VariantSpec v = VariantSpec::from_name(ckpt.variant);
  auto out = dmgn_forward(img.with_shape({1, 3, H, W}), ckpt.model, ckpt.config, v);

  MaskDump dump;
  auto channel_mean = [](const Tensor<float>& t) {
    const int C = t.dim(1), h = t.dim(2), w = t.dim(3);
    Tensor<float> m(Shape{1, h, w});
    for (int y = 0; y < h * w; ++y) {
      double acc = 0;
      for (int c = 0; c < C; ++c) acc += t[c * h * w + y];
      m[y] = static_cast<float>(acc / C);
    }
    return m;
  };
  std::ostringstream table;
  table << "generator  cell  mean_mask\n";
  for (const auto& entry : out.trace.entries) {
    MaskDump::Item item;
    item.name = entry.generator + "_cell" + std::to_string(entry.cell_index);
    item.image = channel_mean(entry.mask);
    double acc = 0;
    for (int i = 0; i < item.image.numel(); ++i) acc += item.image[i];
    item.mean = acc / item.image.numel();
    table << entry.generator << "  " << entry.cell_index << "  " << item.mean << "\n";
    dump.items.push_back(std::move(item));
  }
  if (out.trace.separator_map.defined()) {
    MaskDump::Item item;
    item.name = "separator";
    item.image = channel_mean(out.trace.separator_map);
    double acc = 0;
    for (int i = 0; i < item.image.numel(); ++i) acc += item.image[i];
    item.mean = acc / item.image.numel();
    table << "separator  -  " << item.mean << "\n";
    dump.items.push_back(std::move(item));
  }
  if (out.trace.noise_map.defined()) {
    MaskDump::Item item;
    item.name = "noise_distribution";
    item.image = out.trace.noise_map.with_shape({1, H, W});
    double acc = 0;
    for (int i = 0; i < item.image.numel(); ++i) acc += item.image[i];
    item.mean = acc / item.image.numel();
    table << "noise_map  -  " << item.mean << "\n";
    dump.items.push_back(std::move(item));
  }
  dump.table = table.str();
  return dump;
}

}  // namespace dmgn
