// Command-line front end: dataset synthesis, training, evaluation,
// inference, mask dumping and the finite-difference audit. Exit codes:
// 0 success, 1 configuration error, 2 io error, 3 numeric fault.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "dmgn/model_gradcheck.hpp"
#include "dmgn/runconfig.hpp"
#include "dmgn/trainer.hpp"

namespace {

using namespace dmgn;

const std::set<std::string> kSynthKeys = {
    "synth.kind",          "synth.seed",         "synth.count",
    "synth.size",          "synth.alpha_lo",     "synth.alpha_hi",
    "synth.sigma_lo",      "synth.sigma_hi",     "synth.streaks_lo",
    "synth.streaks_hi",    "synth.streak_len_lo", "synth.streak_len_hi",
    "synth.angle_lo",      "synth.angle_hi",     "synth.intensity_lo",
    "synth.intensity_hi",  "synth.beta_lo",      "synth.beta_hi",
    "synth.airlight_lo",   "synth.airlight_hi",  "synth.depth_scale",
    "synth.workers"};

const std::set<std::string> kModelKeys = {
    "model.width",      "model.stage_cells", "model.refine_cells", "model.pyramid_levels",
    "model.alpha_fuse", "model.decay_q",     "model.se_ratio",     "model.pyramid_seed"};

const std::set<std::string> kLossKeys = {"loss.refine_l1", "loss.coarse_l1", "loss.refine_perc",
                                         "loss.coarse_perc", "loss.refine_adv"};

const std::set<std::string> kTrainKeys = {
    "train.seed",       "train.lr",       "train.batch",     "train.steps",
    "train.max_epochs", "train.variant",  "train.workers",   "train.checkpoint_every",
    "train.aug_flip",   "train.aug_crop", "train.disc_clip"};

std::string num_str(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void emit_resolved(const RunConfig& cfg, const std::string& dir) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  std::ofstream out(dir + "/config.resolved");
  if (!out) throw IoError("cannot write resolved config in " + dir);
  out << cfg.resolved_text();
}

SynthesisConfig synth_config_from(const RunConfig& rc) {
  SynthesisConfig cfg;
  cfg.kind = kind_from_name(rc.get_str("synth.kind", "reflection"));
  cfg.seed = rc.get_u64("synth.seed", 1);
  cfg.count = rc.get_int("synth.count", 16);
  cfg.size = rc.get_int("synth.size", 32);
  cfg.alpha_lo = rc.get_num("synth.alpha_lo", cfg.alpha_lo);
  cfg.alpha_hi = rc.get_num("synth.alpha_hi", cfg.alpha_hi);
  cfg.sigma_lo = rc.get_num("synth.sigma_lo", cfg.sigma_lo);
  cfg.sigma_hi = rc.get_num("synth.sigma_hi", cfg.sigma_hi);
  cfg.streaks_lo = rc.get_int("synth.streaks_lo", cfg.streaks_lo);
  cfg.streaks_hi = rc.get_int("synth.streaks_hi", cfg.streaks_hi);
  cfg.streak_len_lo = rc.get_num("synth.streak_len_lo", cfg.streak_len_lo);
  cfg.streak_len_hi = rc.get_num("synth.streak_len_hi", cfg.streak_len_hi);
  cfg.angle_lo = rc.get_num("synth.angle_lo", cfg.angle_lo);
  cfg.angle_hi = rc.get_num("synth.angle_hi", cfg.angle_hi);
  cfg.intensity_lo = rc.get_num("synth.intensity_lo", cfg.intensity_lo);
  cfg.intensity_hi = rc.get_num("synth.intensity_hi", cfg.intensity_hi);
  cfg.beta_lo = rc.get_num("synth.beta_lo", cfg.beta_lo);
  cfg.beta_hi = rc.get_num("synth.beta_hi", cfg.beta_hi);
  cfg.airlight_lo = rc.get_num("synth.airlight_lo", cfg.airlight_lo);
  cfg.airlight_hi = rc.get_num("synth.airlight_hi", cfg.airlight_hi);
  cfg.depth_scale = rc.get_num("synth.depth_scale", cfg.depth_scale);
  cfg.validate();
  return cfg;
}

ModelConfig model_config_from(const RunConfig& rc) {
  ModelConfig cfg;
  cfg.width = rc.get_int("model.width", cfg.width);
  cfg.stage_cells = rc.get_int("model.stage_cells", cfg.stage_cells);
  cfg.refine_cells = rc.get_int("model.refine_cells", cfg.refine_cells);
  cfg.pyramid_levels = rc.get_int("model.pyramid_levels", cfg.pyramid_levels);
  cfg.alpha_fuse = rc.get_num("model.alpha_fuse", cfg.alpha_fuse);
  cfg.decay_q = rc.get_num("model.decay_q", cfg.decay_q);
  cfg.se_ratio = rc.get_int("model.se_ratio", cfg.se_ratio);
  cfg.pyramid_seed = rc.get_u64("model.pyramid_seed", cfg.pyramid_seed);
  cfg.validate();
  return cfg;
}

LossWeights<float> loss_weights_from(const RunConfig& rc) {
  LossWeights<float> w;
  w.refine_l1 = static_cast<float>(rc.get_num("loss.refine_l1", w.refine_l1));
  w.coarse_l1 = static_cast<float>(rc.get_num("loss.coarse_l1", w.coarse_l1));
  w.refine_perc = static_cast<float>(rc.get_num("loss.refine_perc", w.refine_perc));
  w.coarse_perc = static_cast<float>(rc.get_num("loss.coarse_perc", w.coarse_perc));
  w.refine_adv = static_cast<float>(rc.get_num("loss.refine_adv", w.refine_adv));
  w.validate();
  return w;
}

int cmd_synth(const RunConfig& rc, const std::string& out_dir) {
  SynthesisConfig cfg = synth_config_from(rc);
  const int workers = rc.get_int("synth.workers", 0);
  std::vector<ImageTriple> triples(static_cast<size_t>(cfg.count));
  parallel_for(cfg.count, workers,
               [&](int i) { triples[static_cast<size_t>(i)] = synth_triple(cfg, i); });
  corpus_write(triples, out_dir);
  emit_resolved(rc, out_dir);
  std::cout << "wrote " << triples.size() << " " << kind_name(cfg.kind) << " triples (" << cfg.size
            << "x" << cfg.size << ") to " << out_dir << "\n"
            << "checksum " << std::hex << corpus_checksum(out_dir) << std::dec << "\n";
  return 0;
}

int cmd_train(const RunConfig& rc, const std::string& corpus_dir, const std::string& out_dir) {
  TrainConfig cfg;
  cfg.corpus_dir = corpus_dir;
  cfg.out_dir = out_dir;
  cfg.model = model_config_from(rc);
  cfg.weights = loss_weights_from(rc);
  cfg.seed = rc.get_u64("train.seed", 1);
  cfg.lr = static_cast<float>(rc.get_num("train.lr", 2e-4));
  cfg.batch = rc.get_int("train.batch", 4);
  cfg.steps = rc.get_int("train.steps", 0);
  cfg.max_epochs = rc.get_int("train.max_epochs", 100);
  cfg.variant = rc.get_str("train.variant", "full");
  cfg.workers = rc.get_int("train.workers", 0);
  cfg.checkpoint_every = rc.get_int("train.checkpoint_every", 0);
  cfg.aug_flip = rc.get_bool("train.aug_flip", false);
  cfg.aug_crop = rc.get_bool("train.aug_crop", false);
  cfg.disc_clip = static_cast<float>(rc.get_num("train.disc_clip", 0.05));
  cfg.validate();

  emit_resolved(rc, out_dir);
  auto result = train(cfg);
  std::cout << "trained variant " << cfg.variant << " for " << result.checkpoint.step << " steps\n"
            << "initial total loss " << result.initial_total << ", final " << result.final_total
            << "\ncheckpoint " << out_dir << "/checkpoint_final.bin\n";
  return 0;
}

RestoreFn restorer_by_name(const std::string& name) {
  if (name == "identity") return [](const Tensor<float>& img) { return img.clone(); };
  if (name == "zero") return [](const Tensor<float>& img) { return Tensor<float>(img.shape()); };
  throw ConfigError("unknown restorer '" + name + "' (want identity or zero)");
}

int cmd_eval(const RunConfig& rc, const std::string& corpus_dir, const std::string& ckpt_path,
             const std::string& restorer_name, const std::string& report_path,
             const std::string& csv_path, int workers) {
  auto corpus = corpus_read(corpus_dir);
  RestoreFn restore =
      ckpt_path.empty() ? restorer_by_name(restorer_name) : make_restorer(load_checkpoint(ckpt_path));
  auto report = evaluate_corpus(corpus, restore, workers);
  const std::string text = report_text(report);
  std::cout << text;
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw IoError("cannot write report " + report_path);
    out << text;
    const auto parent = std::filesystem::path(report_path).parent_path().string();
    emit_resolved(rc, parent.empty() ? "." : parent);
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write csv " + csv_path);
    out << report_csv(report);
  }
  return 0;
}

int cmd_infer(const RunConfig& rc, const std::string& corpus_dir, const std::string& ckpt_path,
              const std::string& out_dir, int workers) {
  auto corpus = corpus_read(corpus_dir);
  auto ckpt = load_checkpoint(ckpt_path);
  const VariantSpec v = VariantSpec::from_name(ckpt.variant);
  std::filesystem::create_directories(out_dir);
  parallel_for(static_cast<int>(corpus.size()), workers, [&](int i) {
    const ImageTriple& t = corpus[static_cast<size_t>(i)];
    const int H = t.input.dim(1), W = t.input.dim(2);
    auto out = dmgn_forward(t.input.with_shape({1, 3, H, W}), ckpt.model, ckpt.config, v);
    write_png(out_dir + "/" + t.id + "_Bhat.png", out.refined_background.with_shape({3, H, W}));
    write_png(out_dir + "/" + t.id + "_Rhat.png", out.noise.with_shape({3, H, W}));
  });
  emit_resolved(rc, out_dir);
  std::cout << "wrote restored backgrounds for " << corpus.size() << " images to " << out_dir
            << "\n";
  return 0;
}

int cmd_dump_masks(const RunConfig& rc, const std::string& ckpt_path, const std::string& image,
                   const std::string& out_dir) {
  auto ckpt = load_checkpoint(ckpt_path);
  Tensor<float> img = read_png(image);
  if (img.dim(0) != 3) throw ConfigError("dump-masks wants an RGB image");
  auto dump = dump_masks(ckpt, img);
  std::filesystem::create_directories(out_dir);
  for (const auto& item : dump.items) write_png(out_dir + "/" + item.name + ".png", item.image);
  std::ofstream table(out_dir + "/mask_means.txt");
  table << dump.table;
  emit_resolved(rc, out_dir);
  std::cout << dump.table;
  return 0;
}

int cmd_gradcheck(int size, int channels, const std::string& variant, int samples, uint64_t seed,
                  double tol) {
  auto report = model_gradient_check(size, channels, variant, samples, seed);
  for (const auto& g : report.groups) {
    std::cout << g.group << "  max_rel_err " << g.max_rel_err << "  (" << g.coords << " coords";
    if (g.skipped) std::cout << ", " << g.skipped << " kink-skipped";
    std::cout << ")\n";
  }
  std::cout << "worst " << report.worst << " in " << report.worst_group << " over "
            << report.groups.size() << " groups (" << report.checked << " coords checked, "
            << report.skipped << " kink-skipped)\n";
  if (report.worst >= tol) {
    std::cout << "FAIL: worst gradient error exceeds " << tol << "\n";
    return 3;
  }
  std::cout << "OK: all groups below " << tol << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"background restoration lab: synthesis, training, evaluation"};
  app.require_subcommand(1);

  std::string config_file, out_dir, corpus_dir, ckpt_path, restorer_name, report_path, csv_path,
      image_path;
  std::string kind = "reflection", variant = "full";
  uint64_t seed = 1;
  int count = 16, size = 32, workers = 0, steps = 0, batch = 4, samples = 6, channels = 4;
  int gsize = 8;
  double lr = 2e-4, tol = 1e-4;
  double alpha = -1, sigma = -1, beta = -1;
  bool aug_flip = false, aug_crop = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--out", out_dir, "corpus directory")->required();
  synth->add_option("--kind", kind, "reflection | rain | haze");
  synth->add_option("--count", count, "number of triples");
  synth->add_option("--seed", seed, "generation seed");
  synth->add_option("--size", size, "image side length");
  synth->add_option("--workers", workers, "parallel generation workers");
  synth->add_option("--alpha", alpha, "pin the reflection blend factor");
  synth->add_option("--sigma", sigma, "pin the reflection blur sigma");
  synth->add_option("--beta", beta, "pin the haze scattering coefficient");
  synth->add_option("--config", config_file, "key=value config file");

  auto* train_cmd = app.add_subcommand("train", "train a variant on a corpus");
  train_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--variant", variant, "base | rdmc | r-rdmc | coarse | full");
  train_cmd->add_option("--steps", steps, "optimization steps");
  train_cmd->add_option("--seed", seed, "training seed");
  train_cmd->add_option("--lr", lr, "learning rate");
  train_cmd->add_option("--batch", batch, "batch size");
  train_cmd->add_option("--workers", workers, "parallel sample workers");
  train_cmd->add_flag("--aug-flip", aug_flip, "random horizontal flips");
  train_cmd->add_flag("--aug-crop", aug_crop, "random crop and resize");
  train_cmd->add_option("--config", config_file, "key=value config file");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate restored backgrounds");
  eval_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file");
  eval_cmd->add_option("--restorer", restorer_name, "identity | zero (instead of a checkpoint)");
  eval_cmd->add_option("--report", report_path, "write the text report here");
  eval_cmd->add_option("--csv", csv_path, "write per-image csv here");
  eval_cmd->add_option("--workers", workers, "parallel evaluation workers");

  auto* infer_cmd = app.add_subcommand("infer", "write restored images for a corpus");
  infer_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  infer_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  infer_cmd->add_option("--out", out_dir, "output directory")->required();
  infer_cmd->add_option("--workers", workers, "parallel workers");

  auto* masks_cmd = app.add_subcommand("dump-masks", "write per-cell gating masks");
  masks_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  masks_cmd->add_option("--image", image_path, "input png")->required();
  masks_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference audit (64-bit)");
  grad_cmd->add_option("--size", gsize, "image side length");
  grad_cmd->add_option("--channels", channels, "base channel width");
  grad_cmd->add_option("--variant", variant, "model variant");
  grad_cmd->add_option("--samples", samples, "coordinates per parameter group");
  grad_cmd->add_option("--seed", seed, "audit seed");
  grad_cmd->add_option("--tol", tol, "failure threshold on the relative error");

  try {
    app.parse(argc, argv);

    RunConfig rc;
    if (!config_file.empty()) rc.load_file(config_file);

    if (*synth) {
      if (synth->count("--kind")) rc.set("synth.kind", kind);
      if (synth->count("--count")) rc.set("synth.count", std::to_string(count));
      if (synth->count("--seed")) rc.set("synth.seed", std::to_string(seed));
      if (synth->count("--size")) rc.set("synth.size", std::to_string(size));
      if (synth->count("--workers")) rc.set("synth.workers", std::to_string(workers));
      if (synth->count("--alpha")) {
        rc.set("synth.alpha_lo", num_str(alpha));
        rc.set("synth.alpha_hi", num_str(alpha));
      }
      if (synth->count("--sigma")) {
        rc.set("synth.sigma_lo", num_str(sigma));
        rc.set("synth.sigma_hi", num_str(sigma));
      }
      if (synth->count("--beta")) {
        rc.set("synth.beta_lo", num_str(beta));
        rc.set("synth.beta_hi", num_str(beta));
      }
      rc.require_known(kSynthKeys);
      return cmd_synth(rc, out_dir);
    }
    if (*train_cmd) {
      if (train_cmd->count("--variant")) rc.set("train.variant", variant);
      if (train_cmd->count("--steps")) rc.set("train.steps", std::to_string(steps));
      if (train_cmd->count("--seed")) rc.set("train.seed", std::to_string(seed));
      if (train_cmd->count("--lr")) rc.set("train.lr", num_str(lr));
      if (train_cmd->count("--batch")) rc.set("train.batch", std::to_string(batch));
      if (train_cmd->count("--workers")) rc.set("train.workers", std::to_string(workers));
      if (aug_flip) rc.set("train.aug_flip", "true");
      if (aug_crop) rc.set("train.aug_crop", "true");
      std::set<std::string> known = kModelKeys;
      known.insert(kLossKeys.begin(), kLossKeys.end());
      known.insert(kTrainKeys.begin(), kTrainKeys.end());
      rc.require_known(known);
      return cmd_train(rc, corpus_dir, out_dir);
    }
    if (*eval_cmd) {
      if (ckpt_path.empty() == restorer_name.empty())
        throw ConfigError("eval wants exactly one of --checkpoint or --restorer");
      return cmd_eval(rc, corpus_dir, ckpt_path, restorer_name, report_path, csv_path, workers);
    }
    if (*infer_cmd) return cmd_infer(rc, corpus_dir, ckpt_path, out_dir, workers);
    if (*masks_cmd) return cmd_dump_masks(rc, ckpt_path, image_path, out_dir);
    if (*grad_cmd) return cmd_gradcheck(gsize, channels, variant, samples, seed, tol);
    throw ConfigError("no subcommand");
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const dmgn::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const dmgn::ShapeError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const dmgn::IoError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const dmgn::NumericFault& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
