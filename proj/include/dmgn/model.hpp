#pragma once

#include "dmgn/ops.hpp"
#include "dmgn/params.hpp"

// The restoration network. A frozen convolutional pyramid plus a learnable
// head embed the input; a spatial-attention separator splits the embedding
// into background and noise constituents; two encoder-decoder generators
// built from residual masking cells synthesize a coarse background and a
// noise image; a constant-resolution refiner fuses both with the input
// features to produce the final background. The refiner's cell masks can be
// regularized by a noise distribution map, and its source streams by
// channel attention, depending on the active variant.

namespace dmgn {

struct ModelConfig {
  int width = 16;            // base channel width C
  int stage_cells = 1;       // masking cells per generator stage (4 stages)
  int refine_cells = 3;      // cells in the refiner
  int pyramid_levels = 3;    // frozen pyramid depth; level l has 8<<l channels
  double alpha_fuse = 0.5;   // mask fusion strength
  double decay_q = 0.9;      // per-cell decay of the fusion term
  int se_ratio = 4;          // squeeze-excite reduction
  uint64_t pyramid_seed = 1234;

  void validate() const {
    if (width < 1 || stage_cells < 1 || refine_cells < 1 || pyramid_levels < 1 || se_ratio < 1)
      throw ConfigError("model counts must be >= 1");
    if (alpha_fuse < 0 || alpha_fuse > 1) throw ConfigError("alpha_fuse must be in [0,1]");
    if (decay_q < 0 || decay_q > 1) throw ConfigError("decay_q must be in [0,1]");
  }

  int pyramid_width(int level) const { return 8 << level; }

  int hypercolumn_channels() const {
    int c = 3;
    for (int l = 0; l < pyramid_levels; ++l) c += pyramid_width(l);
    return c;
  }

  int divisor() const { return 1 << (pyramid_levels - 1); }
};

// Which mechanisms are wired in. The four ablation variants plus the
// coarse-only model all run through the same forward path.
struct VariantSpec {
  std::string name = "full";
  bool masked_cells = true;  // residual masking cells vs plain residual conv blocks
  bool noise_branch = true;  // synthesize the noise image in the coarse phase
  bool ndm = true;           // regularize refiner masks with the background distribution map
  bool aca = true;           // channel-attention regularization of the refiner sources
  bool refine_phase = true;  // false: the coarse background is the final output

  static VariantSpec from_name(const std::string& name) {
    VariantSpec v;
    v.name = name;
    if (name == "base") {
      v.masked_cells = false;
      v.noise_branch = false;
      v.ndm = false;
      v.aca = false;
    } else if (name == "rdmc") {
      v.noise_branch = false;
      v.ndm = false;
      v.aca = false;
    } else if (name == "r-rdmc") {
      v.aca = false;
    } else if (name == "coarse") {
      v.refine_phase = false;
      v.ndm = false;
      v.aca = false;
    } else if (name != "full") {
      throw ConfigError("unknown variant '" + name +
                        "' (want base, rdmc, r-rdmc, coarse or full)");
    }
    return v;
  }
};

// Gating masks recorded during one forward pass, in application order.
template <typename T>
struct MaskTrace {
  struct Entry {
    std::string generator;
    int cell_index = 0;  // 1-based within its generator
    Tensor<T> mask;
  };
  std::vector<Entry> entries;
  Tensor<T> separator_map;  // A from the separator
  Tensor<T> noise_map;      // A_r when the refiner uses mask regularization
};

template <typename T>
struct ForwardOut {
  Tensor<T> coarse_background;
  Tensor<T> noise;  // zeros for variants without the noise branch
  Tensor<T> refined_background;
  MaskTrace<T> trace;
};

// ---------------------------------------------------------------------------
// Parameter construction

template <typename T>
ParamSet<T> build_model_params(const ModelConfig& cfg, const VariantSpec& v, uint64_t seed) {
  cfg.validate();
  ParamSet<T> p;
  const int C = cfg.width;

  {
    Rng pyr_rng(cfg.pyramid_seed);
    int ci = 3;
    for (int l = 0; l < cfg.pyramid_levels; ++l) {
      init::conv(p, "head.pyr" + std::to_string(l), cfg.pyramid_width(l), ci, 3, pyr_rng,
                 /*trainable=*/false);
      ci = cfg.pyramid_width(l);
    }
  }

  Rng rng(seed);
  init::conv(p, "head.proj0", C, cfg.hypercolumn_channels(), 3, rng);
  init::conv(p, "head.proj1", C, C, 3, rng);

  init::conv(p, "sep.att0", C, C, 3, rng);
  init::conv(p, "sep.att1", C, C, 1, rng);

  auto add_cell = [&](const std::string& prefix, int width) {
    init::conv(p, prefix + ".h0", width, width, 3, rng);
    init::conv(p, prefix + ".h1", width, width, 3, rng);
    if (v.masked_cells) {
      init::conv(p, prefix + ".m0", width, width, 1, rng);
      init::conv(p, prefix + ".m1", width, width, 1, rng);
    }
  };
  auto add_generator = [&](const std::string& g) {
    init::conv(p, g + ".enc0.down", 2 * C, C, 3, rng);
    for (int j = 0; j < cfg.stage_cells; ++j) add_cell(g + ".enc0.cell" + std::to_string(j), 2 * C);
    init::conv(p, g + ".enc1.down", 4 * C, 2 * C, 3, rng);
    for (int j = 0; j < cfg.stage_cells; ++j) add_cell(g + ".enc1.cell" + std::to_string(j), 4 * C);
    init::conv(p, g + ".dec0.mix", 2 * C, 4 * C + 2 * C, 3, rng);
    for (int j = 0; j < cfg.stage_cells; ++j) add_cell(g + ".dec0.cell" + std::to_string(j), 2 * C);
    init::conv(p, g + ".dec1.mix", C, 2 * C + C, 3, rng);
    for (int j = 0; j < cfg.stage_cells; ++j) add_cell(g + ".dec1.cell" + std::to_string(j), C);
    init::conv(p, g + ".out", 3, C, 3, rng);
  };

  add_generator("gb");
  if (v.noise_branch) add_generator("gr");

  if (v.refine_phase) {
    if (v.aca) {
      const int hidden = std::max(1, C / cfg.se_ratio);
      for (const char* side : {"ref.aca_b", "ref.aca_r"}) {
        init::conv(p, std::string(side) + ".conv", 1, 1, 5, rng);
        p.add(std::string(side) + ".sharp", Tensor<T>::full({C}, T(1)));
        init::dense(p, std::string(side) + ".se.fc0", hidden, C, rng);
        init::dense(p, std::string(side) + ".se.fc1", C, hidden, rng);
      }
    }
    if (v.ndm) {
      init::conv(p, "ref.ndm0", C, 2 * C, 3, rng);
      init::conv(p, "ref.ndm1", 1, C, 1, rng);
    }
    init::conv(p, "ref.proj", C, 3 * C, 3, rng);
    for (int n = 0; n < cfg.refine_cells; ++n) add_cell("ref.cell" + std::to_string(n), C);
    init::conv(p, "ref.out", 3, C, 3, rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Network pieces

namespace netdetail {

template <typename T>
Tensor<T> conv_layer(const Tensor<T>& x, const ParamSet<T>& p, const std::string& name,
                     int stride, int pad) {
  return conv2d(x, p.at(name + ".w"), p.at(name + ".b"), stride, pad);
}

}  // namespace netdetail

// Hypercolumn feature head: frozen pyramid at 3 scales, nearest-upsampled to
// input resolution, concatenated with the image, then a learnable two-layer
// projection to the working width.
template <typename T>
Tensor<T> feature_head(const Tensor<T>& img, const ParamSet<T>& p, const ModelConfig& cfg) {
  if (img.rank() != 4 || img.dim(1) != 3)
    throw ShapeError("feature_head: input must be N,3,H,W, got " + shape_str(img.shape()));
  const int H = img.dim(2), W = img.dim(3), d = cfg.divisor();
  if (H % d != 0 || W % d != 0)
    throw ShapeError("feature_head: " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by " + std::to_string(d));

  std::vector<Tensor<T>> streams;
  streams.push_back(img);
  Tensor<T> x = img;
  for (int l = 0; l < cfg.pyramid_levels; ++l) {
    x = relu(netdetail::conv_layer(x, p, "head.pyr" + std::to_string(l), l == 0 ? 1 : 2, 1));
    Tensor<T> up = x;
    for (int u = 0; u < l; ++u) up = upsample_nearest2(up);
    streams.push_back(up);
  }
  Tensor<T> hyper = concat_channels(std::span<const Tensor<T>>(streams.data(), streams.size()));
  Tensor<T> f = relu(netdetail::conv_layer(hyper, p, "head.proj0", 1, 1));
  return relu(netdetail::conv_layer(f, p, "head.proj1", 1, 1));
}

// Frozen pyramid activations only, for the perceptual distance.
template <typename T>
std::vector<Tensor<T>> pyramid_features(const Tensor<T>& img, const ParamSet<T>& p,
                                        const ModelConfig& cfg) {
  std::vector<Tensor<T>> levels;
  Tensor<T> x = img;
  for (int l = 0; l < cfg.pyramid_levels; ++l) {
    x = relu(netdetail::conv_layer(x, p, "head.pyr" + std::to_string(l), l == 0 ? 1 : 2, 1));
    levels.push_back(x);
  }
  return levels;
}

template <typename T>
struct SeparatorOut {
  Tensor<T> background;  // F_b
  Tensor<T> noise;       // F_r = F - F_b
  Tensor<T> map;         // A
};

// F_b = F (.) A, F_r = F - F_b, so F_b + F_r == F by construction.
template <typename T>
SeparatorOut<T> split_by_map(const Tensor<T>& f, const Tensor<T>& a) {
  SeparatorOut<T> out;
  out.map = a;
  out.background = mul(f, a);
  out.noise = sub(f, out.background);
  return out;
}

// Spatial attention split with A = sigmoid(tanh(conv1x1(relu(conv3x3(F))))).
template <typename T>
SeparatorOut<T> separate(const Tensor<T>& f, const ParamSet<T>& p) {
  Tensor<T> pre = tanh_op(
      netdetail::conv_layer(relu(netdetail::conv_layer(f, p, "sep.att0", 1, 1)), p, "sep.att1", 1, 0));
  return split_by_map(f, sigmoid(pre));
}

// Eq. of the fused mask: (m + alpha*q^(n-1)*A_b) / (1 + alpha*q^(n-1)).
// Both inputs share a shape and live in [0,1]; n is 1-based.
template <typename T>
Tensor<T> fuse_mask(const Tensor<T>& m, const Tensor<T>& a_b, int n, T alpha, T q) {
  detail::require_same_shape(m, a_b, "fuse_mask");
  if (n < 1) throw ConfigError("fuse_mask: cell index must be >= 1");
  const T c = alpha * std::pow(q, static_cast<T>(n - 1));
  return scale(add(m, scale(a_b, c)), T(1) / (T(1) + c));
}

template <typename T>
struct CellOut {
  Tensor<T> value;
  Tensor<T> mask;  // undefined for plain cells
};

// One operating cell over features X of the cell's width.
// Masked: Y = X + M(H(X)) (.) H(X) with H = conv3x3 -> relu -> conv3x3 and
// M = sigmoid(conv1x1 -> tanh -> conv1x1); plain: Y = X + H(X).
// When `fused_map` is given (refiner under mask regularization), the learned
// mask is blended with it via fuse_mask before gating, and the fused mask is
// what gets recorded.
template <typename T>
CellOut<T> masking_cell(const Tensor<T>& x, const ParamSet<T>& p, const std::string& prefix,
                        bool masked, const ModelConfig& cfg, const Tensor<T>* fused_map = nullptr,
                        int cell_index = 1) {
  if (x.rank() != 4 || x.dim(1) != p.at(prefix + ".h0.w").dim(1))
    throw ShapeError("masking_cell " + prefix + ": features " + shape_str(x.shape()) +
                     " do not match cell width " +
                     std::to_string(p.at(prefix + ".h0.w").dim(1)));
  Tensor<T> h = netdetail::conv_layer(relu(netdetail::conv_layer(x, p, prefix + ".h0", 1, 1)), p,
                                      prefix + ".h1", 1, 1);
  CellOut<T> out;
  if (!masked) {
    out.value = add(x, h);
    return out;
  }
  Tensor<T> mask = sigmoid(netdetail::conv_layer(
      tanh_op(netdetail::conv_layer(h, p, prefix + ".m0", 1, 0)), p, prefix + ".m1", 1, 0));
  if (fused_map)
    mask = fuse_mask(mask, *fused_map, cell_index, static_cast<T>(cfg.alpha_fuse),
                     static_cast<T>(cfg.decay_q));
  out.mask = mask;
  out.value = add(x, mul(mask, h));
  return out;
}

template <typename T>
struct CoarseOut {
  Tensor<T> image;
  std::vector<Tensor<T>> skips;
};

// Encoder-decoder generator: two stride-2 downsamplings and two
// nearest-upsamplings, operating cells at every stage, long-range skip
// concatenation between equal-size layers, sigmoid projection to an image.
// `use_skips=false` replaces the skip tensors with zeros (wiring checks).
template <typename T>
CoarseOut<T> coarse_generator(const Tensor<T>& f_x, const ParamSet<T>& p, const std::string& g,
                              const ModelConfig& cfg, bool masked, MaskTrace<T>* trace,
                              const std::string& tag, bool use_skips = true) {
  if (f_x.rank() != 4 || f_x.dim(1) != cfg.width)
    throw ShapeError("coarse_generator: features must be N," + std::to_string(cfg.width) +
                     ",H,W, got " + shape_str(f_x.shape()));
  int cell_no = 0;
  auto run_cells = [&](Tensor<T> x, const std::string& stage) {
    for (int j = 0; j < cfg.stage_cells; ++j) {
      auto cell =
          masking_cell<T>(x, p, g + "." + stage + ".cell" + std::to_string(j), masked, cfg);
      x = cell.value;
      if (masked && trace)
        trace->entries.push_back({tag, ++cell_no, cell.mask});
      else if (masked)
        ++cell_no;
    }
    return x;
  };
  auto skip_or_zero = [&](const Tensor<T>& s) {
    return use_skips ? s : Tensor<T>(s.shape()).detached();
  };

  CoarseOut<T> out;
  const Tensor<T>& s0 = f_x;
  Tensor<T> x = relu(netdetail::conv_layer(f_x, p, g + ".enc0.down", 2, 1));
  Tensor<T> s1 = run_cells(x, "enc0");
  x = relu(netdetail::conv_layer(s1, p, g + ".enc1.down", 2, 1));
  x = run_cells(x, "enc1");
  x = concat_channels({upsample_nearest2(x), skip_or_zero(s1)});
  x = relu(netdetail::conv_layer(x, p, g + ".dec0.mix", 1, 1));
  x = run_cells(x, "dec0");
  x = concat_channels({upsample_nearest2(x), skip_or_zero(s0)});
  x = relu(netdetail::conv_layer(x, p, g + ".dec1.mix", 1, 1));
  x = run_cells(x, "dec1");
  out.image = sigmoid(netdetail::conv_layer(x, p, g + ".out", 1, 1));
  out.skips = {s0, s1};
  return out;
}

// Per-channel sharpened normalization: each channel goes through a shared
// 5x5 stride-2 conv + relu, then sigmoid(w_i * g) (.) g with a learned
// per-channel sharpness w_i.
template <typename T>
Tensor<T> aca_normalized(const Tensor<T>& feat, const ParamSet<T>& p, const std::string& prefix) {
  const int N = feat.dim(0), C = feat.dim(1), H = feat.dim(2), W = feat.dim(3);
  Tensor<T> per_channel = reshape(feat, {N * C, 1, H, W});
  Tensor<T> g = relu(conv2d(per_channel, p.at(prefix + ".conv.w"), p.at(prefix + ".conv.b"), 2, 2));
  g = reshape(g, {N, C, g.dim(2), g.dim(3)});
  return mul(sigmoid(channel_scale(g, p.at(prefix + ".sharp"))), g);
}

// Squeeze-excite pre-activation: global average pool, bottleneck dense+relu,
// expansion dense. The channel gates are sigmoid of this.
template <typename T>
Tensor<T> se_preactivation(const Tensor<T>& normalized, const ParamSet<T>& p,
                           const std::string& prefix) {
  Tensor<T> pooled = global_avg_pool(normalized);
  Tensor<T> hidden = relu(dense(pooled, p.at(prefix + ".se.fc0.w"), p.at(prefix + ".se.fc0.b")));
  return dense(hidden, p.at(prefix + ".se.fc1.w"), p.at(prefix + ".se.fc1.b"));
}

// Channel attention: gates a_i = sigmoid(SE(normalized)) in [0,1] rescale the
// *original* features channel by channel.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& feat, const ParamSet<T>& p, const std::string& prefix,
                            const ModelConfig&) {
  Tensor<T> gates = sigmoid(se_preactivation(aca_normalized(feat, p, prefix), p, prefix));
  return channel_scale(feat, gates);
}

template <typename T>
struct NdmOut {
  Tensor<T> noise_map;       // A_r, single channel
  Tensor<T> background_map;  // A_b = 1 - A_r
};

// Noise distribution map from the input features and the generated-noise
// features; single channel, broadcast over refiner channels by the caller.
template <typename T>
NdmOut<T> noise_distribution(const Tensor<T>& f_input, const Tensor<T>& f_noise,
                             const ParamSet<T>& p) {
  detail::require_same_shape(f_input, f_noise, "noise_distribution");
  Tensor<T> x = concat_channels({f_input, f_noise});
  Tensor<T> pre = tanh_op(netdetail::conv_layer(
      relu(netdetail::conv_layer(x, p, "ref.ndm0", 1, 1)), p, "ref.ndm1", 1, 0));
  NdmOut<T> out;
  out.noise_map = sigmoid(pre);
  out.background_map = sub(Tensor<T>::full(out.noise_map.shape(), T(1)), out.noise_map);
  return out;
}

// Refining generator: constant-resolution cell stack over the fused source
// streams (attended background constituent, negated attended noise features,
// coarse background features).
template <typename T>
Tensor<T> refine(const Tensor<T>& coarse_bg, const Tensor<T>& noise_img, const Tensor<T>& f_input,
                 const Tensor<T>& f_b, const ParamSet<T>& p, const ModelConfig& cfg,
                 const VariantSpec& v, MaskTrace<T>* trace) {
  const int N = f_b.dim(0), C = cfg.width, H = f_b.dim(2), W = f_b.dim(3);

  Tensor<T> f_noise;
  if (v.noise_branch) f_noise = feature_head(noise_img, p, cfg);

  Tensor<T> s_b = v.aca ? channel_attention(f_b, p, "ref.aca_b", cfg) : f_b;
  Tensor<T> s_r = (v.aca && v.noise_branch)
                      ? neg(channel_attention(f_noise, p, "ref.aca_r", cfg))
                      : Tensor<T>(Shape{N, C, H, W});
  Tensor<T> f_coarse = feature_head(coarse_bg, p, cfg);

  Tensor<T> x = relu(netdetail::conv_layer(concat_channels({s_b, s_r, f_coarse}), p, "ref.proj", 1, 1));

  Tensor<T> a_b_wide;
  if (v.ndm) {
    NdmOut<T> ndm = noise_distribution(f_input, f_noise, p);
    if (trace) trace->noise_map = ndm.noise_map;
    a_b_wide = repeat_channels(ndm.background_map, C);
  }
  for (int n = 1; n <= cfg.refine_cells; ++n) {
    auto cell = masking_cell<T>(x, p, "ref.cell" + std::to_string(n - 1), v.masked_cells, cfg,
                                v.ndm ? &a_b_wide : nullptr, n);
    x = cell.value;
    if (v.masked_cells && trace) trace->entries.push_back({"refine", n, cell.mask});
  }
  return sigmoid(netdetail::conv_layer(x, p, "ref.out", 1, 1));
}

// Full coarse-to-fine pass: head, separator, parallel coarse generators,
// refinement. Input [N,3,H,W] in [0,1] with H,W divisible by the pyramid
// factor; all outputs are images in [0,1] of the input size.
template <typename T>
ForwardOut<T> dmgn_forward(const Tensor<T>& input, const ParamSet<T>& p, const ModelConfig& cfg,
                           const VariantSpec& v) {
  ForwardOut<T> out;
  Tensor<T> f = feature_head(input, p, cfg);
  SeparatorOut<T> sep = separate(f, p);
  out.trace.separator_map = sep.map;

  out.coarse_background = coarse_generator(sep.background, p, "gb", cfg, v.masked_cells,
                                           &out.trace, "background")
                              .image;
  out.noise = v.noise_branch
                  ? coarse_generator(sep.noise, p, "gr", cfg, v.masked_cells, &out.trace, "noise")
                        .image
                  : Tensor<T>(input.shape());

  out.refined_background =
      v.refine_phase
          ? refine(out.coarse_background, out.noise, f, sep.background, p, cfg, v, &out.trace)
          : out.coarse_background;
  return out;
}

}  // namespace dmgn
