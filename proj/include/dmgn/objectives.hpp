#pragma once

#include "dmgn/model.hpp"

// Training objectives: pixel L1, perceptual distance over the frozen
// pyramid, and a conditional critic in Wasserstein form. The coarse phase is
// supervised by L1 + perceptual on both generated images; the refining phase
// adds the adversarial term. The critic never sees the coarse phase.

namespace dmgn {

template <typename T>
struct LossWeights {
  T refine_l1 = T(1);
  T coarse_l1 = T(0.5);
  T refine_perc = T(0.1);
  T coarse_perc = T(0.05);
  T refine_adv = T(0.01);

  void validate() const {
    if (refine_l1 < 0 || coarse_l1 < 0 || refine_perc < 0 || coarse_perc < 0 || refine_adv < 0)
      throw ConfigError("loss weights must be >= 0");
  }
};

// Mean absolute difference over all elements.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& y, const Tensor<T>& y_gt) {
  detail::require_same_shape(y, y_gt, "l1_loss");
  return mean_all(abs_op(sub(y, y_gt)));
}

// Sum over pyramid levels of the per-element mean absolute feature
// difference (1/(C_l*H_l*W_l) * ||f_l(Y) - f_l(Y_GT)||_1, averaged over the
// batch).
template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& y, const Tensor<T>& y_gt, const ParamSet<T>& p,
                          const ModelConfig& cfg) {
  detail::require_same_shape(y, y_gt, "perceptual_loss");
  auto fy = pyramid_features(y, p, cfg);
  auto fg = pyramid_features(y_gt, p, cfg);
  Tensor<T> total;
  for (size_t l = 0; l < fy.size(); ++l) {
    Tensor<T> level = mean_all(abs_op(sub(fy[l], fg[l])));
    total = total.defined() ? add(total, level) : level;
  }
  return total;
}

// Patch critic: three stride-2 conv blocks and a 1x1 linear head over the
// channel-concat of (candidate, condition). Output is a spatial score map
// with no squashing.
template <typename T>
ParamSet<T> build_disc_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet<T> p;
  const int C = cfg.width;
  init::conv(p, "disc.d0", 2 * C, 6, 3, rng);
  init::conv(p, "disc.d1", 4 * C, 2 * C, 3, rng);
  init::conv(p, "disc.d2", 8 * C, 4 * C, 3, rng);
  init::conv(p, "disc.head", 1, 8 * C, 1, rng);
  return p;
}

template <typename T>
Tensor<T> disc_forward(const Tensor<T>& candidate, const Tensor<T>& condition,
                       const ParamSet<T>& d) {
  detail::require_same_shape(candidate, condition, "disc_forward");
  Tensor<T> x = concat_channels({candidate, condition});
  x = relu(conv2d(x, d.at("disc.d0.w"), d.at("disc.d0.b"), 2, 1));
  x = relu(conv2d(x, d.at("disc.d1.w"), d.at("disc.d1.b"), 2, 1));
  x = relu(conv2d(x, d.at("disc.d2.w"), d.at("disc.d2.b"), 2, 1));
  return conv2d(x, d.at("disc.head.w"), d.at("disc.head.b"), 1, 0);
}

template <typename T>
struct AdvLosses {
  Tensor<T> gen;   // -E[D(B, I)]
  Tensor<T> disc;  // -E[D(B_GT, I)] + E[D(B, I)], B detached
};

template <typename T>
AdvLosses<T> adv_losses(const Tensor<T>& b, const Tensor<T>& b_gt, const Tensor<T>& input,
                        const ParamSet<T>& d) {
  AdvLosses<T> out;
  out.gen = neg(mean_all(disc_forward(b, input, d)));
  out.disc = add(neg(mean_all(disc_forward(b_gt, input, d))),
                 mean_all(disc_forward(detach(b), input, d)));
  return out;
}

// Critic stabilizer: clamp every trainable value into [-limit, limit].
template <typename T>
void clip_params(ParamSet<T>& p, T limit) {
  p.for_each([&](const std::string&, typename ParamSet<T>::Entry& e) {
    if (!e.trainable) return;
    Tensor<T>& t = e.tensor;
    for (int i = 0; i < t.numel(); ++i) t[i] = std::clamp(t[i], -limit, limit);
  });
}

template <typename T>
struct LossReport {
  Tensor<T> total;                    // tracked scalar, coarse + refine
  std::map<std::string, T> components;  // every term by name, unweighted values

  T at(const std::string& k) const {
    auto it = components.find(k);
    if (it == components.end()) throw ConfigError("no loss component '" + k + "'");
    return it->second;
  }
};

// Joint objective. Coarse terms apply to the coarse background and, when the
// variant generates one, the noise image; refine terms apply to the refined
// background and include the adversarial score. The component report carries
// the unweighted values; `total` is the weighted tracked sum. The critic is
// structurally absent from the coarse phase.
template <typename T>
LossReport<T> total_loss(const ForwardOut<T>& out, const Tensor<T>& b_gt, const Tensor<T>& r_gt,
                         const Tensor<T>& input, const ParamSet<T>& model_params,
                         const ParamSet<T>& disc_params, const ModelConfig& cfg,
                         const LossWeights<T>& weights, const VariantSpec& v) {
  weights.validate();
  LossReport<T> report;
  auto accumulate = [&](Tensor<T> term, T weight, const std::string& name) {
    report.components[name] = term.value();
    Tensor<T> weighted = scale(term, weight);
    report.total = report.total.defined() ? add(report.total, weighted) : weighted;
  };

  accumulate(l1_loss(out.coarse_background, b_gt), weights.coarse_l1, "coarse_l1_b");
  accumulate(perceptual_loss(out.coarse_background, b_gt, model_params, cfg), weights.coarse_perc,
             "coarse_perc_b");
  if (v.noise_branch) {
    accumulate(l1_loss(out.noise, r_gt), weights.coarse_l1, "coarse_l1_r");
    accumulate(perceptual_loss(out.noise, r_gt, model_params, cfg), weights.coarse_perc,
               "coarse_perc_r");
  }
  if (v.refine_phase) {
    accumulate(l1_loss(out.refined_background, b_gt), weights.refine_l1, "refine_l1");
    accumulate(perceptual_loss(out.refined_background, b_gt, model_params, cfg),
               weights.refine_perc, "refine_perc");
    accumulate(neg(mean_all(disc_forward(out.refined_background, input, disc_params))),
               weights.refine_adv, "refine_adv");
  }
  return report;
}

}  // namespace dmgn
