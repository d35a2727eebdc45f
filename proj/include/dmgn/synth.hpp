#pragma once

#include <array>
#include <cstdio>
#include <map>
#include <string>

#include "dmgn/tensor.hpp"

// Procedural training data: smooth random backgrounds and three
// physically-motivated superimposition models. Every triple satisfies
// I = compose(B_GT, R_GT, params) bit-exactly and all images stay in [0,1].

namespace dmgn {

enum class Kind { reflection, rain, haze };

inline std::string kind_name(Kind k) {
  switch (k) {
    case Kind::reflection: return "reflection";
    case Kind::rain: return "rain";
    case Kind::haze: return "haze";
  }
  throw ConfigError("bad corruption kind");
}

inline Kind kind_from_name(const std::string& s) {
  if (s == "reflection") return Kind::reflection;
  if (s == "rain") return Kind::rain;
  if (s == "haze") return Kind::haze;
  throw ConfigError("unknown corruption kind '" + s + "'");
}

// (input, background ground truth, noise ground truth), all [3,H,W] in [0,1],
// plus the synthesis parameters that reproduce input from the other two.
struct ImageTriple {
  std::string id;
  Kind kind = Kind::reflection;
  Tensor<float> input;       // I
  Tensor<float> background;  // B_GT
  Tensor<float> noise;       // R_GT
  std::map<std::string, double> params;
};

struct SynthesisConfig {
  Kind kind = Kind::reflection;
  uint64_t seed = 1;
  int size = 32;
  int count = 16;
  // reflection: blend alpha and reflection blur sigma, sampled per triple
  double alpha_lo = 0.6, alpha_hi = 0.85;
  double sigma_lo = 1.0, sigma_hi = 3.0;
  // rain: streak geometry, angle measured from the x axis in degrees
  int streaks_lo = 20, streaks_hi = 60;
  double streak_len_lo = 6.0, streak_len_hi = 16.0;
  double angle_lo = 75.0, angle_hi = 105.0;
  double intensity_lo = 0.15, intensity_hi = 0.5;
  // haze: scattering coefficient, airlight range, depth field scale
  double beta_lo = 0.4, beta_hi = 1.2;
  double airlight_lo = 0.7, airlight_hi = 1.0;
  double depth_scale = 3.0;

  void validate() const {
    if (size < 16) throw ConfigError("image size must be >= 16");
    if (count < 0) throw ConfigError("count must be >= 0");
    if (alpha_lo < 0 || alpha_hi > 1 || alpha_lo > alpha_hi)
      throw ConfigError("alpha range must sit inside [0,1]");
    if (sigma_lo < 0 || sigma_lo > sigma_hi) throw ConfigError("bad sigma range");
    if (streaks_lo < 0 || streaks_lo > streaks_hi) throw ConfigError("bad streak count range");
    if (intensity_lo < 0 || intensity_hi > 1 || intensity_lo > intensity_hi)
      throw ConfigError("bad streak intensity range");
    if (beta_lo < 0 || beta_lo > beta_hi) throw ConfigError("beta must be >= 0");
    if (airlight_lo < 0 || airlight_hi > 1 || airlight_lo > airlight_hi)
      throw ConfigError("airlight range must sit inside [0,1]");
    if (depth_scale <= 0) throw ConfigError("depth scale must be > 0");
  }
};

namespace detail {

// Multi-octave value noise in [0,1]: random lattices, bilinear interpolation,
// geometric amplitude falloff.
inline std::vector<float> value_noise(Rng& rng, int h, int w, int octaves) {
  std::vector<float> acc(static_cast<size_t>(h) * w, 0.0f);
  float total_amp = 0.0f;
  for (int o = 0; o < octaves; ++o) {
    const int res = 3 << o;
    const float amp = std::pow(0.55f, static_cast<float>(o));
    total_amp += amp;
    std::vector<float> grid(static_cast<size_t>(res + 1) * (res + 1));
    for (auto& g : grid) g = static_cast<float>(rng.uniform());
    for (int y = 0; y < h; ++y) {
      const float fy = static_cast<float>(y) / static_cast<float>(h) * res;
      const int y0 = static_cast<int>(fy);
      const float ty = fy - y0;
      for (int x = 0; x < w; ++x) {
        const float fx = static_cast<float>(x) / static_cast<float>(w) * res;
        const int x0 = static_cast<int>(fx);
        const float tx = fx - x0;
        const float v00 = grid[static_cast<size_t>(y0) * (res + 1) + x0];
        const float v01 = grid[static_cast<size_t>(y0) * (res + 1) + x0 + 1];
        const float v10 = grid[static_cast<size_t>(y0 + 1) * (res + 1) + x0];
        const float v11 = grid[static_cast<size_t>(y0 + 1) * (res + 1) + x0 + 1];
        const float v = (v00 * (1 - tx) + v01 * tx) * (1 - ty) + (v10 * (1 - tx) + v11 * tx) * ty;
        acc[static_cast<size_t>(y) * w + x] += amp * v;
      }
    }
  }
  for (auto& v : acc) v /= total_amp;
  return acc;
}

}  // namespace detail

// Smooth multi-octave random field with 2..6 soft-edged rectangles and discs
// composited on top. Deterministic in the seed; values in [0,1].
inline Tensor<float> gen_background(uint64_t seed, int h, int w) {
  if (h < 16 || w < 16)
    throw ConfigError("gen_background: size " + std::to_string(h) + "x" + std::to_string(w) +
                      " too small (min 16x16)");
  Rng rng(seed);
  auto lum = detail::value_noise(rng, h, w, 4);
  std::vector<std::vector<float>> tint(3);
  for (int c = 0; c < 3; ++c) tint[static_cast<size_t>(c)] = detail::value_noise(rng, h, w, 3);

  Tensor<float> img(Shape{3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h * w; ++i)
      img[c * h * w + i] =
          0.15f + 0.7f * (0.65f * lum[static_cast<size_t>(i)] +
                          0.35f * tint[static_cast<size_t>(c)][static_cast<size_t>(i)]);

  const int shapes = rng.uniform_int(2, 6);
  for (int s = 0; s < shapes; ++s) {
    const bool disc = rng.uniform() < 0.5;
    const float cx = static_cast<float>(rng.uniform(0.1, 0.9)) * w;
    const float cy = static_cast<float>(rng.uniform(0.1, 0.9)) * h;
    const float rx = static_cast<float>(rng.uniform(0.08, 0.3)) * w;
    const float ry = disc ? rx : static_cast<float>(rng.uniform(0.08, 0.3)) * h;
    const float opacity = static_cast<float>(rng.uniform(0.35, 0.85));
    float color[3];
    for (auto& c : color) c = static_cast<float>(rng.uniform());
    const float edge = 1.5f;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float a;
        if (disc) {
          const float d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
          a = std::clamp((rx - d) / edge, 0.0f, 1.0f);
        } else {
          const float dx = rx - std::abs(x - cx);
          const float dy = ry - std::abs(y - cy);
          a = std::clamp(std::min(dx, dy) / edge, 0.0f, 1.0f);
        }
        if (a <= 0.0f) continue;
        a *= opacity;
        for (int c = 0; c < 3; ++c) {
          float& px = img[(c * h + y) * w + x];
          px = px * (1.0f - a) + color[c] * a;
        }
      }
  }
  for (int i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
  return img;
}

// Separable Gaussian blur with replicated borders; sigma 0 is the identity.
// Kernel radius is ceil(3*sigma), normalized to sum 1.
inline Tensor<float> gaussian_blur(const Tensor<float>& img, double sigma) {
  if (sigma < 0) throw ConfigError("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return img.clone();
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<size_t>(i + r)];
  }
  for (auto& v : k) v /= sum;

  Tensor<float> tmp(img.shape()), out(img.shape());
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[static_cast<size_t>(i + r)] * img[(c * H + y) * W + std::clamp(x + i, 0, W - 1)];
        tmp[(c * H + y) * W + x] = static_cast<float>(acc);
      }
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[static_cast<size_t>(i + r)] * tmp[(c * H + std::clamp(y + i, 0, H - 1)) * W + x];
        out[(c * H + y) * W + x] = static_cast<float>(acc);
      }
  return out;
}

// I = alpha*B + (1-alpha)*blur(R, sigma). The stored noise layer is the
// blurred, (1-alpha)-scaled reflection, so I = alpha*B + R_GT exactly.
inline ImageTriple synth_reflection(const Tensor<float>& B, const Tensor<float>& R, double alpha,
                                    double sigma) {
  if (B.shape() != R.shape())
    throw ShapeError("synth_reflection: background " + shape_str(B.shape()) + " vs reflection " +
                     shape_str(R.shape()));
  if (alpha < 0 || alpha > 1) throw ConfigError("synth_reflection: alpha must be in [0,1]");
  ImageTriple t;
  t.kind = Kind::reflection;
  t.background = B.clone();
  t.noise = gaussian_blur(R, sigma);
  for (int i = 0; i < t.noise.numel(); ++i)
    t.noise[i] = static_cast<float>((1.0 - alpha) * t.noise[i]);
  t.input = Tensor<float>(B.shape());
  for (int i = 0; i < B.numel(); ++i)
    t.input[i] = static_cast<float>(alpha * B[i]) + t.noise[i];
  t.params["alpha"] = alpha;
  t.params["sigma"] = sigma;
  return t;
}

struct Streak {
  double cx, cy;      // center, pixels
  double angle_rad;   // from the x axis
  double length;      // pixels
  double intensity;   // peak additive brightness
};

// Anti-aliased streak layer: per pixel, intensity * max(0, 1 - d) where d is
// the distance to the segment. Streaks combine by max, so the layer never
// exceeds the largest intensity.
inline Tensor<float> render_streaks(int h, int w, const std::vector<Streak>& streaks) {
  Tensor<float> layer(Shape{h, w});
  for (const Streak& s : streaks) {
    const double hx = 0.5 * s.length * std::cos(s.angle_rad);
    const double hy = 0.5 * s.length * std::sin(s.angle_rad);
    const double x0 = s.cx - hx, y0 = s.cy - hy, x1 = s.cx + hx, y1 = s.cy + hy;
    const int xa = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - 2)));
    const int xb = std::min(w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + 2)));
    const int ya = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - 2)));
    const int yb = std::min(h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + 2)));
    const double vx = x1 - x0, vy = y1 - y0;
    const double len2 = vx * vx + vy * vy;
    for (int y = ya; y <= yb; ++y)
      for (int x = xa; x <= xb; ++x) {
        double t = len2 > 0 ? ((x - x0) * vx + (y - y0) * vy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double dx = x - (x0 + t * vx), dy = y - (y0 + t * vy);
        const double d = std::sqrt(dx * dx + dy * dy);
        const double c = s.intensity * std::max(0.0, 1.0 - d);
        float& px = layer[y * w + x];
        px = std::max(px, static_cast<float>(c));
      }
  }
  return layer;
}

// I = min(B + S, 1) with the streak layer replicated over channels as R_GT.
inline ImageTriple synth_rain(const Tensor<float>& B, const std::vector<Streak>& streaks) {
  const int H = B.dim(1), W = B.dim(2);
  ImageTriple t;
  t.kind = Kind::rain;
  t.background = B.clone();
  Tensor<float> layer = render_streaks(H, W, streaks);
  t.noise = Tensor<float>(B.shape());
  t.input = Tensor<float>(B.shape());
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < H * W; ++i) {
      t.noise[c * H * W + i] = layer[i];
      t.input[c * H * W + i] = std::min(1.0f, B[c * H * W + i] + layer[i]);
    }
  t.params["count"] = static_cast<double>(streaks.size());
  return t;
}

// Smooth positive depth field in (0, depth_scale], deterministic in the seed.
inline Tensor<float> gen_depth_field(uint64_t depth_seed, int h, int w, double depth_scale) {
  Rng rng(depth_seed ^ 0x9e3779b97f4a7c15ull);
  auto field = detail::value_noise(rng, h, w, 3);
  Tensor<float> d(Shape{h, w});
  for (int i = 0; i < h * w; ++i)
    d[i] = static_cast<float>(depth_scale * (0.15 + 0.85 * field[static_cast<size_t>(i)]));
  return d;
}

// Atmospheric scattering: t = exp(-beta*d), I = J*t + A*(1-t). The stored
// noise layer is the airlight term A*(1-t).
inline ImageTriple synth_haze(const Tensor<float>& J, double beta, uint64_t depth_seed,
                              const std::array<double, 3>& A, double depth_scale = 3.0) {
  if (beta < 0) throw ConfigError("synth_haze: beta must be >= 0");
  for (double a : A)
    if (a < 0 || a > 1) throw ConfigError("synth_haze: airlight components must be in [0,1]");
  const int H = J.dim(1), W = J.dim(2);
  Tensor<float> d = gen_depth_field(depth_seed, H, W, depth_scale);
  ImageTriple t;
  t.kind = Kind::haze;
  t.background = J.clone();
  t.noise = Tensor<float>(J.shape());
  t.input = Tensor<float>(J.shape());
  for (int i = 0; i < H * W; ++i) {
    const double tr = std::exp(-beta * static_cast<double>(d[i]));
    for (int c = 0; c < 3; ++c) {
      const float air = static_cast<float>(A[static_cast<size_t>(c)] * (1.0 - tr));
      t.noise[c * H * W + i] = air;
      t.input[c * H * W + i] = static_cast<float>(J[c * H * W + i] * tr) + air;
    }
  }
  t.params["beta"] = beta;
  t.params["depth_seed"] = static_cast<double>(depth_seed);
  t.params["depth_scale"] = depth_scale;
  t.params["a_r"] = A[0];
  t.params["a_g"] = A[1];
  t.params["a_b"] = A[2];
  return t;
}

// Re-applies the stored forward model to (B_GT, R_GT, params). Bit-exact
// against the recorded input for freshly synthesized triples.
inline Tensor<float> recompose(const ImageTriple& t) {
  Tensor<float> I(t.background.shape());
  const int n = I.numel();
  switch (t.kind) {
    case Kind::reflection: {
      const float alpha = static_cast<float>(t.params.at("alpha"));
      for (int i = 0; i < n; ++i)
        I[i] = static_cast<float>(static_cast<double>(alpha) * t.background[i]) + t.noise[i];
      break;
    }
    case Kind::rain:
      for (int i = 0; i < n; ++i) I[i] = std::min(1.0f, t.background[i] + t.noise[i]);
      break;
    case Kind::haze: {
      const int H = t.background.dim(1), W = t.background.dim(2);
      Tensor<float> d = gen_depth_field(static_cast<uint64_t>(t.params.at("depth_seed")), H, W,
                                        t.params.at("depth_scale"));
      const double beta = t.params.at("beta");
      for (int i = 0; i < H * W; ++i) {
        const double tr = std::exp(-beta * static_cast<double>(d[i]));
        for (int c = 0; c < 3; ++c)
          I[c * H * W + i] =
              static_cast<float>(t.background[c * H * W + i] * tr) + t.noise[c * H * W + i];
      }
      break;
    }
  }
  return I;
}

// Draws one triple per index from the config's parameter ranges.
inline ImageTriple synth_triple(const SynthesisConfig& cfg, int index) {
  cfg.validate();
  Rng rng(cfg.seed * 0x100000001b3ull + static_cast<uint64_t>(index) * 0x27d4eb2f165667c5ull + 1);
  const uint64_t bseed = rng.engine()();
  Tensor<float> B = gen_background(bseed, cfg.size, cfg.size);
  ImageTriple t;
  switch (cfg.kind) {
    case Kind::reflection: {
      const uint64_t rseed = rng.engine()();
      Tensor<float> R = gen_background(rseed, cfg.size, cfg.size);
      const double alpha = rng.uniform(cfg.alpha_lo, cfg.alpha_hi);
      const double sigma = rng.uniform(cfg.sigma_lo, cfg.sigma_hi);
      t = synth_reflection(B, R, alpha, sigma);
      t.params["bseed"] = static_cast<double>(bseed);
      t.params["rseed"] = static_cast<double>(rseed);
      break;
    }
    case Kind::rain: {
      const int count = rng.uniform_int(cfg.streaks_lo, cfg.streaks_hi);
      std::vector<Streak> streaks;
      streaks.reserve(static_cast<size_t>(count));
      for (int i = 0; i < count; ++i) {
        Streak s;
        s.cx = rng.uniform(0.0, cfg.size);
        s.cy = rng.uniform(0.0, cfg.size);
        s.angle_rad = rng.uniform(cfg.angle_lo, cfg.angle_hi) * (3.14159265358979323846 / 180.0);
        s.length = rng.uniform(cfg.streak_len_lo, cfg.streak_len_hi);
        s.intensity = rng.uniform(cfg.intensity_lo, cfg.intensity_hi);
        streaks.push_back(s);
      }
      t = synth_rain(B, streaks);
      t.params["bseed"] = static_cast<double>(bseed);
      break;
    }
    case Kind::haze: {
      const double beta = rng.uniform(cfg.beta_lo, cfg.beta_hi);
      const uint64_t dseed = rng.engine()();
      std::array<double, 3> A;
      const double base = rng.uniform(cfg.airlight_lo, cfg.airlight_hi);
      for (auto& a : A) a = std::clamp(base + rng.uniform(-0.03, 0.03), 0.0, 1.0);
      t = synth_haze(B, beta, dseed, A, cfg.depth_scale);
      t.params["bseed"] = static_cast<double>(bseed);
      break;
    }
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  t.id = buf;
  return t;
}

}  // namespace dmgn
