#pragma once

#include <map>

#include "dmgn/tensor.hpp"

namespace dmgn {

/**
 * Named parameter registry. Every learnable (or frozen) tensor of the model
 * lives here under a stable path name; insertion order is preserved so that
 * initialization, checkpoints and optimizer state all agree on layout.
 */
template <typename T>
struct ParamSet {
  struct Entry {
    Tensor<T> tensor;
    bool trainable = true;
  };

  std::vector<std::string> order;
  std::map<std::string, Entry> table;

  Tensor<T>& add(const std::string& name, Tensor<T> t, bool trainable = true) {
    if (table.count(name)) throw ConfigError("duplicate parameter path " + name);
    order.push_back(name);
    Entry& e = table[name];
    e.tensor = std::move(t);
    e.trainable = trainable;
    return e.tensor;
  }

  bool has(const std::string& name) const { return table.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = table.find(name);
    if (it == table.end()) throw ConfigError("unknown parameter path " + name);
    return it->second.tensor;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = table.find(name);
    if (it == table.end()) throw ConfigError("unknown parameter path " + name);
    return it->second.tensor;
  }

  template <typename Fn>
  void for_each(Fn fn) {
    for (const auto& name : order) fn(name, table.at(name));
  }
  template <typename Fn>
  void for_each(Fn fn) const {
    for (const auto& name : order) fn(name, table.at(name));
  }

  void watch_trainable(Tape<T>& tape) {
    for (const auto& name : order) {
      Entry& e = table.at(name);
      if (e.trainable) tape.watch(e.tensor);
    }
  }

  // Detach every tensor from its tape; required once the tape is destroyed.
  void unbind_all() {
    for (const auto& name : order) table.at(name).tensor.unbind();
  }

  int total_elements() const {
    int n = 0;
    for (const auto& name : order) n += table.at(name).tensor.numel();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& name : order) {
      const Entry& e = table.at(name);
      out.add(name, e.tensor.template cast<U>(), e.trainable);
    }
    return out;
  }
};

namespace init {

// Centered uniform scaled by fan-in (He-style for the ReLU paths).
template <typename T>
Tensor<T> he_uniform(Shape shape, int fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
void conv(ParamSet<T>& p, const std::string& name, int co, int ci, int k, Rng& rng,
          bool trainable = true) {
  p.add(name + ".w", he_uniform<T>({co, ci, k, k}, ci * k * k, rng), trainable);
  p.add(name + ".b", Tensor<T>(Shape{co}), trainable);
}

template <typename T>
void dense(ParamSet<T>& p, const std::string& name, int out, int in, Rng& rng) {
  p.add(name + ".w", he_uniform<T>({out, in}, in, rng));
  p.add(name + ".b", Tensor<T>(Shape{out}));
}

}  // namespace init

}  // namespace dmgn
