#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <utility>

#include "dmgn/common.hpp"

namespace dmgn {

using Shape = std::vector<int>;

inline int numel_of(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tape;

/**
 * Dense N-dimensional value grid with an optional gradient buffer.
 *
 * Images and feature maps use N,C,H,W extent order. Copying a Tensor copies
 * the handle, not the buffer; ops never mutate their inputs. A Tensor is
 * "tracked" once it carries a gradient buffer and a tape binding, either
 * because Tape::watch marked it as a leaf or because it was produced by a
 * primitive whose inputs were tracked.
 */
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(static_cast<size_t>(numel_of(shape_)), T(0))) {}

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (static_cast<int>(values.size()) != numel_of(shape))
      throw ShapeError("from(): " + std::to_string(values.size()) + " values for shape " +
                       shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int numel() const { return data_ ? static_cast<int>(data_->size()) : 0; }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  T& operator[](int i) { return (*data_)[static_cast<size_t>(i)]; }
  const T& operator[](int i) const { return (*data_)[static_cast<size_t>(i)]; }
  T value() const {
    if (numel() != 1) throw ShapeError("value(): tensor " + shape_str(shape_) + " is not scalar");
    return (*data_)[0];
  }

  bool tracked() const { return static_cast<bool>(grad_); }
  T* grad() { return grad_ ? grad_->data() : nullptr; }
  const T* grad() const { return grad_ ? grad_->data() : nullptr; }
  Tape<T>* tape() const { return tape_; }
  int node() const { return node_; }

  std::shared_ptr<std::vector<T>> shared_data() const { return data_; }
  std::shared_ptr<std::vector<T>> shared_grad() const { return grad_; }

  // Same buffer, no autodiff state. Used to cut a value out of the graph.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  // Same buffer viewed under a different shape, untracked.
  Tensor with_shape(Shape shape) const {
    if (numel_of(shape) != numel())
      throw ShapeError("with_shape: " + shape_str(shape_) + " to " + shape_str(shape) +
                       " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  // Fresh deep copy of the values, untracked.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(static_cast<size_t>(numel()));
    for (int i = 0; i < numel(); ++i) v[static_cast<size_t>(i)] = static_cast<U>((*data_)[i]);
    return Tensor<U>::from(shape_, std::move(v));
  }

  // Binds this tensor to a tape and allocates a zeroed gradient buffer.
  // Called by Tape::watch for leaves and by primitives for their outputs.
  void bind(Tape<T>* tape, int node_id = -1) {
    tape_ = tape;
    node_ = node_id;
    if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
  }

  // Drops the autodiff state. Must be called on watched leaves once their
  // tape is gone, or the next op would record onto a dead tape.
  void unbind() {
    tape_ = nullptr;
    node_ = -1;
    grad_.reset();
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

/**
 * Ordered record of executed primitives for one forward pass.
 *
 * Nodes are appended in execution order, so every node's parents precede it
 * and backward() is a single reverse sweep. A tape supports exactly one
 * backward pass; leaves that the loss never reaches keep their zero
 * gradient. A tape and the tensors recorded on it belong to one worker at a
 * time.
 */
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Marks a leaf (typically a parameter or an input under test) so that
  // backward() accumulates into its gradient buffer, which starts at zero.
  void watch(Tensor<T>& t) {
    t.bind(this);
    t.zero_grad();
  }

  int record(std::vector<int> parents, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(parents), std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(Tensor<T>& loss) {
    if (consumed_) throw NumericFault("backward called twice on the same tape");
    if (loss.tape() != this) throw NumericFault("loss tensor does not live on this tape");
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    consumed_ = true;
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->backward) it->backward();
  }

 private:
  struct Node {
    std::vector<int> parents;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Forward outputs must stay finite; a NaN/Inf anywhere is a hard error so
// that faults surface at the op that produced them.
template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  const T* p = t.data();
  int n = t.numel();
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(p[i]))
      throw NumericFault(std::string(op) + " produced non-finite value at flat index " +
                         std::to_string(i));
  }
}

}  // namespace dmgn
