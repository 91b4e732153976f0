#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "selfgan/core.hpp"

namespace selfgan {

SELFGAN_DEFINE_ERROR(StaleGradient);
SELFGAN_DEFINE_ERROR(NonFiniteLoss);

/// A named rectangular slice of a flat parameter vector.
struct Block {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

/// Flat trainable values plus a gradient buffer of the same length.
class ParameterVector {
 public:
  ParameterVector() = default;

  /// Appends a block and returns its descriptor.
  Block add_block(std::string name, std::size_t rows, std::size_t cols) {
    Block b{std::move(name), values_.size(), rows, cols};
    values_.resize(values_.size() + b.size(), 0.0);
    grads_.resize(values_.size(), 0.0);
    blocks_.push_back(b);
    return b;
  }

  std::size_t size() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> grads() noexcept { return grads_; }
  std::span<const double> grads() const noexcept { return grads_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }

  std::span<double> block(const Block& b) noexcept { return {values_.data() + b.offset, b.size()}; }
  std::span<const double> block(const Block& b) const noexcept {
    return {values_.data() + b.offset, b.size()};
  }

  void zero_grad() {
    std::fill(grads_.begin(), grads_.end(), 0.0);
    grads_fresh_ = false;
  }
  /// Marks the gradient buffer as holding the result of a backward pass.
  void mark_backward() noexcept { grads_fresh_ = true; }
  bool grads_fresh() const noexcept { return grads_fresh_; }

  /// Plain gradient descent: values -= lr * grads.
  void sgd_step(double lr) {
    if (lr == 0.0) return;
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= lr * grads_[i];
  }

  void assign(std::span<const double> v) {
    if (v.size() != values_.size())
      throw InvariantViolation("parameter count mismatch: expected " +
                               std::to_string(values_.size()) + ", got " +
                               std::to_string(v.size()));
    std::copy(v.begin(), v.end(), values_.begin());
  }

 private:
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<Block> blocks_;
  bool grads_fresh_ = false;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace selfgan
