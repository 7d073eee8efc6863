// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace selftof {

// Dense row-major double tensor with shared storage. Copies are shallow;
// clone() for a deep copy. Ops never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        store_(std::make_shared<std::vector<double>>(count(shape_), 0.0)) {}

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.store_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from(std::vector<int> shape, std::vector<double> data) {
    if (count(shape) != data.size()) throw std::invalid_argument("Tensor::from: size mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.store_ = std::make_shared<std::vector<double>>(std::move(data));
    return t;
  }

  bool defined() const { return store_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  std::size_t size() const { return store_ ? store_->size() : 0; }

  double* data() { return store_->data(); }
  const double* data() const { return store_->data(); }

  double& operator[](std::size_t i) { return (*store_)[i]; }
  double operator[](std::size_t i) const { return (*store_)[i]; }

  // [H,W] accessors
  double& at(int i, int j) { return (*store_)[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return (*store_)[static_cast<size_t>(i) * shape_[1] + j]; }
  // [C,H,W] accessors
  double& at(int c, int i, int j) {
    return (*store_)[(static_cast<size_t>(c) * shape_[1] + i) * shape_[2] + j];
  }
  double at(int c, int i, int j) const {
    return (*store_)[(static_cast<size_t>(c) * shape_[1] + i) * shape_[2] + j];
  }
  // [F,C,kh,kw] accessors
  double& at(int f, int c, int i, int j) {
    return (*store_)[((static_cast<size_t>(f) * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }
  double at(int f, int c, int i, int j) const {
    return (*store_)[((static_cast<size_t>(f) * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.store_ = std::make_shared<std::vector<double>>(*store_);
    return t;
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != size()) throw std::invalid_argument("Tensor::reshaped: size mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.store_ = store_;
    return t;
  }

  double item() const {
    if (size() != 1) throw std::logic_error("Tensor::item: not a scalar");
    return (*store_)[0];
  }

  bool shares_storage(const Tensor& o) const { return store_ == o.store_; }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dim");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> store_;
};

// Pairwise (tree) summation; exact for constant power-of-two-sized blocks and
// more accurate than sequential accumulation on long runs.
double pairwise_sum(const double* x, std::size_t n);

// Mean and population standard deviation of a value list. Every zone-moment
// computation in the project goes through this one kernel so that sensor
// fitting and loss-side moments agree bitwise on identical pixel sets.
void values_mean_std(const double* vals, std::size_t n, double& mean, double& stddev);

// Mean and population standard deviation of a 2D block of img (row-major).
void block_mean_std(const double* img, int width, int y0, int y1, int x0, int x1,
                    double& mean, double& stddev);

// Median with the even-count convention: average of the two middle values.
double median_of(std::vector<double> v);

}  // namespace selftof
