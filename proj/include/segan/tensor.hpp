#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <string>
#include <vector>

namespace segan {

/// Dense real tensor: a shape plus row-major double-precision storage.
/// Rank is dynamic; all numerics in the project run at double precision.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, Eigen::ArrayXd data);
  Tensor(std::vector<int> shape, std::initializer_list<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  Eigen::Index numel() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  double& operator[](Eigen::Index i) { return data_[i]; }
  double operator[](Eigen::Index i) const { return data_[i]; }

  Eigen::ArrayXd& array() { return data_; }
  const Eigen::ArrayXd& array() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  /// Value of a one-element tensor.
  double item() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const { return data_.isFinite().all(); }

  std::string shape_str() const;

  static Eigen::Index numel_of(const std::vector<int>& shape);

 private:
  std::vector<int> shape_;
  Eigen::ArrayXd data_;
};

/// Row-major flat offset helpers for the tensor ranks the project uses.
inline Eigen::Index idx2(int r, int c, int ncols) {
  return static_cast<Eigen::Index>(r) * ncols + c;
}
inline Eigen::Index idx3(int c, int h, int w, int H, int W) {
  return (static_cast<Eigen::Index>(c) * H + h) * W + w;
}
inline Eigen::Index idx4(int a, int b, int h, int w, int B, int H, int W) {
  return ((static_cast<Eigen::Index>(a) * B + b) * H + h) * W + w;
}

}  // namespace segan
