#include "segan/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace segan {

Eigen::Index Tensor::numel_of(const std::vector<int>& shape) {
  Eigen::Index n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(Eigen::ArrayXd::Zero(numel_of(shape_))) {}

Tensor::Tensor(std::vector<int> shape, Eigen::ArrayXd data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel_of(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data length does not match shape " +
                                shape_str());
  }
}

Tensor::Tensor(std::vector<int> shape, std::initializer_list<double> values)
    : shape_(std::move(shape)) {
  if (numel_of(shape_) != static_cast<Eigen::Index>(values.size())) {
    throw std::invalid_argument("initializer length does not match shape");
  }
  data_.resize(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) data_[i++] = v;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data_[0] = v;
  return t;
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.data_.setConstant(v);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() requires a one-element tensor, got " +
                                shape_str());
  }
  return data_[0];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

}  // namespace segan
