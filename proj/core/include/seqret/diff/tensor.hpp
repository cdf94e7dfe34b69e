#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace seqret::diff {

/// Dense row-major tensor of doubles.
///
/// Arbitrary rank is stored, but the numeric kernels treat every tensor as a
/// matrix: rank 0 is 1x1, rank 1 of length n is a 1xn row, rank 2 is itself.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> values);
  static Tensor column(std::vector<double> values);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  /// Same data, new shape; numel must match.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return rows() == other.rows() && cols() == other.cols(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

}  // namespace seqret::diff
