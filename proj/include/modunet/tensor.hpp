#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace modunet {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor. Activations are laid out as (batch, spatial..., channels),
/// so the channel axis is contiguous.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t channels() const { return shape_.empty() ? 0 : shape_.back(); }

  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(T value);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Flattened (batch, depth, height, width, channels) view of an activation shape.
/// Rank-4 shapes are 2D maps and report depth 1.
struct Grid {
  std::size_t batch = 1;
  std::size_t depth = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;
  int spatial_rank = 2;

  std::size_t spatial() const noexcept { return depth * height * width; }
  std::size_t voxels() const noexcept { return batch * spatial(); }
  std::size_t elements() const noexcept { return voxels() * channels; }
  Shape shape() const;
};

Grid grid_of(const Shape& shape);

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace modunet
