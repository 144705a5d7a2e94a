#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dext {

using Shape = std::vector<int>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float32 tensor. Plain value type; gradients are tracked by
// the Tape, not by the tensor itself.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f);
  Tensor(Shape s, std::vector<float> values);

  std::size_t size() const noexcept { return data.size(); }
  int dim(std::size_t axis) const { return shape.at(axis); }
  int rank() const noexcept { return static_cast<int>(shape.size()); }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  std::span<float> values() noexcept { return data; }
  std::span<const float> values() const noexcept { return data; }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace dext
