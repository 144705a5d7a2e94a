#include "dext/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "dext/error.hpp"

namespace dext {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (int extent : shape) {
    if (extent < 0) throw Error(ErrorCode::ShapeMismatch, "negative extent in " + shape_string(shape));
    n *= static_cast<std::size_t>(extent);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)), data(element_count(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
  if (element_count(shape) != data.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + shape_string(shape) + " holds " +
                                              std::to_string(element_count(shape)) + " values, got " +
                                              std::to_string(data.size()));
  }
}

bool Tensor::all_finite() const noexcept {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace dext
