#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tpower/error.hpp"
#include "tpower/numerics.hpp"

namespace tpower {

using Shape = std::vector<int>;

// Product of dimensions; throws ShapeError on non-positive dims.
std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Images and activations use HWC order:
// shape {height, width, channels}, channel index fastest.
struct Tensor {
  Shape shape;
  Vec data;

  Tensor() = default;
  Tensor(Shape s, Vec d);
  static Tensor zeros(Shape s);

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

}  // namespace tpower
