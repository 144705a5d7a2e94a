#pragma once

#include <cstdint>
#include <vector>

#include "dext/detector.hpp"
#include "dext/tensor.hpp"

namespace dext {

// Seeded synthetic scene: textured background with a few solid rectangles.
struct Scene {
  Tensor image;                 // [3, size, size] in [0,1]
  std::vector<Box> objects;     // normalized ground-truth boxes
  std::vector<int> classes;     // 1-based color class per object
};

Scene make_scene(std::uint64_t seed, int size = 32);

}  // namespace dext
