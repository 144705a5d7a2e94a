#include "dext/scene.hpp"

#include <algorithm>
#include <array>
#include <random>

namespace dext {

Scene make_scene(std::uint64_t seed, int size) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  Scene scene;
  scene.image = Tensor({3, size, size});
  const std::size_t plane = static_cast<std::size_t>(size) * size;

  const float base = 0.3f + 0.3f * unit(rng);
  for (int c = 0; c < 3; ++c) {
    const float tint = 0.08f * (unit(rng) - 0.5f);
    for (std::size_t i = 0; i < plane; ++i) {
      scene.image[c * plane + i] = std::clamp(base + tint + 0.1f * (unit(rng) - 0.5f), 0.0f, 1.0f);
    }
  }

  static constexpr std::array<std::array<float, 3>, 4> kColors{{
      {0.95f, 0.1f, 0.1f}, {0.1f, 0.9f, 0.15f}, {0.15f, 0.2f, 0.95f}, {0.95f, 0.9f, 0.1f}}};
  std::uniform_int_distribution<int> count(1, 3);
  std::uniform_int_distribution<int> extent(size / 5, size / 2);
  std::uniform_int_distribution<int> color(0, static_cast<int>(kColors.size()) - 1);
  const int objects = count(rng);
  for (int o = 0; o < objects; ++o) {
    const int w = extent(rng);
    const int h = extent(rng);
    const int x0 = std::uniform_int_distribution<int>(0, size - w)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, size - h)(rng);
    const int k = color(rng);
    for (int c = 0; c < 3; ++c)
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x)
          scene.image[c * plane + static_cast<std::size_t>(y * size + x)] =
              std::clamp(kColors[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] +
                             0.05f * (unit(rng) - 0.5f),
                         0.0f, 1.0f);
    const float s = static_cast<float>(size);
    scene.objects.push_back(Box{x0 / s, y0 / s, (x0 + w) / s, (y0 + h) / s});
    scene.classes.push_back(k + 1);
  }
  return scene;
}

}  // namespace dext
