#pragma once

// Connected-component labelling on binary 2D slices and 3D masks.
// Labels are assigned in raster order of each component's first voxel, so
// the output is a pure function of the input.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dcekit/error.hpp"
#include "dcekit/volume.hpp"

namespace dcekit {

struct Component {
  std::vector<std::size_t> voxels;  // linear indices, ascending
};

namespace cc_detail {

template <class Neighbours>
std::vector<Component> label(std::span<const std::uint8_t> fg, Neighbours&& neighbours) {
  std::vector<Component> out;
  std::vector<std::uint8_t> seen(fg.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < fg.size(); ++seed) {
    if (!fg[seed] || seen[seed]) continue;
    Component comp;
    stack.push_back(seed);
    seen[seed] = 1;
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      comp.voxels.push_back(v);
      neighbours(v, [&](std::size_t w) {
        if (fg[w] && !seen[w]) {
          seen[w] = 1;
          stack.push_back(w);
        }
      });
    }
    std::sort(comp.voxels.begin(), comp.voxels.end());
    out.push_back(std::move(comp));
  }
  return out;
}

}  // namespace cc_detail

/// Components of an nx-by-ny binary image; connectivity is 4 or 8.
inline std::vector<Component> label_components_2d(std::span<const std::uint8_t> fg, std::size_t nx, std::size_t ny,
                                                  int connectivity) {
  detail::require(connectivity == 4 || connectivity == 8, "2D connectivity must be 4 or 8");
  detail::require(fg.size() == nx * ny, "slice size does not match nx*ny");
  return cc_detail::label(fg, [&](std::size_t v, auto&& visit) {
    const auto x = static_cast<long>(v % nx);
    const auto y = static_cast<long>(v / nx);
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        if (connectivity == 4 && dx != 0 && dy != 0) continue;
        const long xx = x + dx, yy = y + dy;
        if (xx < 0 || yy < 0 || xx >= static_cast<long>(nx) || yy >= static_cast<long>(ny)) continue;
        visit(static_cast<std::size_t>(xx) + nx * static_cast<std::size_t>(yy));
      }
  });
}

/// Components of a 3D mask; connectivity is 6 or 26.
inline std::vector<Component> label_components_3d(const VoxelMask& mask, int connectivity) {
  detail::require(connectivity == 6 || connectivity == 26, "3D connectivity must be 6 or 26");
  const Dims d = mask.dims();
  return cc_detail::label(mask.bits(), [&](std::size_t v, auto&& visit) {
    const auto [cx, cy, cz] = d.coords(v);
    for (long dz = -1; dz <= 1; ++dz)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const int nonzero = (dx != 0) + (dy != 0) + (dz != 0);
          if (nonzero == 0 || (connectivity == 6 && nonzero > 1)) continue;
          const long x = static_cast<long>(cx) + dx, y = static_cast<long>(cy) + dy, z = static_cast<long>(cz) + dz;
          if (x < 0 || y < 0 || z < 0 || x >= static_cast<long>(d.nx) || y >= static_cast<long>(d.ny) ||
              z >= static_cast<long>(d.nz))
            continue;
          visit(d.index(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)));
        }
  });
}

}  // namespace dcekit
