#pragma once

#include <utility>
#include <vector>

namespace testutil {

// Slides a window over every pixel offset and keeps those on the stride
// lattice that fit entirely, in row-major order.
inline std::vector<std::pair<int, int>> sliding_windows(int w, int h, int window, int stride) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < h; ++y) {
    if (y % stride != 0 || y + window > h) continue;
    for (int x = 0; x < w; ++x) {
      if (x % stride == 0 && x + window <= w) out.emplace_back(x, y);
    }
  }
  return out;
}

}  // namespace testutil
