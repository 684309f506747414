#pragma once

#include <array>
#include <cstdint>

#include "fontcnn/raster.hpp"

namespace testutil {

// Exhaustive between-class-variance maximizer. For a split at t the
// variance is proportional to (N*S0 - S*n0)^2 / (n0*n1); candidates are
// compared by cross-multiplication in 128-bit integers, so ties are exact
// and the first (smallest) t wins. Valid while N*255 stays below ~2^40.
inline int otsu_oracle(const fontcnn::GrayImage& img) {
  std::array<__int128, 256> hist{};
  for (auto p : img.pixels()) hist[p] += 1;
  __int128 n = 0, s = 0;
  for (int v = 0; v < 256; ++v) {
    n += hist[v];
    s += hist[v] * v;
  }
  int best_t = 0;
  __int128 best_num = 0, best_den = 1;  // variance 0
  __int128 n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += hist[t] * t;
    const __int128 n1 = n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const __int128 d = n * s0 - s * n0;
    const __int128 num = d * d;
    const __int128 den = n0 * n1;
    // num/den > best_num/best_den, using unsigned arithmetic for headroom
    const unsigned __int128 lhs = static_cast<unsigned __int128>(num) * static_cast<unsigned __int128>(best_den);
    const unsigned __int128 rhs = static_cast<unsigned __int128>(best_num) * static_cast<unsigned __int128>(den);
    if (lhs > rhs) {
      best_t = t;
      best_num = num;
      best_den = den;
    }
  }
  return best_t;
}

}  // namespace testutil
