#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "mmr/errors.hpp"

namespace mmr {

// Dense planar C x H x W tensor of doubles, row-major within each channel.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.0) {}

  size_t size() const { return v.size(); }

  double& at(int ch, int y, int x) {
    return v[(static_cast<size_t>(ch) * h + y) * w + x];
  }
  double at(int ch, int y, int x) const {
    return v[(static_cast<size_t>(ch) * h + y) * w + x];
  }

  double* plane(int ch) { return v.data() + static_cast<size_t>(ch) * h * w; }
  const double* plane(int ch) const {
    return v.data() + static_cast<size_t>(ch) * h * w;
  }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Tensor& o) const {
    return c == o.c && h == o.h && w == o.w;
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.c, o.h, o.w); }
};

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* what) {
  if (!a.same_shape(b)) {
    throw DataError(std::string("shape mismatch in ") + what);
  }
}

// H x W scalar grid (depth maps, label maps, per-pixel targets).
template <typename T>
struct Grid {
  int h = 0, w = 0;
  std::vector<T> v;

  Grid() = default;
  Grid(int h_, int w_, T init = T{})
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, init) {}

  T& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  T at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }

  size_t size() const { return v.size(); }
};

}  // namespace mmr
