#pragma once
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "hedge/errors.hpp"

namespace hedge {

// Dense row-major array of doubles. Deliberately dumb: a shape and a flat
// buffer. All the math that operates on these lives in graph.cpp / hib.cpp.
struct Array {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(std::vector<int64_t> s, double fill = 0.0)
      : shape(std::move(s)), data(static_cast<size_t>(count_of(shape)), fill) {}

  static int64_t count_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t e : s) {
      if (e < 0) throw ShapeMismatch("negative extent");
      n *= e;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t ndim() const { return static_cast<int64_t>(shape.size()); }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Array& o) const { return shape == o.shape; }
};

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace hedge
