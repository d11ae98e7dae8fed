#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "msw/common.hpp"

namespace msw {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (const int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Row-major strides (last dimension fastest).
inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

// Dense row-major n-d array. The plain value type underneath Tensor; also
// used directly wherever autodiff is not needed.
template <class T>
struct Array {
  Shape shape;
  std::vector<T> v;

  Array() = default;
  explicit Array(Shape s) : shape(std::move(s)), v(static_cast<size_t>(numel(shape)), T(0)) {
    for (const int d : shape)
      if (d <= 0) throw DimensionError(cat("non-positive dimension in shape ", shape_str(shape)));
  }
  Array(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != numel(shape))
      throw DimensionError(cat("data length ", v.size(), " does not match shape ", shape_str(shape)));
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  template <class U>
  Array<U> cast() const {
    Array<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

using ArrayF = Array<float>;
using ArrayD = Array<double>;

}  // namespace msw
