#pragma once

#include <cstddef>
#include <vector>

namespace evssm {

template <typename T>
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, T(0)) {}
  T& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  bool empty() const { return v.empty(); }
};

// complex matrix as parallel real/imaginary planes
template <typename T>
struct CMat {
  std::size_t rows = 0, cols = 0;
  std::vector<T> re, im;

  CMat() = default;
  CMat(std::size_t r, std::size_t c) : rows(r), cols(c), re(r * c, T(0)), im(r * c, T(0)) {}
  bool empty() const { return re.empty(); }
};

template <typename T>
struct CVec {
  std::vector<T> re, im;

  CVec() = default;
  explicit CVec(std::size_t n) : re(n, T(0)), im(n, T(0)) {}
  std::size_t size() const { return re.size(); }
};

// real sequence, row-major [len][width]
template <typename T>
struct RSeq {
  std::size_t len = 0, width = 0;
  std::vector<T> v;

  RSeq() = default;
  RSeq(std::size_t l, std::size_t w) : len(l), width(w), v(l * w, T(0)) {}
  T* row(std::size_t i) { return v.data() + i * width; }
  const T* row(std::size_t i) const { return v.data() + i * width; }
};

// complex sequence, row-major [len][width]
template <typename T>
struct CSeq {
  std::size_t len = 0, width = 0;
  std::vector<T> re, im;

  CSeq() = default;
  CSeq(std::size_t l, std::size_t w) : len(l), width(w), re(l * w, T(0)), im(l * w, T(0)) {}
};

}  // namespace evssm
