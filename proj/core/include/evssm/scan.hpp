#pragma once

#include <cstddef>
#include <vector>

#include "evssm/complex.hpp"

namespace evssm {

struct ScanOptions {
  std::size_t chunk = 4096;  // elements per chunk; chunks are folded left to right
  int threads = 1;
};

// One element of the first-order recurrence x_k = a_k * x_{k-1} + b_k,
// vectorized over the state dimension. Combining (later ⊗ earlier) yields
// (later.a * earlier.a, later.a * earlier.b + later.b); the identity is
// (1, 0). The operator is associative but not commutative, so every code
// path keeps the time order of its operands.
template <typename T>
struct ScanElement {
  std::vector<T> a_re, a_im, b_re, b_im;

  std::size_t width() const { return a_re.size(); }
  static ScanElement identity(std::size_t h) {
    ScanElement e;
    e.a_re.assign(h, T(1));
    e.a_im.assign(h, T(0));
    e.b_re.assign(h, T(0));
    e.b_im.assign(h, T(0));
    return e;
  }
};

template <typename T>
ScanElement<T> scan_combine(const ScanElement<T>& later, const ScanElement<T>& earlier);

// In-place inclusive scan of m elements of width h, arrays laid out [m][h].
// Work-efficient up-sweep/down-sweep within chunks; a running carry folds
// chunk results together so arbitrarily long inputs stream through a bounded
// working set. Thread parallelism splits the width dimension, which keeps
// results bit-identical for any thread count.
template <typename T>
void scan_inclusive(T* a_re, T* a_im, T* b_re, T* b_im, std::size_t m, std::size_t h,
                    const ScanOptions& opt);

extern template ScanElement<float> scan_combine(const ScanElement<float>&, const ScanElement<float>&);
extern template ScanElement<double> scan_combine(const ScanElement<double>&, const ScanElement<double>&);
extern template void scan_inclusive(float*, float*, float*, float*, std::size_t, std::size_t, const ScanOptions&);
extern template void scan_inclusive(double*, double*, double*, double*, std::size_t, std::size_t, const ScanOptions&);

}  // namespace evssm
