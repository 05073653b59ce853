#include "evssm/scan.hpp"

#include <algorithm>
#include <stdexcept>

#include "evssm/parallel.hpp"

namespace evssm {

template <typename T>
ScanElement<T> scan_combine(const ScanElement<T>& later, const ScanElement<T>& earlier) {
  std::size_t h = later.width();
  if (earlier.width() != h) throw std::runtime_error("scan_combine: width mismatch");
  ScanElement<T> out;
  out.a_re.resize(h);
  out.a_im.resize(h);
  out.b_re.resize(h);
  out.b_im.resize(h);
  for (std::size_t i = 0; i < h; ++i) {
    Cx<T> la{later.a_re[i], later.a_im[i]};
    Cx<T> ea{earlier.a_re[i], earlier.a_im[i]};
    Cx<T> eb{earlier.b_re[i], earlier.b_im[i]};
    Cx<T> a = la * ea;
    Cx<T> b = la * eb + Cx<T>{later.b_re[i], later.b_im[i]};
    out.a_re[i] = a.re;
    out.a_im[i] = a.im;
    out.b_re[i] = b.re;
    out.b_im[i] = b.im;
  }
  return out;
}

namespace {

// x[i] <- combine(later = x[i], earlier = x[j]) over columns [h0, h1)
template <typename T>
inline void fold_into(T* a_re, T* a_im, T* b_re, T* b_im, std::size_t h, std::size_t i,
                      std::size_t j, std::size_t h0, std::size_t h1) {
  T* lar = a_re + i * h;
  T* lai = a_im + i * h;
  T* lbr = b_re + i * h;
  T* lbi = b_im + i * h;
  const T* ear = a_re + j * h;
  const T* eai = a_im + j * h;
  const T* ebr = b_re + j * h;
  const T* ebi = b_im + j * h;
  for (std::size_t c = h0; c < h1; ++c) {
    T ar = lar[c], ai = lai[c];
    lbr[c] += ar * ebr[c] - ai * ebi[c];
    lbi[c] += ar * ebi[c] + ai * ebr[c];
    lar[c] = ar * ear[c] - ai * eai[c];
    lai[c] = ar * eai[c] + ai * ear[c];
  }
}

template <typename T>
void scan_columns(T* a_re, T* a_im, T* b_re, T* b_im, std::size_t m, std::size_t h,
                  std::size_t chunk, std::size_t h0, std::size_t h1) {
  for (std::size_t c0 = 0; c0 < m; c0 += chunk) {
    std::size_t n = std::min(chunk, m - c0);
    T* car = a_re + c0 * h;
    T* cai = a_im + c0 * h;
    T* cbr = b_re + c0 * h;
    T* cbi = b_im + c0 * h;
    if (c0 > 0) {
      // seed with the carry (the previous chunk's last inclusive element)
      fold_into(a_re, a_im, b_re, b_im, h, c0, c0 - 1, h0, h1);
    }
    std::size_t dmax = 1;
    while (dmax * 2 < n) dmax *= 2;
    for (std::size_t d = 1; d < n; d *= 2) {
      for (std::size_t i = 2 * d - 1; i < n; i += 2 * d) {
        fold_into(car, cai, cbr, cbi, h, i, i - d, h0, h1);
      }
    }
    for (std::size_t d = dmax; d >= 1; d /= 2) {
      for (std::size_t i = 3 * d - 1; i < n; i += 2 * d) {
        fold_into(car, cai, cbr, cbi, h, i, i - d, h0, h1);
      }
    }
  }
}

}  // namespace

template <typename T>
void scan_inclusive(T* a_re, T* a_im, T* b_re, T* b_im, std::size_t m, std::size_t h,
                    const ScanOptions& opt) {
  if (m == 0 || h == 0) return;
  std::size_t chunk = std::max<std::size_t>(opt.chunk, 2);
  parallel_ranges(h, opt.threads, [&](std::size_t h0, std::size_t h1) {
    scan_columns(a_re, a_im, b_re, b_im, m, h, chunk, h0, h1);
  });
}

template ScanElement<float> scan_combine(const ScanElement<float>&, const ScanElement<float>&);
template ScanElement<double> scan_combine(const ScanElement<double>&, const ScanElement<double>&);
template void scan_inclusive(float*, float*, float*, float*, std::size_t, std::size_t, const ScanOptions&);
template void scan_inclusive(double*, double*, double*, double*, std::size_t, std::size_t, const ScanOptions&);

}  // namespace evssm
