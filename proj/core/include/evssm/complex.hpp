#pragma once

#include <cmath>

namespace evssm {

// Complex value as an explicit (re, im) pair. Gradients treat the two
// components as independent reals, so we keep full control of the arithmetic
// instead of going through std::complex.
template <typename T>
struct Cx {
  T re = 0;
  T im = 0;

  constexpr Cx() = default;
  constexpr Cx(T r, T i) : re(r), im(i) {}

  friend constexpr Cx operator+(Cx a, Cx b) { return {a.re + b.re, a.im + b.im}; }
  friend constexpr Cx operator-(Cx a, Cx b) { return {a.re - b.re, a.im - b.im}; }
  friend constexpr Cx operator*(Cx a, Cx b) {
    return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
  }
  friend constexpr Cx operator*(T s, Cx a) { return {s * a.re, s * a.im}; }
  friend constexpr Cx operator*(Cx a, T s) { return {s * a.re, s * a.im}; }
  Cx& operator+=(Cx o) { re += o.re; im += o.im; return *this; }
};

template <typename T>
constexpr Cx<T> conj(Cx<T> z) { return {z.re, -z.im}; }

template <typename T>
inline T abs2(Cx<T> z) { return z.re * z.re + z.im * z.im; }

template <typename T>
inline Cx<T> cexp(Cx<T> z) {
  T m = std::exp(z.re);
  return {m * std::cos(z.im), m * std::sin(z.im)};
}

// exp(z) - 1 without cancellation for small |z|. The real part uses
// expm1(a) - e^a * 2 sin^2(b/2), which stays accurate where
// e^a cos b - 1 would lose digits.
template <typename T>
inline Cx<T> cexpm1(Cx<T> z) {
  T m = std::exp(z.re);
  T s = std::sin(z.im / 2);
  return {std::expm1(z.re) - m * 2 * s * s, m * std::sin(z.im)};
}

template <typename T>
inline Cx<T> cdiv(Cx<T> a, Cx<T> b) {
  T d = b.re * b.re + b.im * b.im;
  return {(a.re * b.re + a.im * b.im) / d, (a.im * b.re - a.re * b.im) / d};
}

}  // namespace evssm
