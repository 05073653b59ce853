#pragma once

#include <string>
#include <vector>

#include "evssm/scan.hpp"
#include "evssm/tensor.hpp"

namespace evssm {

// How continuous dynamics are stepped from one event to the next:
//  - Async: transition exp(Lambda * delta * dt_k), input matrix normalized by
//    a step-independent factor Lambda^{-1} (exp(Lambda * delta) - 1) B, so
//    simultaneous events (dt = 0) still contribute input.
//  - Dirac: transition exp(Lambda * dt_k) with the raw input matrix B.
//  - ZOH: classic zero-order hold per step; the input scaling depends on
//    dt_k, so a dt of zero silences that event's input.
//  - ZOHUnitDelta: ZOH with every dt_k replaced by 1, i.e. timing-blind.
enum class DiscretizationMode { Async, Dirac, ZOH, ZOHUnitDelta };

DiscretizationMode parse_mode(const std::string& name);
std::string mode_name(DiscretizationMode mode);

// Diagonal continuous-time system. Eigenvalues are parameterized as
// -exp(phi) + i*theta, which keeps them in the left half-plane for any
// parameter value. delta = exp(log_delta) is a per-state timescale used by
// the Async mode.
template <typename T>
struct SSMParams {
  std::vector<T> phi, theta, log_delta;  // H
  CMat<T> B;                             // H x N
  CMat<T> C;                             // N x H
  std::vector<T> D;                      // N, diagonal feedthrough

  std::size_t state_size() const { return phi.size(); }
  std::size_t width() const { return D.size(); }
  void check_shapes() const;
};

template <typename T>
CVec<T> eigenvalues(const SSMParams<T>& p);

// Single scalar step: abar = exp(lam * step), bbar = lam^{-1} (abar - 1) B.
template <typename T>
void discretize_zoh(const CVec<T>& lam, const CMat<T>& B, T step, CVec<T>* abar, CMat<T>* bbar);

// Per-step transitions exp(lam * dt_k); the input matrix stays B.
template <typename T>
void discretize_dirac(const CVec<T>& lam, const std::vector<T>& deltas, CSeq<T>* abar);

// Per-step transitions exp(lam * delta * dt_k) plus a step-independent input
// matrix lam^{-1} (exp(lam * delta) - 1) B.
template <typename T>
void discretize_async(const CVec<T>& lam, const CMat<T>& B, const std::vector<T>& delta,
                      const std::vector<T>& deltas, CSeq<T>* abar, CMat<T>* bbar);

template <typename T>
struct SSMForward {
  RSeq<T> y;     // [M][N]
  CSeq<T> x;     // [M][H] states, cached for the backward pass
  CSeq<T> abar;  // [M][H] per-step transitions, cached for the backward pass
};

template <typename T>
void ssm_forward_sequential(const SSMParams<T>& p, DiscretizationMode mode, const RSeq<T>& u,
                            const std::vector<T>& deltas, SSMForward<T>* out);

template <typename T>
void ssm_forward_scan(const SSMParams<T>& p, DiscretizationMode mode, const RSeq<T>& u,
                      const std::vector<T>& deltas, const ScanOptions& opt, SSMForward<T>* out);

template <typename T>
struct SSMGrads {
  std::vector<T> phi, theta, log_delta, D;
  CMat<T> B, C;
  RSeq<T> u;
  std::vector<T> deltas;
};

// Reverse pass. The state adjoint follows the same first-order recurrence
// run backwards (conjugated transitions), so it reuses the scan machinery.
// Complex parameters are differentiated as independent (re, im) pairs.
// Gradients w.r.t. the event gaps are returned when want_delta_grad is set;
// they exist analytically but nothing in training consumes them.
template <typename T>
void ssm_backward(const SSMParams<T>& p, DiscretizationMode mode, const RSeq<T>& u,
                  const std::vector<T>& deltas, const SSMForward<T>& fwd, const RSeq<T>& y_bar,
                  const ScanOptions& opt, SSMGrads<T>* out, bool want_delta_grad = true);

#define EVSSM_SSM_EXTERN(T)                                                                       \
  extern template struct SSMParams<T>;                                                           \
  extern template CVec<T> eigenvalues(const SSMParams<T>&);                                      \
  extern template void discretize_zoh(const CVec<T>&, const CMat<T>&, T, CVec<T>*, CMat<T>*);    \
  extern template void discretize_dirac(const CVec<T>&, const std::vector<T>&, CSeq<T>*);        \
  extern template void discretize_async(const CVec<T>&, const CMat<T>&, const std::vector<T>&,   \
                                        const std::vector<T>&, CSeq<T>*, CMat<T>*);              \
  extern template void ssm_forward_sequential(const SSMParams<T>&, DiscretizationMode,           \
                                              const RSeq<T>&, const std::vector<T>&,             \
                                              SSMForward<T>*);                                   \
  extern template void ssm_forward_scan(const SSMParams<T>&, DiscretizationMode, const RSeq<T>&, \
                                        const std::vector<T>&, const ScanOptions&,               \
                                        SSMForward<T>*);                                         \
  extern template void ssm_backward(const SSMParams<T>&, DiscretizationMode, const RSeq<T>&,     \
                                    const std::vector<T>&, const SSMForward<T>&, const RSeq<T>&, \
                                    const ScanOptions&, SSMGrads<T>*, bool);
EVSSM_SSM_EXTERN(float)
EVSSM_SSM_EXTERN(double)
#undef EVSSM_SSM_EXTERN

}  // namespace evssm
