#include "evssm/ssm.hpp"

#include <cmath>
#include <stdexcept>

namespace evssm {

DiscretizationMode parse_mode(const std::string& name) {
  if (name == "async") return DiscretizationMode::Async;
  if (name == "dirac") return DiscretizationMode::Dirac;
  if (name == "zoh") return DiscretizationMode::ZOH;
  if (name == "zoh_unit") return DiscretizationMode::ZOHUnitDelta;
  throw std::runtime_error("unknown discretization mode '" + name +
                           "' (expected async, dirac, zoh or zoh_unit)");
}

std::string mode_name(DiscretizationMode mode) {
  switch (mode) {
    case DiscretizationMode::Async: return "async";
    case DiscretizationMode::Dirac: return "dirac";
    case DiscretizationMode::ZOH: return "zoh";
    case DiscretizationMode::ZOHUnitDelta: return "zoh_unit";
  }
  throw std::runtime_error("invalid discretization mode");
}

template <typename T>
void SSMParams<T>::check_shapes() const {
  std::size_t h = phi.size();
  std::size_t n = D.size();
  if (h == 0 || n == 0) throw std::runtime_error("ssm: empty parameter shapes");
  if (theta.size() != h || log_delta.size() != h) {
    throw std::runtime_error("ssm: phi/theta/log_delta sizes disagree");
  }
  if (B.rows != h || B.cols != n) throw std::runtime_error("ssm: B must be H x N");
  if (C.rows != n || C.cols != h) throw std::runtime_error("ssm: C must be N x H");
}

template <typename T>
CVec<T> eigenvalues(const SSMParams<T>& p) {
  std::size_t h = p.state_size();
  CVec<T> lam(h);
  for (std::size_t i = 0; i < h; ++i) {
    lam.re[i] = -std::exp(p.phi[i]);
    lam.im[i] = p.theta[i];
  }
  return lam;
}

template <typename T>
void discretize_zoh(const CVec<T>& lam, const CMat<T>& B, T step, CVec<T>* abar, CMat<T>* bbar) {
  if (step < 0) throw std::runtime_error("discretize_zoh: step must be non-negative");
  std::size_t h = lam.size();
  if (B.rows != h) throw std::runtime_error("discretize_zoh: B rows must match state size");
  abar->re.resize(h);
  abar->im.resize(h);
  *bbar = CMat<T>(B.rows, B.cols);
  for (std::size_t i = 0; i < h; ++i) {
    Cx<T> l{lam.re[i], lam.im[i]};
    Cx<T> em1 = cexpm1(l * step);
    abar->re[i] = em1.re + 1;
    abar->im[i] = em1.im;
    Cx<T> coeff = cdiv(em1, l);  // (exp(l*step) - 1) / l, cancellation-safe
    for (std::size_t j = 0; j < B.cols; ++j) {
      Cx<T> b{B.re[i * B.cols + j], B.im[i * B.cols + j]};
      Cx<T> s = coeff * b;
      bbar->re[i * B.cols + j] = s.re;
      bbar->im[i * B.cols + j] = s.im;
    }
  }
}

template <typename T>
void discretize_dirac(const CVec<T>& lam, const std::vector<T>& deltas, CSeq<T>* abar) {
  std::size_t h = lam.size();
  std::size_t m = deltas.size();
  *abar = CSeq<T>(m, h);
  for (std::size_t k = 0; k < m; ++k) {
    if (deltas[k] < 0) throw std::runtime_error("discretize_dirac: negative time gap");
    for (std::size_t i = 0; i < h; ++i) {
      Cx<T> a = cexp(Cx<T>{lam.re[i], lam.im[i]} * deltas[k]);
      abar->re[k * h + i] = a.re;
      abar->im[k * h + i] = a.im;
    }
  }
}

template <typename T>
void discretize_async(const CVec<T>& lam, const CMat<T>& B, const std::vector<T>& delta,
                      const std::vector<T>& deltas, CSeq<T>* abar, CMat<T>* bbar) {
  std::size_t h = lam.size();
  if (delta.size() != h) throw std::runtime_error("discretize_async: delta must have one entry per state");
  if (B.rows != h) throw std::runtime_error("discretize_async: B rows must match state size");
  std::size_t m = deltas.size();
  *abar = CSeq<T>(m, h);
  for (std::size_t k = 0; k < m; ++k) {
    if (deltas[k] < 0) throw std::runtime_error("discretize_async: negative time gap");
    for (std::size_t i = 0; i < h; ++i) {
      Cx<T> a = cexp(Cx<T>{lam.re[i], lam.im[i]} * (delta[i] * deltas[k]));
      abar->re[k * h + i] = a.re;
      abar->im[k * h + i] = a.im;
    }
  }
  // The input normalization uses delta alone: it does not depend on any
  // per-event gap, which is what keeps dt = 0 events alive.
  *bbar = CMat<T>(B.rows, B.cols);
  for (std::size_t i = 0; i < h; ++i) {
    Cx<T> l{lam.re[i], lam.im[i]};
    Cx<T> coeff = cdiv(cexpm1(l * delta[i]), l);
    for (std::size_t j = 0; j < B.cols; ++j) {
      Cx<T> b{B.re[i * B.cols + j], B.im[i * B.cols + j]};
      Cx<T> s = coeff * b;
      bbar->re[i * B.cols + j] = s.re;
      bbar->im[i * B.cols + j] = s.im;
    }
  }
}

namespace detail {

// Shared lowering of (params, mode, u, deltas) into per-step transitions and
// per-step complex inputs b_k.
template <typename T>
void build_elements(const SSMParams<T>& p, DiscretizationMode mode, const RSeq<T>& u,
                    const std::vector<T>& deltas, CSeq<T>* abar, CSeq<T>* b) {
  p.check_shapes();
  std::size_t h = p.state_size();
  std::size_t n = p.width();
  std::size_t m = deltas.size();
  if (u.len != m || (m > 0 && u.width != n)) {
    throw std::runtime_error("ssm: input is " + std::to_string(u.len) + "x" +
                             std::to_string(u.width) + ", expected " + std::to_string(m) + "x" +
                             std::to_string(n));
  }

  CVec<T> lam = eigenvalues(p);
  *b = CSeq<T>(m, h);

  auto apply_static = [&](const CMat<T>& bbar) {
    for (std::size_t k = 0; k < m; ++k) {
      const T* uk = u.row(k);
      for (std::size_t i = 0; i < h; ++i) {
        T sr = 0, si = 0;
        const T* br = bbar.re.data() + i * n;
        const T* bi = bbar.im.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          sr += br[j] * uk[j];
          si += bi[j] * uk[j];
        }
        b->re[k * h + i] = sr;
        b->im[k * h + i] = si;
      }
    }
  };

  switch (mode) {
    case DiscretizationMode::Async: {
      std::vector<T> delta(h);
      for (std::size_t i = 0; i < h; ++i) delta[i] = std::exp(p.log_delta[i]);
      CMat<T> bbar;
      discretize_async(lam, p.B, delta, deltas, abar, &bbar);
      apply_static(bbar);
      break;
    }
    case DiscretizationMode::Dirac: {
      discretize_dirac(lam, deltas, abar);
      apply_static(p.B);
      break;
    }
    case DiscretizationMode::ZOH:
    case DiscretizationMode::ZOHUnitDelta: {
      // the timing-blind variant substitutes unit gaps before discretizing
      // and then shares the hold path verbatim
      const std::vector<T>* dt = &deltas;
      std::vector<T> unit;
      if (mode == DiscretizationMode::ZOHUnitDelta) {
        for (const T& d : deltas) {
          if (d < 0) throw std::runtime_error("ssm: negative time gap");
        }
        unit.assign(m, T(1));
        dt = &unit;
      }
      discretize_dirac(lam, *dt, abar);  // same transition exp(lam * dt)
      for (std::size_t k = 0; k < m; ++k) {
        const T* uk = u.row(k);
        for (std::size_t i = 0; i < h; ++i) {
          Cx<T> l{lam.re[i], lam.im[i]};
          Cx<T> coeff = cdiv(cexpm1(l * (*dt)[k]), l);
          T sr = 0, si = 0;
          const T* br = p.B.re.data() + i * n;
          const T* bi = p.B.im.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            sr += br[j] * uk[j];
            si += bi[j] * uk[j];
          }
          Cx<T> s = coeff * Cx<T>{sr, si};
          b->re[k * h + i] = s.re;
          b->im[k * h + i] = s.im;
        }
      }
      break;
    }
  }
}

template <typename T>
void emit_outputs(const SSMParams<T>& p, const RSeq<T>& u, const CSeq<T>& x, RSeq<T>* y) {
  std::size_t h = p.state_size();
  std::size_t n = p.width();
  std::size_t m = x.len;
  *y = RSeq<T>(m, n);
  for (std::size_t k = 0; k < m; ++k) {
    const T* xr = x.re.data() + k * h;
    const T* xi = x.im.data() + k * h;
    const T* uk = u.row(k);
    T* yk = y->row(k);
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      const T* cr = p.C.re.data() + j * h;
      const T* ci = p.C.im.data() + j * h;
      for (std::size_t i = 0; i < h; ++i) {
        acc += cr[i] * xr[i] - ci[i] * xi[i];
      }
      yk[j] = acc + p.D[j] * uk[j];
    }
  }
}

template void build_elements(const SSMParams<float>&, DiscretizationMode, const RSeq<float>&,
                             const std::vector<float>&, CSeq<float>*, CSeq<float>*);
template void build_elements(const SSMParams<double>&, DiscretizationMode, const RSeq<double>&,
                             const std::vector<double>&, CSeq<double>*, CSeq<double>*);
template void emit_outputs(const SSMParams<float>&, const RSeq<float>&, const CSeq<float>&,
                           RSeq<float>*);
template void emit_outputs(const SSMParams<double>&, const RSeq<double>&, const CSeq<double>&,
                           RSeq<double>*);

}  // namespace detail

template <typename T>
void ssm_forward_sequential(const SSMParams<T>& p, DiscretizationMode mode, const RSeq<T>& u,
                            const std::vector<T>& deltas, SSMForward<T>* out) {
  CSeq<T> b;
  detail::build_elements(p, mode, u, deltas, &out->abar, &b);
  std::size_t h = p.state_size();
  std::size_t m = deltas.size();
  out->x = CSeq<T>(m, h);
  std::vector<T> sr(h, T(0)), si(h, T(0));  // running state, starts at zero
  for (std::size_t k = 0; k < m; ++k) {
    const T* ar = out->abar.re.data() + k * h;
    const T* ai = out->abar.im.data() + k * h;
    for (std::size_t i = 0; i < h; ++i) {
      T nr = ar[i] * sr[i] - ai[i] * si[i] + b.re[k * h + i];
      T ni = ar[i] * si[i] + ai[i] * sr[i] + b.im[k * h + i];
      sr[i] = nr;
      si[i] = ni;
      out->x.re[k * h + i] = nr;
      out->x.im[k * h + i] = ni;
    }
  }
  detail::emit_outputs(p, u, out->x, &out->y);
}

template <typename T>
void ssm_forward_scan(const SSMParams<T>& p, DiscretizationMode mode, const RSeq<T>& u,
                      const std::vector<T>& deltas, const ScanOptions& opt, SSMForward<T>* out) {
  CSeq<T> b;
  detail::build_elements(p, mode, u, deltas, &out->abar, &b);
  std::size_t h = p.state_size();
  std::size_t m = deltas.size();
  // scan in a copy of (abar, b); the b slot of the inclusive scan is x_k
  CSeq<T> a = out->abar;
  scan_inclusive(a.re.data(), a.im.data(), b.re.data(), b.im.data(), m, h, opt);
  out->x = std::move(b);
  detail::emit_outputs(p, u, out->x, &out->y);
}

#define EVSSM_SSM_INST(T)                                                                        \
  template struct SSMParams<T>;                                                                  \
  template CVec<T> eigenvalues(const SSMParams<T>&);                                             \
  template void discretize_zoh(const CVec<T>&, const CMat<T>&, T, CVec<T>*, CMat<T>*);           \
  template void discretize_dirac(const CVec<T>&, const std::vector<T>&, CSeq<T>*);               \
  template void discretize_async(const CVec<T>&, const CMat<T>&, const std::vector<T>&,          \
                                 const std::vector<T>&, CSeq<T>*, CMat<T>*);                     \
  template void ssm_forward_sequential(const SSMParams<T>&, DiscretizationMode, const RSeq<T>&,  \
                                       const std::vector<T>&, SSMForward<T>*);                   \
  template void ssm_forward_scan(const SSMParams<T>&, DiscretizationMode, const RSeq<T>&,        \
                                 const std::vector<T>&, const ScanOptions&, SSMForward<T>*);
EVSSM_SSM_INST(float)
EVSSM_SSM_INST(double)
#undef EVSSM_SSM_INST

}  // namespace evssm
