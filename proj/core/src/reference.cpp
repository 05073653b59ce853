#include "evssm/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace evssm {

template <typename T>
void dirac_state_closed_form(const SSMParams<T>& p, const RSeq<T>& u, const std::vector<T>& times,
                             CSeq<T>* x) {
  p.check_shapes();
  const std::size_t h = p.state_size();
  const std::size_t n = p.width();
  const std::size_t m = times.size();
  if (u.len != m || (m > 0 && u.width != n)) {
    throw std::runtime_error("closed form: input shape mismatch");
  }
  for (std::size_t k = 1; k < m; ++k) {
    if (times[k] < times[k - 1]) throw std::runtime_error("closed form: times must be non-decreasing");
  }

  CVec<T> lam = eigenvalues(p);
  *x = CSeq<T>(m, h);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < h; ++i) {
      Cx<T> acc{0, 0};
      Cx<T> l{lam.re[i], lam.im[i]};
      for (std::size_t mm = 0; mm <= k; ++mm) {
        const T* um = u.row(mm);
        Cx<T> bu{0, 0};
        for (std::size_t j = 0; j < n; ++j) {
          bu += Cx<T>{p.B.re[i * n + j], p.B.im[i * n + j]} * um[j];
        }
        acc += cexp(l * (times[k] - times[mm])) * bu;
      }
      x->re[k * h + i] = acc.re;
      x->im[k * h + i] = acc.im;
    }
  }
}

template void dirac_state_closed_form(const SSMParams<float>&, const RSeq<float>&,
                                      const std::vector<float>&, CSeq<float>*);
template void dirac_state_closed_form(const SSMParams<double>&, const RSeq<double>&,
                                      const std::vector<double>&, CSeq<double>*);

}  // namespace evssm
