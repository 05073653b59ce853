#pragma once

#include "evssm/ssm.hpp"

namespace evssm {

// Direct evaluation of the continuous solution under a train of weighted
// impulses: x(t_k) = sum_{m<=k} exp(Lambda (t_k - t_m)) B u_m. Quadratic in
// the number of events; exists purely as a verification reference and shares
// no code with the recurrence or scan paths.
template <typename T>
void dirac_state_closed_form(const SSMParams<T>& p, const RSeq<T>& u, const std::vector<T>& times,
                             CSeq<T>* x);

extern template void dirac_state_closed_form(const SSMParams<float>&, const RSeq<float>&,
                                             const std::vector<float>&, CSeq<float>*);
extern template void dirac_state_closed_form(const SSMParams<double>&, const RSeq<double>&,
                                             const std::vector<double>&, CSeq<double>*);

}  // namespace evssm
