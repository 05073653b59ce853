#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evssm/model.hpp"
#include "evssm/ssm.hpp"

namespace evssm {

struct GradcheckEntry {
  std::string tensor;
  double max_rel = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> tensors;
  double max_rel = 0;

  bool pass(double threshold) const { return max_rel <= threshold; }
};

// |a - f| / max(|a| + |f|, floor); the floor keeps near-zero pairs from
// blowing up the ratio.
double relative_error(double analytic, double numeric, double floor = 1e-4);

// Central finite differences over every state-space parameter tensor and the
// input sequence of one small random layer, double precision. The loss is a
// fixed random weighting of the outputs.
GradcheckReport gradcheck_kernel(int state_size, int width, int length, DiscretizationMode mode,
                                 std::uint64_t seed, double epsilon);

// Central finite differences over every weight tensor of a model against the
// analytic gradients, cross-entropy loss on a small random batch, double
// precision. A non-empty tamper names one tensor whose analytic gradient gets
// its sign flipped, as a negative control.
GradcheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed, double epsilon,
                                const std::string& tamper = "");

}  // namespace evssm
