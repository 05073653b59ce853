#pragma once

#include <cstdint>
#include <vector>

#include "evssm/events.hpp"

namespace evssm {

// Desk-scale classification task where the class is recoverable only from
// event timing: channels are drawn iid uniform for every class, while
// inter-event gaps are exponential with a class-specific mean. A channel
// histogram carries no class information by construction.
struct SynthConfig {
  std::uint32_t num_channels = 16;
  int num_classes = 2;
  std::size_t events_per_sample = 512;
  std::size_t train_per_class = 1000;
  std::size_t test_per_class = 250;
  // one entry per class, microseconds
  std::vector<double> interval_mean_us = {1000.0, 4000.0};

  void validate() const;
};

Dataset gen_synthetic_timing_task(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace evssm
