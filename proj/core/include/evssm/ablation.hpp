#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "evssm/model.hpp"
#include "evssm/synthetic.hpp"
#include "evssm/training.hpp"

namespace evssm {

struct AblationConfig {
  SynthConfig synth;
  ModelConfig model;  // mode/num_channels/num_classes are overwritten per run
  TrainConfig train;
  std::vector<std::string> modes = {"async", "dirac", "zoh", "zoh_unit"};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::uint64_t data_seed = 7;  // one dataset shared by every run
};

struct AblationRow {
  std::string mode;
  std::vector<double> accuracies;  // test accuracy per seed, in seed order
  double mean = 0;
  double stddev = 0;  // sample standard deviation
};

// Tuned desk-scale study setup: 2 classes x 16 channels x 512 events,
// 2000/500 train/test split, 2-layer model with 32 states.
AblationConfig default_timing_ablation();

// Trains one model per (mode, seed) on the synthetic timing task. Progress
// lines go to *log when given.
std::vector<AblationRow> run_ablation(const AblationConfig& cfg, std::ostream* log = nullptr);

std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace evssm
