#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evssm/model.hpp"
#include "evssm/synthetic.hpp"
#include "evssm/training.hpp"

namespace evssm {

// Merged run settings. Loaded from a JSON config file with dotted-key
// overrides; precedence is overrides > file > defaults. Unknown keys are
// rejected by name.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  std::string data;                  // dataset manifest path; empty uses the synthetic task
  std::string out_dir = "runs/run";  // run directory (config echo, metrics, checkpoints)
  std::uint64_t seed = 1;
  std::string precision = "float";  // "float" or "double"
  int ckpt_every = 1;               // checkpoint every N epochs (last epoch always saved)

  void validate() const;
};

// text is a JSON object; pass "" for pure defaults. Overrides are
// "dotted.key=value" strings, e.g. "train.lr=0.001" or "model.pool=[4,4]".
RunConfig load_run_config(const std::string& text, const std::vector<std::string>& overrides);
RunConfig load_run_config_file(const std::filesystem::path& path,
                               const std::vector<std::string>& overrides);

// Canonical JSON echo (sorted keys, stable formatting); parsing it back
// reproduces the config.
std::string run_config_json(const RunConfig& cfg);

}  // namespace evssm
