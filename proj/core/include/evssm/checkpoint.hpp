#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evssm/training.hpp"

namespace evssm {

inline constexpr std::uint32_t kCkptDtypeF32 = 0;
inline constexpr std::uint32_t kCkptDtypeF64 = 1;

struct TensorEntry {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::uint32_t dtype = kCkptDtypeF32;
  std::vector<std::uint8_t> data;  // little-endian raw values
};

// Single-file container: versioned header, JSON meta block (config echo and
// counters), then a flat list of named tensors. Loading and re-saving
// reproduces the bytes exactly.
struct CheckpointFile {
  std::string meta;  // JSON text
  std::vector<TensorEntry> tensors;
};

// Writes to a temp file in the same directory, then renames into place.
void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile load_checkpoint(const std::filesystem::path& path);

// Run facts a checkpoint carries beyond the tensors, so evaluation can
// reproduce training-time preprocessing and batching exactly.
struct CkptInfo {
  int epochs_done = 0;
  double time_unit = 1e-6;
  int batch_size = 32;
};

template <typename T>
void save_train_state(const std::filesystem::path& path, const TrainState<T>& st,
                      const CkptInfo& info);

template <typename T>
TrainState<T> load_train_state(const std::filesystem::path& path, CkptInfo* info);

// Loads just the weights (model config comes from the meta echo).
template <typename T>
ModelWeights<T> load_weights(const std::filesystem::path& path);

// dtype tag ("float" or "double") recorded in a checkpoint's meta block.
std::string checkpoint_precision(const std::filesystem::path& path);

CkptInfo checkpoint_info(const std::filesystem::path& path);

#define EVSSM_CHECKPOINT_EXTERN(T)                                                        \
  extern template void save_train_state(const std::filesystem::path&, const TrainState<T>&, \
                                        const CkptInfo&);                                 \
  extern template TrainState<T> load_train_state(const std::filesystem::path&, CkptInfo*); \
  extern template ModelWeights<T> load_weights(const std::filesystem::path&);
EVSSM_CHECKPOINT_EXTERN(float)
EVSSM_CHECKPOINT_EXTERN(double)
#undef EVSSM_CHECKPOINT_EXTERN

}  // namespace evssm
