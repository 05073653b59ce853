#pragma once

#include <cstdint>
#include <vector>

#include "evssm/events.hpp"
#include "evssm/model.hpp"

namespace evssm {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 4e-3;
  double lr_floor = 0.0;  // cosine decay target after warmup
  int warmup_steps = 0;
  std::string schedule = "cosine";  // "cosine" or "constant" (after warmup)
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool decay_dynamics = false;      // weight decay touches phi/theta/log_delta only when set
  double dynamics_lr_factor = 1.0;  // lr multiplier for phi/theta/log_delta
  double clip_norm = 0.0;           // global L2 gradient clip, 0 disables
  std::size_t max_events = 0;       // random contiguous crop during training, 0 keeps all
  double time_unit = 1e-6;          // multiplier from microsecond gaps to model time
  int threads = 1;
  AugmentConfig augment;

  void validate() const;
};

template <typename T>
struct TrainState {
  ModelWeights<T> weights;
  ModelWeights<T> m, v;  // Adam moments, same tensor layout as the weights
  std::int64_t step = 0;
  std::uint64_t seed = 0;
};

template <typename T>
TrainState<T> init_train_state(const ModelConfig& cfg, std::uint64_t seed);

// Mean soft-label cross entropy over rows. labels holds rows * num_classes
// probabilities; every row must sum to 1. Fills logits_bar with
// d(mean loss)/d(logits).
template <typename T>
T cross_entropy_soft(const Mat<T>& logits, const std::vector<T>& labels, Mat<T>* logits_bar);

// Linear warmup to lr, then cosine decay to lr_floor over the remaining
// steps. Steps past total_steps stay at the floor.
double lr_schedule(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps);

// AdamW with bias correction and decoupled weight decay; advances st->step.
template <typename T>
void optimizer_step(TrainState<T>* st, const ModelWeights<T>& grads, const TrainConfig& cfg,
                    double lr_now);

struct EpochStats {
  double loss = 0;
  double accuracy = 0;
  std::int64_t batches = 0;
  std::int64_t events = 0;  // unmasked events processed
  double wall_seconds = 0;
};

struct MetricsRecord {
  int epoch = 0;
  std::string split;
  double loss = 0;
  double accuracy = 0;
  double events_per_sec = 0;
  double wall_seconds = 0;
};

MetricsRecord to_metrics(int epoch, const std::string& split, const EpochStats& s);

std::int64_t steps_per_epoch(std::size_t samples, int batch_size);

// One pass over the data in a freshly shuffled order with augmentation.
// Sample-level randomness is derived from (seed, epoch, sample index), so a
// resumed run replays the exact stream regardless of history.
template <typename T>
EpochStats train_epoch(TrainState<T>* st, const std::vector<EventStream>& data,
                       const TrainConfig& cfg, int epoch, std::int64_t total_steps);

template <typename T>
EpochStats evaluate(const ModelWeights<T>& w, const std::vector<EventStream>& data,
                    const TrainConfig& cfg);

#define EVSSM_TRAINING_EXTERN(T)                                                             \
  extern template struct TrainState<T>;                                                      \
  extern template TrainState<T> init_train_state<T>(const ModelConfig&, std::uint64_t);      \
  extern template T cross_entropy_soft(const Mat<T>&, const std::vector<T>&, Mat<T>*);       \
  extern template void optimizer_step(TrainState<T>*, const ModelWeights<T>&,                \
                                      const TrainConfig&, double);                           \
  extern template EpochStats train_epoch(TrainState<T>*, const std::vector<EventStream>&,    \
                                         const TrainConfig&, int, std::int64_t);             \
  extern template EpochStats evaluate(const ModelWeights<T>&, const std::vector<EventStream>&,\
                                      const TrainConfig&);
EVSSM_TRAINING_EXTERN(float)
EVSSM_TRAINING_EXTERN(double)
#undef EVSSM_TRAINING_EXTERN

}  // namespace evssm
