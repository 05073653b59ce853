#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evssm/events.hpp"
#include "evssm/ssm.hpp"
#include "evssm/tensor.hpp"

namespace evssm {

struct ModelConfig {
  int num_layers = 6;
  int state_size = 64;             // per-layer state dimension
  int model_width = 64;            // feature width entering the first layer
  std::uint32_t num_channels = 0;  // input channel count (embedding rows)
  int num_classes = 0;
  std::vector<int> pool = {1};       // per layer; a single entry broadcasts
  std::vector<int> width_mult = {1}; // per layer; widths multiply after pooling
  std::string mode = "async";
  double dropout = 0.0;
  // "preact": block output is y * sigmoid(W gelu(y)); "glu": gelu(y) * sigmoid(W gelu(y))
  std::string gate_variant = "preact";
  // initialization band for the state timescales 1 / (delta * |Re lambda|), seconds
  double timescale_min = 1e-3;
  double timescale_max = 1.0;
  bool use_scan = true;
  int scan_chunk = 4096;
  double norm_eps = 1e-5;

  void validate() const;
  int pool_at(int layer) const;
  int mult_at(int layer) const;
  // feature width entering the given layer (layer == num_layers gives the
  // readout width)
  int width_at(int layer) const;
  DiscretizationMode discretization() const { return parse_mode(mode); }
};

enum class ParamRole { Dynamics, General };

template <typename T>
struct LayerWeights {
  SSMParams<T> ssm;
  Mat<T> gate_w;                         // W x W
  std::vector<T> norm_scale, norm_bias;  // W
  Mat<T> proj;                           // (W * q) x W; empty when q == 1
};

template <typename T>
struct ModelWeights {
  ModelConfig cfg;
  Mat<T> embedding;  // J x N
  std::vector<LayerWeights<T>> layers;
  Mat<T> readout_w;  // K x W_final
  std::vector<T> readout_b;

  std::size_t param_count() const;

  // Fixed-order visitation of every real tensor; the order defines the
  // optimizer state layout and the checkpoint tensor list.
  template <typename F>
  void for_each_tensor(F&& f) {
    f("embedding", embedding.v, ParamRole::General);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      std::string p = "layers." + std::to_string(l) + ".";
      LayerWeights<T>& lw = layers[l];
      f(p + "phi", lw.ssm.phi, ParamRole::Dynamics);
      f(p + "theta", lw.ssm.theta, ParamRole::Dynamics);
      f(p + "log_delta", lw.ssm.log_delta, ParamRole::Dynamics);
      f(p + "b_re", lw.ssm.B.re, ParamRole::General);
      f(p + "b_im", lw.ssm.B.im, ParamRole::General);
      f(p + "c_re", lw.ssm.C.re, ParamRole::General);
      f(p + "c_im", lw.ssm.C.im, ParamRole::General);
      f(p + "d", lw.ssm.D, ParamRole::General);
      f(p + "gate_w", lw.gate_w.v, ParamRole::General);
      f(p + "norm_scale", lw.norm_scale, ParamRole::General);
      f(p + "norm_bias", lw.norm_bias, ParamRole::General);
      if (!lw.proj.empty()) f(p + "proj", lw.proj.v, ParamRole::General);
    }
    f("readout_w", readout_w.v, ParamRole::General);
    f("readout_b", readout_b, ParamRole::General);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelWeights<T>*>(this)->for_each_tensor(
        [&](const std::string& name, std::vector<T>& v, ParamRole role) {
          f(name, static_cast<const std::vector<T>&>(v), role);
        });
  }
};

template <typename T>
ModelWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
ModelWeights<T> zeros_like(const ModelWeights<T>& w);

// Embedding lookup: row j of the table per event. Throws on out-of-range
// channel indices.
template <typename T>
void embed_events(const std::uint32_t* channels, std::size_t m, const Mat<T>& table, RSeq<T>* out);

// Keeps the last valid position of each group of p; a non-empty proj widens
// the kept vectors. Mask validity stays a prefix.
template <typename T>
void event_pool(const RSeq<T>& seq, const std::vector<std::uint8_t>& mask, int p,
                const Mat<T>& proj, RSeq<T>* out, std::vector<std::uint8_t>* mask_out);

struct ForwardOptions {
  bool train = false;
  std::uint64_t dropout_seed = 0;
  std::int64_t step = 0;  // mixed into per-row dropout streams
  int threads = 1;
};

template <typename T>
struct BlockCache {
  RSeq<T> input;
  std::vector<T> mean, rstd;  // layernorm stats per position
  RSeq<T> normed;
  SSMForward<T> ssm;
  RSeq<T> v;         // gelu(y)
  RSeq<T> gate_sig;  // sigmoid(W v)
  RSeq<T> gated;     // block value before dropout/skip
  std::vector<std::uint8_t> drop_mask;
  RSeq<T> pooled;  // pre-projection pooled rows
  std::vector<std::size_t> kept;
  std::vector<T> deltas;
  std::vector<std::uint8_t> mask;
};

template <typename T>
struct RowCache {
  RSeq<T> u;
  std::vector<BlockCache<T>> blocks;
  std::vector<T> features;
  int final_count = 0;
};

// One block: pre-norm -> state space -> gelu -> sigmoid gate -> dropout ->
// skip -> event pooling. Padded steps carry zero input and zero time gap and
// never reach the pooled output.
template <typename T>
void block_forward(const LayerWeights<T>& w, const ModelConfig& cfg, int layer, const RSeq<T>& in,
                   const std::vector<T>& deltas, const std::vector<std::uint8_t>& mask,
                   const ForwardOptions& opt, std::uint64_t drop_tag, BlockCache<T>* cache,
                   RSeq<T>* out, std::vector<T>* deltas_out, std::vector<std::uint8_t>* mask_out);

template <typename T>
void model_forward(const ModelWeights<T>& w, const Batch<T>& batch, const ForwardOptions& opt,
                   Mat<T>* logits, std::vector<RowCache<T>>* caches);

// Accumulates into grads (callers zero it first via zeros_like).
template <typename T>
void model_backward(const ModelWeights<T>& w, const Batch<T>& batch,
                    const std::vector<RowCache<T>>& caches, const Mat<T>& logits_bar,
                    const ForwardOptions& opt, ModelWeights<T>* grads);

#define EVSSM_MODEL_EXTERN(T)                                                                 \
  extern template struct LayerWeights<T>;                                                     \
  extern template struct ModelWeights<T>;                                                     \
  extern template ModelWeights<T> init_weights<T>(const ModelConfig&, std::uint64_t);         \
  extern template ModelWeights<T> zeros_like(const ModelWeights<T>&);                         \
  extern template void embed_events(const std::uint32_t*, std::size_t, const Mat<T>&,         \
                                    RSeq<T>*);                                                \
  extern template void event_pool(const RSeq<T>&, const std::vector<std::uint8_t>&, int,      \
                                  const Mat<T>&, RSeq<T>*, std::vector<std::uint8_t>*);       \
  extern template void block_forward(const LayerWeights<T>&, const ModelConfig&, int,         \
                                     const RSeq<T>&, const std::vector<T>&,                   \
                                     const std::vector<std::uint8_t>&, const ForwardOptions&, \
                                     std::uint64_t, BlockCache<T>*, RSeq<T>*,                 \
                                     std::vector<T>*, std::vector<std::uint8_t>*);            \
  extern template void model_forward(const ModelWeights<T>&, const Batch<T>&,                 \
                                     const ForwardOptions&, Mat<T>*,                          \
                                     std::vector<RowCache<T>>*);                              \
  extern template void model_backward(const ModelWeights<T>&, const Batch<T>&,                \
                                      const std::vector<RowCache<T>>&, const Mat<T>&,         \
                                      const ForwardOptions&, ModelWeights<T>*);
EVSSM_MODEL_EXTERN(float)
EVSSM_MODEL_EXTERN(double)
#undef EVSSM_MODEL_EXTERN

}  // namespace evssm
