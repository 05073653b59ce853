#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "evssm/events.hpp"
#include "evssm/model.hpp"
#include "evssm/rng.hpp"

using namespace evssm;

namespace {

ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.num_layers = 6;
  cfg.state_size = 64;
  cfg.model_width = 64;
  cfg.num_channels = 700;
  cfg.num_classes = 20;
  cfg.pool = {8, 8, 4, 1, 1, 1};
  return cfg;
}

Batch<float> bench_batch(std::uint32_t channels, int classes, int rows, std::size_t events) {
  Rng rng(17);
  std::vector<EventStream> streams(static_cast<std::size_t>(rows));
  std::vector<const EventStream*> ptrs;
  for (EventStream& s : streams) {
    s.num_channels = channels;
    s.label = Label::hard(static_cast<int>(rng.uniform_int(0, classes - 1)));
    std::uint64_t t = 0;
    s.events.reserve(events);
    for (std::size_t k = 0; k < events; ++k) {
      t += static_cast<std::uint64_t>(rng.uniform_int(0, 300));
      s.events.push_back({t, static_cast<std::uint32_t>(rng.uniform_int(0, channels - 1))});
    }
    ptrs.push_back(&s);
  }
  return batch_pad<float>(ptrs, 1e-6, classes);
}

std::int64_t batch_events(const Batch<float>& b) {
  std::int64_t n = 0;
  for (int len : b.lengths) n += len;
  return n;
}

void forward_events(benchmark::State& state) {
  ModelConfig cfg = bench_config();
  ModelWeights<float> w = init_weights<float>(cfg, 1);
  Batch<float> batch = bench_batch(cfg.num_channels, cfg.num_classes, 8,
                                   static_cast<std::size_t>(state.range(0)));
  ForwardOptions opt;
  Mat<float> logits;
  for (auto _ : state) {
    model_forward<float>(w, batch, opt, &logits, nullptr);
    benchmark::DoNotOptimize(logits.v.data());
  }
  state.SetItemsProcessed(state.iterations() * batch_events(batch));
}

void forward_backward_events(benchmark::State& state) {
  ModelConfig cfg = bench_config();
  ModelWeights<float> w = init_weights<float>(cfg, 1);
  Batch<float> batch = bench_batch(cfg.num_channels, cfg.num_classes, 8,
                                   static_cast<std::size_t>(state.range(0)));
  ForwardOptions opt;
  opt.train = true;
  Mat<float> logits;
  std::vector<RowCache<float>> caches;
  for (auto _ : state) {
    model_forward(w, batch, opt, &logits, &caches);
    Mat<float> lbar(logits.rows, logits.cols);
    for (std::size_t i = 0; i < lbar.v.size(); ++i) lbar.v[i] = 1.0f / (1.0f + i);
    ModelWeights<float> grads = zeros_like(w);
    model_backward(w, batch, caches, lbar, opt, &grads);
    benchmark::DoNotOptimize(grads.embedding.v.data());
  }
  state.SetItemsProcessed(state.iterations() * batch_events(batch));
}

}  // namespace

BENCHMARK(forward_events)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);
BENCHMARK(forward_backward_events)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
