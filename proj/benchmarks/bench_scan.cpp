#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "evssm/rng.hpp"
#include "evssm/scan.hpp"
#include "evssm/ssm.hpp"

using namespace evssm;

namespace {

template <typename T>
SSMParams<T> bench_params(std::size_t h, std::size_t n) {
  SSMParams<T> p;
  Rng rng(99);
  p.phi.resize(h);
  p.theta.resize(h);
  p.log_delta.resize(h);
  for (std::size_t i = 0; i < h; ++i) {
    p.phi[i] = static_cast<T>(rng.uniform() - 1.0);
    p.theta[i] = static_cast<T>(rng.uniform() * 3.0);
    p.log_delta[i] = static_cast<T>(rng.uniform() - 0.5);
  }
  p.B = CMat<T>(h, n);
  p.C = CMat<T>(n, h);
  for (std::size_t i = 0; i < h * n; ++i) {
    p.B.re[i] = static_cast<T>(rng.normal());
    p.B.im[i] = static_cast<T>(rng.normal());
    p.C.re[i] = static_cast<T>(rng.normal());
    p.C.im[i] = static_cast<T>(rng.normal());
  }
  p.D.assign(n, T(1));
  return p;
}

template <typename T>
void fill_sequence(std::size_t m, std::size_t n, RSeq<T>* u, std::vector<T>* gaps) {
  Rng rng(7);
  *u = RSeq<T>(m, n);
  for (T& v : u->v) v = static_cast<T>(rng.normal());
  gaps->resize(m);
  for (T& d : *gaps) d = static_cast<T>(rng.uniform() * 1e-3);
  (*gaps)[0] = T(0);
}

void seq_forward(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  const std::size_t h = 64, n = 16;
  SSMParams<float> p = bench_params<float>(h, n);
  RSeq<float> u;
  std::vector<float> gaps;
  fill_sequence(m, n, &u, &gaps);
  SSMForward<float> out;
  for (auto _ : state) {
    ssm_forward_sequential(p, DiscretizationMode::Async, u, gaps, &out);
    benchmark::DoNotOptimize(out.y.v.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(m));
}

void scan_forward(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  const std::size_t h = 64, n = 16;
  SSMParams<float> p = bench_params<float>(h, n);
  RSeq<float> u;
  std::vector<float> gaps;
  fill_sequence(m, n, &u, &gaps);
  ScanOptions opt;
  SSMForward<float> out;
  for (auto _ : state) {
    ssm_forward_scan(p, DiscretizationMode::Async, u, gaps, opt, &out);
    benchmark::DoNotOptimize(out.y.v.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(m));
}

void raw_scan(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  const std::size_t h = 64;
  Rng rng(3);
  std::vector<float> ar(m * h), ai(m * h), br(m * h), bi(m * h);
  for (std::size_t i = 0; i < m * h; ++i) {
    ar[i] = static_cast<float>(rng.uniform() * 0.99);
    ai[i] = static_cast<float>(rng.uniform() * 0.1);
    br[i] = static_cast<float>(rng.normal());
    bi[i] = static_cast<float>(rng.normal());
  }
  ScanOptions opt;
  std::vector<float> wr, wi, vr, vi;
  for (auto _ : state) {
    wr = ar;
    wi = ai;
    vr = br;
    vi = bi;
    scan_inclusive(wr.data(), wi.data(), vr.data(), vi.data(), m, h, opt);
    benchmark::DoNotOptimize(vr.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(m));
}

}  // namespace

BENCHMARK(seq_forward)->Arg(1 << 10)->Arg(1 << 12)->Arg(1 << 14)->Arg(1 << 16);
BENCHMARK(scan_forward)->Arg(1 << 10)->Arg(1 << 12)->Arg(1 << 14)->Arg(1 << 16);
BENCHMARK(raw_scan)->Arg(1 << 12)->Arg(1 << 16);

BENCHMARK_MAIN();
