#include "evssm/synthetic.hpp"

#include <cmath>
#include <stdexcept>

namespace evssm {

void SynthConfig::validate() const {
  if (num_channels < 2) throw std::runtime_error("synthetic task needs at least 2 channels");
  if (num_classes < 2) throw std::runtime_error("synthetic task needs at least 2 classes");
  if (events_per_sample < 1) throw std::runtime_error("events_per_sample must be positive");
  if (train_per_class < 1 || test_per_class < 1) {
    throw std::runtime_error("per-class sample counts must be positive");
  }
  if (interval_mean_us.size() != static_cast<std::size_t>(num_classes)) {
    throw std::runtime_error("interval_mean_us needs one entry per class");
  }
  for (double m : interval_mean_us) {
    if (!(m > 0)) throw std::runtime_error("interval means must be positive");
  }
}

namespace {

EventStream make_sample(const SynthConfig& cfg, int cls, Rng& rng) {
  EventStream s;
  s.num_channels = cfg.num_channels;
  s.label = Label::hard(cls);
  s.events.resize(cfg.events_per_sample);
  std::uint64_t t = 0;
  for (std::size_t m = 0; m < cfg.events_per_sample; ++m) {
    if (m > 0) {
      double gap = rng.exponential(cfg.interval_mean_us[static_cast<std::size_t>(cls)]);
      t += static_cast<std::uint64_t>(std::llround(gap));
    }
    s.events[m].t_us = t;
    s.events[m].channel =
        static_cast<std::uint32_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.num_channels) - 1));
  }
  return s;
}

}  // namespace

Dataset gen_synthetic_timing_task(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset ds;
  // class-major generation keeps splits balanced and reproducible
  for (int split = 0; split < 2; ++split) {
    std::size_t per_class = split == 0 ? cfg.train_per_class : cfg.test_per_class;
    auto& out = split == 0 ? ds.train : ds.test;
    for (std::size_t i = 0; i < per_class; ++i) {
      for (int cls = 0; cls < cfg.num_classes; ++cls) {
        Rng rng(Rng::derive(seed, {static_cast<std::uint64_t>(split),
                                   static_cast<std::uint64_t>(cls), i}));
        out.push_back(make_sample(cfg, cls, rng));
      }
    }
  }
  return ds;
}

}  // namespace evssm
