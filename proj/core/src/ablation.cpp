#include "evssm/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace evssm {

AblationConfig default_timing_ablation() {
  AblationConfig cfg;
  cfg.synth.num_channels = 16;
  cfg.synth.num_classes = 2;
  cfg.synth.events_per_sample = 512;
  cfg.synth.train_per_class = 1000;
  cfg.synth.test_per_class = 250;
  cfg.synth.interval_mean_us = {1000.0, 4000.0};

  cfg.model.num_layers = 2;
  cfg.model.state_size = 32;
  cfg.model.model_width = 16;
  cfg.model.pool = {4, 4};
  cfg.model.timescale_min = 1e-3;
  cfg.model.timescale_max = 1e-1;

  cfg.train.epochs = 5;
  cfg.train.batch_size = 64;
  cfg.train.lr = 5e-3;
  cfg.train.lr_floor = 1e-5;
  cfg.train.warmup_steps = 32;
  cfg.train.weight_decay = 0.01;
  cfg.train.threads = 1;
  return cfg;
}

std::vector<AblationRow> run_ablation(const AblationConfig& cfg, std::ostream* log) {
  if (cfg.seeds.size() < 2) throw std::runtime_error("ablation: need at least 2 seeds");
  if (cfg.modes.empty()) throw std::runtime_error("ablation: need at least 1 mode");
  cfg.synth.validate();
  cfg.train.validate();

  Dataset data = gen_synthetic_timing_task(cfg.synth, cfg.data_seed);

  std::vector<AblationRow> rows;
  for (const std::string& mode : cfg.modes) {
    AblationRow row;
    row.mode = mode;
    for (std::uint64_t seed : cfg.seeds) {
      ModelConfig mcfg = cfg.model;
      mcfg.mode = mode;
      mcfg.num_channels = cfg.synth.num_channels;
      mcfg.num_classes = cfg.synth.num_classes;
      mcfg.validate();

      TrainState<float> st = init_train_state<float>(mcfg, seed);
      std::int64_t total =
          static_cast<std::int64_t>(cfg.train.epochs) *
          steps_per_epoch(data.train.size(), cfg.train.batch_size);
      for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        EpochStats tr = train_epoch(&st, data.train, cfg.train, epoch, total);
        if (log) {
          *log << "mode=" << mode << " seed=" << seed << " epoch=" << epoch + 1 << "/"
               << cfg.train.epochs << " loss=" << tr.loss << " acc=" << tr.accuracy << "\n";
        }
      }
      EpochStats te = evaluate(st.weights, data.test, cfg.train);
      row.accuracies.push_back(te.accuracy);
      if (log) {
        *log << "mode=" << mode << " seed=" << seed << " test_acc=" << te.accuracy << "\n";
      }
    }
    double sum = 0;
    for (double a : row.accuracies) sum += a;
    row.mean = sum / static_cast<double>(row.accuracies.size());
    double sq = 0;
    for (double a : row.accuracies) sq += (a - row.mean) * (a - row.mean);
    row.stddev = std::sqrt(sq / static_cast<double>(row.accuracies.size() - 1));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = "mode        mean_acc  std_acc   runs\n";
  char buf[128];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-10s  %8.4f  %7.4f  ", r.mode.c_str(), r.mean, r.stddev);
    out += buf;
    for (std::size_t i = 0; i < r.accuracies.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.4f", i ? "," : "", r.accuracies[i]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace evssm
