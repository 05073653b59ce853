#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evssm/ablation.hpp"
#include "evssm/checkpoint.hpp"
#include "evssm/config.hpp"
#include "evssm/events.hpp"
#include "evssm/gradcheck.hpp"
#include "evssm/rng.hpp"
#include "evssm/synthetic.hpp"
#include "evssm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evssm;

namespace {

json metrics_json(const MetricsRecord& m) {
  return json{{"epoch", m.epoch},         {"split", m.split},
              {"loss", m.loss},           {"accuracy", m.accuracy},
              {"events_per_sec", m.events_per_sec}, {"wall_seconds", m.wall_seconds}};
}

std::uint32_t dataset_channels(const Dataset& ds) {
  std::uint32_t j = 0;
  for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
    for (const EventStream& s : *split) j = std::max(j, s.num_channels);
  }
  return j;
}

int dataset_classes(const Dataset& ds) {
  int k = 0;
  for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
    for (const EventStream& s : *split) {
      if (s.label.is_soft()) {
        k = std::max(k, static_cast<int>(s.label.probs().size()));
      } else {
        k = std::max(k, s.label.hard_class() + 1);
      }
    }
  }
  return k;
}

Dataset load_train_data(const RunConfig& cfg) {
  if (!cfg.data.empty()) {
    if (!fs::exists(cfg.data)) {
      throw std::runtime_error("dataset manifest not found: " + cfg.data);
    }
    return load_dataset(cfg.data);
  }
  // built-in synthetic task; fixed per seed so reruns see the same data
  return gen_synthetic_timing_task(cfg.synth, Rng::derive(cfg.seed, {0xda}));
}

void resolve_dims(RunConfig* cfg, const Dataset& ds) {
  std::uint32_t j = dataset_channels(ds);
  int k = dataset_classes(ds);
  if (cfg->model.num_channels == 0) cfg->model.num_channels = j;
  if (cfg->model.num_classes == 0) cfg->model.num_classes = k;
  if (j > cfg->model.num_channels) {
    throw std::runtime_error("model expects " + std::to_string(cfg->model.num_channels) +
                             " channels but the dataset uses " + std::to_string(j));
  }
  if (k > cfg->model.num_classes) {
    throw std::runtime_error("model expects " + std::to_string(cfg->model.num_classes) +
                             " classes but the dataset uses " + std::to_string(k));
  }
}

int latest_checkpoint_epoch(const fs::path& dir) {
  int best = -1;
  if (!fs::is_directory(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) != 0) continue;
    try {
      best = std::max(best, std::stoi(name.substr(5)));
    } catch (const std::exception&) {
    }
  }
  return best;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::int64_t seed = -1;
  int threads = 0;
  bool resume = false;
  bool select_on_test = false;
};

template <typename T>
int run_train(RunConfig cfg, const TrainArgs& args) {
  Dataset ds = load_train_data(cfg);
  if (ds.train.empty()) throw std::runtime_error("dataset has no training split");
  resolve_dims(&cfg, ds);
  cfg.validate();

  fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir);
  {
    std::ofstream echo(out_dir / "config.echo");
    echo << run_config_json(cfg);
  }

  TrainState<T> st;
  int start_epoch = 0;
  if (args.resume) {
    int have = latest_checkpoint_epoch(out_dir);
    if (have > 0) {
      CkptInfo info;
      st = load_train_state<T>(out_dir / ("ckpt_" + std::to_string(have)), &info);
      start_epoch = info.epochs_done;
      std::cout << "resuming from epoch " << start_epoch << " (step " << st.step << ")\n";
    }
  }
  if (start_epoch == 0) st = init_train_state<T>(cfg.model, cfg.seed);
  if (start_epoch >= cfg.train.epochs) {
    std::cout << "nothing to do: " << start_epoch << " epochs already trained\n";
    return 0;
  }

  const std::vector<EventStream>* eval_split = nullptr;
  std::string eval_name;
  if (args.select_on_test) {
    eval_split = &ds.test;
    eval_name = "test";
  } else if (!ds.valid.empty()) {
    eval_split = &ds.valid;
    eval_name = "valid";
  } else if (!ds.test.empty()) {
    eval_split = &ds.test;
    eval_name = "test";
  }

  double best_acc = -1;
  int best_epoch = -1;
  if (start_epoch > 0 && !eval_name.empty()) {
    // re-seed the best-epoch tracker from the records of the interrupted run
    std::ifstream prev(out_dir / "metrics.ndjson");
    std::string line;
    while (std::getline(prev, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded() || rec.value("split", "") != eval_name) continue;
      if (rec.value("epoch", 0) > start_epoch) continue;
      double acc = rec.value("accuracy", -1.0);
      if (acc > best_acc) {
        best_acc = acc;
        best_epoch = rec.value("epoch", 0);
      }
    }
  }

  std::ofstream metrics(out_dir / "metrics.ndjson", start_epoch > 0 ? std::ios::app
                                                                    : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write metrics in " + out_dir.string());

  std::int64_t total_steps = static_cast<std::int64_t>(cfg.train.epochs) *
                             steps_per_epoch(ds.train.size(), cfg.train.batch_size);
  for (int epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
    EpochStats tr = train_epoch(&st, ds.train, cfg.train, epoch, total_steps);
    MetricsRecord tm = to_metrics(epoch + 1, "train", tr);
    metrics << metrics_json(tm).dump() << "\n";
    std::cout << "epoch " << epoch + 1 << "/" << cfg.train.epochs << " train loss=" << tr.loss
              << " acc=" << tr.accuracy << " (" << static_cast<std::int64_t>(tm.events_per_sec)
              << " ev/s)";

    if (eval_split) {
      EpochStats ev = evaluate(st.weights, *eval_split, cfg.train);
      metrics << metrics_json(to_metrics(epoch + 1, eval_name, ev)).dump() << "\n";
      std::cout << " | " << eval_name << " loss=" << ev.loss << " acc=" << ev.accuracy;
      if (ev.accuracy > best_acc) {
        best_acc = ev.accuracy;
        best_epoch = epoch + 1;
      }
    }
    std::cout << "\n";
    metrics.flush();

    if ((epoch + 1) % cfg.ckpt_every == 0 || epoch + 1 == cfg.train.epochs) {
      CkptInfo info{epoch + 1, cfg.train.time_unit, cfg.train.batch_size};
      save_train_state(out_dir / ("ckpt_" + std::to_string(epoch + 1)), st, info);
    }
  }

  std::ostringstream report;
  report << "epochs " << cfg.train.epochs << "\n";
  report << "steps " << st.step << "\n";
  report << "params " << st.weights.param_count() << "\n";
  if (best_epoch > 0) {
    report << "best_" << eval_name << "_acc " << best_acc << " at epoch " << best_epoch << "\n";
  }
  if (!ds.test.empty() && eval_name != "test") {
    EpochStats te = evaluate(st.weights, ds.test, cfg.train);
    metrics << metrics_json(to_metrics(cfg.train.epochs, "test", te)).dump() << "\n";
    report << "final_test_acc " << te.accuracy << "\n";
  }
  {
    std::ofstream rep(out_dir / "report.txt");
    rep << report.str();
  }
  std::cout << report.str();
  return 0;
}

int cmd_train(const TrainArgs& args) {
  std::vector<std::string> overrides = args.overrides;
  if (args.seed >= 0) overrides.push_back("seed=" + std::to_string(args.seed));
  if (!args.out.empty()) overrides.push_back("out_dir=" + args.out);
  if (args.threads > 0) overrides.push_back("train.threads=" + std::to_string(args.threads));
  RunConfig cfg = args.config.empty() ? load_run_config("", overrides)
                                      : load_run_config_file(args.config, overrides);
  if (cfg.precision == "double") return run_train<double>(cfg, args);
  return run_train<float>(cfg, args);
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string out;
  int batch_size = 0;  // 0 uses the size recorded in the checkpoint
  int threads = 1;
  std::int64_t seed = -1;  // accepted for interface uniformity
};

template <typename T>
int run_eval(const EvalArgs& args) {
  ModelWeights<T> w = load_weights<T>(args.ckpt);
  Dataset ds = load_dataset(args.data);
  const std::vector<EventStream>* streams = nullptr;
  if (args.split == "train") {
    streams = &ds.train;
  } else if (args.split == "valid") {
    streams = &ds.valid;
  } else if (args.split == "test") {
    streams = &ds.test;
  } else {
    throw std::runtime_error("unknown split '" + args.split + "'");
  }
  if (streams->empty()) {
    throw std::runtime_error("split '" + args.split + "' of " + args.data + " is empty");
  }
  for (const EventStream& s : *streams) {
    if (s.num_channels != w.cfg.num_channels) {
      throw std::runtime_error("channel count mismatch: checkpoint expects " +
                               std::to_string(w.cfg.num_channels) + ", dataset sample has " +
                               std::to_string(s.num_channels));
    }
  }

  CkptInfo info = checkpoint_info(args.ckpt);
  TrainConfig tc;
  tc.batch_size = args.batch_size > 0 ? args.batch_size : info.batch_size;
  tc.threads = args.threads;
  tc.time_unit = info.time_unit;
  EpochStats ev = evaluate(w, *streams, tc);
  json line = metrics_json(to_metrics(0, args.split, ev));
  std::cout << line.dump() << "\n";
  if (!args.out.empty()) {
    std::ofstream f(args.out);
    f << line.dump() << "\n";
  }
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  std::string precision = checkpoint_precision(args.ckpt);
  if (precision == "double") return run_eval<double>(args);
  return run_eval<float>(args);
}

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 1;
  SynthConfig cfg;
};

int cmd_synth(const SynthArgs& args) {
  args.cfg.validate();
  Dataset ds = gen_synthetic_timing_task(args.cfg, args.seed);
  write_dataset(args.out, ds);
  std::cout << "wrote " << ds.train.size() << " train / " << ds.valid.size() << " valid / "
            << ds.test.size() << " test streams to " << args.out << "\n";
  return 0;
}

int cmd_inspect(const std::string& manifest) {
  Dataset ds = load_dataset(manifest);
  InspectReport r = inspect_dataset(ds);
  std::cout << "channels " << r.num_channels << ", classes " << r.num_classes << "\n";
  for (const SplitStats& s : r.splits) {
    std::cout << s.split << ": " << s.samples << " samples, events min/median/max = "
              << s.min_events << "/" << s.median_events << "/" << s.max_events << "\n";
    for (const ClassStats& c : s.per_class) {
      std::cout << "  class " << c.cls << ": " << c.samples
                << " samples, events min/median/max = " << c.min_events << "/"
                << c.median_events << "/" << c.max_events << "\n";
    }
  }
  return 0;
}

struct GradcheckArgs {
  std::vector<std::string> modes = {"async", "dirac", "zoh", "zoh_unit"};
  double eps = 1e-5;
  double kernel_threshold = 1e-4;
  double model_threshold = 1e-3;
  double dropout = 0.0;
  std::uint64_t seed = 42;
};

int cmd_gradcheck(const GradcheckArgs& args) {
  bool ok = true;
  for (const std::string& mode : args.modes) {
    DiscretizationMode m = parse_mode(mode);
    GradcheckReport kr = gradcheck_kernel(5, 6, 33, m, args.seed, args.eps);
    std::cout << "kernel " << mode << ": max_rel=" << kr.max_rel
              << (kr.pass(args.kernel_threshold) ? " PASS" : " FAIL") << "\n";
    ok = ok && kr.pass(args.kernel_threshold);

    ModelConfig tiny;
    tiny.num_layers = 2;
    tiny.state_size = 5;
    tiny.model_width = 6;
    tiny.num_channels = 7;
    tiny.num_classes = 3;
    tiny.pool = {2, 1};
    tiny.width_mult = {2, 1};
    tiny.mode = mode;
    tiny.dropout = args.dropout;
    GradcheckReport mr = gradcheck_model(tiny, args.seed, args.eps);
    std::cout << "model  " << mode << ": max_rel=" << mr.max_rel
              << (mr.pass(args.model_threshold) ? " PASS" : " FAIL") << "\n";
    for (const GradcheckEntry& e : mr.tensors) {
      if (!(e.max_rel <= args.model_threshold)) {
        std::cout << "    " << e.tensor << " max_rel=" << e.max_rel << "\n";
      }
    }
    ok = ok && mr.pass(args.model_threshold);
  }
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
  return ok ? 0 : 1;
}

struct AblationArgs {
  std::string out;
  std::vector<std::string> modes = {"async", "dirac", "zoh", "zoh_unit"};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int epochs = 0;  // 0 keeps the default
  int threads = 1;
  std::uint64_t seed = 7;  // dataset seed
  bool quiet = false;
};

int cmd_ablation(const AblationArgs& args) {
  AblationConfig cfg = default_timing_ablation();
  cfg.modes = args.modes;
  cfg.seeds = args.seeds;
  cfg.data_seed = args.seed;
  if (args.epochs > 0) cfg.train.epochs = args.epochs;
  cfg.train.threads = args.threads;

  std::vector<AblationRow> rows = run_ablation(cfg, args.quiet ? nullptr : &std::cout);
  std::string table = ablation_table(rows);
  std::cout << table;

  if (!args.out.empty()) {
    fs::create_directories(args.out);
    std::ofstream rep(fs::path(args.out) / "report.txt");
    rep << table;
    json jrows = json::array();
    for (const AblationRow& r : rows) {
      jrows.push_back(json{{"mode", r.mode},
                           {"mean", r.mean},
                           {"stddev", r.stddev},
                           {"accuracies", r.accuracies}});
    }
    std::ofstream jf(fs::path(args.out) / "report.json");
    jf << jrows.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-stream state space model toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model, writing a run directory");
  train->add_option("--config,-c", train_args.config, "JSON config file");
  train->add_option("--override,-O", train_args.overrides,
                    "dotted-key override, e.g. train.lr=0.001");
  train->add_option("--out", train_args.out, "run directory (overrides out_dir)");
  train->add_option("--seed", train_args.seed, "RNG seed (overrides config)");
  train->add_option("--threads", train_args.threads, "worker threads");
  train->add_flag("--resume", train_args.resume, "continue from the latest checkpoint");
  train->add_flag("--select-on-test", train_args.select_on_test,
                  "track the best epoch on the test split instead of valid");
  train->callback([&] { rc = cmd_train(train_args); });

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", eval_args.ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_args.data, "dataset manifest")->required();
  eval->add_option("--split", eval_args.split, "train|valid|test (default test)");
  eval->add_option("--out", eval_args.out, "also write the metrics record here");
  eval->add_option("--batch-size", eval_args.batch_size, "evaluation batch size");
  eval->add_option("--threads", eval_args.threads, "worker threads");
  eval->add_option("--seed", eval_args.seed, "unused; accepted for uniformity");
  eval->callback([&] { rc = cmd_eval(eval_args); });

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate the synthetic timing dataset");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--seed", synth_args.seed, "RNG seed");
  synth->add_option("--channels", synth_args.cfg.num_channels, "channel count");
  synth->add_option("--classes", synth_args.cfg.num_classes, "class count");
  synth->add_option("--events", synth_args.cfg.events_per_sample, "events per sample");
  synth->add_option("--train-per-class", synth_args.cfg.train_per_class, "training samples");
  synth->add_option("--test-per-class", synth_args.cfg.test_per_class, "test samples");
  synth->add_option("--interval-means", synth_args.cfg.interval_mean_us,
                    "per-class mean gap in microseconds");
  synth->callback([&] { rc = cmd_synth(synth_args); });

  std::string inspect_data;
  std::int64_t inspect_seed = 0;
  auto* inspect = app.add_subcommand("inspect", "summarize a dataset manifest");
  inspect->add_option("--data", inspect_data, "dataset manifest")->required();
  inspect->add_option("--seed", inspect_seed, "unused; accepted for uniformity");
  inspect->callback([&] { rc = cmd_inspect(inspect_data); });

  GradcheckArgs gc_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--modes", gc_args.modes, "discretization modes to check");
  gradcheck->add_option("--eps", gc_args.eps, "finite-difference step");
  gradcheck->add_option("--kernel-threshold", gc_args.kernel_threshold, "kernel pass bound");
  gradcheck->add_option("--model-threshold", gc_args.model_threshold, "model pass bound");
  gradcheck->add_option("--dropout", gc_args.dropout, "dropout rate for the model check");
  gradcheck->add_option("--seed", gc_args.seed, "RNG seed");
  gradcheck->callback([&] { rc = cmd_gradcheck(gc_args); });

  AblationArgs ab_args;
  auto* ablation = app.add_subcommand("ablation", "discretization-mode comparison study");
  ablation->add_option("--out", ab_args.out, "report directory");
  ablation->add_option("--modes", ab_args.modes, "modes to compare");
  ablation->add_option("--seeds", ab_args.seeds, "training seeds (need at least 2)");
  ablation->add_option("--epochs", ab_args.epochs, "override training epochs");
  ablation->add_option("--threads", ab_args.threads, "worker threads");
  ablation->add_option("--seed", ab_args.seed, "dataset seed");
  ablation->add_flag("--quiet", ab_args.quiet, "suppress per-epoch progress");
  ablation->callback([&] { rc = cmd_ablation(ab_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
