#include "evssm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "evssm/rng.hpp"

namespace evssm {

namespace {

// stream tags for seed derivation; distinct per purpose
constexpr std::uint64_t kShuffleTag = 0x51;
constexpr std::uint64_t kAugmentTag = 0xa6;
constexpr std::uint64_t kDropoutTag = 0xd0;

template <typename T>
std::size_t argmax_row(const T* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::runtime_error("train: epochs must be >= 1");
  if (batch_size < 1) throw std::runtime_error("train: batch_size must be >= 1");
  if (lr < 0) throw std::runtime_error("train: lr must be >= 0");
  if (lr_floor < 0 || lr_floor > lr) throw std::runtime_error("train: lr_floor must be in [0, lr]");
  if (warmup_steps < 0) throw std::runtime_error("train: warmup_steps must be >= 0");
  if (schedule != "cosine" && schedule != "constant") {
    throw std::runtime_error("train: schedule must be 'cosine' or 'constant'");
  }
  if (weight_decay < 0) throw std::runtime_error("train: weight_decay must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw std::runtime_error("train: betas must be in [0, 1)");
  }
  if (!(adam_eps > 0)) throw std::runtime_error("train: adam_eps must be positive");
  if (!(dynamics_lr_factor > 0)) {
    throw std::runtime_error("train: dynamics_lr_factor must be positive");
  }
  if (clip_norm < 0) throw std::runtime_error("train: clip_norm must be >= 0");
  if (!(time_unit > 0)) throw std::runtime_error("train: time_unit must be positive");
  if (threads < 1) throw std::runtime_error("train: threads must be >= 1");
  if (augment.drop_prob < 0 || augment.drop_prob >= 1 || augment.cutmix_prob < 0 ||
      augment.cutmix_prob > 1) {
    throw std::runtime_error("train: augment probabilities out of range");
  }
  if (augment.time_jitter_us < 0 || augment.channel_jitter < 0) {
    throw std::runtime_error("train: jitter magnitudes must be >= 0");
  }
}

template <typename T>
TrainState<T> init_train_state(const ModelConfig& cfg, std::uint64_t seed) {
  TrainState<T> st;
  st.weights = init_weights<T>(cfg, seed);
  st.m = zeros_like(st.weights);
  st.v = zeros_like(st.weights);
  st.step = 0;
  st.seed = seed;
  return st;
}

template <typename T>
T cross_entropy_soft(const Mat<T>& logits, const std::vector<T>& labels, Mat<T>* logits_bar) {
  if (labels.size() != logits.v.size()) {
    throw std::runtime_error("cross_entropy: label/logit shape mismatch");
  }
  const std::size_t rows = logits.rows, k = logits.cols;
  if (rows == 0 || k == 0) throw std::runtime_error("cross_entropy: empty input");
  *logits_bar = Mat<T>(rows, k);
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.v.data() + r * k;
    const T* y = labels.data() + r * k;
    double ysum = 0;
    for (std::size_t i = 0; i < k; ++i) ysum += static_cast<double>(y[i]);
    if (std::abs(ysum - 1.0) > 1e-6) {
      throw std::runtime_error("cross_entropy: label row " + std::to_string(r) +
                               " sums to " + std::to_string(ysum) + ", expected 1");
    }
    T zmax = z[0];
    for (std::size_t i = 1; i < k; ++i) zmax = std::max(zmax, z[i]);
    double sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(static_cast<double>(z[i] - zmax));
    double lse = std::log(sum) + static_cast<double>(zmax);
    double dot = 0;
    for (std::size_t i = 0; i < k; ++i) {
      dot += static_cast<double>(y[i]) * static_cast<double>(z[i]);
    }
    total += lse - dot;
    T* g = logits_bar->v.data() + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      double p = std::exp(static_cast<double>(z[i] - zmax)) / sum;
      g[i] = static_cast<T>((p - static_cast<double>(y[i])) / static_cast<double>(rows));
    }
  }
  return static_cast<T>(total / static_cast<double>(rows));
}

double lr_schedule(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.schedule == "constant") return cfg.lr;
  std::int64_t span = total_steps - cfg.warmup_steps;
  if (span <= 0 || step >= total_steps) return cfg.lr_floor;
  double frac = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span);
  return cfg.lr_floor + (cfg.lr - cfg.lr_floor) * 0.5 * (1.0 + std::cos(M_PI * frac));
}

template <typename T>
void optimizer_step(TrainState<T>* st, const ModelWeights<T>& grads, const TrainConfig& cfg,
                    double lr_now) {
  st->step += 1;
  const double t = static_cast<double>(st->step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  std::vector<std::vector<T>*> ws, ms, vs;
  std::vector<ParamRole> roles;
  st->weights.for_each_tensor([&](const std::string&, std::vector<T>& v, ParamRole r) {
    ws.push_back(&v);
    roles.push_back(r);
  });
  st->m.for_each_tensor([&](const std::string&, std::vector<T>& v, ParamRole) {
    ms.push_back(&v);
  });
  st->v.for_each_tensor([&](const std::string&, std::vector<T>& v, ParamRole) {
    vs.push_back(&v);
  });
  std::vector<const std::vector<T>*> gs;
  grads.for_each_tensor([&](const std::string&, const std::vector<T>& v, ParamRole) {
    gs.push_back(&v);
  });
  if (ws.size() != gs.size() || ws.size() != ms.size() || ws.size() != vs.size()) {
    throw std::runtime_error("optimizer: tensor layout mismatch");
  }

  for (std::size_t ti = 0; ti < ws.size(); ++ti) {
    std::vector<T>& w = *ws[ti];
    std::vector<T>& m = *ms[ti];
    std::vector<T>& v = *vs[ti];
    const std::vector<T>& g = *gs[ti];
    if (w.size() != g.size()) throw std::runtime_error("optimizer: tensor size mismatch");
    const bool dynamics = roles[ti] == ParamRole::Dynamics;
    const double lr_p = lr_now * (dynamics ? cfg.dynamics_lr_factor : 1.0);
    const double decay = (dynamics && !cfg.decay_dynamics) ? 0.0 : cfg.weight_decay;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double gi = g[i];
      double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
      double wi = static_cast<double>(w[i]);
      wi -= lr_p * update + lr_p * decay * wi;
      w[i] = static_cast<T>(wi);
    }
  }
}

std::int64_t steps_per_epoch(std::size_t samples, int batch_size) {
  return static_cast<std::int64_t>((samples + static_cast<std::size_t>(batch_size) - 1) /
                                   static_cast<std::size_t>(batch_size));
}

MetricsRecord to_metrics(int epoch, const std::string& split, const EpochStats& s) {
  MetricsRecord m;
  m.epoch = epoch;
  m.split = split;
  m.loss = s.loss;
  m.accuracy = s.accuracy;
  m.wall_seconds = s.wall_seconds;
  m.events_per_sec =
      s.wall_seconds > 0 ? static_cast<double>(s.events) / s.wall_seconds : 0.0;
  return m;
}

namespace {

template <typename T>
void clip_gradients(ModelWeights<T>* grads, double clip_norm) {
  double sq = 0;
  grads->for_each_tensor([&](const std::string&, const std::vector<T>& v, ParamRole) {
    for (T x : v) sq += static_cast<double>(x) * static_cast<double>(x);
  });
  double norm = std::sqrt(sq);
  if (norm <= clip_norm || norm == 0) return;
  T scale = static_cast<T>(clip_norm / norm);
  grads->for_each_tensor([&](const std::string&, std::vector<T>& v, ParamRole) {
    for (T& x : v) x *= scale;
  });
}

template <typename T>
void score_batch(const Mat<T>& logits, const Batch<T>& batch, std::int64_t* correct) {
  for (int r = 0; r < batch.rows; ++r) {
    const T* z = logits.v.data() + static_cast<std::size_t>(r) * logits.cols;
    const T* y = batch.labels.data() + static_cast<std::size_t>(r) * logits.cols;
    if (argmax_row(z, logits.cols) == argmax_row(y, logits.cols)) ++*correct;
  }
}

}  // namespace

template <typename T>
EpochStats train_epoch(TrainState<T>* st, const std::vector<EventStream>& data,
                       const TrainConfig& cfg, int epoch, std::int64_t total_steps) {
  cfg.validate();
  if (data.empty()) throw std::runtime_error("train: empty dataset");
  const std::size_t n = data.size();
  const ModelConfig& mcfg = st->weights.cfg;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  {
    Rng rng(Rng::derive(st->seed, {kShuffleTag, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
  }

  const bool jitter = cfg.augment.drop_prob > 0 || cfg.augment.time_jitter_us > 0 ||
                      cfg.augment.channel_jitter > 0;

  EpochStats stats;
  double loss_sum = 0;
  std::int64_t correct = 0, seen = 0;
  const std::uint64_t drop_seed = Rng::derive(st->seed, {kDropoutTag});
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
    std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
    std::vector<EventStream> prepared;
    prepared.reserve(stop - start);
    for (std::size_t pos = start; pos < stop; ++pos) {
      std::size_t idx = order[pos];
      Rng arng(Rng::derive(st->seed, {kAugmentTag, static_cast<std::uint64_t>(epoch),
                                      static_cast<std::uint64_t>(idx)}));
      EventStream s = data[idx];
      if (cfg.augment.cutmix_prob > 0 && arng.bernoulli(cfg.augment.cutmix_prob)) {
        std::size_t partner =
            static_cast<std::size_t>(arng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
        s = cutmix(s, data[partner], arng);
      }
      if (jitter) s = augment_jitter_drop(s, cfg.augment, arng);
      if (cfg.max_events > 0 && s.events.size() > cfg.max_events) {
        s = slice_events(s, cfg.max_events, arng);
      }
      prepared.push_back(std::move(s));
    }
    std::vector<const EventStream*> ptrs;
    ptrs.reserve(prepared.size());
    for (const EventStream& s : prepared) ptrs.push_back(&s);
    Batch<T> batch = batch_pad<T>(ptrs, cfg.time_unit, mcfg.num_classes);

    ForwardOptions opt;
    opt.train = true;
    opt.dropout_seed = drop_seed;
    opt.step = st->step;
    opt.threads = cfg.threads;

    Mat<T> logits;
    std::vector<RowCache<T>> caches;
    model_forward(st->weights, batch, opt, &logits, &caches);

    Mat<T> logits_bar;
    T loss = cross_entropy_soft(logits, batch.labels, &logits_bar);

    ModelWeights<T> grads = zeros_like(st->weights);
    model_backward(st->weights, batch, caches, logits_bar, opt, &grads);
    if (cfg.clip_norm > 0) clip_gradients(&grads, cfg.clip_norm);

    double lr_now = lr_schedule(cfg, st->step, total_steps);
    optimizer_step(st, grads, cfg, lr_now);

    loss_sum += static_cast<double>(loss) * static_cast<double>(batch.rows);
    score_batch(logits, batch, &correct);
    for (int len : batch.lengths) stats.events += len;
    seen += batch.rows;
    stats.batches += 1;
  }

  stats.loss = loss_sum / static_cast<double>(seen);
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  stats.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return stats;
}

template <typename T>
EpochStats evaluate(const ModelWeights<T>& w, const std::vector<EventStream>& data,
                    const TrainConfig& cfg) {
  EpochStats stats;
  if (data.empty()) return stats;
  double loss_sum = 0;
  std::int64_t correct = 0, seen = 0;
  const std::size_t n = data.size();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
    std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
    std::vector<const EventStream*> ptrs;
    ptrs.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) ptrs.push_back(&data[i]);
    Batch<T> batch = batch_pad<T>(ptrs, cfg.time_unit, w.cfg.num_classes);

    ForwardOptions opt;
    opt.train = false;
    opt.threads = cfg.threads;

    Mat<T> logits;
    model_forward<T>(w, batch, opt, &logits, nullptr);
    Mat<T> logits_bar;
    T loss = cross_entropy_soft(logits, batch.labels, &logits_bar);
    loss_sum += static_cast<double>(loss) * static_cast<double>(batch.rows);
    score_batch(logits, batch, &correct);
    for (int len : batch.lengths) stats.events += len;
    seen += batch.rows;
    stats.batches += 1;
  }
  stats.loss = loss_sum / static_cast<double>(seen);
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  stats.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return stats;
}

#define EVSSM_TRAINING_INST(T)                                                               \
  template struct TrainState<T>;                                                             \
  template TrainState<T> init_train_state<T>(const ModelConfig&, std::uint64_t);             \
  template T cross_entropy_soft(const Mat<T>&, const std::vector<T>&, Mat<T>*);              \
  template void optimizer_step(TrainState<T>*, const ModelWeights<T>&, const TrainConfig&,   \
                               double);                                                      \
  template EpochStats train_epoch(TrainState<T>*, const std::vector<EventStream>&,           \
                                  const TrainConfig&, int, std::int64_t);                    \
  template EpochStats evaluate(const ModelWeights<T>&, const std::vector<EventStream>&,      \
                               const TrainConfig&);
EVSSM_TRAINING_INST(float)
EVSSM_TRAINING_INST(double)
#undef EVSSM_TRAINING_INST

}  // namespace evssm
