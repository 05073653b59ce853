#include "evssm/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <utility>

#include "evssm/parallel.hpp"
#include "evssm/rng.hpp"

namespace evssm {

void ModelConfig::validate() const {
  if (num_layers < 1) throw std::runtime_error("model: num_layers must be >= 1");
  if (state_size < 1) throw std::runtime_error("model: state_size must be >= 1");
  if (model_width < 1) throw std::runtime_error("model: model_width must be >= 1");
  if (num_channels < 1) throw std::runtime_error("model: num_channels must be >= 1");
  if (num_classes < 1) throw std::runtime_error("model: num_classes must be >= 1");
  auto check_per_layer = [&](const std::vector<int>& v, const char* what) {
    if (v.empty() || (v.size() != 1 && v.size() != static_cast<std::size_t>(num_layers))) {
      throw std::runtime_error(std::string("model: ") + what +
                               " needs one entry or one per layer");
    }
    for (int x : v) {
      if (x < 1) throw std::runtime_error(std::string("model: ") + what + " entries must be >= 1");
    }
  };
  check_per_layer(pool, "pool");
  check_per_layer(width_mult, "width_mult");
  if (dropout < 0 || dropout >= 1) throw std::runtime_error("model: dropout must be in [0, 1)");
  parse_mode(mode);
  if (gate_variant != "preact" && gate_variant != "glu") {
    throw std::runtime_error("model: gate_variant must be 'preact' or 'glu'");
  }
  if (!(timescale_min > 0) || !(timescale_max >= timescale_min)) {
    throw std::runtime_error("model: timescale band must satisfy 0 < min <= max");
  }
  if (scan_chunk < 2) throw std::runtime_error("model: scan_chunk must be >= 2");
  if (!(norm_eps > 0)) throw std::runtime_error("model: norm_eps must be positive");
}

int ModelConfig::pool_at(int layer) const {
  return pool.size() == 1 ? pool[0] : pool[static_cast<std::size_t>(layer)];
}

int ModelConfig::mult_at(int layer) const {
  return width_mult.size() == 1 ? width_mult[0] : width_mult[static_cast<std::size_t>(layer)];
}

int ModelConfig::width_at(int layer) const {
  int w = model_width;
  for (int l = 0; l < layer; ++l) w *= mult_at(l);
  return w;
}

template <typename T>
std::size_t ModelWeights<T>::param_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const std::vector<T>& v, ParamRole) { n += v.size(); });
  return n;
}

namespace {

template <typename T>
void fill_normal(std::vector<T>& v, double std, Rng& rng) {
  for (T& x : v) x = static_cast<T>(std * rng.normal());
}

}  // namespace

template <typename T>
ModelWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelWeights<T> w;
  w.cfg = cfg;
  std::size_t h = static_cast<std::size_t>(cfg.state_size);

  {
    Rng rng(Rng::derive(seed, {0xe0}));
    w.embedding = Mat<T>(cfg.num_channels, static_cast<std::size_t>(cfg.model_width));
    fill_normal(w.embedding.v, 1.0, rng);
  }

  w.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    LayerWeights<T>& lw = w.layers[static_cast<std::size_t>(l)];
    std::size_t width = static_cast<std::size_t>(cfg.width_at(l));
    Rng rng(Rng::derive(seed, {0x11, static_cast<std::uint64_t>(l)}));

    lw.ssm.phi.resize(h);
    lw.ssm.theta.resize(h);
    lw.ssm.log_delta.resize(h);
    for (std::size_t i = 0; i < h; ++i) {
      // magnitude of Re(lambda), log-uniform
      double mag = std::exp(rng.uniform(std::log(0.25), std::log(1.0)));
      // target timescale 1 / (delta * |Re lambda|), log-uniform over the band
      double tau = std::exp(rng.uniform(std::log(cfg.timescale_min), std::log(cfg.timescale_max)));
      lw.ssm.phi[i] = static_cast<T>(std::log(mag));
      lw.ssm.theta[i] = static_cast<T>(rng.uniform(0.0, M_PI));
      lw.ssm.log_delta[i] = static_cast<T>(-std::log(tau * mag));
    }
    lw.ssm.B = CMat<T>(h, width);
    fill_normal(lw.ssm.B.re, std::sqrt(0.5 / static_cast<double>(width)), rng);
    fill_normal(lw.ssm.B.im, std::sqrt(0.5 / static_cast<double>(width)), rng);
    lw.ssm.C = CMat<T>(width, h);
    fill_normal(lw.ssm.C.re, std::sqrt(0.5 / static_cast<double>(h)), rng);
    fill_normal(lw.ssm.C.im, std::sqrt(0.5 / static_cast<double>(h)), rng);
    lw.ssm.D.assign(width, T(1));
    lw.gate_w = Mat<T>(width, width);
    fill_normal(lw.gate_w.v, std::sqrt(1.0 / static_cast<double>(width)), rng);
    lw.norm_scale.assign(width, T(1));
    lw.norm_bias.assign(width, T(0));
    int q = cfg.mult_at(l);
    if (q > 1) {
      lw.proj = Mat<T>(width * static_cast<std::size_t>(q), width);
      fill_normal(lw.proj.v, std::sqrt(1.0 / static_cast<double>(width)), rng);
    }
  }

  {
    Rng rng(Rng::derive(seed, {0xf0}));
    std::size_t wf = static_cast<std::size_t>(cfg.width_at(cfg.num_layers));
    w.readout_w = Mat<T>(static_cast<std::size_t>(cfg.num_classes), wf);
    fill_normal(w.readout_w.v, std::sqrt(1.0 / static_cast<double>(wf)), rng);
    w.readout_b.assign(static_cast<std::size_t>(cfg.num_classes), T(0));
  }
  return w;
}

template <typename T>
ModelWeights<T> zeros_like(const ModelWeights<T>& w) {
  ModelWeights<T> z = w;
  z.for_each_tensor([](const std::string&, std::vector<T>& v, ParamRole) {
    std::fill(v.begin(), v.end(), T(0));
  });
  return z;
}

template <typename T>
void embed_events(const std::uint32_t* channels, std::size_t m, const Mat<T>& table, RSeq<T>* out) {
  *out = RSeq<T>(m, table.cols);
  for (std::size_t k = 0; k < m; ++k) {
    if (channels[k] >= table.rows) {
      throw std::runtime_error("embed: channel " + std::to_string(channels[k]) +
                               " out of range [0, " + std::to_string(table.rows) + ")");
    }
    const T* src = table.v.data() + static_cast<std::size_t>(channels[k]) * table.cols;
    std::copy(src, src + table.cols, out->row(k));
  }
}

namespace {

std::size_t count_valid(const std::vector<std::uint8_t>& mask) {
  std::size_t v = 0;
  while (v < mask.size() && mask[v]) ++v;
  for (std::size_t i = v; i < mask.size(); ++i) {
    if (mask[i]) throw std::runtime_error("mask validity must be a prefix");
  }
  return v;
}

// last valid index of each group of p valid-prefixed positions
std::vector<std::size_t> kept_indices(std::size_t valid, std::size_t len, int p) {
  std::vector<std::size_t> kept;
  std::size_t groups = (len + static_cast<std::size_t>(p) - 1) / static_cast<std::size_t>(p);
  kept.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t lo = g * static_cast<std::size_t>(p);
    if (lo >= valid) break;
    kept.push_back(std::min(lo + static_cast<std::size_t>(p), valid) - 1);
  }
  return kept;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <typename T>
T gelu_grad(T x) {
  T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace

template <typename T>
void event_pool(const RSeq<T>& seq, const std::vector<std::uint8_t>& mask, int p,
                const Mat<T>& proj, RSeq<T>* out, std::vector<std::uint8_t>* mask_out) {
  if (p < 1) throw std::runtime_error("event_pool: p must be >= 1");
  if (mask.size() != seq.len) throw std::runtime_error("event_pool: mask length mismatch");
  std::size_t valid = count_valid(mask);
  std::size_t groups = (seq.len + static_cast<std::size_t>(p) - 1) / static_cast<std::size_t>(p);
  std::vector<std::size_t> kept = kept_indices(valid, seq.len, p);

  std::size_t out_w = seq.width;
  if (!proj.empty()) {
    if (proj.cols != seq.width) throw std::runtime_error("event_pool: projection width mismatch");
    out_w = proj.rows;
  }
  *out = RSeq<T>(groups, out_w);
  mask_out->assign(groups, 0);
  for (std::size_t g = 0; g < kept.size(); ++g) {
    (*mask_out)[g] = 1;
    const T* src = seq.row(kept[g]);
    T* dst = out->row(g);
    if (proj.empty()) {
      std::copy(src, src + seq.width, dst);
    } else {
      for (std::size_t r = 0; r < proj.rows; ++r) {
        T acc = 0;
        const T* pr = proj.v.data() + r * proj.cols;
        for (std::size_t c = 0; c < proj.cols; ++c) acc += pr[c] * src[c];
        dst[r] = acc;
      }
    }
  }
}

template <typename T>
void block_forward(const LayerWeights<T>& w, const ModelConfig& cfg, int layer, const RSeq<T>& in,
                   const std::vector<T>& deltas, const std::vector<std::uint8_t>& mask,
                   const ForwardOptions& opt, std::uint64_t drop_tag, BlockCache<T>* cache,
                   RSeq<T>* out, std::vector<T>* deltas_out, std::vector<std::uint8_t>* mask_out) {
  const std::size_t m = in.len;
  const std::size_t width = in.width;
  if (deltas.size() != m || mask.size() != m) {
    throw std::runtime_error("block: sequence length mismatch");
  }
  if (w.norm_scale.size() != width) throw std::runtime_error("block: width mismatch");
  const int p = cfg.pool_at(layer);

  cache->input = in;
  cache->deltas = deltas;
  cache->mask = mask;
  std::size_t valid = count_valid(mask);

  // pre-norm; padded rows are forced to zero so they cannot drive the state
  cache->mean.assign(m, T(0));
  cache->rstd.assign(m, T(0));
  cache->normed = RSeq<T>(m, width);
  for (std::size_t k = 0; k < valid; ++k) {
    const T* x = in.row(k);
    T mu = 0;
    for (std::size_t c = 0; c < width; ++c) mu += x[c];
    mu /= static_cast<T>(width);
    T var = 0;
    for (std::size_t c = 0; c < width; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= static_cast<T>(width);
    T rstd = T(1) / std::sqrt(var + static_cast<T>(cfg.norm_eps));
    cache->mean[k] = mu;
    cache->rstd[k] = rstd;
    T* o = cache->normed.row(k);
    for (std::size_t c = 0; c < width; ++c) {
      o[c] = (x[c] - mu) * rstd * w.norm_scale[c] + w.norm_bias[c];
    }
  }

  ScanOptions sopt{static_cast<std::size_t>(cfg.scan_chunk), 1};
  if (cfg.use_scan) {
    ssm_forward_scan(w.ssm, cfg.discretization(), cache->normed, deltas, sopt, &cache->ssm);
  } else {
    ssm_forward_sequential(w.ssm, cfg.discretization(), cache->normed, deltas, &cache->ssm);
  }

  const RSeq<T>& y = cache->ssm.y;
  cache->v = RSeq<T>(m, width);
  cache->gate_sig = RSeq<T>(m, width);
  cache->gated = RSeq<T>(m, width);
  const bool glu = cfg.gate_variant == "glu";
  std::vector<T> pre(width);
  for (std::size_t k = 0; k < m; ++k) {
    const T* yk = y.row(k);
    T* vk = cache->v.row(k);
    for (std::size_t c = 0; c < width; ++c) vk[c] = gelu(yk[c]);
    for (std::size_t r = 0; r < width; ++r) {
      T acc = 0;
      const T* wr = w.gate_w.v.data() + r * width;
      for (std::size_t c = 0; c < width; ++c) acc += wr[c] * vk[c];
      pre[r] = acc;
    }
    T* sk = cache->gate_sig.row(k);
    T* zk = cache->gated.row(k);
    for (std::size_t c = 0; c < width; ++c) {
      sk[c] = sigmoid(pre[c]);
      zk[c] = (glu ? vk[c] : yk[c]) * sk[c];
    }
  }

  // dropout (inverted scaling), then skip
  RSeq<T> resid = cache->gated;
  if (opt.train && cfg.dropout > 0) {
    cache->drop_mask.assign(m * width, 1);
    Rng rng(Rng::derive(opt.dropout_seed,
                        {static_cast<std::uint64_t>(opt.step), drop_tag,
                         static_cast<std::uint64_t>(layer)}));
    T scale = static_cast<T>(1.0 / (1.0 - cfg.dropout));
    for (std::size_t i = 0; i < m * width; ++i) {
      if (rng.bernoulli(cfg.dropout)) {
        cache->drop_mask[i] = 0;
        resid.v[i] = 0;
      } else {
        resid.v[i] *= scale;
      }
    }
  } else {
    cache->drop_mask.clear();
  }
  for (std::size_t i = 0; i < m * width; ++i) resid.v[i] += in.v[i];

  event_pool(resid, mask, p, Mat<T>{}, &cache->pooled, mask_out);
  cache->kept = kept_indices(valid, m, p);

  if (!w.proj.empty()) {
    std::size_t groups = cache->pooled.len;
    *out = RSeq<T>(groups, w.proj.rows);
    for (std::size_t g = 0; g < cache->kept.size(); ++g) {
      const T* src = cache->pooled.row(g);
      T* dst = out->row(g);
      for (std::size_t r = 0; r < w.proj.rows; ++r) {
        T acc = 0;
        const T* pr = w.proj.v.data() + r * w.proj.cols;
        for (std::size_t c = 0; c < w.proj.cols; ++c) acc += pr[c] * src[c];
        dst[r] = acc;
      }
    }
  } else {
    *out = cache->pooled;
  }

  // pooled gaps: elapsed time between consecutive kept events
  deltas_out->assign(out->len, T(0));
  for (std::size_t g = 0; g < cache->kept.size(); ++g) {
    std::size_t lo = g * static_cast<std::size_t>(p);
    T acc = 0;
    for (std::size_t i = lo; i <= cache->kept[g]; ++i) acc += deltas[i];
    (*deltas_out)[g] = acc;
  }
}

namespace {

// mirror of block_forward; accumulates parameter gradients and returns the
// gradient w.r.t. the block input
template <typename T>
void block_backward(const LayerWeights<T>& w, const ModelConfig& cfg, int layer,
                    const BlockCache<T>& cache, const RSeq<T>& out_bar, LayerWeights<T>* gw,
                    RSeq<T>* in_bar) {
  const std::size_t m = cache.input.len;
  const std::size_t width = cache.input.width;
  const bool glu = cfg.gate_variant == "glu";

  // projection (if any) back to pooled rows
  RSeq<T> pooled_bar(cache.pooled.len, width);
  if (!w.proj.empty()) {
    for (std::size_t g = 0; g < cache.kept.size(); ++g) {
      const T* ob = out_bar.row(g);
      const T* src = cache.pooled.row(g);
      T* pb = pooled_bar.row(g);
      for (std::size_t r = 0; r < w.proj.rows; ++r) {
        const T* pr = w.proj.v.data() + r * w.proj.cols;
        T* gr = gw->proj.v.data() + r * w.proj.cols;
        for (std::size_t c = 0; c < w.proj.cols; ++c) {
          gr[c] += ob[r] * src[c];
          pb[c] += pr[c] * ob[r];
        }
      }
    }
  } else {
    for (std::size_t g = 0; g < cache.kept.size(); ++g) {
      std::copy(out_bar.row(g), out_bar.row(g) + width, pooled_bar.row(g));
    }
  }

  // un-pool: kept positions receive the pooled gradient; skip path feeds the
  // block input directly
  *in_bar = RSeq<T>(m, width);
  RSeq<T> z_bar(m, width);
  for (std::size_t g = 0; g < cache.kept.size(); ++g) {
    const T* pb = pooled_bar.row(g);
    T* ib = in_bar->row(cache.kept[g]);
    T* zb = z_bar.row(cache.kept[g]);
    for (std::size_t c = 0; c < width; ++c) {
      ib[c] += pb[c];
      zb[c] = pb[c];
    }
  }

  if (!cache.drop_mask.empty()) {
    T scale = static_cast<T>(1.0 / (1.0 - cfg.dropout));
    for (std::size_t i = 0; i < m * width; ++i) {
      z_bar.v[i] = cache.drop_mask[i] ? z_bar.v[i] * scale : T(0);
    }
  }

  // gate and gelu, only kept positions carry gradient
  RSeq<T> y_bar(m, width);
  std::vector<T> pre_bar(width), v_bar(width);
  for (std::size_t idx : cache.kept) {
    const T* yk = cache.ssm.y.row(idx);
    const T* vk = cache.v.row(idx);
    const T* sk = cache.gate_sig.row(idx);
    const T* zb = z_bar.row(idx);
    for (std::size_t c = 0; c < width; ++c) {
      T sbar = zb[c] * (glu ? vk[c] : yk[c]);
      pre_bar[c] = sbar * sk[c] * (T(1) - sk[c]);
    }
    for (std::size_t c = 0; c < width; ++c) v_bar[c] = glu ? zb[c] * sk[c] : T(0);
    for (std::size_t r = 0; r < width; ++r) {
      const T* wr = w.gate_w.v.data() + r * width;
      T* gr = gw->gate_w.v.data() + r * width;
      for (std::size_t c = 0; c < width; ++c) {
        gr[c] += pre_bar[r] * vk[c];
        v_bar[c] += wr[c] * pre_bar[r];
      }
    }
    T* yb = y_bar.row(idx);
    for (std::size_t c = 0; c < width; ++c) {
      yb[c] = v_bar[c] * gelu_grad(yk[c]);
      if (!glu) yb[c] += zb[c] * sk[c];
    }
  }

  ScanOptions sopt{static_cast<std::size_t>(cfg.scan_chunk), 1};
  SSMGrads<T> sg;
  ssm_backward(w.ssm, cfg.discretization(), cache.normed, cache.deltas, cache.ssm, y_bar, sopt,
               &sg, /*want_delta_grad=*/false);
  for (std::size_t i = 0; i < sg.phi.size(); ++i) {
    gw->ssm.phi[i] += sg.phi[i];
    gw->ssm.theta[i] += sg.theta[i];
    gw->ssm.log_delta[i] += sg.log_delta[i];
  }
  for (std::size_t i = 0; i < sg.B.re.size(); ++i) {
    gw->ssm.B.re[i] += sg.B.re[i];
    gw->ssm.B.im[i] += sg.B.im[i];
  }
  for (std::size_t i = 0; i < sg.C.re.size(); ++i) {
    gw->ssm.C.re[i] += sg.C.re[i];
    gw->ssm.C.im[i] += sg.C.im[i];
  }
  for (std::size_t i = 0; i < sg.D.size(); ++i) gw->ssm.D[i] += sg.D[i];

  // layernorm backward over valid positions; padded rows were zeroed in the
  // forward pass and keep zero gradient
  std::size_t valid = count_valid(cache.mask);
  for (std::size_t k = 0; k < valid; ++k) {
    const T* x = cache.input.row(k);
    const T* nb = sg.u.row(k);
    T mu = cache.mean[k];
    T rstd = cache.rstd[k];
    T dxhat_mean = 0, dxhat_xhat_mean = 0;
    for (std::size_t c = 0; c < width; ++c) {
      T xhat = (x[c] - mu) * rstd;
      T dxhat = nb[c] * w.norm_scale[c];
      gw->norm_scale[c] += nb[c] * xhat;
      gw->norm_bias[c] += nb[c];
      dxhat_mean += dxhat;
      dxhat_xhat_mean += dxhat * xhat;
    }
    dxhat_mean /= static_cast<T>(width);
    dxhat_xhat_mean /= static_cast<T>(width);
    T* ib = in_bar->row(k);
    for (std::size_t c = 0; c < width; ++c) {
      T xhat = (x[c] - mu) * rstd;
      T dxhat = nb[c] * w.norm_scale[c];
      ib[c] += rstd * (dxhat - dxhat_mean - xhat * dxhat_xhat_mean);
    }
  }
}

}  // namespace

template <typename T>
void model_forward(const ModelWeights<T>& w, const Batch<T>& batch, const ForwardOptions& opt,
                   Mat<T>* logits, std::vector<RowCache<T>>* caches) {
  const ModelConfig& cfg = w.cfg;
  cfg.validate();
  if (batch.num_classes != cfg.num_classes) {
    throw std::runtime_error("model: batch has " + std::to_string(batch.num_classes) +
                             " classes, model expects " + std::to_string(cfg.num_classes));
  }
  const std::size_t rows = static_cast<std::size_t>(batch.rows);
  const std::size_t m = static_cast<std::size_t>(batch.max_len);
  *logits = Mat<T>(rows, static_cast<std::size_t>(cfg.num_classes));
  if (caches) caches->assign(rows, RowCache<T>{});

  parallel_ranges(rows, opt.threads, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      RowCache<T> local;
      RowCache<T>& cache = caches ? (*caches)[r] : local;
      cache.blocks.resize(static_cast<std::size_t>(cfg.num_layers));

      embed_events(batch.channels.data() + r * m, m, w.embedding, &cache.u);
      std::vector<T> deltas(m);
      std::vector<std::uint8_t> mask(m);
      for (std::size_t k = 0; k < m; ++k) {
        mask[k] = batch.mask[r * m + k];
        deltas[k] = mask[k] ? batch.deltas[r * m + k] : T(0);
        if (!mask[k]) {
          T* row = cache.u.row(k);
          std::fill(row, row + cache.u.width, T(0));
        }
      }

      RSeq<T> cur = cache.u;
      for (int l = 0; l < cfg.num_layers; ++l) {
        RSeq<T> next;
        std::vector<T> next_deltas;
        std::vector<std::uint8_t> next_mask;
        block_forward(w.layers[static_cast<std::size_t>(l)], cfg, l, cur, deltas, mask, opt, r,
                      &cache.blocks[static_cast<std::size_t>(l)], &next, &next_deltas, &next_mask);
        cur = std::move(next);
        deltas = std::move(next_deltas);
        mask = std::move(next_mask);
      }

      // masked mean over the surviving positions, zeros when nothing is left
      std::size_t valid = count_valid(mask);
      cache.final_count = static_cast<int>(valid);
      cache.features.assign(cur.width, T(0));
      if (valid > 0) {
        for (std::size_t k = 0; k < valid; ++k) {
          const T* row = cur.row(k);
          for (std::size_t c = 0; c < cur.width; ++c) cache.features[c] += row[c];
        }
        for (std::size_t c = 0; c < cur.width; ++c) {
          cache.features[c] /= static_cast<T>(valid);
        }
      }

      T* out = logits->v.data() + r * static_cast<std::size_t>(cfg.num_classes);
      for (std::size_t k = 0; k < w.readout_w.rows; ++k) {
        T acc = w.readout_b[k];
        const T* wr = w.readout_w.v.data() + k * w.readout_w.cols;
        for (std::size_t c = 0; c < w.readout_w.cols; ++c) acc += wr[c] * cache.features[c];
        out[k] = acc;
      }
    }
  });
}

template <typename T>
void model_backward(const ModelWeights<T>& w, const Batch<T>& batch,
                    const std::vector<RowCache<T>>& caches, const Mat<T>& logits_bar,
                    const ForwardOptions& opt, ModelWeights<T>* grads) {
  const ModelConfig& cfg = w.cfg;
  const std::size_t rows = static_cast<std::size_t>(batch.rows);
  const std::size_t m = static_cast<std::size_t>(batch.max_len);
  if (caches.size() != rows) throw std::runtime_error("model: cache/batch mismatch");

  int nthreads = std::max(1, opt.threads);
  std::vector<ModelWeights<T>> partial;
  // thread 0 accumulates straight into the output to avoid a copy
  for (int t = 1; t < nthreads; ++t) partial.push_back(zeros_like(w));

  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  {
    std::size_t chunk = (rows + static_cast<std::size_t>(nthreads) - 1) /
                        static_cast<std::size_t>(nthreads);
    for (std::size_t lo = 0; lo < rows; lo += chunk) {
      ranges.emplace_back(lo, std::min(rows, lo + chunk));
    }
  }

  auto run_range = [&](std::size_t ri) {
    auto [r0, r1] = ranges[ri];
    ModelWeights<T>* g = ri == 0 ? grads : &partial[ri - 1];
    for (std::size_t r = r0; r < r1; ++r) {
      const RowCache<T>& cache = caches[r];
      const T* lb = logits_bar.v.data() + r * static_cast<std::size_t>(cfg.num_classes);

      std::vector<T> feat_bar(w.readout_w.cols, T(0));
      for (std::size_t k = 0; k < w.readout_w.rows; ++k) {
        const T* wr = w.readout_w.v.data() + k * w.readout_w.cols;
        T* gr = g->readout_w.v.data() + k * w.readout_w.cols;
        g->readout_b[k] += lb[k];
        for (std::size_t c = 0; c < w.readout_w.cols; ++c) {
          gr[c] += lb[k] * cache.features[c];
          feat_bar[c] += wr[c] * lb[k];
        }
      }

      // spread the mean gradient over the surviving positions
      const BlockCache<T>& last = cache.blocks.back();
      std::size_t final_len = last.pooled.len;
      std::size_t fw = w.readout_w.cols;
      RSeq<T> cur_bar(final_len, fw);
      if (cache.final_count > 0) {
        T inv = T(1) / static_cast<T>(cache.final_count);
        for (std::size_t k = 0; k < static_cast<std::size_t>(cache.final_count); ++k) {
          T* row = cur_bar.row(k);
          for (std::size_t c = 0; c < fw; ++c) row[c] = feat_bar[c] * inv;
        }
      }

      for (int l = cfg.num_layers - 1; l >= 0; --l) {
        RSeq<T> in_bar;
        block_backward(w.layers[static_cast<std::size_t>(l)], cfg, l,
                       cache.blocks[static_cast<std::size_t>(l)], cur_bar,
                       &g->layers[static_cast<std::size_t>(l)], &in_bar);
        cur_bar = std::move(in_bar);
      }

      // embedding scatter; padded rows already have zero gradient
      for (std::size_t k = 0; k < m; ++k) {
        if (!batch.mask[r * m + k]) continue;
        std::uint32_t ch = batch.channels[r * m + k];
        T* dst = g->embedding.v.data() + static_cast<std::size_t>(ch) * g->embedding.cols;
        const T* src = cur_bar.row(k);
        for (std::size_t c = 0; c < g->embedding.cols; ++c) dst[c] += src[c];
      }
    }
  };

  if (nthreads <= 1 || ranges.size() <= 1) {
    for (std::size_t i = 0; i < ranges.size(); ++i) run_range(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < ranges.size(); ++i) pool.emplace_back([&, i] { run_range(i); });
    for (auto& t : pool) t.join();
  }

  // deterministic reduction: partials fold in range order
  for (std::size_t t = 0; t < partial.size(); ++t) {
    std::size_t idx = 0;
    std::vector<std::vector<T>*> dst;
    grads->for_each_tensor([&](const std::string&, std::vector<T>& v, ParamRole) {
      dst.push_back(&v);
    });
    partial[t].for_each_tensor([&](const std::string&, std::vector<T>& v, ParamRole) {
      std::vector<T>& d = *dst[idx++];
      for (std::size_t i = 0; i < v.size(); ++i) d[i] += v[i];
    });
  }
}

#define EVSSM_MODEL_INST(T)                                                                   \
  template struct LayerWeights<T>;                                                            \
  template struct ModelWeights<T>;                                                            \
  template ModelWeights<T> init_weights<T>(const ModelConfig&, std::uint64_t);                \
  template ModelWeights<T> zeros_like(const ModelWeights<T>&);                                \
  template void embed_events(const std::uint32_t*, std::size_t, const Mat<T>&, RSeq<T>*);     \
  template void event_pool(const RSeq<T>&, const std::vector<std::uint8_t>&, int,             \
                           const Mat<T>&, RSeq<T>*, std::vector<std::uint8_t>*);              \
  template void block_forward(const LayerWeights<T>&, const ModelConfig&, int, const RSeq<T>&,\
                              const std::vector<T>&, const std::vector<std::uint8_t>&,        \
                              const ForwardOptions&, std::uint64_t, BlockCache<T>*,           \
                              RSeq<T>*, std::vector<T>*, std::vector<std::uint8_t>*);         \
  template void model_forward(const ModelWeights<T>&, const Batch<T>&, const ForwardOptions&, \
                              Mat<T>*, std::vector<RowCache<T>>*);                            \
  template void model_backward(const ModelWeights<T>&, const Batch<T>&,                       \
                               const std::vector<RowCache<T>>&, const Mat<T>&,                \
                               const ForwardOptions&, ModelWeights<T>*);
EVSSM_MODEL_INST(float)
EVSSM_MODEL_INST(double)
#undef EVSSM_MODEL_INST

}  // namespace evssm
