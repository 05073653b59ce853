#include "evssm/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "evssm/rng.hpp"
#include "evssm/training.hpp"

namespace evssm {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

namespace {

void require_epsilon(double epsilon) {
  if (!(epsilon > 0)) throw std::runtime_error("gradcheck: epsilon must be positive");
}

}  // namespace

GradcheckReport gradcheck_kernel(int state_size, int width, int length, DiscretizationMode mode,
                                 std::uint64_t seed, double epsilon) {
  require_epsilon(epsilon);
  if (state_size < 1 || width < 1 || length < 1) {
    throw std::runtime_error("gradcheck: sizes must be >= 1");
  }
  const std::size_t h = static_cast<std::size_t>(state_size);
  const std::size_t n = static_cast<std::size_t>(width);
  const std::size_t m = static_cast<std::size_t>(length);

  Rng rng(Rng::derive(seed, {0x6c}));
  SSMParams<double> p;
  p.phi.resize(h);
  p.theta.resize(h);
  p.log_delta.resize(h);
  for (std::size_t i = 0; i < h; ++i) {
    p.phi[i] = rng.uniform(-1.5, 0.5);
    p.theta[i] = rng.uniform(0.0, 3.0);
    p.log_delta[i] = rng.uniform(-1.0, 1.0);
  }
  p.B = CMat<double>(h, n);
  p.C = CMat<double>(n, h);
  for (double& x : p.B.re) x = rng.normal() * 0.5;
  for (double& x : p.B.im) x = rng.normal() * 0.5;
  for (double& x : p.C.re) x = rng.normal() * 0.5;
  for (double& x : p.C.im) x = rng.normal() * 0.5;
  p.D.resize(n);
  for (double& x : p.D) x = rng.normal() * 0.5;

  RSeq<double> u(m, n);
  for (double& x : u.v) x = rng.normal();
  std::vector<double> deltas(m);
  deltas[0] = 0;
  for (std::size_t k = 1; k < m; ++k) deltas[k] = rng.uniform(0.0, 2.0);
  if (m > 2) deltas[m / 2] = 0;  // exercise the zero-gap path

  RSeq<double> w(m, n);
  for (double& x : w.v) x = rng.normal();

  auto loss_of = [&](const SSMParams<double>& q, const RSeq<double>& uu) {
    SSMForward<double> f;
    ssm_forward_sequential(q, mode, uu, deltas, &f);
    double acc = 0;
    for (std::size_t i = 0; i < f.y.v.size(); ++i) acc += w.v[i] * f.y.v[i];
    return acc;
  };

  SSMForward<double> fwd;
  ssm_forward_sequential(p, mode, u, deltas, &fwd);
  SSMGrads<double> g;
  ScanOptions sopt;
  ssm_backward(p, mode, u, deltas, fwd, w, sopt, &g, /*want_delta_grad=*/true);

  GradcheckReport report;
  auto check = [&](const std::string& name, std::vector<double>& param,
                   const std::vector<double>& grad) {
    GradcheckEntry e{name, 0};
    for (std::size_t i = 0; i < param.size(); ++i) {
      double keep = param[i];
      param[i] = keep + epsilon;
      double fp = loss_of(p, u);
      param[i] = keep - epsilon;
      double fm = loss_of(p, u);
      param[i] = keep;
      double fd = (fp - fm) / (2 * epsilon);
      e.max_rel = std::max(e.max_rel, relative_error(grad[i], fd));
    }
    report.tensors.push_back(e);
    report.max_rel = std::max(report.max_rel, e.max_rel);
  };

  check("phi", p.phi, g.phi);
  check("theta", p.theta, g.theta);
  check("log_delta", p.log_delta, g.log_delta);
  check("b_re", p.B.re, g.B.re);
  check("b_im", p.B.im, g.B.im);
  check("c_re", p.C.re, g.C.re);
  check("c_im", p.C.im, g.C.im);
  check("d", p.D, g.D);

  {
    GradcheckEntry e{"u", 0};
    for (std::size_t i = 0; i < u.v.size(); ++i) {
      double keep = u.v[i];
      u.v[i] = keep + epsilon;
      double fp = loss_of(p, u);
      u.v[i] = keep - epsilon;
      double fm = loss_of(p, u);
      u.v[i] = keep;
      double fd = (fp - fm) / (2 * epsilon);
      e.max_rel = std::max(e.max_rel, relative_error(g.u.v[i], fd));
    }
    report.tensors.push_back(e);
    report.max_rel = std::max(report.max_rel, e.max_rel);
  }
  return report;
}

GradcheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed, double epsilon,
                                const std::string& tamper) {
  require_epsilon(epsilon);
  cfg.validate();

  Rng rng(Rng::derive(seed, {0x6d}));
  std::vector<EventStream> streams;
  std::vector<std::size_t> lengths = {6, 9, 4};
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    EventStream s;
    s.num_channels = cfg.num_channels;
    std::uint64_t t = 0;
    for (std::size_t k = 0; k < lengths[i]; ++k) {
      t += static_cast<std::uint64_t>(rng.uniform_int(0, 2000));
      std::uint32_t ch = static_cast<std::uint32_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(cfg.num_channels) - 1));
      s.events.push_back({t, ch});
    }
    s.label = Label::hard(static_cast<int>(rng.uniform_int(0, cfg.num_classes - 1)));
    streams.push_back(std::move(s));
  }
  std::vector<const EventStream*> ptrs;
  for (const EventStream& s : streams) ptrs.push_back(&s);
  Batch<double> batch = batch_pad<double>(ptrs, 1e-3, cfg.num_classes);

  ModelWeights<double> w = init_weights<double>(cfg, Rng::derive(seed, {0x77}));

  ForwardOptions opt;
  opt.train = cfg.dropout > 0;  // fixed-seed dropout stays deterministic
  opt.dropout_seed = Rng::derive(seed, {0xdd});
  opt.step = 5;
  opt.threads = 1;

  auto loss_of = [&](const ModelWeights<double>& ww) {
    Mat<double> logits;
    model_forward<double>(ww, batch, opt, &logits, nullptr);
    Mat<double> bar;
    return static_cast<double>(cross_entropy_soft(logits, batch.labels, &bar));
  };

  Mat<double> logits;
  std::vector<RowCache<double>> caches;
  model_forward(w, batch, opt, &logits, &caches);
  Mat<double> logits_bar;
  cross_entropy_soft(logits, batch.labels, &logits_bar);
  ModelWeights<double> grads = zeros_like(w);
  model_backward(w, batch, caches, logits_bar, opt, &grads);

  if (!tamper.empty()) {
    bool hit = false;
    grads.for_each_tensor([&](const std::string& name, std::vector<double>& v, ParamRole) {
      if (name == tamper) {
        for (double& x : v) x = -x;
        hit = true;
      }
    });
    if (!hit) throw std::runtime_error("gradcheck: tamper tensor '" + tamper + "' not found");
  }

  std::vector<std::pair<std::string, std::vector<double>*>> params;
  w.for_each_tensor([&](const std::string& name, std::vector<double>& v, ParamRole) {
    params.emplace_back(name, &v);
  });
  std::vector<const std::vector<double>*> glist;
  grads.for_each_tensor([&](const std::string&, const std::vector<double>& v, ParamRole) {
    glist.push_back(&v);
  });

  GradcheckReport report;
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    GradcheckEntry e{params[ti].first, 0};
    std::vector<double>& param = *params[ti].second;
    const std::vector<double>& grad = *glist[ti];
    for (std::size_t i = 0; i < param.size(); ++i) {
      double keep = param[i];
      param[i] = keep + epsilon;
      double fp = loss_of(w);
      param[i] = keep - epsilon;
      double fm = loss_of(w);
      param[i] = keep;
      double fd = (fp - fm) / (2 * epsilon);
      e.max_rel = std::max(e.max_rel, relative_error(grad[i], fd));
    }
    report.tensors.push_back(e);
    report.max_rel = std::max(report.max_rel, e.max_rel);
  }
  return report;
}

}  // namespace evssm
