#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "evssm/events.hpp"
#include "evssm/gradcheck.hpp"
#include "evssm/model.hpp"
#include "evssm/rng.hpp"

using namespace evssm;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.state_size = 5;
  cfg.model_width = 6;
  cfg.num_channels = 7;
  cfg.num_classes = 3;
  cfg.pool = {2, 1};
  cfg.width_mult = {2, 1};
  return cfg;
}

EventStream make_stream(std::uint32_t j, int cls, std::vector<Event> ev) {
  EventStream s;
  s.num_channels = j;
  s.label = Label::hard(cls);
  s.events = std::move(ev);
  return s;
}

EventStream random_stream(std::uint32_t j, int cls, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  EventStream s;
  s.num_channels = j;
  s.label = Label::hard(cls);
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < m; ++i) {
    t += static_cast<std::uint64_t>(rng.uniform_int(0, 3000));
    s.events.push_back({t, static_cast<std::uint32_t>(rng.uniform_int(0, j - 1))});
  }
  return s;
}

template <typename T>
bool same_bits(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());

  ModelConfig bad = cfg;
  bad.num_classes = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.num_channels = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.pool = {2, 1, 4};
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.width_mult = {1, 1, 1, 1};
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.dropout = 1.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.dropout = -0.1;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.gate_variant = "swish";
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.mode = "euler";
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.timescale_min = 2.0;  // above timescale_max
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.scan_chunk = 1;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.pool = {0, 1};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("per-layer widths multiply along the stack") {
  ModelConfig cfg;
  cfg.num_layers = 3;
  cfg.model_width = 8;
  cfg.num_channels = 4;
  cfg.num_classes = 2;
  cfg.width_mult = {2, 1, 3};
  cfg.pool = {1};
  CHECK(cfg.width_at(0) == 8);
  CHECK(cfg.width_at(1) == 16);
  CHECK(cfg.width_at(2) == 16);
  CHECK(cfg.width_at(3) == 48);  // readout width

  // a single pool entry broadcasts to every layer
  ModelConfig b = tiny_config();
  b.pool = {4};
  CHECK(b.pool_at(0) == 4);
  CHECK(b.pool_at(1) == 4);
  CHECK(b.mult_at(0) == 2);
  CHECK(b.mult_at(1) == 1);
}

TEST_CASE("initialization statistics and determinism") {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.state_size = 64;
  cfg.model_width = 32;
  cfg.num_channels = 10;
  cfg.num_classes = 4;
  cfg.timescale_min = 1e-3;
  cfg.timescale_max = 1e-1;

  ModelWeights<double> w = init_weights<double>(cfg, 123);
  for (const LayerWeights<double>& l : w.layers) {
    for (std::size_t i = 0; i < l.ssm.phi.size(); ++i) {
      double mag = std::exp(l.ssm.phi[i]);
      CHECK(mag >= 0.25);
      CHECK(mag <= 1.0);
      CHECK(l.ssm.theta[i] >= 0.0);
      CHECK(l.ssm.theta[i] < 3.14159265358979324);
      double tau = 1.0 / (std::exp(l.ssm.log_delta[i]) * mag);
      CHECK(tau >= cfg.timescale_min * 0.999);
      CHECK(tau <= cfg.timescale_max * 1.001);
    }
    for (double d : l.ssm.D) CHECK(d == 1.0);
    for (double s : l.norm_scale) CHECK(s == 1.0);
    for (double b : l.norm_bias) CHECK(b == 0.0);
  }

  ModelWeights<double> again = init_weights<double>(cfg, 123);
  CHECK(same_bits(w.embedding.v, again.embedding.v));
  CHECK(same_bits(w.readout_w.v, again.readout_w.v));
  CHECK(same_bits(w.layers[0].ssm.phi, again.layers[0].ssm.phi));
  CHECK(same_bits(w.layers[1].gate_w.v, again.layers[1].gate_w.v));

  ModelWeights<double> other = init_weights<double>(cfg, 124);
  CHECK(!same_bits(w.embedding.v, other.embedding.v));
  CHECK(!same_bits(w.layers[0].ssm.phi, other.layers[0].ssm.phi));
}

TEST_CASE("parameter count matches a hand tally") {
  ModelConfig cfg = tiny_config();
  ModelWeights<float> w = init_weights<float>(cfg, 1);
  // embedding 7*6; layer 0 (H=5, W=6): 3*5 + 2*5*6 + 2*6*5 + 6 + 36 + 12 + proj 12*6;
  // layer 1 (H=5, W=12): 3*5 + 2*5*12 + 2*12*5 + 12 + 144 + 24; readout 3*12 + 3
  std::size_t expect = 42 + (15 + 60 + 60 + 6 + 36 + 12 + 72) + (15 + 120 + 120 + 12 + 144 + 24) +
                       (36 + 3);
  CHECK(w.param_count() == expect);

  std::size_t via_iter = 0;
  w.for_each_tensor(
      [&](const std::string&, std::vector<float>& v, ParamRole) { via_iter += v.size(); });
  CHECK(via_iter == expect);
}

TEST_CASE("tensor iteration order is stable and complete") {
  ModelWeights<float> w = init_weights<float>(tiny_config(), 3);
  std::vector<std::string> names;
  w.for_each_tensor([&](const std::string& n, std::vector<float>&, ParamRole) {
    names.push_back(n);
  });
  REQUIRE(names.size() > 4);
  CHECK(names.front() == "embedding");
  CHECK(names[1] == "layers.0.phi");
  CHECK(names[names.size() - 2] == "readout_w");
  CHECK(names.back() == "readout_b");
  // dynamics tensors carry their role
  int dynamics = 0;
  w.for_each_tensor([&](const std::string& n, std::vector<float>&, ParamRole r) {
    if (r == ParamRole::Dynamics) {
      ++dynamics;
      bool is_dyn = n.find("phi") != std::string::npos || n.find("theta") != std::string::npos ||
                    n.find("log_delta") != std::string::npos;
      CHECK(is_dyn);
    }
  });
  CHECK(dynamics == 6);  // three per layer
}

TEST_CASE("embedding lookup") {
  Mat<float> table(3, 2);
  table.v = {10, 11, 20, 21, 30, 31};
  std::uint32_t ch[4] = {2, 0, 1, 2};
  RSeq<float> out;
  embed_events(ch, 4, table, &out);
  REQUIRE(out.len == 4);
  CHECK(out.v == std::vector<float>{30, 31, 10, 11, 20, 21, 30, 31});

  std::uint32_t bad[1] = {3};
  CHECK_THROWS(embed_events(bad, 1, table, &out));
}

TEST_CASE("event pooling keeps the last valid row of each group") {
  RSeq<float> seq(7, 2);
  for (std::size_t i = 0; i < 7; ++i) {
    seq.row(i)[0] = static_cast<float>(i);
    seq.row(i)[1] = static_cast<float>(10 * i);
  }
  std::vector<std::uint8_t> mask = {1, 1, 1, 1, 1, 0, 0};

  RSeq<float> out;
  std::vector<std::uint8_t> mask_out;
  event_pool(seq, mask, 3, Mat<float>(), &out, &mask_out);
  REQUIRE(out.len == 3);  // ceil(7 / 3)
  CHECK(mask_out == std::vector<std::uint8_t>{1, 1, 0});
  CHECK(out.row(0)[0] == 2.0f);   // last valid of {0,1,2}
  CHECK(out.row(0)[1] == 20.0f);
  CHECK(out.row(1)[0] == 4.0f);   // last valid of {3,4}
  CHECK(out.row(1)[1] == 40.0f);
  CHECK(out.row(2)[0] == 0.0f);   // padded group
  CHECK(out.row(2)[1] == 0.0f);

  SUBCASE("projection widens the kept rows") {
    Mat<float> proj(4, 2);
    proj.v = {1, 0, 0, 1, 1, 1, 2, -1};
    RSeq<float> wide;
    event_pool(seq, mask, 3, proj, &wide, &mask_out);
    REQUIRE(wide.width == 4);
    CHECK(wide.row(0)[0] == 2.0f);
    CHECK(wide.row(0)[1] == 20.0f);
    CHECK(wide.row(0)[2] == 22.0f);
    CHECK(wide.row(0)[3] == -16.0f);
  }

  SUBCASE("pool of one is a no-op on valid rows") {
    RSeq<float> same;
    event_pool(seq, mask, 1, Mat<float>(), &same, &mask_out);
    REQUIRE(same.len == 7);
    CHECK(std::memcmp(same.row(0), seq.row(0), 5 * 2 * sizeof(float)) == 0);
    CHECK(mask_out == mask);
  }
}

TEST_CASE("block pooling sums the time gaps of each group") {
  ModelConfig cfg = tiny_config();
  cfg.num_layers = 1;
  cfg.pool = {3};
  cfg.width_mult = {1};
  cfg.dropout = 0.0;
  ModelWeights<float> w = init_weights<float>(cfg, 8);

  RSeq<float> in(7, 6);
  Rng rng(9);
  for (float& v : in.v) v = static_cast<float>(rng.normal());
  std::vector<float> deltas = {0.0f, 0.5f, 0.25f, 1.0f, 0.125f, 0.0f, 0.0f};
  std::vector<std::uint8_t> mask = {1, 1, 1, 1, 1, 0, 0};
  for (std::size_t i = 5; i < 7; ++i) {
    for (int j = 0; j < 6; ++j) in.row(i)[j] = 0.0f;
  }

  ForwardOptions opt;
  BlockCache<float> cache;
  RSeq<float> out;
  std::vector<float> dout;
  std::vector<std::uint8_t> mout;
  block_forward(w.layers[0], cfg, 0, in, deltas, mask, opt, 0, &cache, &out, &dout, &mout);
  REQUIRE(dout.size() == 3);
  CHECK(dout[0] == 0.75f);   // 0 + 0.5 + 0.25
  CHECK(dout[1] == 1.125f);  // 1.0 + 0.125
  CHECK(dout[2] == 0.0f);
  CHECK(mout == std::vector<std::uint8_t>{1, 1, 0});
}

TEST_CASE("empty event row yields the readout bias") {
  ModelConfig cfg = tiny_config();
  ModelWeights<float> w = init_weights<float>(cfg, 17);

  EventStream empty = make_stream(7, 0, {});
  EventStream full = random_stream(7, 1, 20, 3);
  Batch<float> batch = batch_pad<float>({&empty, &full}, 1e-6, 3);

  Mat<float> logits;
  ForwardOptions opt;
  model_forward<float>(w, batch, opt, &logits, nullptr);
  REQUIRE(logits.rows == 2);
  for (int k = 0; k < 3; ++k) CHECK(logits.at(0, k) == w.readout_b[k]);
  // the non-empty row is not just the bias
  double dist = 0;
  for (int k = 0; k < 3; ++k) dist += std::abs(logits.at(1, k) - w.readout_b[k]);
  CHECK(dist > 1e-6);
}

TEST_CASE("padding length does not change the outputs") {
  ModelConfig cfg = tiny_config();
  ModelWeights<float> w = init_weights<float>(cfg, 5);

  EventStream a = random_stream(7, 0, 33, 10);
  EventStream shorter = random_stream(7, 1, 8, 11);
  EventStream longer = random_stream(7, 1, 200, 12);

  Batch<float> tight = batch_pad<float>({&a, &shorter}, 1e-6, 3);
  Batch<float> padded = batch_pad<float>({&a, &longer}, 1e-6, 3);
  REQUIRE(tight.max_len == 33);
  REQUIRE(padded.max_len == 200);

  Mat<float> lt, lp;
  ForwardOptions opt;
  model_forward<float>(w, tight, opt, &lt, nullptr);
  model_forward<float>(w, padded, opt, &lp, nullptr);
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(lt.at(0, k) - lp.at(0, k)) <= 1e-5f);
  }
}

TEST_CASE("dropout reproducibility and evaluation behavior") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.5;
  ModelWeights<float> w = init_weights<float>(cfg, 31);

  EventStream a = random_stream(7, 0, 24, 20);
  EventStream b = random_stream(7, 2, 30, 21);
  Batch<float> batch = batch_pad<float>({&a, &b}, 1e-6, 3);

  ForwardOptions train;
  train.train = true;
  train.dropout_seed = 99;
  train.step = 4;

  Mat<float> l1, l2;
  model_forward<float>(w, batch, train, &l1, nullptr);
  model_forward<float>(w, batch, train, &l2, nullptr);
  CHECK(same_bits(l1.v, l2.v));

  ForwardOptions later = train;
  later.step = 5;
  Mat<float> l3;
  model_forward<float>(w, batch, later, &l3, nullptr);
  CHECK(!same_bits(l1.v, l3.v));

  // evaluation ignores dropout entirely: same bits as a dropout-free config
  ForwardOptions eval;
  Mat<float> le;
  model_forward<float>(w, batch, eval, &le, nullptr);
  ModelWeights<float> w0 = w;
  w0.cfg.dropout = 0.0;
  ForwardOptions train0;
  train0.train = true;
  train0.dropout_seed = 99;
  Mat<float> l0;
  model_forward<float>(w0, batch, train0, &l0, nullptr);
  CHECK(same_bits(le.v, l0.v));
  CHECK(!same_bits(le.v, l1.v));
}

TEST_CASE("gate variants give different outputs") {
  ModelConfig cfg = tiny_config();
  ModelWeights<float> w = init_weights<float>(cfg, 77);
  EventStream a = random_stream(7, 0, 16, 30);
  Batch<float> batch = batch_pad<float>({&a}, 1e-6, 3);

  Mat<float> pre, glu;
  ForwardOptions opt;
  model_forward<float>(w, batch, opt, &pre, nullptr);
  ModelWeights<float> wg = w;
  wg.cfg.gate_variant = "glu";
  model_forward<float>(wg, batch, opt, &glu, nullptr);
  CHECK(!same_bits(pre.v, glu.v));
}

TEST_CASE("thread count changes nothing, forward or backward") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.25;
  ModelWeights<float> w = init_weights<float>(cfg, 41);

  std::vector<EventStream> streams;
  std::vector<const EventStream*> ptrs;
  for (int i = 0; i < 5; ++i) streams.push_back(random_stream(7, i % 3, 12 + 7 * i, 50 + i));
  for (const EventStream& s : streams) ptrs.push_back(&s);
  Batch<float> batch = batch_pad<float>(ptrs, 1e-6, 3);

  auto run = [&](int threads, Mat<float>* logits, ModelWeights<float>* grads) {
    ForwardOptions opt;
    opt.train = true;
    opt.dropout_seed = 7;
    opt.step = 2;
    opt.threads = threads;
    std::vector<RowCache<float>> caches;
    model_forward(w, batch, opt, logits, &caches);
    Mat<float> lbar(logits->rows, logits->cols);
    for (std::size_t i = 0; i < lbar.v.size(); ++i) {
      lbar.v[i] = 0.01f * static_cast<float>(i + 1);
    }
    *grads = zeros_like(w);
    model_backward(w, batch, caches, lbar, opt, grads);
  };

  Mat<float> l1, l3;
  ModelWeights<float> g1, g3;
  run(1, &l1, &g1);
  run(3, &l3, &g3);
  // rows never mix in the forward pass, so logits are identical bits; the
  // gradient reduction folds per-thread partials, which reassociates sums
  CHECK(same_bits(l1.v, l3.v));
  auto close = [](const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]) /
                                  std::max(1.0, std::abs(static_cast<double>(b[i]))));
    }
    return worst;
  };
  CHECK(close(g1.embedding.v, g3.embedding.v) < 1e-5);
  CHECK(close(g1.readout_w.v, g3.readout_w.v) < 1e-5);
  CHECK(close(g1.readout_b, g3.readout_b) < 1e-5);
  for (std::size_t l = 0; l < g1.layers.size(); ++l) {
    CHECK(close(g1.layers[l].ssm.phi, g3.layers[l].ssm.phi) < 1e-5);
    CHECK(close(g1.layers[l].ssm.B.re, g3.layers[l].ssm.B.re) < 1e-5);
    CHECK(close(g1.layers[l].gate_w.v, g3.layers[l].gate_w.v) < 1e-5);
  }
}

TEST_CASE("model gradients match finite differences") {
  ModelConfig cfg = tiny_config();
  for (const char* mode : {"async", "zoh"}) {
    cfg.mode = mode;
    GradcheckReport rep = gradcheck_model(cfg, 2, 1e-5);
    CAPTURE(mode);
    for (const GradcheckEntry& e : rep.tensors) {
      CAPTURE(e.tensor);
      CHECK(e.max_rel <= 1e-3);
    }
    CHECK(rep.pass(1e-3));
  }
}

TEST_CASE("a sabotaged gradient is caught") {
  ModelConfig cfg = tiny_config();
  GradcheckReport rep = gradcheck_model(cfg, 2, 1e-5, "embedding");
  CHECK(!rep.pass(1e-3));
  CHECK_THROWS(gradcheck_model(cfg, 2, 1e-5, "no_such_tensor"));
}

TEST_CASE("glu gradients also match finite differences") {
  ModelConfig cfg = tiny_config();
  cfg.gate_variant = "glu";
  GradcheckReport rep = gradcheck_model(cfg, 6, 1e-5);
  CHECK(rep.pass(1e-3));
}
