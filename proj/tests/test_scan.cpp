#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "evssm/rng.hpp"
#include "evssm/scan.hpp"

using namespace evssm;

namespace {

struct Seq {
  std::vector<double> a_re, a_im, b_re, b_im;
  std::size_t m = 0, h = 0;
};

Seq random_seq(std::size_t m, std::size_t h, std::uint64_t seed) {
  Seq s;
  s.m = m;
  s.h = h;
  s.a_re.resize(m * h);
  s.a_im.resize(m * h);
  s.b_re.resize(m * h);
  s.b_im.resize(m * h);
  Rng rng(seed);
  for (std::size_t i = 0; i < m * h; ++i) {
    // |a| < 1 keeps long recurrences stable, like a discretized decay factor
    double mag = 0.2 + 0.78 * rng.uniform();
    double ang = 6.28318 * rng.uniform();
    s.a_re[i] = mag * std::cos(ang);
    s.a_im[i] = mag * std::sin(ang);
    s.b_re[i] = rng.normal();
    s.b_im[i] = rng.normal();
  }
  return s;
}

// plain O(m) evaluation of x_k = a_k x_{k-1} + b_k, independent of the scan code
Seq sequential_reference(const Seq& in) {
  Seq out = in;
  for (std::size_t k = 1; k < in.m; ++k) {
    for (std::size_t j = 0; j < in.h; ++j) {
      std::size_t cur = k * in.h + j, prev = (k - 1) * in.h + j;
      Cx<double> a{in.a_re[cur], in.a_im[cur]};
      Cx<double> xp{out.b_re[prev], out.b_im[prev]};
      Cx<double> ap{out.a_re[prev], out.a_im[prev]};
      Cx<double> x = a * xp + Cx<double>{in.b_re[cur], in.b_im[cur]};
      Cx<double> acc = a * ap;
      out.b_re[cur] = x.re;
      out.b_im[cur] = x.im;
      out.a_re[cur] = acc.re;
      out.a_im[cur] = acc.im;
    }
  }
  return out;
}

void run_scan(Seq* s, std::size_t chunk, int threads) {
  ScanOptions opt;
  opt.chunk = chunk;
  opt.threads = threads;
  scan_inclusive(s->a_re.data(), s->a_im.data(), s->b_re.data(), s->b_im.data(), s->m, s->h, opt);
}

double max_abs_diff(const std::vector<double>& x, const std::vector<double>& y) {
  double m = 0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

}  // namespace

TEST_CASE("combine matches the recurrence by hand") {
  // applying (a=2, b=3) after (a=5, b=7) to x gives 2*(5x+7)+3 = 10x+17
  ScanElement<double> earlier, later;
  earlier.a_re = {5};
  earlier.a_im = {0};
  earlier.b_re = {7};
  earlier.b_im = {0};
  later.a_re = {2};
  later.a_im = {0};
  later.b_re = {3};
  later.b_im = {0};
  ScanElement<double> c = scan_combine(later, earlier);
  CHECK(c.a_re[0] == 10.0);
  CHECK(c.b_re[0] == 17.0);
  CHECK(c.a_im[0] == 0.0);
  CHECK(c.b_im[0] == 0.0);
}

TEST_CASE("combine with identity is a no-op") {
  ScanElement<double> e;
  e.a_re = {0.5, -0.25};
  e.a_im = {0.1, 0.7};
  e.b_re = {2.0, -3.0};
  e.b_im = {0.0, 1.5};
  ScanElement<double> id = ScanElement<double>::identity(2);
  ScanElement<double> l = scan_combine(e, id);
  ScanElement<double> r = scan_combine(id, e);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(l.a_re[j] == e.a_re[j]);
    CHECK(l.b_re[j] == e.b_re[j]);
    CHECK(r.a_re[j] == e.a_re[j]);
    CHECK(r.b_re[j] == e.b_re[j]);
    CHECK(l.a_im[j] == e.a_im[j]);
    CHECK(l.b_im[j] == e.b_im[j]);
    CHECK(r.a_im[j] == e.a_im[j]);
    CHECK(r.b_im[j] == e.b_im[j]);
  }
}

TEST_CASE("combine is associative and order-sensitive") {
  Rng rng(17);
  auto rand_elem = [&]() {
    ScanElement<double> e;
    e.a_re = {rng.normal()};
    e.a_im = {rng.normal()};
    e.b_re = {rng.normal()};
    e.b_im = {rng.normal()};
    return e;
  };
  for (int trial = 0; trial < 50; ++trial) {
    ScanElement<double> x = rand_elem(), y = rand_elem(), z = rand_elem();
    ScanElement<double> left = scan_combine(scan_combine(z, y), x);
    ScanElement<double> right = scan_combine(z, scan_combine(y, x));
    CHECK(left.a_re[0] == doctest::Approx(right.a_re[0]).epsilon(1e-12));
    CHECK(left.a_im[0] == doctest::Approx(right.a_im[0]).epsilon(1e-12));
    CHECK(left.b_re[0] == doctest::Approx(right.b_re[0]).epsilon(1e-12));
    CHECK(left.b_im[0] == doctest::Approx(right.b_im[0]).epsilon(1e-12));
  }
  // swapping operands changes the additive part
  ScanElement<double> p = rand_elem(), q = rand_elem();
  ScanElement<double> pq = scan_combine(p, q);
  ScanElement<double> qp = scan_combine(q, p);
  CHECK(pq.b_re[0] != qp.b_re[0]);
}

TEST_CASE("scan matches the sequential recurrence") {
  for (std::size_t m : {std::size_t(1), std::size_t(2), std::size_t(3), std::size_t(5),
                        std::size_t(9), std::size_t(64), std::size_t(1000), std::size_t(4097)}) {
    for (std::size_t h : {std::size_t(1), std::size_t(4)}) {
      Seq in = random_seq(m, h, 1000 + m * 10 + h);
      Seq ref = sequential_reference(in);
      for (std::size_t chunk : {std::size_t(2), std::size_t(3), std::size_t(64), std::size_t(4096)}) {
        Seq got = in;
        run_scan(&got, chunk, 1);
        CAPTURE(m);
        CAPTURE(h);
        CAPTURE(chunk);
        CHECK(max_abs_diff(got.b_re, ref.b_re) < 1e-10);
        CHECK(max_abs_diff(got.b_im, ref.b_im) < 1e-10);
        CHECK(max_abs_diff(got.a_re, ref.a_re) < 1e-10);
        CHECK(max_abs_diff(got.a_im, ref.a_im) < 1e-10);
      }
    }
  }
}

TEST_CASE("thread count never changes a bit") {
  for (std::size_t m : {std::size_t(7), std::size_t(129), std::size_t(5000)}) {
    Seq in = random_seq(m, 6, 77 + m);
    Seq base = in;
    run_scan(&base, 64, 1);
    for (int threads : {2, 3, 8}) {
      Seq got = in;
      run_scan(&got, 64, threads);
      CAPTURE(m);
      CAPTURE(threads);
      CHECK(std::memcmp(got.b_re.data(), base.b_re.data(), got.b_re.size() * sizeof(double)) == 0);
      CHECK(std::memcmp(got.b_im.data(), base.b_im.data(), got.b_im.size() * sizeof(double)) == 0);
      CHECK(std::memcmp(got.a_re.data(), base.a_re.data(), got.a_re.size() * sizeof(double)) == 0);
      CHECK(std::memcmp(got.a_im.data(), base.a_im.data(), got.a_im.size() * sizeof(double)) == 0);
    }
  }
}

TEST_CASE("single element scan is the identity") {
  Seq in = random_seq(1, 3, 5);
  Seq got = in;
  run_scan(&got, 4096, 1);
  CHECK(got.a_re == in.a_re);
  CHECK(got.a_im == in.a_im);
  CHECK(got.b_re == in.b_re);
  CHECK(got.b_im == in.b_im);
}

TEST_CASE("float scan stays close to double reference") {
  Seq in = random_seq(2048, 4, 99);
  Seq ref = sequential_reference(in);

  std::size_t n = in.m * in.h;
  std::vector<float> are(n), aim(n), bre(n), bim(n);
  for (std::size_t i = 0; i < n; ++i) {
    are[i] = static_cast<float>(in.a_re[i]);
    aim[i] = static_cast<float>(in.a_im[i]);
    bre[i] = static_cast<float>(in.b_re[i]);
    bim[i] = static_cast<float>(in.b_im[i]);
  }
  ScanOptions opt;
  opt.chunk = 256;
  scan_inclusive(are.data(), aim.data(), bre.data(), bim.data(), in.m, in.h, opt);
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(bre[i]) - ref.b_re[i]));
    worst = std::max(worst, std::abs(static_cast<double>(bim[i]) - ref.b_im[i]));
  }
  CHECK(worst < 1e-4);
}
