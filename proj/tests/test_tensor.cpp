#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "crowdlab/rng.hpp"
#include "crowdlab/tensor.hpp"

#include <set>

using crowdlab::Rng;
using crowdlab::ShapeError;
using crowdlab::Tensor;

TEST_CASE("tensor shape and row-major indexing") {
  Tensor t({2, 3, 4});
  CHECK(t.rank() == 3);
  CHECK(t.numel() == 24);
  t.at(1, 2, 3) = 7.0;
  CHECK(t[23] == 7.0);
  t.at(0, 1, 0) = 3.0;
  CHECK(t[4] == 3.0);

  Tensor s = Tensor::scalar(2.5);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.at() == 2.5);

  Tensor r4({2, 2, 2, 2});
  r4.at(1, 0, 1, 0) = 9.0;
  CHECK(r4[10] == 9.0);
}

TEST_CASE("tensor reductions and fill") {
  Tensor t({2, 2}, 1.5);
  CHECK(t.sum() == doctest::Approx(6.0));
  CHECK(t.mean() == doctest::Approx(1.5));
  t.at(0, 0) = -2.0;
  CHECK(t.min() == -2.0);
  CHECK(t.max() == 1.5);
  t.fill(0.0);
  CHECK(t.sum() == 0.0);
  CHECK(t.all_finite());
  t.at(1, 1) = std::numeric_limits<double>::infinity();
  CHECK(!t.all_finite());
}

TEST_CASE("sum_pool preserves mass and rejects indivisible shapes") {
  Rng rng(11);
  Tensor t({16, 24});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  Tensor p = sum_pool(t, 8);
  CHECK(p.dim(0) == 2);
  CHECK(p.dim(1) == 3);
  CHECK(p.sum() == doctest::Approx(t.sum()).epsilon(1e-12));
  // One block checked by hand.
  double block = 0.0;
  for (int y = 0; y < 8; ++y)
    for (int x = 8; x < 16; ++x) block += t.at(y, x);
  CHECK(p.at(0, 1) == doctest::Approx(block).epsilon(1e-12));

  CHECK_THROWS_AS(sum_pool(t, 5), ShapeError);
  CHECK_THROWS_AS(sum_pool(Tensor({2, 2, 2}), 2), ShapeError);
}

TEST_CASE("rng reproducibility and substreams") {
  Rng a(1234), b(1234), c(1235);
  for (int i = 0; i < 16; ++i) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
  CHECK(a.uniform() != c.uniform());

  Rng d1 = Rng::derive(7, "scene", 3);
  Rng d2 = Rng::derive(7, "scene", 3);
  Rng d3 = Rng::derive(7, "scene", 4);
  Rng d4 = Rng::derive(7, "split", 3);
  const double v = d1.uniform();
  CHECK(v == d2.uniform());
  CHECK(v != d3.uniform());
  CHECK(v != d4.uniform());
}

TEST_CASE("rng uniform_int stays in range and hits endpoints") {
  Rng rng(5);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.uniform_int(-2, 4);
    CHECK(v >= -2);
    CHECK(v <= 4);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK(rng.uniform_int(3, 3) == 3);
}

TEST_CASE("rng normal moments") {
  Rng rng(99);
  const int n = 20000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::fabs(s / n) < 0.03);
  CHECK(std::fabs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("rng categorical follows weights") {
  Rng rng(7);
  std::vector<double> w = {1.0, 0.0, 3.0};
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 4000; ++i) counts[rng.categorical(w)]++;
  CHECK(counts[1] == 0);
  CHECK(counts[2] > counts[0]);
  CHECK(std::fabs(counts[2] / 4000.0 - 0.75) < 0.05);
}

TEST_CASE("rng shuffle is a permutation and deterministic") {
  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
  Rng a(42);
  a.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 8);
  std::vector<int> v2 = {0, 1, 2, 3, 4, 5, 6, 7};
  Rng b(42);
  b.shuffle(v2);
  CHECK(v == v2);
}

TEST_CASE("fnv1a64 is stable") {
  // Frozen reference for the empty string and a known vector.
  CHECK(crowdlab::fnv1a64(std::string("")) == 0xcbf29ce484222325ull);
  CHECK(crowdlab::fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cull);
  CHECK(crowdlab::hex64(0xdeadbeefull) == "00000000deadbeef");
}
