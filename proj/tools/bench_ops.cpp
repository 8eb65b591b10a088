// Rough per-op timings used to size the desk-scale models. Not a test.
#include "crowdlab/autograd.hpp"
#include "crowdlab/rng.hpp"

#include <chrono>
#include <cstdio>

using namespace crowdlab;
using namespace crowdlab::nn;
namespace O = crowdlab::nn::ops;

static Tensor rnd(std::vector<int> s, Rng& r) {
  Tensor t(std::move(s));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = r.uniform(-1, 1);
  return t;
}

template <typename F>
static double time_ms(F&& f, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

int main() {
  Rng rng(1);
  struct Case {
    int cin, cout, h, w, k, stride;
  };
  const Case cases[] = {
      {16, 16, 64, 64, 3, 1}, {32, 32, 32, 32, 3, 1}, {16, 32, 64, 64, 3, 2},
      {32, 32, 16, 16, 3, 1}, {8, 16, 96, 96, 3, 1},  {24, 24, 12, 12, 3, 1},
  };
  for (const auto& c : cases) {
    Var x = Var::leaf(rnd({c.cin, c.h, c.w}, rng), true);
    Var w = Var::leaf(rnd({c.cout, c.cin, c.k, c.k}, rng), true);
    Var b = Var::leaf(rnd({c.cout}, rng), true);
    const double fwd = time_ms([&] { O::conv2d(x, w, b, c.stride, c.k / 2); }, 10);
    const double both = time_ms(
        [&] {
          Var y = O::mean(O::square(O::conv2d(x, w, b, c.stride, c.k / 2)));
          y.backward();
        },
        10);
    std::printf("conv %2dx%2d %3dx%3d k%d s%d  fwd %7.2f ms  fwd+bwd %7.2f ms\n",
                c.cin, c.cout, c.h, c.w, c.k, c.stride, fwd, both);
  }

  {
    Var x = Var::leaf(rnd({16, 8, 8}, rng), true);
    Var w = Var::leaf(rnd({16, 16, 9}, rng), true);
    const double t = time_ms(
        [&] {
          Var h = O::directional_pass(x, w, O::PassDir::kDown);
          h = O::directional_pass(h, w, O::PassDir::kUp);
          h = O::directional_pass(h, w, O::PassDir::kLeftRight);
          h = O::directional_pass(h, w, O::PassDir::kRightLeft);
          O::mean(O::square(h)).backward();
        },
        10);
    std::printf("spatial 16ch 8x8 k9 4dirs fwd+bwd %7.2f ms\n", t);
  }
  return 0;
}
