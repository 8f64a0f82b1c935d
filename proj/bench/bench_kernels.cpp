#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include <omp.h>

#include "CLI11.hpp"
#include "videostudio/kernels.hpp"
#include "videostudio/rng.hpp"
#include "videostudio/studies.hpp"

using namespace vs;
namespace ks = vs::kernels::serial;
namespace ko = vs::kernels::omp;

namespace {

Tensor randn(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

// Best of `reps` wall-clock runs, in milliseconds.
double time_ms(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void row(const std::string& name, int reps, const std::function<Tensor()>& serial, const std::function<Tensor()>& par) {
  const double diff = max_abs_diff(serial(), par());
  const double s = time_ms(reps, [&] { serial(); });
  const double p = time_ms(reps, [&] { par(); });
  std::printf("%-26s %10.3f %10.3f %8.2fx %10.1e\n", name.c_str(), s, p, s / p, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs OpenMP kernel benchmark"};
  int reps = 5;
  std::size_t scale = 1;
  bool pipeline = false;
  app.add_option("--reps", reps, "Repetitions per kernel (best is reported)");
  app.add_option("--scale", scale, "Size multiplier")->check(CLI::Range(1, 8));
  app.add_flag("--pipeline", pipeline, "Also time a toy-dims displacement study");
  CLI11_PARSE(app, argc, argv);

  Rng rng(1);
  const std::size_t n = 256 * scale;
  const Tensor a = randn({n, n}, rng), b = randn({n, n}, rng);
  const Tensor logits = randn({4 * n, 77}, rng);
  const std::size_t hw = 32 * scale;
  const Tensor img = randn({32, hw, hw}, rng), k2 = randn({32, 32, 3, 3}, rng), b2 = randn({32}, rng);
  const Tensor vid = randn({16, 16, hw, hw}, rng), k1 = randn({16, 16, 3}, rng), b1 = randn({16}, rng);
  const Tensor frame = randn({4, 4 * hw, 4 * hw}, rng);
  Tensor flow({4 * hw, 4 * hw, 2});
  for (std::size_t i = 0; i < flow.numel(); ++i) flow[i] = i % 2 ? 0.3 : 1.7;

  std::printf("threads %d\n", omp_get_max_threads());
  std::printf("%-26s %10s %10s %9s %10s\n", "kernel", "serial_ms", "omp_ms", "speedup", "max_diff");
  row("matmul " + std::to_string(n) + "^3", reps, [&] { return ks::matmul(a, b); }, [&] { return ko::matmul(a, b); });
  row("matmul_nt", reps, [&] { return ks::matmul_nt(a, b); }, [&] { return ko::matmul_nt(a, b); });
  row("matmul_tn", reps, [&] { return ks::matmul_tn(a, b); }, [&] { return ko::matmul_tn(a, b); });
  row("softmax [4n,77]", reps, [&] { return ks::softmax_lastdim(logits); }, [&] { return ko::softmax_lastdim(logits); });
  row("conv2d_3x3 32ch", reps, [&] { return ks::conv2d_3x3(img, k2, b2); }, [&] { return ko::conv2d_3x3(img, k2, b2); });
  row("temporal_conv1d 16ch F16", reps, [&] { return ks::temporal_conv1d(vid, k1, b1); },
      [&] { return ko::temporal_conv1d(vid, k1, b1); });
  row("warp_bilinear", reps, [&] { return ks::warp_bilinear(frame, flow); }, [&] { return ko::warp_bilinear(frame, flow); });

  if (pipeline) {
    DisplacementOptions o;
    o.trials = 4;
    const double ms = time_ms(1, [&] { displacement_study(o); });
    std::printf("displacement study (4 trials, 70 steps, 4x8x16x16): %.1f ms\n", ms);
  }
  return 0;
}
