#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "test_support.hpp"
#include "videostudio/attention.hpp"
#include "videostudio/gradcheck.hpp"
#include "videostudio/kernels.hpp"
#include "videostudio/optim.hpp"
#include "videostudio/tensor_io.hpp"

using namespace vs;
using vs::test::randn;

namespace {

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("matmul with identity returns the other operand") {
  Rng rng(1);
  Tensor x = randn({4, 3}, rng);
  CHECK(matmul(identity(4), x) == x);
  CHECK(matmul(x, identity(3)) == x);
  CHECK_THROWS_AS(matmul(x, x), ShapeMismatch);
}

TEST_CASE("serial and omp kernels agree") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = test::rand_between(rng, 1, 40), k = test::rand_between(rng, 1, 40), n = test::rand_between(rng, 1, 40);
    Tensor a = randn({m, k}, rng), b = randn({k, n}, rng), bt = randn({n, k}, rng), at = randn({k, m}, rng);
    CHECK(kernels::omp::matmul(a, b) == kernels::serial::matmul(a, b));
    CHECK(kernels::omp::matmul_nt(a, bt) == kernels::serial::matmul_nt(a, bt));
    CHECK(max_abs_diff(kernels::omp::matmul_tn(at, b), kernels::serial::matmul_tn(at, b)) < 1e-12);
    CHECK(kernels::omp::softmax_lastdim(a) == kernels::serial::softmax_lastdim(a));
  }
  // large enough to take the parallel path
  Tensor x = randn({6, 24, 24}, rng), k = randn({5, 6, 3, 3}, rng), b = randn({5}, rng);
  Tensor y = kernels::serial::conv2d_3x3(x, k, b);
  CHECK(kernels::omp::conv2d_3x3(x, k, b) == y);
  Tensor dy = randn(y.shape(), rng);
  ConvGrads gs = kernels::serial::conv2d_3x3_backward(x, k, dy);
  ConvGrads go = kernels::omp::conv2d_3x3_backward(x, k, dy);
  CHECK(max_abs_diff(gs.dx, go.dx) < 1e-12);
  CHECK(max_abs_diff(gs.dkernel, go.dkernel) < 1e-10);
  CHECK(max_abs_diff(gs.dbias, go.dbias) < 1e-10);

  Tensor v = randn({6, 7, 12, 12}, rng), tk = randn({4, 6, 3}, rng), tb = randn({4}, rng);
  Tensor tv = kernels::serial::temporal_conv1d(v, tk, tb);
  CHECK(kernels::omp::temporal_conv1d(v, tk, tb) == tv);
  Tensor dtv = randn(tv.shape(), rng);
  ConvGrads ts = kernels::serial::temporal_conv1d_backward(v, tk, dtv);
  ConvGrads to = kernels::omp::temporal_conv1d_backward(v, tk, dtv);
  CHECK(max_abs_diff(ts.dx, to.dx) < 1e-12);
  CHECK(max_abs_diff(ts.dkernel, to.dkernel) < 1e-10);

  Tensor frame = randn({4, 32, 32}, rng), flow = randn({32, 32, 2}, rng, 3.0);
  CHECK(kernels::omp::warp_bilinear(frame, flow) == kernels::serial::warp_bilinear(frame, flow));
}

TEST_CASE("softmax rows sum to one and ignore row shifts") {
  Rng rng(3);
  Tensor t = randn({7, 11}, rng, 5.0);
  Tensor s = softmax_lastdim(t);
  for (std::size_t r = 0; r < 7; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 11; ++c) z += s.at(r, c);
    CHECK(std::abs(z - 1.0) < 1e-12);
  }
  Tensor shifted = t;
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 11; ++c) shifted.at(r, c) += 3.0 * static_cast<double>(r) - 40.0;
  CHECK(max_abs_diff(softmax_lastdim(shifted), s) < 1e-12);
}

TEST_CASE("layer_norm rows have mean bias and std gain") {
  Rng rng(4);
  Tensor x = randn({5, 64}, rng, 3.0);
  Tensor gain({64}, 1.7), bias({64}, -0.4);
  Tensor y = layer_norm(x, gain, bias, 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 64; ++c) mean += y.at(r, c);
    mean /= 64.0;
    for (std::size_t c = 0; c < 64; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    CHECK(std::abs(mean + 0.4) < 1e-12);
    CHECK(std::abs(std::sqrt(var / 64.0) - 1.7) < 1e-9);
  }
}

TEST_CASE("cross_attention with one key broadcasts the projected value") {
  Rng rng(5);
  Tensor x = randn({6, 4}, rng), ctx = randn({1, 3}, rng);
  Tensor wq = randn({4, 8}, rng), wk = randn({3, 8}, rng), wv = randn({3, 8}, rng), wo = randn({8, 4}, rng);
  Tensor out = cross_attention(x, ctx, {wq, wk, wv, wo, 2});
  Tensor expected = matmul(matmul(ctx, wv), wo);
  for (std::size_t q = 0; q < 6; ++q)
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(out.at(q, c) - expected[c]) < 1e-12);
}

TEST_CASE("cross_attention is invariant to permuting identical context rows") {
  Rng rng(6);
  Tensor x = randn({3, 4}, rng);
  Tensor row = randn({1, 4}, rng);
  Tensor other = randn({1, 4}, rng);
  Tensor wq = randn({4, 4}, rng), wk = randn({4, 4}, rng), wv = randn({4, 4}, rng), wo = randn({4, 4}, rng);
  Tensor a_parts[] = {row, row, other};
  Tensor b_parts[] = {row, other, row};
  Tensor a = cross_attention(x, concat_rows(a_parts), {wq, wk, wv, wo, 1});
  Tensor b = cross_attention(x, concat_rows(b_parts), {wq, wk, wv, wo, 1});
  CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("cross_attention 2-token hand evaluation") {
  Tensor x({2, 2}, {1.0, 0.0, 0.0, 2.0});
  Tensor ctx({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor eye = identity(2);
  Tensor out = cross_attention(x, ctx, {eye, eye, eye, eye, 1});
  // row 0 scores (1/sqrt2, 0); row 1 scores (0, 2/sqrt2)
  const double p00 = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
  const double p11 = 1.0 / (1.0 + std::exp(-std::sqrt(2.0)));
  CHECK(out.at(0, 0) == doctest::Approx(p00).epsilon(1e-14));
  CHECK(out.at(0, 1) == doctest::Approx(1.0 - p00).epsilon(1e-14));
  CHECK(out.at(1, 0) == doctest::Approx(1.0 - p11).epsilon(1e-14));
  CHECK(out.at(1, 1) == doctest::Approx(p11).epsilon(1e-14));
}

TEST_CASE("cross_attention with empty context is zero") {
  Rng rng(7);
  Tensor x = randn({5, 4}, rng);
  Tensor ctx({0, 3});
  Tensor wq = randn({4, 4}, rng), wk = randn({3, 4}, rng), wv = randn({3, 4}, rng), wo = randn({4, 4}, rng);
  AttentionCache cache;
  Tensor out = cross_attention(x, ctx, {wq, wk, wv, wo, 2}, &cache);
  CHECK(max_abs(out) == 0.0);
  AttentionGrads g = cross_attention_backward(x, ctx, {wq, wk, wv, wo, 2}, cache, randn({5, 4}, rng));
  CHECK(max_abs(g.dx) == 0.0);
  CHECK(max_abs(g.dwq) == 0.0);
  CHECK_THROWS_AS(cross_attention(x, ctx, {wq, wk, wv, wo, 3}), ShapeMismatch);
}

TEST_CASE("conv2d identity kernel and delta footprint") {
  Rng rng(8);
  Tensor x = randn({2, 5, 6}, rng);
  Tensor k({2, 2, 3, 3});
  k[((0 * 2 + 0) * 3 + 1) * 3 + 1] = 1.0;
  k[((1 * 2 + 1) * 3 + 1) * 3 + 1] = 1.0;
  CHECK(conv2d_3x3(x, k, Tensor({2})) == x);

  Tensor delta({2, 5, 6});
  const std::size_t ci = 1, i0 = 2, j0 = 3;
  delta[(ci * 5 + i0) * 6 + j0] = 1.0;
  Tensor kr = randn({3, 2, 3, 3}, rng);
  Tensor bias({3}, {0.5, -1.0, 2.0});
  Tensor y = conv2d_3x3(delta, kr, bias);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        double expected = bias[o];
        const auto di = static_cast<long>(i0) - static_cast<long>(i) + 1;
        const auto dj = static_cast<long>(j0) - static_cast<long>(j) + 1;
        if (di >= 0 && di < 3 && dj >= 0 && dj < 3)
          expected += kr[((o * 2 + ci) * 3 + static_cast<std::size_t>(di)) * 3 + static_cast<std::size_t>(dj)];
        CHECK(y[(o * 5 + i) * 6 + j] == expected);
      }
}

TEST_CASE("temporal conv with one frame uses the centre tap only") {
  Rng rng(9);
  Tensor x = randn({3, 1, 4, 4}, rng);
  Tensor k = randn({2, 3, 3}, rng);
  Tensor b = randn({2}, rng);
  Tensor y = temporal_conv1d(x, k, b);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t p = 0; p < 16; ++p) {
      double expected = b[o];
      for (std::size_t c = 0; c < 3; ++c) expected += k[(o * 3 + c) * 3 + 1] * x[c * 16 + p];
      CHECK(std::abs(y[o * 16 + p] - expected) < 1e-14);
    }
  Tensor ki({3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) ki[(c * 3 + c) * 3 + 1] = 1.0;
  Tensor video = randn({3, 5, 2, 2}, rng);
  CHECK(temporal_conv1d(video, ki, Tensor({3})) == video);
}

TEST_CASE("finite_diff_check: quadratic is near exact and corrupted backward is caught") {
  Rng rng(10);
  Tensor a = randn({6, 6}, rng);
  Tensor x = randn({6}, rng);
  auto loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) s += 0.5 * x[i] * a[i * 6 + j] * x[j];
    return s;
  };
  Tensor grad({6});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) grad[i] += 0.5 * (a[i * 6 + j] + a[j * 6 + i]) * x[j];
  CHECK(finite_diff_check(loss, {&x}, {grad}).max_rel_error < 1e-9);

  // negative control: drop the attention softmax backward
  Tensor q = randn({3, 4}, rng), ctx = randn({5, 4}, rng), wts = randn({3, 4}, rng);
  Tensor wq = randn({4, 4}, rng), wk = randn({4, 4}, rng), wv = randn({4, 4}, rng), wo = randn({4, 4}, rng);
  auto attn_loss = [&] { return test::weighted(cross_attention(q, ctx, {wq, wk, wv, wo, 1}), wts); };
  AttentionCache cache;
  cross_attention(q, ctx, {wq, wk, wv, wo, 1}, &cache);
  AttentionGrads g = cross_attention_backward(q, ctx, {wq, wk, wv, wo, 1}, cache, wts);
  CHECK(finite_diff_check(attn_loss, {&q, &wk}, {g.dx, g.dwk}).max_rel_error < 1e-6);
  Tensor corrupted = g.dwk * 1.5;
  CHECK(finite_diff_check(attn_loss, {&q, &wk}, {g.dx, corrupted}).max_rel_error > 1e-2);
}

TEST_CASE("every kernel passes finite differences on randomized shapes") {
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = test::rand_between(rng, 1, 6), k = test::rand_between(rng, 1, 6), n = test::rand_between(rng, 1, 6);
    {
      Tensor a = randn({m, k}, rng), b = randn({k, n}, rng), w = randn({m, n}, rng);
      MatmulGrads g = matmul_backward(a, b, w);
      auto loss = [&] { return test::weighted(matmul(a, b), w); };
      worst = std::max(worst, finite_diff_check(loss, {&a, &b}, {g.da, g.db}).max_rel_error);
    }
    {
      Tensor t = randn({m, n}, rng, 2.0), w = randn({m, n}, rng);
      Tensor dx = softmax_lastdim_backward(softmax_lastdim(t), w);
      auto loss = [&] { return test::weighted(softmax_lastdim(t), w); };
      worst = std::max(worst, finite_diff_check(loss, {&t}, {dx}).max_rel_error);
      Tensor dg = gelu_backward(t, w);
      auto gloss = [&] { return test::weighted(gelu(t), w); };
      worst = std::max(worst, finite_diff_check(gloss, {&t}, {dg}).max_rel_error);
    }
    {
      const auto cols = test::rand_between(rng, 2, 8);
      Tensor x = randn({m, cols}, rng), g = randn({cols}, rng), b = randn({cols}, rng), w = randn({m, cols}, rng);
      LayerNormGrads lg = layer_norm_backward(x, g, w);
      auto loss = [&] { return test::weighted(layer_norm(x, g, b), w); };
      worst = std::max(worst, finite_diff_check(loss, {&x, &g, &b}, {lg.dx, lg.dgain, lg.dbias}).max_rel_error);
    }
    {
      const auto cin = test::rand_between(rng, 1, 3), cout = test::rand_between(rng, 1, 3);
      const auto h = test::rand_between(rng, 1, 5), wd = test::rand_between(rng, 1, 5);
      Tensor x = randn({cin, h, wd}, rng), kk = randn({cout, cin, 3, 3}, rng), b = randn({cout}, rng);
      Tensor w = randn({cout, h, wd}, rng);
      ConvGrads cg = conv2d_3x3_backward(x, kk, w);
      auto loss = [&] { return test::weighted(conv2d_3x3(x, kk, b), w); };
      worst = std::max(worst, finite_diff_check(loss, {&x, &kk, &b}, {cg.dx, cg.dkernel, cg.dbias}).max_rel_error);

      const auto f = test::rand_between(rng, 1, 5);
      Tensor v = randn({cin, f, h, wd}, rng), tk = randn({cout, cin, 3}, rng), tb = randn({cout}, rng);
      Tensor tw = randn({cout, f, h, wd}, rng);
      ConvGrads tg = temporal_conv1d_backward(v, tk, tw);
      auto tloss = [&] { return test::weighted(temporal_conv1d(v, tk, tb), tw); };
      worst = std::max(worst, finite_diff_check(tloss, {&v, &tk, &tb}, {tg.dx, tg.dkernel, tg.dbias}).max_rel_error);
    }
    {
      const auto heads = test::rand_between(rng, 1, 2);
      const auto d = heads * test::rand_between(rng, 1, 3);
      const auto lk = test::rand_between(rng, 1, 5), ck = test::rand_between(rng, 1, 4);
      Tensor x = randn({m, k}, rng), ctx = randn({lk, ck}, rng), w = randn({m, k}, rng);
      Tensor wq = randn({k, d}, rng), wk = randn({ck, d}, rng), wv = randn({ck, d}, rng), wo = randn({d, k}, rng);
      AttentionCache cache;
      cross_attention(x, ctx, {wq, wk, wv, wo, heads}, &cache);
      AttentionGrads ag = cross_attention_backward(x, ctx, {wq, wk, wv, wo, heads}, cache, w);
      auto loss = [&] { return test::weighted(cross_attention(x, ctx, {wq, wk, wv, wo, heads}), w); };
      worst = std::max(worst, finite_diff_check(loss, {&x, &ctx, &wq, &wk, &wv, &wo},
                                                {ag.dx, ag.dctx, ag.dwq, ag.dwk, ag.dwv, ag.dwo})
                                  .max_rel_error);
    }
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("adamw: frozen, scalar recurrence and null update") {
  Rng rng(12);
  Parameter frozen("frozen", randn({3}, rng), false);
  Parameter live("live", Tensor({1}, {0.7}), true);
  Parameter still("still", Tensor({2}, {1.0, -2.0}), true);
  const Tensor frozen0 = frozen.value;
  std::vector<Parameter*> params{&frozen, &live, &still};
  AdamWHyper hyper{.lr = 0.05, .weight_decay = 0.01};
  AdamWState state;

  double p = 0.7, m = 0.0, v = 0.0;
  for (int step = 1; step <= 100; ++step) {
    const double g = std::sin(0.3 * step) + 0.1 * p;
    frozen.grad.fill(1.0);
    live.grad[0] = g;
    still.grad.fill(0.0);
    adamw_step(params, hyper, state);

    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, step));
    const double vhat = v / (1.0 - std::pow(0.999, step));
    p -= 0.05 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.01 * p);
    CHECK(live.value[0] == doctest::Approx(p).epsilon(1e-13));
  }
  CHECK(frozen.value == frozen0);
  CHECK(state.step == 100);

  Parameter plain("plain", Tensor({2}, {1.0, -2.0}), true);
  AdamWState s2;
  for (int i = 0; i < 10; ++i) adamw_step({&plain}, AdamWHyper{.lr = 0.1}, s2);
  CHECK(plain.value == Tensor({2}, {1.0, -2.0}));
}

TEST_CASE("VSTN round trip and layout") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    Shape shape;
    const auto rank = test::rand_between(rng, 0, 4);
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(test::rand_between(rng, 1, 5));
    Tensor t(shape);
    for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(rng.normal()));
    CHECK(decode_tensor(encode_tensor(t)) == t);
    Tensor raw = randn(shape, rng);
    const std::string once = encode_tensor(raw);
    CHECK(encode_tensor(decode_tensor(once)) == once);
  }
  const std::string bytes = encode_tensor(Tensor({2}, {1.0, -2.0}));
  CHECK(bytes.size() == 4 + 4 + 4 + 8 + 8);
  CHECK(bytes.substr(0, 4) == "VSTN");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[8]) == 1);
  CHECK(static_cast<unsigned char>(bytes[12]) == 2);
  // 1.0f = 0x3f800000 little-endian
  CHECK(static_cast<unsigned char>(bytes[20]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[23]) == 0x3f);
  CHECK_THROWS_AS(decode_tensor("VSTX"), IoError);
  CHECK_THROWS_AS(decode_tensor(bytes.substr(0, bytes.size() - 1)), IoError);

  auto dir = test::scratch_dir("vstn");
  Tensor t({3, 2}, {1, 2, 3, 4, 5, 6});
  save_tensor(t, dir / "t.vstn");
  CHECK(load_tensor(dir / "t.vstn") == t);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(99), b(99), c(100);
  for (int i = 0; i < 50; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  // pinned values guard against silent generator changes
  Rng pinned(0);
  CHECK(pinned.next_u64() == 12035550249420947055ULL);
  CHECK(derive_seed(7, "young man") == derive_seed(7, "young man"));
  CHECK(derive_seed(7, "young man") != derive_seed(8, "young man"));
}
