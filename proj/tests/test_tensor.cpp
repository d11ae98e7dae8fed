#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msw/tensor.hpp"
#include "test_util.hpp"

using namespace msw;
using testutil::fd_check;
using testutil::random_array;

namespace {
ArrayD arr(Shape s, std::vector<double> v) { return ArrayD(std::move(s), std::move(v)); }
}  // namespace

TEST_CASE("matmul identity and projector") {
  Tape<double> t;
  auto I = t.constant(arr({2, 2}, {1, 0, 0, 1}));
  auto A = t.constant(arr({2, 2}, {1, 2, 3, 4}));
  auto P = t.constant(arr({2, 2}, {1, 0, 0, 0}));
  auto B = t.constant(arr({2, 2}, {5, 6, 7, 8}));
  auto IA = matmul(I, A);
  CHECK(IA.values() == std::vector<double>{1, 2, 3, 4});
  auto PB = matmul(P, B);
  CHECK(PB.values() == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape<double> t;
  auto a = t.constant(ArrayD({2, 3}));
  auto b = t.constant(ArrayD({2, 3}));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  for (int seed = 0; seed < 20; ++seed) {
    auto A = random_array({3, 4}, rng);
    auto B = random_array({4, 2}, rng);
    const double err = fd_check(
        [](Tape<double>& tp, const std::vector<Tensor<double>>& in) {
          (void)tp;
          return sum(matmul(in[0], in[1]));
        },
        {A, B});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("matmul transpose flags") {
  Rng rng(12);
  auto A = random_array({4, 3}, rng);
  auto B = random_array({2, 4}, rng);
  const double err = fd_check(
      [](Tape<double>&, const std::vector<Tensor<double>>& in) {
        return sum(matmul(in[0], in[1], true, true));  // A^T (3x4) * B^T (4x2)
      },
      {A, B});
  CHECK(err < 1e-6);
}

TEST_CASE("bmm gradient") {
  Rng rng(13);
  auto A = random_array({2, 3, 4}, rng);
  auto B = random_array({2, 4, 2}, rng);
  auto Bt = random_array({2, 2, 4}, rng);
  CHECK(fd_check([](Tape<double>&, const std::vector<Tensor<double>>& in) { return sum(bmm(in[0], in[1])); },
                 {A, B}) < 1e-6);
  CHECK(fd_check([](Tape<double>&, const std::vector<Tensor<double>>& in) { return sum(bmm(in[0], in[1], true)); },
                 {A, Bt}) < 1e-6);
}

TEST_CASE("softmax symmetry and stability") {
  Tape<double> t;
  auto x = t.constant(arr({3}, {0, 0, 0}));
  auto y = softmax(x, 0);
  for (const double v : y.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  auto big = t.constant(arr({2}, {1000, 0}));
  auto yb = softmax(big, 0);
  CHECK(yb.values()[0] == doctest::Approx(1.0));
  CHECK(yb.values()[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(yb.values()[0]));
}

TEST_CASE("softmax jacobian matches finite differences") {
  Rng rng(21);
  for (int seed = 0; seed < 20; ++seed) {
    auto x = random_array({2, 5}, rng);
    auto w = random_array({2, 5}, rng);  // random projection => checks full jacobian
    const double err = fd_check(
        [&](Tape<double>& tp, const std::vector<Tensor<double>>& in) {
          return sum(mul(softmax(in[0], 1), tp.constant(w)));
        },
        {x});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("layer_norm basics") {
  Tape<double> t;
  auto gamma = t.constant(arr({4}, {1, 1, 1, 1}));
  auto beta = t.constant(arr({4}, {0, 0, 0, 0}));
  auto constant_row = t.constant(arr({1, 4}, {3, 3, 3, 3}));
  auto y = layer_norm(constant_row, gamma, beta);
  for (const double v : y.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));

  auto g2 = t.constant(arr({2}, {1, 1}));
  auto b2 = t.constant(arr({2}, {0, 0}));
  auto two = t.constant(arr({1, 2}, {1, 3}));
  auto y2 = layer_norm(two, g2, b2, 1e-12);
  CHECK(y2.values()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y2.values()[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm gradient") {
  Rng rng(31);
  for (int seed = 0; seed < 20; ++seed) {
    auto x = random_array({3, 6}, rng);
    auto gm = random_array({6}, rng, 0.5);
    auto bt = random_array({6}, rng, 0.5);
    auto w = random_array({3, 6}, rng);
    const double err = fd_check(
        [&](Tape<double>& tp, const std::vector<Tensor<double>>& in) {
          return sum(mul(layer_norm(in[0], in[1], in[2]), tp.constant(w)));
        },
        {x, gm, bt});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("conv2d 1x1 identity kernel") {
  Rng rng(41);
  Tape<double> t;
  auto x = t.constant(random_array({1, 1, 3, 3}, rng));
  auto w = t.constant(arr({1, 1, 1, 1}, {1}));
  auto y = conv2d(x, w, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.values() == x.values());
}

TEST_CASE("conv2d patch-embed degenerate case") {
  Rng rng(42);
  Tape<double> t;
  auto xv = random_array({1, 1, 4, 4}, rng);
  auto wv = random_array({1, 1, 4, 4}, rng);
  auto y = conv2d(t.constant(xv), t.constant(wv), 4, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  double inner = 0;
  for (int i = 0; i < 16; ++i) inner += xv.v[i] * wv.v[i];
  CHECK(y.item() == doctest::Approx(inner).epsilon(1e-12));
}

TEST_CASE("conv2d rejects oversized kernel") {
  Tape<double> t;
  auto x = t.constant(ArrayD({1, 1, 3, 3}));
  auto w = t.constant(ArrayD({1, 1, 5, 5}));
  CHECK_THROWS_AS(conv2d(x, w, 1, 0), DimensionError);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(43);
  for (int seed = 0; seed < 5; ++seed) {
    auto x = random_array({2, 2, 5, 5}, rng);
    auto w = random_array({3, 2, 3, 3}, rng, 0.5);
    auto proj = random_array({2, 3, 3, 3}, rng);
    const double err = fd_check(
        [&](Tape<double>& tp, const std::vector<Tensor<double>>& in) {
          return sum(mul(conv2d(in[0], in[1], 2, 1), tp.constant(proj)));
        },
        {x, w});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("gelu at zero, permute roundtrip") {
  Tape<double> t;
  auto z = t.constant(arr({1}, {0}));
  CHECK(gelu(z).item() == 0.0);

  Rng rng(51);
  auto x = random_array({2, 3, 4}, rng);
  auto p = permute(permute(t.constant(x), {2, 0, 1}), {1, 2, 0});
  CHECK(p.values() == x.v);
  CHECK(p.shape() == x.shape);
}

TEST_CASE("composite expression gradient") {
  Rng rng(52);
  for (int seed = 0; seed < 20; ++seed) {
    auto x = random_array({2, 8}, rng, 0.7);
    auto w = random_array({8, 4}, rng, 0.5);
    auto b = random_array({4}, rng, 0.2);
    auto gm = random_array({4}, rng, 0.3);
    auto bt = random_array({4}, rng, 0.3);
    const double err = fd_check(
        [](Tape<double>&, const std::vector<Tensor<double>>& in) {
          auto h = add_bias(matmul(in[0], in[1]), in[2]);
          auto a = gelu(h);
          auto n = layer_norm(a, in[3], in[4]);
          auto two = concat(std::vector<Tensor<double>>{n, n}, 1);  // fan-out through concat
          auto back = permute(reshape(two, {2, 2, 4}), {1, 0, 2});
          return mean(mul(back, back));
        },
        {x, w, b, gm, bt});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("cross_entropy values and gradient identity") {
  Tape<double> t;
  auto logits = t.constant(arr({1, 2}, {0, 0}));
  CHECK(cross_entropy(logits, {1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  auto wide = t.constant(arr({1, 2}, {50, 0}));
  CHECK(cross_entropy(wide, {0}).item() == doctest::Approx(0.0));

  auto bad = t.constant(arr({1, 2}, {0, 0}));
  CHECK_THROWS_AS(cross_entropy(bad, {2}), ValueError);

  // gradient equals softmax(logits) - one_hot, and matches finite differences
  Rng rng(61);
  auto z = random_array({3, 4}, rng);
  std::vector<int> labels{1, 3, 0};
  {
    Tape<double> tp;
    auto zt = tp.leaf(z, true);
    auto loss = cross_entropy(zt, labels);
    tp.backward(loss);
    auto g = tp.grad_or_zero(zt);
    Tape<double> tp2;
    auto sm = softmax(tp2.constant(z), 1);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        const double expected = (sm.values()[r * 4 + c] - (labels[r] == c ? 1.0 : 0.0)) / 3.0;
        CHECK(g.v[r * 4 + c] == doctest::Approx(expected).epsilon(1e-9));
      }
  }
  CHECK(fd_check([&](Tape<double>&, const std::vector<Tensor<double>>& in) { return cross_entropy(in[0], labels); },
                 {z}) < 1e-6);
}

TEST_CASE("backward basics") {
  Tape<double> t;
  auto x = t.leaf(arr({3}, {1, 2, 3}), true);
  auto disconnected = t.leaf(arr({2}, {5, 5}), true);
  auto loss = sum(x);
  t.backward(loss);
  CHECK(t.grad_or_zero(x).v == std::vector<double>{1, 1, 1});
  CHECK(t.grad_or_zero(disconnected).v == std::vector<double>{0, 0});
  CHECK(t.consumed());
}

TEST_CASE("backward requires scalar root and single use") {
  Tape<double> t;
  auto x = t.leaf(arr({2}, {1, 2}), true);
  auto y = mul_scalar(x, 2.0);
  CHECK_THROWS_AS(t.backward(y), ValueError);
  auto s = sum(y);
  t.backward(s);
  CHECK_THROWS_AS(t.backward(s), ValueError);
}

TEST_CASE("gradient accumulation at fan-out") {
  Rng rng(71);
  auto xv = random_array({4}, rng);
  auto av = random_array({4}, rng);
  auto bv = random_array({4}, rng);

  Tape<double> t;
  auto x = t.leaf(xv, true);
  auto loss = sum(add(mul(x, t.constant(av)), mul(x, t.constant(bv))));
  t.backward(loss);
  auto g = t.grad_or_zero(x);

  Tape<double> t1;
  auto x1 = t1.leaf(xv, true);
  t1.backward(sum(mul(x1, t1.constant(av))));
  auto g1 = t1.grad_or_zero(x1);

  Tape<double> t2;
  auto x2 = t2.leaf(xv, true);
  t2.backward(sum(mul(x2, t2.constant(bv))));
  auto g2 = t2.grad_or_zero(x2);

  for (int i = 0; i < 4; ++i) CHECK(g.v[i] == g1.v[i] + g2.v[i]);
}

TEST_CASE("identical runs are bitwise identical") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_array({4, 6}, rng);
    auto w = random_array({6, 3}, rng);
    Tape<double> t;
    auto xt = t.leaf(x, true);
    auto wt = t.leaf(w, true);
    auto loss = mean(gelu(matmul(xt, wt)));
    t.backward(loss);
    auto g = t.grad_or_zero(wt);
    g.v.push_back(loss.item());
    return g.v;
  };
  CHECK(run(99) == run(99));
}

TEST_CASE("roll2d and space_to_depth2 movement ops") {
  Rng rng(81);
  auto x = random_array({1, 4, 4, 2}, rng);
  Tape<double> t;
  auto xt = t.constant(x);
  auto rolled = roll2d(roll2d(xt, -1, -2), 1, 2);
  CHECK(rolled.values() == x.v);

  auto sd = space_to_depth2(xt);
  CHECK(sd.shape() == Shape{1, 2, 2, 8});
  // out(0,0,0, 0:2) == x(0,0,0,:), out(0,0,0, 2:4) == x(0,1,0,:)
  CHECK(sd.values()[0] == x.v[0]);
  CHECK(sd.values()[2] == x.v[(0 * 4 + 1) * 4 * 2 + 0]);

  CHECK(fd_check(
            [](Tape<double>&, const std::vector<Tensor<double>>& in) {
              return sum(mul(space_to_depth2(roll2d(in[0], 1, -1)), space_to_depth2(roll2d(in[0], 1, -1))));
            },
            {x}) < 1e-6);
}

TEST_CASE("pad and crop") {
  Rng rng(82);
  auto x = random_array({1, 3, 3, 2}, rng);
  Tape<double> t;
  auto p = pad_bottom_right(t.constant(x), 1, 2);
  CHECK(p.shape() == Shape{1, 4, 5, 2});
  auto c = crop_to(p, 3, 3);
  CHECK(c.values() == x.v);
  CHECK(fd_check(
            [](Tape<double>&, const std::vector<Tensor<double>>& in) {
              auto p2 = pad_bottom_right(in[0], 2, 1);
              return sum(mul(p2, p2));
            },
            {x}) < 1e-6);
}

TEST_CASE("mean_axis and bias ops") {
  Rng rng(83);
  auto x = random_array({2, 3, 4}, rng);
  auto b = random_array({4}, rng);
  CHECK(fd_check(
            [](Tape<double>&, const std::vector<Tensor<double>>& in) {
              auto y = add_bias(in[0], in[1]);
              return sum(mul(mean_axis(y, 1), mean_axis(y, 1)));
            },
            {x, b}) < 1e-6);

  auto xn = random_array({2, 3, 2, 2}, rng);
  auto bc = random_array({3}, rng);
  CHECK(fd_check(
            [](Tape<double>&, const std::vector<Tensor<double>>& in) {
              auto y = add_channel_bias_nchw(in[0], in[1]);
              return mean(mul(y, y));
            },
            {xn, bc}) < 1e-6);
}

TEST_CASE("select extracts scalar with scatter gradient") {
  Tape<double> t;
  auto x = t.leaf(arr({2, 2}, {1, 2, 3, 4}), true);
  auto s = select(x, 2);
  CHECK(s.item() == 3.0);
  t.backward(s);
  CHECK(t.grad_or_zero(x).v == std::vector<double>{0, 0, 1, 0});
}
