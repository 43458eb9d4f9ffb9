#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "seizurecast/autodiff.hpp"
#include "seizurecast/error.hpp"
#include "seizurecast/optim.hpp"

using namespace seizurecast;
using namespace seizurecast::nn;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> g(0.0, scale);
  for (auto& v : t.values()) v = g(rng);
  return t;
}

// Mean over the batch of (w . x_b)^2 with fixed random w, so every input
// coordinate gets a distinct gradient.
Var probe(Tape& t, Var x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t nb = t.value(x).dim(0);
  Tensor w = random_tensor({1, t.value(x).size() / nb}, rng);
  auto y = dense(t, flatten(t, x), t.constant(w), t.constant(Tensor({1})));
  const std::vector<int> same(nb, 1);
  return contrastive_loss(t, l2_distance(t, y, t.constant(Tensor({nb, 1}))), same);
}

double scalar(Tape& t, Var v) { return t.value(v)[0]; }

}  // namespace

TEST_CASE("conv2d values") {
  Tape t;
  SUBCASE("1x1 identity") {
    std::mt19937_64 rng(1);
    Tensor x = random_tensor({2, 1, 4, 5}, rng);
    auto y = conv2d(t, t.constant(x), t.constant(Tensor({1, 1, 1, 1}, 1.0)), t.constant(Tensor({1})));
    CHECK(t.value(y) == x);
  }
  SUBCASE("3x3 sum") {
    auto y = conv2d(t, t.constant(Tensor({1, 1, 3, 3}, 1.0)), t.constant(Tensor({1, 1, 3, 3}, 1.0)),
                    t.constant(Tensor({1})));
    REQUIRE(t.value(y).shape() == Shape{1, 1, 1, 1});
    CHECK(t.value(y)[0] == 9.0);
  }
  SUBCASE("output geometry") {
    Conv2dOptions o{2, 3, 1, 2};
    auto y = conv2d(t, t.constant(Tensor({1, 2, 9, 11})), t.constant(Tensor({4, 2, 3, 5})), t.constant(Tensor({4})), o);
    CHECK(t.value(y).shape() == Shape{1, 4, (9 + 2 - 3) / 2 + 1, (11 + 4 - 5) / 3 + 1});
  }
  SUBCASE("kernel larger than input") {
    CHECK_THROWS(conv2d(t, t.constant(Tensor({1, 1, 2, 2})), t.constant(Tensor({1, 1, 3, 3})), t.constant(Tensor({1}))));
  }
  SUBCASE("direct and reference agree") {
    // Naive cross-correlation oracle over a shape that hits the tiled path.
    std::mt19937_64 rng(4);
    Tensor x = random_tensor({2, 3, 13, 37}, rng);
    Tensor w = random_tensor({5, 3, 3, 5}, rng);
    Tensor b = random_tensor({5}, rng);
    auto y = conv2d(t, t.constant(x), t.constant(w), t.constant(b), Conv2dOptions::same(3, 5));
    const Tensor& out = t.value(y);
    double err = 0;
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t o = 0; o < 5; ++o) {
        for (std::size_t i = 0; i < 13; ++i) {
          for (std::size_t j = 0; j < 37; ++j) {
            double acc = b[o];
            for (std::size_t c = 0; c < 3; ++c) {
              for (std::size_t di = 0; di < 3; ++di) {
                for (std::size_t dj = 0; dj < 5; ++dj) {
                  const long ii = long(i + di) - 1, jj = long(j + dj) - 2;
                  if (ii < 0 || jj < 0 || ii >= 13 || jj >= 37) continue;
                  acc += w[((o * 3 + c) * 3 + di) * 5 + dj] * x[((n * 3 + c) * 13 + ii) * 37 + jj];
                }
              }
            }
            err = std::max(err, std::abs(acc - out[((n * 5 + o) * 13 + i) * 37 + j]));
          }
        }
      }
    }
    CHECK(err < 1e-12);
  }
}

TEST_CASE("conv2d gradients against finite differences") {
  std::mt19937_64 rng(2);
  ParameterStore ps;
  ps.add("x", {1, 2, 5, 7}).value = random_tensor({1, 2, 5, 7}, rng);
  ps.add("w", {3, 2, 3, 3}).value = random_tensor({3, 2, 3, 3}, rng);
  ps.add("b", {3}).value = random_tensor({3}, rng);
  for (const auto& opt : {Conv2dOptions{}, Conv2dOptions::same(3, 3), Conv2dOptions{2, 2, 1, 0}}) {
    const auto r = grad_check(ps, [&](Tape& t) {
      auto y = conv2d(t, t.parameter(ps.get("x")), t.parameter(ps.get("w")), t.parameter(ps.get("b")), opt);
      return probe(t, y, 7);
    });
    CHECK(r.max_rel_error < 1e-6);
    CHECK(r.coordinates_checked == 70 + 54 + 3);
  }
}

TEST_CASE("layer gradients") {
  std::mt19937_64 rng(3);
  ParameterStore ps;
  ps.add("x", {3, 4, 4, 6}).value = random_tensor({3, 4, 4, 6}, rng);
  ps.add("a", {3, 5}).value = random_tensor({3, 5}, rng);
  ps.add("w", {2, 5}).value = random_tensor({2, 5}, rng);
  ps.add("b", {2}).value = random_tensor({2}, rng);
  Rng drop(0);

  SUBCASE("max pool") {
    const auto r = grad_check(ps, [&](Tape& t) { return probe(t, max_pool2d(t, t.parameter(ps.get("x")), 2, 3), 1); });
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("dense, relu, sigmoid") {
    const auto r = grad_check(ps, [&](Tape& t) {
      auto h = dense(t, t.parameter(ps.get("a")), t.parameter(ps.get("w")), t.parameter(ps.get("b")));
      return probe(t, sigmoid(t, relu(t, h)), 2);
    });
    CHECK(r.max_rel_error < 1e-7);
  }
  SUBCASE("softmax") {
    const auto r = grad_check(ps, [&](Tape& t) { return probe(t, softmax(t, t.parameter(ps.get("a"))), 3); });
    CHECK(r.max_rel_error < 1e-7);
  }
  SUBCASE("concat and l2 distance") {
    const auto r = grad_check(ps, [&](Tape& t) {
      auto a = t.parameter(ps.get("a"));
      auto h = dense(t, a, t.parameter(ps.get("w")), t.parameter(ps.get("b")));
      const Var left[] = {a, h};
      const Var right[] = {h, a};
      return probe(t, l2_distance(t, concat(t, left), concat(t, right)), 4);
    });
    CHECK(r.max_rel_error < 1e-7);
  }
  SUBCASE("dropout in eval mode is the identity") {
    Tape t;
    auto a = t.parameter(ps.get("a"));
    CHECK(t.value(dropout(t, a, 0.6, drop, false)) == ps.get("a").value);
  }
}

TEST_CASE("concat and distance values") {
  Tape t;
  Tensor a({2, 2, 1, 1}, std::vector<double>{1, 2, 3, 4});
  Tensor b({2, 1, 1, 1}, std::vector<double>{5, 6});
  const Var parts[] = {t.constant(a), t.constant(b)};
  auto c = concat(t, parts);
  CHECK(t.value(c).shape() == Shape{2, 3, 1, 1});
  CHECK(t.value(c).storage() == std::vector<double>{1, 2, 5, 3, 4, 6});
  auto d = l2_distance(t, t.constant(Tensor({2, 2}, {0, 0, 1, 1})), t.constant(Tensor({2, 2}, {3, 4, 1, 1})));
  CHECK(t.value(d).storage() == std::vector<double>{5, 0});
}

TEST_CASE("dropout statistics") {
  Tape t;
  Rng rng(9);
  auto y = dropout(t, t.constant(Tensor({1, 100000}, 1.0)), 0.6, rng, true);
  std::size_t zeros = 0;
  for (double v : t.value(y).values()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(1.0 / 0.4).epsilon(1e-15));
    }
  }
  CHECK(std::abs(static_cast<double>(zeros) / 100000.0 - 0.6) < 0.01);
}

TEST_CASE("activation ranges") {
  Tape t;
  std::mt19937_64 rng(5);
  auto q = softmax(t, t.constant(random_tensor({4, 24}, rng, 5.0)));
  for (std::size_t b = 0; b < 4; ++b) {
    double s = 0;
    for (std::size_t k = 0; k < 24; ++k) s += t.value(q).at(b, k);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  auto p = sigmoid(t, t.constant(Tensor({3}, {-30.0, 0.0, 30.0})));
  for (double v : t.value(p).values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("loss unit values") {
  CHECK(bce(1 - 1e-7, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(std::abs(bce(0.5, 1) - std::log(2.0)) < 1e-12);
  std::vector<double> uniform(24, 1.0 / 24);
  CHECK(std::abs(cce(uniform, 3) - std::log(24.0)) < 1e-12);
  std::vector<double> onehot(24, 0.0);
  onehot[5] = 1.0;
  CHECK(cce(onehot, 5) <= 1.2e-7);
  CHECK_THROWS(cce(uniform, 24));
  CHECK(contrastive(0.0, 1, 1.0) == 0.0);
  CHECK(contrastive(1.0, 0, 1.0) == 0.0);
  CHECK(contrastive(1.7, 0, 1.0) == 0.0);
  CHECK(std::abs(contrastive(0.4, 0, 1.0) - 0.6) < 1e-12);
  CHECK(std::abs(contrastive(0.5, 1, 1.0) - 0.25) < 1e-12);
  CHECK_THROWS(contrastive(-0.1, 1, 1.0));
}

TEST_CASE("loss gradients") {
  SUBCASE("bce dL/dp at 0.25, y=1") {
    ParameterStore ps;
    ps.add("p", {1}).value[0] = 0.25;
    Tape t;
    const double y[] = {1.0};
    auto l = bce_loss(t, t.parameter(ps.get("p")), y);
    t.backward(l);
    CHECK(ps.get("p").grad[0] == doctest::Approx(-4.0).epsilon(1e-12));
    CHECK(scalar(t, l) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("softmax then cce gives q - onehot") {
    std::mt19937_64 rng(6);
    ParameterStore ps;
    ps.add("z", {3, 24}).value = random_tensor({3, 24}, rng);
    Tape t;
    const int y[] = {0, 7, 23};
    auto q = softmax(t, t.parameter(ps.get("z")));
    auto l = cce_loss(t, q, y);
    t.backward(l);
    const Tensor& qv = t.value(q);
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t k = 0; k < 24; ++k) {
        const double want = (qv.at(b, k) - (static_cast<int>(k) == y[b] ? 1.0 : 0.0)) / 3.0;
        CHECK(std::abs(ps.get("z").grad.at(b, k) - want) < 1e-9);
      }
    }
    const auto r = grad_check(ps, [&](Tape& t2) { return cce_loss(t2, softmax(t2, t2.parameter(ps.get("z"))), y); });
    CHECK(r.max_rel_error < 1e-7);
  }
  SUBCASE("contrastive") {
    ParameterStore ps;
    ps.add("d", {4}).value = Tensor({4}, {0.3, 0.4, 1.5, 0.9});
    const int same[] = {1, 0, 0, 1};
    const auto r = grad_check(ps, [&](Tape& t) { return contrastive_loss(t, t.parameter(ps.get("d")), same); });
    CHECK(r.max_rel_error < 1e-7);
    Tape t;
    auto l = contrastive_loss(t, t.parameter(ps.get("d")), same);
    CHECK(std::abs(scalar(t, l) - (0.09 + 0.6 + 0.0 + 0.81) / 4) < 1e-12);
  }
}

TEST_CASE("dense-only toy graph") {
  std::mt19937_64 rng(12);
  ParameterStore ps;
  ps.add("w1", {6, 4}).value = random_tensor({6, 4}, rng);
  ps.add("b1", {6}).value = random_tensor({6}, rng);
  ps.add("w2", {1, 6}).value = random_tensor({1, 6}, rng);
  ps.add("b2", {1});
  const Tensor x = random_tensor({5, 4}, rng);
  const double y[] = {1, 0, 1, 1, 0};
  const auto r = grad_check(ps, [&](Tape& t) {
    auto h = sigmoid(t, dense(t, t.constant(x), t.parameter(ps.get("w1")), t.parameter(ps.get("b1"))));
    auto p = sigmoid(t, dense(t, h, t.parameter(ps.get("w2")), t.parameter(ps.get("b2"))));
    return bce_loss(t, flatten(t, p), y);
  });
  CHECK(r.max_rel_error < 1e-7);
}

TEST_CASE("shared parameters accumulate gradients") {
  ParameterStore ps;
  ps.add("w", {1, 1}).value[0] = 2.0;
  ps.add("b", {1});
  Tape t;
  auto w = t.parameter(ps.get("w"));
  auto a = dense(t, t.constant(Tensor({1, 1}, 3.0)), w, t.parameter(ps.get("b")));
  auto b = dense(t, t.constant(Tensor({1, 1}, 5.0)), w, t.parameter(ps.get("b")));
  // |3w| + |5w| at w = 2 has derivative 8.
  const Var terms[] = {l2_distance(t, a, t.constant(Tensor({1, 1}))), l2_distance(t, b, t.constant(Tensor({1, 1})))};
  const double mix[] = {1.0, 1.0};
  t.backward(weighted_sum(t, terms, mix));
  CHECK(ps.get("w").grad[0] == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("maxnorm projection") {
  Tensor k({3, 1, 2, 2}, std::vector<double>{0.15, 0.15, 0.15, 0.15, 1, 1, 1, 1, 0, 0, 0, 0});
  maxnorm_project(k, 0.4);
  CHECK(k[0] == 0.15);  // norm 0.3 unchanged
  double n1 = 0;
  for (std::size_t i = 4; i < 8; ++i) n1 += k[i] * k[i];
  CHECK(std::abs(std::sqrt(n1) - 0.4) < 1e-12);  // norm 2.0 -> 0.4
  Tensor again = k;
  maxnorm_project(again, 0.4);
  CHECK(again == k);
  std::mt19937_64 rng(13);
  Tensor r = random_tensor({8, 3, 3, 5}, rng);
  maxnorm_project(r, 0.4);
  for (std::size_t f = 0; f < 8; ++f) {
    double s = 0;
    for (double v : r.slice(f)) s += v * v;
    CHECK(std::sqrt(s) <= 0.4 + 1e-12);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterStore ps;
    ps.add("a", {3}).value = Tensor({3}, {1, 2, 3});
    Adam opt(ps);
    opt.step();
    CHECK(ps.get("a").value == Tensor({3}, {1, 2, 3}));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("first step closed form") {
    ParameterStore ps;
    ps.add("a", {1}).value[0] = 0.5;
    ps.get("a").grad[0] = 1.0;
    Adam opt(ps);
    opt.step();
    const double delta = ps.get("a").value[0] - 0.5;
    CHECK(std::abs(delta + 0.001 * 1.0 / (1.0 + 1e-8)) < 1e-9);
  }
  SUBCASE("descent on a convex quadratic") {
    ParameterStore ps;
    ps.add("a", {2}).value = Tensor({2}, {3, -2});
    auto loss = [&] {
      const auto& v = ps.get("a").value;
      return v[0] * v[0] + 4 * v[1] * v[1];
    };
    Adam opt(ps, {0.1});
    const double l0 = loss();
    for (int s = 0; s < 2; ++s) {
      ps.get("a").grad = Tensor({2}, {2 * ps.get("a").value[0], 8 * ps.get("a").value[1]});
      opt.step();
    }
    CHECK(loss() < l0);
  }
  SUBCASE("non-finite gradient aborts the step") {
    ParameterStore ps;
    ps.add("a", {2}).value = Tensor({2}, {1, 1});
    ps.get("a").grad = Tensor({2}, {0.5, std::nan("")});
    Adam opt(ps);
    CHECK_THROWS_AS(opt.step(), NumericError);
    CHECK(ps.get("a").value == Tensor({2}, {1, 1}));
    CHECK(opt.steps() == 0);
  }
}
