#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "saln/rng.hpp"
#include "saln/tensor.hpp"

using namespace saln;

TEST_CASE("tensor shape invariant") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1, 2, 3}), Error);
  Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(m.at(1, 0) == 3);
}

TEST_CASE("l2_normalize") {
  Tape t;
  Tensor v = l2_normalize(t, Tensor::vec({3, 4}));
  CHECK(v.at(0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(v.at(1) == doctest::Approx(0.8).epsilon(1e-12));

  Tensor e = l2_normalize(t, Tensor::vec({1, 0, 0}));
  CHECK(e.at(0) == 1.0);

  CHECK_THROWS_WITH_AS(l2_normalize(t, Tensor::vec({0, 0})), doctest::Contains("ZeroVector"), Error);
}

TEST_CASE("cosine_sim") {
  Tape t;
  CHECK(cosine_sim(t, Tensor::vec({1, 0}), Tensor::vec({1, 0})).item() == doctest::Approx(1.0));
  CHECK(cosine_sim(t, Tensor::vec({1, 0}), Tensor::vec({0, 1})).item() == doctest::Approx(0.0));
  CHECK(cosine_sim(t, Tensor::vec({1, 1}), Tensor::vec({1, 0})).item() ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
  CHECK_THROWS_AS(cosine_sim(t, Tensor::vec({0, 0}), Tensor::vec({1, 0})), Error);

  // bounded in [-1-eps, 1+eps] on random nonzero inputs
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    Tensor a = Tensor::vec(rng.normal_vec(5)), b = Tensor::vec(rng.normal_vec(5));
    const double c = cosine_sim(t, a, b).item();
    CHECK(c >= -1.0 - 1e-9);
    CHECK(c <= 1.0 + 1e-9);
  }
}

TEST_CASE("softmax values and invariants") {
  Tape t;
  Tensor u = softmax(t, Tensor::vec({5, 5, 5}), 2.0);
  for (int i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor s = softmax(t, Tensor::vec({2, 1}), 1.0);
  CHECK(s.at(0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(s.at(1) == doctest::Approx(0.2689414213699951).epsilon(1e-12));

  Tensor sharp = softmax(t, Tensor::vec({2, 1}), 1e-2);
  CHECK(sharp.at(0) > 1.0 - 1e-9);

  CHECK_THROWS_WITH_AS(softmax(t, Tensor::vec({1, 2}), 0.0), doctest::Contains("NonPositiveTemperature"), Error);

  // sums to 1 within 1e-9 across temperatures; invariant to constant shifts
  Rng rng(11);
  for (double tau : {1e-3, 0.07, 1.0, 1e3}) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x = rng.normal_vec(6, 3.0);
      Tensor y = softmax(t, Tensor::vec(x), tau);
      double sum = 0.0;
      for (int i = 0; i < 6; ++i) sum += y.at(i);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

      std::vector<double> xs = x;
      for (auto& v : xs) v += 17.5;
      Tensor ys = softmax(t, Tensor::vec(xs), tau);
      for (int i = 0; i < 6; ++i) CHECK(ys.at(i) == doctest::Approx(y.at(i)).epsilon(1e-9));
    }
  }
}

TEST_CASE("kl_divergence") {
  Tape t;
  CHECK(kl_divergence(t, Tensor::vec({0.5, 0.5}), Tensor::vec({0.5, 0.5})).item() == 0.0);
  CHECK(kl_divergence(t, Tensor::vec({1, 0}), Tensor::vec({0.5, 0.5})).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(kl_divergence(t, Tensor::vec({0.5, 0.5}), Tensor::vec({0.9, 0.1})).item() ==
        doctest::Approx(0.5108256237659907).epsilon(1e-9));
  CHECK_THROWS_WITH_AS(kl_divergence(t, Tensor::vec({0.7, 0.7}), Tensor::vec({0.5, 0.5})),
                       doctest::Contains("NotADistribution"), Error);

  // Gibbs: KL >= 0 on random distributions, equality iff p = q
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto draw = [&rng] {
      std::vector<double> v = rng.normal_vec(5);
      double s = 0.0;
      for (auto& x : v) {
        x = std::exp(x);
        s += x;
      }
      for (auto& x : v) x /= s;
      return Tensor::vec(v);
    };
    Tensor p = draw(), q = draw();
    CHECK(kl_divergence(t, p, q).item() >= -1e-12);
    CHECK(kl_divergence(t, p, p).item() == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives ones") {
    Tape t;
    Tensor x = t.param(Tensor::vec({1, 2, 3}), "x");
    t.backward(t.sum(x));
    auto g = t.grad(x);
    CHECK(g == std::vector<double>{1, 1, 1});
  }
  SUBCASE("squared norm gives 2x") {
    Tape t;
    Tensor x = t.param(Tensor::vec({1, 2}), "x");
    t.backward(t.dot(x, x));
    auto g = t.grad(x);
    CHECK(g[0] == doctest::Approx(2.0));
    CHECK(g[1] == doctest::Approx(4.0));
  }
  SUBCASE("disconnected parameter gets zeros") {
    Tape t;
    Tensor x = t.param(Tensor::vec({1, 2}), "x");
    Tensor y = t.param(Tensor::vec({3.0}), "y");
    t.backward(t.sum(y));
    auto g = t.grad(x);
    CHECK(g == std::vector<double>{0, 0});
  }
  SUBCASE("non-scalar loss rejected") {
    Tape t;
    Tensor x = t.param(Tensor::vec({1, 2}), "x");
    CHECK_THROWS_WITH_AS(t.backward(x), doctest::Contains("NotScalar"), Error);
  }
}

TEST_CASE("matrix op gradients against finite differences") {
  Rng rng(42);
  auto rnd = [&rng](Shape s) { return Tensor(s, rng.normal_vec(static_cast<std::size_t>(shape_numel(s)))); };

  SUBCASE("matmul chain") {
    auto f = [](Tape& t, const std::vector<Tensor>& p) {
      Tensor prod = t.matmul(p[0], p[1]);
      return t.sum(t.mul(prod, prod));
    };
    CHECK(grad_check(f, {rnd({3, 4}), rnd({4, 2})}) < 1e-6);
  }
  SUBCASE("softmax + log") {
    auto f = [](Tape& t, const std::vector<Tensor>& p) {
      Tensor s = t.softmax_rows(p[0], 0.5);
      return t.sum(t.mul(s, t.log_floor(s, 1e-12)));
    };
    CHECK(grad_check(f, {rnd({3, 5})}) < 1e-6);
  }
  SUBCASE("normalize + dot + tanh") {
    auto f = [](Tape& t, const std::vector<Tensor>& p) {
      Tensor n = t.normalize_rows(p[0]);
      Tensor v = t.tanh_map(t.matvec(n, p[1]));
      return t.mean(v);
    };
    CHECK(grad_check(f, {rnd({4, 6}), rnd({6})}) < 1e-6);
  }
  SUBCASE("logsumexp, diag, transpose") {
    auto f = [](Tape& t, const std::vector<Tensor>& p) {
      Tensor a = t.scale(p[0], 3.0);
      Tensor lse = t.logsumexp_rows(a);
      Tensor d = t.diag(t.transpose(a));
      return t.mean(t.sub(lse, d));
    };
    CHECK(grad_check(f, {rnd({4, 4})}) < 1e-6);
  }
  SUBCASE("topk softmax and scale_rows") {
    auto f = [](Tape& t, const std::vector<Tensor>& p) {
      Tensor gate = t.softmax_topk_rows(p[0], 2);
      Tensor scaled = t.scale_rows(p[1], t.col(gate, 1));
      return t.sum(t.mul(scaled, scaled));
    };
    CHECK(grad_check(f, {rnd({3, 4}), rnd({3, 5})}) < 1e-6);
  }
  SUBCASE("block maxmean") {
    auto f = [](Tape& t, const std::vector<Tensor>& p) {
      Tensor s = t.block_maxmean(p[0], 2, 3);
      return t.sum(t.mul(s, s));
    };
    CHECK(grad_check(f, {rnd({4, 6})}) < 1e-6);
  }
  SUBCASE("slice and concat") {
    auto f = [](Tape& t, const std::vector<Tensor>& p) {
      Tensor top = t.slice_rows(p[0], 0, 1);
      Tensor cat = t.concat_rows({top, p[1], top});
      return t.sum(t.mul(cat, cat));
    };
    CHECK(grad_check(f, {rnd({3, 4}), rnd({2, 4})}) < 1e-6);
  }
}

TEST_CASE("grad_check validates inputs") {
  auto f = [](Tape& t, const std::vector<Tensor>& p) { return t.sum(p[0]); };
  CHECK_THROWS_AS(grad_check(f, {Tensor::vec({1.0})}, 1e-2), Error);

  auto bad = [](Tape& t, const std::vector<Tensor>& p) {
    return t.log_floor(t.sum(p[0]), 0.0);  // log(0) = -inf at the origin
  };
  CHECK_THROWS_WITH_AS(grad_check(bad, {Tensor::vec({-1.0, 1.0})}),
                       doctest::Contains("NonFiniteFunctionValue"), Error);
}

TEST_CASE("backward determinism") {
  Rng rng(5);
  Tensor a0(Shape{4, 4}, rng.normal_vec(16));
  std::vector<double> g1, g2;
  for (int run = 0; run < 2; ++run) {
    Tape t;
    Tensor a = t.param(a0, "a");
    Tensor s = t.softmax_rows(t.matmul(a, a), 1.0);
    t.backward(t.mean(t.logsumexp_rows(s)));
    (run == 0 ? g1 : g2) = t.grad(a);
  }
  CHECK(g1 == g2);
}
