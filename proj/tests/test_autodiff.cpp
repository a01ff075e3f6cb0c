#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dlrrec/autodiff.hpp"
#include "dlrrec/error.hpp"
#include "dlrrec/gradcheck.hpp"
#include "oracles.hpp"

using namespace dlrrec;
using ad::Tape;
using ad::Tensor;

TEST_SUITE("autodiff") {

TEST_CASE("matmul by hand") {
  Tape t;
  auto a = t.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto b = t.constant(Tensor::from_rows({{1}, {1}}));
  CHECK(t.value(t.matmul(a, b)) == Tensor::from_rows({{3}, {7}}));
}

TEST_CASE("identity times X is X") {
  Rng rng(11);
  for (std::size_t k = 1; k <= 4; ++k) {
    Tensor x({2, k});
    for (auto& v : x.data()) v = rng.uniform(-2, 2);
    Tape t;
    auto out = t.matmul(t.constant(Tensor::from_rows({{1, 0}, {0, 1}})), t.constant(x));
    CHECK(t.value(out) == x);
  }
}

TEST_CASE("matmul shape mismatch") {
  Tape t;
  auto a = t.constant(Tensor({2, 3}));
  auto b = t.constant(Tensor({2, 3}));
  CHECK_THROWS_AS(t.matmul(a, b), DimensionError);
}

TEST_CASE("gradient of sum(A B) against central differences") {
  Rng rng(5);
  std::vector<double> av(9), bv(9);
  for (auto& v : av) v = rng.uniform(-2, 2);
  for (auto& v : bv) v = rng.uniform(-2, 2);
  Tape t;
  auto a = t.parameter(Tensor({3, 3}, av));
  auto b = t.constant(Tensor({3, 3}, bv));
  auto g = t.backward(t.sum_all(t.matmul(a, b)));
  auto f = [&](const std::vector<double>& x) {
    double s = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) s += x[i * 3 + k] * bv[k * 3 + j];
    return s;
  };
  auto num = oracle::central_difference(f, av);
  auto ana = g.at(a).values();
  CHECK(oracle::rel_err({ana.begin(), ana.end()}, num) < 1e-6);
}

TEST_CASE("relu and sigmoid") {
  Tape t;
  auto x = t.parameter(Tensor({1, 2}, {-1.0, 2.0}));
  auto r = t.relu(x);
  CHECK(t.value(r)[0] == 0.0);
  CHECK(t.value(r)[1] == 2.0);
  CHECK(std::isnan(t.value(t.relu(t.constant(Tensor({1, 1}, {NAN}))))[0]));

  Tape s;
  auto z = s.parameter(Tensor::scalar(0.0));
  auto y = s.sigmoid(z);
  CHECK(s.value(y).item() == 0.5);
  CHECK(s.backward(y).at(z).item() == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("exp inverts log") {
  for (double x : {0.5, 1.0, 3.0}) {
    Tape t;
    auto v = t.exp(t.log(t.constant(Tensor::scalar(x))));
    CHECK(std::abs(t.value(v).item() - x) <= 1e-12);
  }
}

TEST_CASE("log of a non-positive value is a domain error") {
  Tape t;
  CHECK_THROWS_AS(t.log(t.constant(Tensor::scalar(0.0))), DomainError);
}

TEST_CASE("reductions") {
  Tape t;
  auto z = t.logsumexp(t.constant(Tensor({1, 2}, {0.0, 0.0})), 1);
  CHECK(t.value(z).item() == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  auto big = t.logsumexp(t.constant(Tensor({1, 2}, {1000.0, 1000.0})), 1);
  CHECK(std::isfinite(t.value(big).item()));
  CHECK(std::abs(t.value(big).item() - (1000.0 + std::numbers::ln2)) < 1e-12);
  auto m = t.mean(t.constant(Tensor({1, 3}, {1, 2, 3})), 1);
  CHECK(t.value(m).item() == 2.0);
}

TEST_CASE("logsumexp matches the max-shifted form") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(7);
    for (auto& v : x) v = rng.uniform(-50, 50);
    const double mx = *std::max_element(x.begin(), x.end());
    double acc = 0;
    for (double v : x) acc += std::exp(v - mx);
    Tape t;
    auto z = t.logsumexp(t.constant(Tensor({1, 7}, x)), 1);
    CHECK(std::abs(t.value(z).item() - (std::log(acc) + mx)) <= 1e-12 * std::max(1.0, std::abs(mx)));
  }
}

TEST_CASE("gather accumulates repeated rows") {
  Tape t;
  auto table = t.parameter(Tensor({4, 3}, 1.0));
  auto g = t.backward(t.sum_all(t.gather_rows(table, {0, 0})));
  const auto& d = g.at(table);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(d.at(0, c) == 2.0);
    CHECK(d.at(1, c) == 0.0);
  }
}

TEST_CASE("gather of a basis row") {
  Tensor table({4, 4});
  for (std::size_t i = 0; i < 4; ++i) table.at(i, i) = 1.0;
  Tape t;
  auto row = t.gather_rows(t.constant(table), {3});
  CHECK(t.value(row) == Tensor({1, 4}, {0, 0, 0, 1}));
  CHECK_THROWS_AS(t.gather_rows(t.constant(table), {4}), RangeError);
}

TEST_CASE("gather gradient against central differences") {
  Rng rng(9);
  std::vector<double> tv(12);
  for (auto& v : tv) v = rng.uniform(-2, 2);
  Tape t;
  auto table = t.parameter(Tensor({4, 3}, tv));
  // Weighted so that the check is not trivially all ones.
  auto w = t.constant(Tensor({2, 3}, {0.3, -1.1, 0.7, 1.9, 0.2, -0.4}));
  auto g = t.backward(t.sum_all(t.mul(t.gather_rows(table, {1, 2}), w)));
  const std::vector<double> wv{0.3, -1.1, 0.7, 1.9, 0.2, -0.4};
  auto f = [&](const std::vector<double>& x) {
    double s = 0;
    for (int c = 0; c < 3; ++c) s += x[3 + c] * wv[c] + x[6 + c] * wv[3 + c];
    return s;
  };
  auto ana = g.at(table).values();
  CHECK(oracle::rel_err({ana.begin(), ana.end()}, oracle::central_difference(f, tv)) < 1e-6);
}

TEST_CASE("backward seeds ones and ignores constants") {
  Tape t;
  auto x = t.parameter(Tensor({2, 3}, 0.5));
  auto g = t.backward(t.sum_all(x));
  CHECK(g.at(x) == Tensor({2, 3}, 1.0));

  Tape c;
  c.parameter(Tensor({2, 2}, 1.0));
  auto k = c.constant(Tensor::scalar(3.0));
  CHECK(c.backward(k).size() == 0);
}

TEST_CASE("backward needs a scalar root") {
  Tape t;
  auto x = t.parameter(Tensor({2, 2}, 1.0));
  CHECK_THROWS_AS(t.backward(t.relu(x)), ContractError);
}

TEST_CASE("backward is bitwise repeatable") {
  Rng rng(4);
  Tensor a({5, 4}), b({4, 3});
  for (auto& v : a.data()) v = rng.uniform(-2, 2);
  for (auto& v : b.data()) v = rng.uniform(-2, 2);
  Tape t;
  auto pa = t.parameter(a), pb = t.parameter(b);
  auto h = t.sigmoid(t.matmul(pa, pb));
  auto root = t.mean_all(t.mul(h, t.gather_rows(h, {0, 1, 1, 4, 2})));
  CHECK(t.backward(root) == t.backward(root));
}

TEST_CASE("dropout") {
  Tensor x({1, 6}, 1.5);
  for (auto mode : {ad::Mode::Train, ad::Mode::Eval}) {
    Tape t;
    Rng rng(0);
    auto v = t.constant(x);
    CHECK(t.dropout(v, 0.0, mode, rng) == v);
  }
  Tape e;
  Rng rng(0);
  auto v = e.constant(x);
  auto out = e.dropout(v, 0.5, ad::Mode::Eval, rng);
  CHECK(out == v);
  CHECK(e.value(out) == x);
  CHECK_THROWS_AS(e.dropout(v, 1.0, ad::Mode::Train, rng), ConfigError);
}

TEST_CASE("dropout keeps half the units and preserves the mean") {
  const std::size_t n = 100000;
  Tape t;
  Rng rng(21);
  auto out = t.dropout(t.constant(Tensor({1, n}, 1.0)), 0.5, ad::Mode::Train, rng);
  std::size_t kept = 0;
  double total = 0;
  for (double v : t.value(out).values()) {
    kept += v != 0.0;
    total += v;
  }
  CHECK(std::abs(static_cast<double>(kept) / n - 0.5) < 0.01);
  CHECK(std::abs(total / n - 1.0) < 0.02);
}

TEST_CASE("every registered op passes central differences over 100 seeds") {
  CHECK(ad::registered_ops().size() == 17);
  gradcheck::Options opts;
  opts.trials = 100;
  for (auto kind : ad::registered_ops()) {
    auto r = gradcheck::check_op(kind, opts);
    INFO(r.op << " worst " << r.worst_error);
    CHECK(r.trials == 100);
    CHECK(r.worst_error < 1e-6);
  }
}

TEST_CASE("a corrupted backward rule is caught") {
  gradcheck::Options opts;
  opts.trials = 3;
  opts.corrupt = ad::OpKind::Sigmoid;
  CHECK_FALSE(gradcheck::check_op(ad::OpKind::Sigmoid, opts).passed);
  CHECK(gradcheck::check_op(ad::OpKind::Relu, opts).passed);
}

}  // TEST_SUITE
