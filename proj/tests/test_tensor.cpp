#include "doctest.h"

#include <cmath>
#include <vector>

#include "mmf/tensor.hpp"

using namespace mmf;

namespace {

Tensor t2(std::size_t m, std::size_t n, std::vector<double> v, bool rg = false) {
  return Tensor::from_data({m, n}, std::move(v), rg);
}

}  // namespace

TEST_CASE("matmul identity, zero and hand-expanded product") {
  Tensor eye = t2(2, 2, {1, 0, 0, 1});
  Tensor a = t2(2, 2, {1, 2, 3, 4});
  Tensor r = matmul(eye, a);
  CHECK(r.data() == std::vector<double>{1, 2, 3, 4});

  Tensor z = matmul(t2(1, 2, {1, 2}), t2(2, 1, {0, 0}));
  CHECK(z.data() == std::vector<double>{0});

  Tensor p = matmul(t2(2, 2, {1, 2, 3, 4}), t2(2, 2, {5, 6, 7, 8}));
  CHECK(p.data() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul shape error names both shapes") {
  try {
    matmul(t2(2, 3, std::vector<double>(6)), t2(2, 2, std::vector<double>(4)));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("matmul associativity with identity is bitwise") {
  Rng rng(7);
  Tensor a = normal_init({4, 5}, 0.0, 1.3, rng);
  Tensor b = normal_init({5, 3}, 0.0, 0.7, rng);
  Tensor eye = Tensor::zeros({5, 5});
  for (std::size_t i = 0; i < 5; ++i) eye.data()[i * 5 + i] = 1.0;
  Tensor lhs = matmul(matmul(a, eye), b);
  Tensor rhs = matmul(a, b);
  CHECK(lhs.data() == rhs.data());
}

TEST_CASE("tanh is odd and matches the library oracle at 1") {
  Tensor z = tanh(Tensor::scalar(0.0));
  CHECK(z.value() == 0.0);

  Rng rng(3);
  Tensor x = normal_init({2, 3}, 0.0, 2.0, rng);
  Tensor nx = scalar_mul(x, -1.0);
  Tensor y = tanh(x);
  Tensor yn = tanh(nx);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == doctest::Approx(-yn.at(i)).epsilon(1e-15));

  CHECK(tanh(Tensor::scalar(1.0)).value() == doctest::Approx(0.7615941559557649).epsilon(1e-15));
}

TEST_CASE("softmax symmetry, shift invariance and derived values") {
  Tensor s = softmax(Tensor::from_data({2}, {0, 0}), 0);
  CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.at(1) == doctest::Approx(0.5).epsilon(1e-15));

  Tensor u = softmax(Tensor::from_data({3}, {4.2, 4.2, 4.2}), 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Tensor v = softmax(Tensor::from_data({2}, {1, 2}), 0);
  CHECK(v.at(0) == doctest::Approx(0.2689414).epsilon(1e-7));
  CHECK(v.at(1) == doctest::Approx(0.7310586).epsilon(1e-7));

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = normal_init({3, 5}, 0.0, 4.0, rng);
    Tensor sm = softmax(x, 1);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) total += sm.at(r * 5 + c);
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
    const double shift = rng.uniform(-10.0, 10.0);
    Tensor xs = scalar_mul(add(x, Tensor::full({3, 5}, shift)), 1.0);
    Tensor sm2 = softmax(xs, 1);
    for (std::size_t i = 0; i < sm.size(); ++i) CHECK(std::abs(sm.at(i) - sm2.at(i)) <= 1e-12);
  }
}

TEST_CASE("softmax along axis 0 normalizes columns") {
  Tensor x = t2(2, 2, {0, 5, 0, -5});
  Tensor sm = softmax(x, 0);
  CHECK(sm.at(0) + sm.at(2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sm.at(1) + sm.at(3) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sm.at(0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("concat values, identity with empty, and gradient") {
  Tensor c = concat(Tensor::from_data({2}, {1, 2}), Tensor::from_data({1}, {3}), 0);
  CHECK(c.data() == std::vector<double>{1, 2, 3});

  Tensor x = Tensor::from_data({3}, {4, 5, 6});
  Tensor e = Tensor::from_data({0}, {});
  CHECK(concat(x, e, 0).data() == x.data());

  Tensor xg = Tensor::from_data({2}, {1, 2}, true);
  Tensor yg = Tensor::from_data({3}, {3, 4, 5}, true);
  backward(sum(concat(xg, yg, 0)));
  CHECK(xg.grad() == std::vector<double>{1, 1});
  CHECK(yg.grad() == std::vector<double>{1, 1, 1});

  CHECK_THROWS_AS(concat(t2(2, 2, {1, 2, 3, 4}), t2(2, 3, std::vector<double>(6)), 0),
                  ShapeError);
}

TEST_CASE("backward on simple graphs") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  backward(sum(x));
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  Tensor y = Tensor::from_data({3}, {1, 2, 3}, true);
  backward(sum(mul(y, y)));
  CHECK(y.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  backward(sum(add(mul(x, x), x)));  // d/dx (x^2 + x) = 2x + 1
  CHECK(x.grad() == std::vector<double>{3, 5, 7});

  Tensor z = Tensor::from_data({2}, {1, 2}, true);
  backward(sum(add(z, z)));
  CHECK(z.grad() == std::vector<double>{2, 2});
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), DataError);
}

TEST_CASE("backward consumes the graph") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), DataError);
}

TEST_CASE("elementwise ops: values and gradcheck") {
  Tensor a = Tensor::from_data({3}, {1, 2, 3});
  Tensor b = Tensor::from_data({3}, {4, 5, 6});
  CHECK(add(a, b).data() == std::vector<double>{5, 7, 9});
  CHECK(sub(a, b).data() == std::vector<double>{-3, -3, -3});
  CHECK(mul(a, b).data() == std::vector<double>{4, 10, 18});
  CHECK(scalar_mul(a, 0.0).data() == std::vector<double>{0, 0, 0});
  CHECK(scale(a, Tensor::scalar(2.0)).data() == std::vector<double>{2, 4, 6});

  Rng rng(5);
  Tensor x = normal_init({2, 3}, 0.0, 1.0, rng);
  Tensor y = normal_init({2, 3}, 0.5, 1.0, rng);
  Tensor g = Tensor::scalar(1.3, true);
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  auto loss = [&] { return sum(mul(scale(sub(x, y), g), add(x, y))); };
  CHECK(finite_diff_check(loss, {x, y, g}) <= 1e-8);
}

TEST_CASE("sigmoid and log values with gradcheck") {
  CHECK(sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(log(Tensor::scalar(1.0)).value() == 0.0);
  CHECK(log(Tensor::scalar(std::exp(1.0))).value() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), NumericError);

  Rng rng(9);
  Tensor x = uniform_init({4}, 0.5, 2.0, rng);
  x.set_requires_grad(true);
  auto loss = [&] { return sum(add(log(x), sigmoid(x))); };
  CHECK(finite_diff_check(loss, {x}) <= 1e-8);
}

TEST_CASE("transpose, reduce_sum, row, pick, slice_layer") {
  Tensor a = t2(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(transpose(a).data() == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(transpose(a).shape() == std::vector<std::size_t>{3, 2});

  CHECK(reduce_sum(a, 0).data() == std::vector<double>{5, 7, 9});
  CHECK(reduce_sum(a, 1).data() == std::vector<double>{6, 15});
  CHECK(sum(a).value() == 21.0);

  CHECK(row(a, 1).data() == std::vector<double>{4, 5, 6});
  CHECK(pick(a, 4).value() == 5.0);

  Tensor stack = Tensor::from_data({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(slice_layer(stack, 1).data() == std::vector<double>{5, 6, 7, 8});

  // gradients through the view ops
  Tensor x = t2(2, 3, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(row(x, 0)));
  CHECK(x.grad() == std::vector<double>{1, 1, 1, 0, 0, 0});

  Tensor s3 = Tensor::from_data({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
  backward(pick(slice_layer(s3, 0), 2));
  CHECK(s3.grad() == std::vector<double>{0, 0, 1, 0, 0, 0, 0, 0});
}

TEST_CASE("stack_rows concatenates and routes gradients") {
  Tensor r0 = t2(1, 2, {1, 2}, true);
  Tensor r1 = t2(1, 2, {3, 4}, true);
  Tensor m = stack_rows({r0, r1});
  CHECK(m.shape() == std::vector<std::size_t>{2, 2});
  CHECK(m.data() == std::vector<double>{1, 2, 3, 4});
  backward(pick(m, 3));
  CHECK(r0.grad() == std::vector<double>{0, 0});
  CHECK(r1.grad() == std::vector<double>{0, 1});
}

TEST_CASE("affine matches manual expansion and gradchecks") {
  Tensor x = t2(2, 2, {1, 2, 3, 4});
  Tensor w = t2(2, 2, {1, 0, 0, 1});
  Tensor b = t2(1, 2, {10, 20});
  CHECK(affine(x, w, b).data() == std::vector<double>{11, 22, 13, 24});

  Rng rng(13);
  Tensor xr = normal_init({3, 4}, 0.0, 1.0, rng);
  Tensor wr = normal_init({4, 2}, 0.0, 0.5, rng);
  Tensor br = normal_init({1, 2}, 0.0, 0.1, rng);
  xr.set_requires_grad(true);
  wr.set_requires_grad(true);
  br.set_requires_grad(true);
  auto loss = [&] { return sum(tanh(affine(xr, wr, br))); };
  CHECK(finite_diff_check(loss, {xr, wr, br}) <= 1e-6);
}

TEST_CASE("layer_norm_rows normalizes and gradchecks") {
  Tensor c = layer_norm_rows(t2(1, 4, {5, 5, 5, 5}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(c.at(i)) <= 1e-9);

  Rng rng(17);
  Tensor x = normal_init({3, 5}, 1.0, 2.0, rng);
  Tensor ln = layer_norm_rows(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 5; ++j) mean += ln.at(r * 5 + j);
    mean /= 5.0;
    for (std::size_t j = 0; j < 5; ++j) var += (ln.at(r * 5 + j) - mean) * (ln.at(r * 5 + j) - mean);
    var /= 5.0;
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
  }

  x.set_requires_grad(true);
  Tensor w = normal_init({5, 2}, 0.0, 1.0, rng);
  w.set_requires_grad(true);
  auto loss = [&] { return sum(tanh(matmul(layer_norm_rows(x), w))); };
  CHECK(finite_diff_check(loss, {x, w}) <= 1e-6);
}

TEST_CASE("softmax and reduce ops gradcheck") {
  Rng rng(21);
  Tensor x = normal_init({2, 4}, 0.0, 2.0, rng);
  x.set_requires_grad(true);
  Tensor v = normal_init({2, 4}, 0.0, 1.0, rng);
  auto loss = [&] { return sum(mul(softmax(x, 1), v)); };
  CHECK(finite_diff_check(loss, {x}) <= 1e-7);

  auto loss2 = [&] { return pick(reduce_sum(mul(x, x), 1), 0); };
  CHECK(finite_diff_check(loss2, {x}) <= 1e-7);
}

TEST_CASE("finite_diff_check on exact linear and tanh compositions") {
  Tensor x = Tensor::from_data({4}, {0.3, -1.2, 2.0, 0.0}, true);
  CHECK(finite_diff_check([&] { return sum(x); }, {x}) <= 1e-10);

  Rng rng(23);
  Tensor w = normal_init({3, 3}, 0.0, 1.0, rng);
  Tensor v = normal_init({3, 1}, 0.0, 1.0, rng);
  w.set_requires_grad(true);
  v.set_requires_grad(true);
  auto loss = [&] { return sum(tanh(matmul(w, v))); };
  CHECK(finite_diff_check(loss, {w, v}, 1e-5) <= 1e-5);
}

TEST_CASE("xavier bound and sampling determinism") {
  Rng rng(42);
  Tensor w = xavier_init(6, 6, rng);
  const double bound = std::sqrt(6.0 / 12.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(w.at(i) <= bound);
    CHECK(w.at(i) >= -bound);
  }

  Rng r1(99), r2(99);
  Tensor a = normal_init({4, 4}, 0.0, 1.0, r1);
  Tensor b = normal_init({4, 4}, 0.0, 1.0, r2);
  CHECK(a.data() == b.data());

  Rng u1(7), u2(7);
  Tensor c = uniform_init({8}, -2.0, 3.0, u1);
  Tensor d = uniform_init({8}, -2.0, 3.0, u2);
  CHECK(c.data() == d.data());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(c.at(i) >= -2.0);
    CHECK(c.at(i) < 3.0);
  }
}

TEST_CASE("NoGradScope suppresses graph construction") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  NoGradScope ng;
  Tensor y = sum(mul(x, x));
  CHECK_THROWS_AS(backward(y), DataError);
}

TEST_CASE("composed graph grads match finite differences") {
  Rng rng(31);
  Tensor w1 = xavier_init(4, 3, rng);
  Tensor b1 = Tensor::zeros({1, 3});
  Tensor w2 = xavier_init(3, 2, rng);
  Tensor x = normal_init({2, 4}, 0.0, 1.0, rng);
  w1.set_requires_grad(true);
  b1.set_requires_grad(true);
  w2.set_requires_grad(true);
  auto loss = [&] {
    Tensor h = tanh(affine(x, w1, b1));
    Tensor o = softmax(matmul(h, w2), 1);
    return pick(log(o), 0);
  };
  CHECK(finite_diff_check(loss, {w1, b1, w2}) <= 1e-6);
}
