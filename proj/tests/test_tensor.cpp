#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "oracle.hpp"
#include "vitinv/adam.hpp"
#include "vitinv/rng.hpp"
#include "vitinv/tensor.hpp"

using namespace vitinv;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixXd m(rows.size(), rows.begin()->size());
  int i = 0;
  for (auto& r : rows) {
    int j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

VectorXd flatten(const MatrixXd& m) {
  VectorXd v(m.size());
  int k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v(k++) = m(i, j);
  return v;
}

MatrixXd unflatten(const VectorXd& v, Eigen::Index r, Eigen::Index c) {
  MatrixXd m(r, c);
  int k = 0;
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = v(k++);
  return m;
}

// Runs an FD check of a scalar-valued tape program against reverse mode.
double grad_check(const MatrixXd& x0,
                  const std::function<Tensor<double>(Tape<double>&, Tensor<double>)>& build) {
  Tape<double> tape;
  auto x = tape.leaf(x0, true);
  auto loss = build(tape, x);
  tape.backward(loss);
  VectorXd analytic = flatten(tape.grad(x));
  auto f = [&](const VectorXd& v) {
    Tape<double> t2;
    auto xx = t2.leaf(unflatten(v, x0.rows(), x0.cols()), true);
    return build(t2, xx).scalar();
  };
  VectorXd fd = oracle::fd_gradient(f, flatten(x0), 1e-4);
  return oracle::max_rel_err(analytic, fd);
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tape<float> tape;
  auto eye = tape.constant(from_rows({{1, 0}, {0, 1}}).cast<float>());
  auto abcd = tape.constant(from_rows({{2, 3}, {5, 7}}).cast<float>());
  auto prod = matmul(eye, abcd);
  CHECK(prod.value() == abcd.value());

  auto a = tape.constant(from_rows({{1, 2}}).cast<float>());
  auto b = tape.constant(from_rows({{3}, {4}}).cast<float>());
  CHECK(matmul(a, b).scalar() == doctest::Approx(11.0f));

  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(7);
  MatrixXd a0 = random_normal<double>(5, 7, rng);
  MatrixXd b0 = random_normal<double>(7, 3, rng);
  MatrixXd w = random_normal<double>(5, 3, rng);  // projects product to scalar

  // Gradient wrt A with B fixed.
  double err_a = grad_check(a0, [&](Tape<double>& t, Tensor<double> x) {
    auto b = t.constant(b0);
    auto ww = t.constant(w);
    return sum_all(hadamard(matmul(x, b), ww));
  });
  CHECK(err_a < 1e-4);

  double err_b = grad_check(b0, [&](Tape<double>& t, Tensor<double> x) {
    auto a = t.constant(a0);
    auto ww = t.constant(w);
    return sum_all(hadamard(matmul(a, x), ww));
  });
  CHECK(err_b < 1e-4);
}

TEST_CASE("softmax values") {
  Tape<float> tape;
  auto x = tape.constant(from_rows({{0, 0, 0}}).cast<float>());
  auto y = softmax(x, Axis::Rows);
  for (int j = 0; j < 3; ++j) CHECK(y.value()(0, j) == doctest::Approx(1.0f / 3));

  auto big = tape.constant(from_rows({{1000, 0}}).cast<float>());
  auto yb = softmax(big, Axis::Rows);
  CHECK(yb.value()(0, 0) == doctest::Approx(1.0f));
  CHECK(yb.value()(0, 1) == doctest::Approx(0.0f));
  CHECK(std::isfinite(yb.value()(0, 0)));

  // Column axis normalizes each column.
  auto m = tape.constant(from_rows({{1, 5}, {1, 5}}).cast<float>());
  auto yc = softmax(m, Axis::Cols);
  CHECK(yc.value()(0, 0) == doctest::Approx(0.5f));
  CHECK(yc.value()(1, 1) == doctest::Approx(0.5f));
}

TEST_CASE("softmax rows are probability vectors over random seeds") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tape<float> tape;
    auto x = tape.constant(random_normal<float>(4, 6, rng, 3.0f));
    auto y = softmax(x, Axis::Rows);
    for (int i = 0; i < 4; ++i) {
      CHECK(y.value().row(i).minCoeff() >= 0.0f);
      CHECK(std::abs(y.value().row(i).sum() - 1.0f) <= 1e-6f);
    }
  }
}

TEST_CASE("softmax gradient vs finite differences") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    MatrixXd x0 = random_normal<double>(3, 5, rng);
    MatrixXd w = random_normal<double>(3, 5, rng);
    double err = grad_check(x0, [&](Tape<double>& t, Tensor<double> x) {
      return sum_all(hadamard(softmax(x, Axis::Rows), t.constant(w)));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("layernorm values") {
  Tape<float> tape;
  auto gamma = tape.constant(MatrixX<float>::Ones(1, 4));
  auto beta = tape.constant(MatrixX<float>::Zero(1, 4));
  auto c = tape.constant(MatrixX<float>::Constant(1, 4, 3.25f));
  auto out = layernorm_rows(c, gamma, beta, 1e-5f);
  for (int j = 0; j < 4; ++j) CHECK(out.value()(0, j) == doctest::Approx(0.0f));

  auto g2 = tape.constant(MatrixX<float>::Ones(1, 2));
  auto b2 = tape.constant(MatrixX<float>::Zero(1, 2));
  auto x2 = tape.constant(from_rows({{1, 3}}).cast<float>());
  auto o2 = layernorm_rows(x2, g2, b2, 0.0f);
  CHECK(o2.value()(0, 0) == doctest::Approx(-1.0f));
  CHECK(o2.value()(0, 1) == doctest::Approx(1.0f));
}

TEST_CASE("layernorm gradient vs finite differences") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    MatrixXd x0 = random_normal<double>(3, 6, rng);
    MatrixXd g0 = random_normal<double>(1, 6, rng);
    MatrixXd b0 = random_normal<double>(1, 6, rng);
    MatrixXd w = random_normal<double>(3, 6, rng);
    double err_x = grad_check(x0, [&](Tape<double>& t, Tensor<double> x) {
      return sum_all(hadamard(
          layernorm_rows(x, t.constant(g0), t.constant(b0), 1e-5), t.constant(w)));
    });
    CHECK(err_x < 1e-4);
    double err_g = grad_check(g0, [&](Tape<double>& t, Tensor<double> g) {
      return sum_all(hadamard(
          layernorm_rows(t.constant(x0), g, t.constant(b0), 1e-5), t.constant(w)));
    });
    CHECK(err_g < 1e-4);
  }
}

TEST_CASE("gelu") {
  Tape<float> tape;
  auto z = tape.constant(MatrixX<float>::Zero(1, 1));
  CHECK(gelu(z).scalar() == doctest::Approx(0.0f));

  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    MatrixXd x0 = random_normal<double>(2, 5, rng);
    MatrixXd w = random_normal<double>(2, 5, rng);
    double err = grad_check(x0, [&](Tape<double>& t, Tensor<double> x) {
      return sum_all(hadamard(gelu(x), t.constant(w)));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("cross entropy from logits") {
  Tape<double> tape;
  auto uniform = tape.constant(MatrixXd::Zero(1, 4));
  CHECK(cross_entropy_from_logits(uniform, 2).scalar() ==
        doctest::Approx(std::log(4.0)));

  // Scalar evaluation oracle: -log sigmoid(20).
  auto strong = tape.constant(from_rows({{10, -10}}));
  double expected = -std::log(1.0 / (1.0 + std::exp(-20.0)));
  CHECK(cross_entropy_from_logits(strong, 0).scalar() ==
        doctest::Approx(expected).epsilon(1e-9));
  CHECK(cross_entropy_from_logits(strong, 0).scalar() ==
        doctest::Approx(2.0611536e-9).epsilon(1e-3));

  CHECK_THROWS_AS(cross_entropy_from_logits(strong, 2), LabelError);
  CHECK_THROWS_AS(cross_entropy_from_logits(strong, -1), LabelError);

  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(400 + seed);
    MatrixXd x0 = random_normal<double>(1, 6, rng, 2.0);
    double err = grad_check(x0, [&](Tape<double>&, Tensor<double> x) {
      return cross_entropy_from_logits(x, 3);
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("kl divergence from logits") {
  Rng rng(55);
  MatrixXd t0 = random_normal<double>(1, 5, rng);
  Tape<double> tape;
  Eigen::Matrix<double, 1, Eigen::Dynamic> p =
      detail::softmax_row<double>(t0.row(0));

  // KL(p || p) == 0.
  auto same = tape.constant(t0);
  CHECK(kl_div_from_logits(same, p).scalar() == doctest::Approx(0.0));

  // Nonnegative on random mismatched logits.
  for (int seed = 0; seed < 20; ++seed) {
    Rng r2(500 + seed);
    MatrixXd s0 = random_normal<double>(1, 5, r2);
    Tape<double> t2;
    CHECK(kl_div_from_logits(t2.constant(s0), p).scalar() >= -1e-12);
    double err = grad_check(s0, [&](Tape<double>&, Tensor<double> x) {
      return kl_div_from_logits(x, p);
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("backward basics") {
  Rng rng(9);
  Tape<float> tape;
  auto x = tape.leaf(random_normal<float>(3, 4, rng), true);
  auto loss = sum_all(x);
  tape.backward(loss);
  CHECK(tape.grad(x) == MatrixX<float>::Ones(3, 4));

  Tape<float> t2;
  Rng rng2(10);
  MatrixX<float> x0 = random_normal<float>(2, 3, rng2);
  auto y = t2.leaf(x0, true);
  auto l2 = scale(sum_all(hadamard(y, y)), 0.5f);
  t2.backward(l2);
  CHECK(t2.grad(y).isApprox(x0, 1e-6f));
}

TEST_CASE("backward fan-out accumulates") {
  Tape<double> tape;
  MatrixXd x0 = from_rows({{2, -1}});
  auto x = tape.leaf(x0, true);
  // loss = sum(x) + sum(x .* x): grad = 1 + 2x
  auto loss = add(sum_all(x), sum_all(hadamard(x, x)));
  tape.backward(loss);
  CHECK(tape.grad(x)(0, 0) == doctest::Approx(1 + 2 * 2.0));
  CHECK(tape.grad(x)(0, 1) == doctest::Approx(1 + 2 * -1.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<float> tape;
  auto x = tape.leaf(MatrixX<float>::Ones(2, 2), true);
  CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("structural ops gradients") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(600 + seed);
    MatrixXd x0 = random_normal<double>(4, 6, rng);
    MatrixXd w = random_normal<double>(1, 48, rng);
    double err = grad_check(x0, [&](Tape<double>& t, Tensor<double> x) {
      auto top = slice_rows(x, 0, 2);
      auto bot = slice_rows(x, 2, 2);
      auto cat = concat_rows<double>({transpose(top), transpose(bot)});  // 12 x 2
      auto flat = flatten_rowmajor(cat);                                 // 1 x 24
      return sum_all(hadamard(concat_cols<double>({flat, flat}), t.constant(w)));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("add_row_broadcast gradient") {
  Rng rng(77);
  MatrixXd x0 = random_normal<double>(5, 3, rng);
  MatrixXd b0 = random_normal<double>(1, 3, rng);
  MatrixXd w = random_normal<double>(5, 3, rng);
  double err_b = grad_check(b0, [&](Tape<double>& t, Tensor<double> b) {
    return sum_all(hadamard(add_row_broadcast(t.constant(x0), b), t.constant(w)));
  });
  CHECK(err_b < 1e-4);
}

TEST_CASE("adam zero grad leaves param unchanged") {
  MatrixX<float> p = MatrixX<float>::Constant(2, 2, 1.5f);
  MatrixX<float> p0 = p;
  MatrixX<float> zero = MatrixX<float>::Zero(2, 2);
  AdamState<float> st;
  adam_step(p, zero, st, AdamHyper<float>{0.25f});
  CHECK(p == p0);
}

TEST_CASE("adam single step hand value") {
  MatrixX<double> p = MatrixX<double>::Zero(1, 1);
  MatrixX<double> one = MatrixX<double>::Ones(1, 1);
  AdamState<double> st;
  adam_step(p, one, st, AdamHyper<double>{0.25});
  // Bias-corrected mhat/sqrt(shat) = 1 on the first step.
  CHECK(p(0, 0) == doctest::Approx(-0.25).epsilon(1e-6));
}

TEST_CASE("adam matches scalar recurrence oracle over 10 steps") {
  Rng rng(31337);
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixX<double> p = MatrixX<double>::Constant(1, 1, 0.7);
  double p_ref = 0.7;
  AdamState<double> st;
  oracle::ScalarAdam ref;
  for (int i = 0; i < 10; ++i) {
    double g = dist(rng);
    MatrixX<double> gm = MatrixX<double>::Constant(1, 1, g);
    adam_step(p, gm, st, AdamHyper<double>{0.05});
    p_ref = ref.step(p_ref, g, 0.05);
    CHECK(std::abs(p(0, 0) - p_ref) < 1e-6);
  }
  MatrixX<double> bad(2, 2);
  CHECK_THROWS_AS(adam_step(p, bad, st, AdamHyper<double>{}), ShapeError);
}

TEST_CASE("determinism: same seed gives bit-identical tensors") {
  auto run = [] {
    Rng rng(4242);
    Tape<float> tape;
    auto x = tape.leaf(random_normal<float>(6, 6, rng), true);
    auto y = softmax(matmul(x, transpose(x)), Axis::Rows);
    auto loss = sum_all(hadamard(y, y));
    tape.backward(loss);
    return std::make_pair(MatrixX<float>(y.value()), MatrixX<float>(tape.grad(x)));
  };
  auto [y1, g1] = run();
  auto [y2, g2] = run();
  CHECK(std::memcmp(y1.data(), y2.data(), sizeof(float) * y1.size()) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(float) * g1.size()) == 0);
}
