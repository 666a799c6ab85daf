#include <gtest/gtest.h>

#include <cmath>

#include "spg/autodiff.hpp"
#include "spg/error.hpp"
#include "spg/gradcheck.hpp"
#include "spg/params.hpp"

using namespace spg;

namespace {

Matrix rand_mat(Rng& rng, Index r, Index c) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  return m;
}

}  // namespace

TEST(Linear, IdentityAndBias) {
  ad::Tape t;
  const Matrix x = (Matrix(2, 3) << 1, 2, 3, 4, 5, 6).finished();
  const auto y = ad::linear(t.constant(x), t.constant(Matrix::Identity(3, 3)), t.constant(Matrix::Zero(1, 3)));
  EXPECT_EQ(y.value(), x);
  const Matrix b = (Matrix(1, 2) << 0.5, -1).finished();
  const auto z = ad::linear(t.constant(Matrix::Zero(3, 3)), t.constant(Matrix::Ones(3, 2)), t.constant(b));
  for (Index r = 0; r < 3; ++r) EXPECT_EQ(z.value().row(r), b.row(0));
}

TEST(Linear, MatchesTripleLoop) {
  Rng rng(3);
  const Matrix x = rand_mat(rng, 3, 4), w = rand_mat(rng, 4, 2), b = rand_mat(rng, 1, 2);
  ad::Tape t;
  const Matrix y = ad::linear(t.constant(x), t.constant(w), t.constant(b)).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = b(0, j);
      for (int k = 0; k < 4; ++k) s += x(i, k) * w(k, j);
      EXPECT_NEAR(y(i, j), s, 1e-12);
    }
}

TEST(Linear, ShapeMismatchThrows) {
  ad::Tape t;
  EXPECT_THROW(ad::linear(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(4, 2)), t.constant(Matrix::Zero(1, 2))),
               ValidationError);
}

TEST(Elu, Values) {
  ad::Tape t;
  const Matrix x = (Matrix(1, 3) << 0, 2, -1).finished();
  const Matrix y = ad::elu(t.constant(x)).value();
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_EQ(y(0, 1), 2.0);
  EXPECT_NEAR(y(0, 2), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(y(0, 2), -0.632121, 1e-6);
}

TEST(LayerNorm, ConstantRowAndPair) {
  ad::Tape t;
  const auto g = t.constant(Matrix::Ones(1, 2));
  const auto s = t.constant(Matrix::Zero(1, 2));
  const Matrix x = (Matrix(2, 2) << 3, 3, -1, 1).finished();
  const Matrix y = ad::layer_norm(t.constant(x), g, s, 1e-5).value();
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_NEAR(y(1, 0), -1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_NEAR(y(1, 1), 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
}

TEST(Tape, DiamondAccumulates) {
  ad::Tape t;
  const auto x = t.variable(Matrix::Constant(1, 1, 3.0));
  const auto y = ad::add(x, x);
  t.backward(ad::sum(y));
  EXPECT_EQ(t.grad(x)(0, 0), 2.0);
}

TEST(Tape, UnreachedGradIsZero) {
  ad::Tape t;
  const auto x = t.variable(Matrix::Ones(2, 2));
  const auto y = t.variable(Matrix::Ones(1, 1));
  t.backward(ad::sum(y));
  EXPECT_EQ(t.grad(x), Matrix::Zero(2, 2));
}

TEST(GradCheck, LinearIsTight) {
  Rng rng(11);
  const auto rep = finite_diff_check(
      [](ad::Tape&, std::span<const ad::Var> v) { return ad::linear(v[0], v[1], v[2]); },
      {rand_mat(rng, 2, 3), rand_mat(rng, 3, 4), rand_mat(rng, 1, 4)});
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.describe();
  EXPECT_EQ(rep.coordinates, 6u + 12u + 4u);
}

TEST(GradCheck, EluAtPlusMinusOne) {
  const auto rep = finite_diff_check([](ad::Tape&, std::span<const ad::Var> v) { return ad::elu(v[0]); },
                                     {(Matrix(1, 2) << 1.0, -1.0).finished()});
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.describe();
}

TEST(GradCheck, DoubledGradientCanary) {
  // An op whose backward is twice the true derivative.
  const DiffFn bad = [](ad::Tape& t, std::span<const ad::Var> v) {
    const ad::Var x = v[0];
    Matrix y = x.value().array().square();
    return t.record(std::move(y), t.requires_grad(x), [x](ad::Tape& tp, const Matrix& g) {
      tp.accumulate(x, 2.0 * g.cwiseProduct(2.0 * x.value()));
    });
  };
  Rng rng(5);
  const auto rep = finite_diff_check(bad, {rand_mat(rng, 3, 3)});
  EXPECT_NEAR(rep.max_rel_error, 1.0, 1e-4);
  EXPECT_FALSE(rep.passed(1e-4));
}

TEST(Primitives, GradientsPass) {
  Rng rng(17);
  struct Op {
    const char* name;
    DiffFn fn;
    std::vector<Matrix> in;
  };
  const std::vector<std::int64_t> idx{2, 0, 2, 1};
  const std::vector<Op> ops{
      {"matmul", [](ad::Tape&, std::span<const ad::Var> v) { return ad::matmul(v[0], v[1]); }, {rand_mat(rng, 3, 2), rand_mat(rng, 2, 4)}},
      {"mul", [](ad::Tape&, std::span<const ad::Var> v) { return ad::mul(v[0], v[1]); }, {rand_mat(rng, 3, 2), rand_mat(rng, 3, 2)}},
      {"exp", [](ad::Tape&, std::span<const ad::Var> v) { return ad::exp(v[0]); }, {rand_mat(rng, 3, 2)}},
      {"softmax_rows", [](ad::Tape&, std::span<const ad::Var> v) { return ad::softmax_rows(v[0]); }, {rand_mat(rng, 3, 4)}},
      {"mul_col", [](ad::Tape&, std::span<const ad::Var> v) { return ad::mul_col(v[0], v[1]); }, {rand_mat(rng, 3, 4), rand_mat(rng, 3, 1)}},
      {"gather_rows", [idx](ad::Tape&, std::span<const ad::Var> v) { return ad::gather_rows(v[0], idx); }, {rand_mat(rng, 3, 2)}},
      {"scatter_sum", [idx](ad::Tape&, std::span<const ad::Var> v) { return ad::scatter_sum(v[0], idx, 3); }, {rand_mat(rng, 4, 2)}},
      {"concat_slice", [](ad::Tape&, std::span<const ad::Var> v) {
         const ad::Var parts[2] = {v[0], v[1]};
         return ad::slice_rows(ad::slice_cols(ad::concat_cols(parts), 1, 3), 1, 2);
       }, {rand_mat(rng, 3, 2), rand_mat(rng, 3, 2)}},
      {"mean_reshape", [](ad::Tape&, std::span<const ad::Var> v) { return ad::mean(ad::reshape(v[0], 2, 3)); }, {rand_mat(rng, 3, 2)}},
  };
  for (const Op& op : ops) {
    const auto rep = finite_diff_check(op.fn, op.in);
    EXPECT_LT(rep.max_rel_error, 1e-6) << op.name << ": " << rep.describe();
  }
}

TEST(Adam, ZeroGradZeroDecayUnchanged) {
  ParamStore s;
  s.add("w", (Matrix(1, 2) << 0.3, -0.7).finished());
  AdamState st;
  AdamOptions opt;
  opt.weight_decay = 0.0;
  adam_step(s, {{"w", Matrix::Zero(1, 2)}}, st, opt);
  EXPECT_EQ(s.get("w"), (Matrix(1, 2) << 0.3, -0.7).finished());
}

TEST(Adam, OneStepFromZero) {
  ParamStore s;
  s.add("w", Matrix::Zero(1, 1));
  AdamState st;
  AdamOptions opt;
  adam_step(s, {{"w", Matrix::Ones(1, 1)}}, st, opt);
  // m_hat = 1, v_hat = 1: update = lr / (1 + eps).
  EXPECT_NEAR(s.get("w")(0, 0), -opt.lr / (1.0 + opt.eps), 1e-18);
}

TEST(Adam, TwoStepScalarTrace) {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.1, g = 0.5;
  double p = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    p *= 1.0 - lr * wd;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    p -= lr * mh / (std::sqrt(vh) + eps);
  }
  ParamStore s;
  s.add("w", Matrix::Ones(1, 1));
  AdamState st;
  const AdamOptions opt{lr, b1, b2, eps, wd};
  for (int t = 0; t < 2; ++t) adam_step(s, {{"w", Matrix::Constant(1, 1, g)}}, st, opt);
  EXPECT_NEAR(s.get("w")(0, 0), p, 1e-15);
}

TEST(Adam, ShapeMismatchThrows) {
  ParamStore s;
  s.add("w", Matrix::Zero(2, 2));
  AdamState st;
  EXPECT_THROW(adam_step(s, {{"w", Matrix::Zero(1, 2)}}, st, AdamOptions{}), ValidationError);
}

TEST(ParamStore, JsonRoundTripIsBitExactForF32Values) {
  Rng rng(9);
  ParamStore s;
  add_linear(s, "a", 3, 4, rng);
  add_norm(s, "n", 4);
  for (const auto& [name, m] : s.entries()) s.set(name, m.unaryExpr([](double x) { return double(float(x)); }));
  const std::string text = s.to_json();
  const ParamStore back = ParamStore::from_json(text);
  for (const auto& [name, m] : s.entries()) EXPECT_EQ(back.get(name), m) << name;
  EXPECT_EQ(back.to_json(), text);
}

TEST(ParamStore, DuplicateAndMissingNames) {
  ParamStore s;
  s.add("x", Matrix::Zero(1, 1));
  EXPECT_THROW(s.add("x", Matrix::Zero(1, 1)), ValidationError);
  EXPECT_ANY_THROW(s.get("y"));
}

TEST(Base64, RoundTrip) {
  for (const std::string s : std::initializer_list<std::string>{"", "a", "ab", "abc", "abcd", std::string("\0\xff\x10", 3)})
    EXPECT_EQ(base64_decode(base64_encode(s)), s);
  EXPECT_EQ(base64_encode("Man"), "TWFu");
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
