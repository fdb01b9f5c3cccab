#include <doctest.h>

#include <functional>
#include <random>

#include "spmoe/autodiff.hpp"
#include "spmoe/error.hpp"
#include "test_util.hpp"

using namespace spmoe;
using spmoe::ad::Matrix;
using spmoe::ad::Tape;
using spmoe::ad::Var;
using spmoe::testing::CodeOf;

namespace {

Matrix Random(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// f maps leaf values to a scalar loss built on the tape. Compares the tape
// gradient with central differences for every input entry.
void CheckGradients(const std::vector<Matrix>& inputs,
                    const std::function<Var(Tape&, const std::vector<Var>&)>& f, double tol = 1e-6) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Matrix& m : inputs) leaves.push_back(tape.Leaf(m));
  Var loss = f(tape, leaves);
  tape.Backward(loss);

  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape t(false);
    std::vector<Var> vs;
    for (const Matrix& m : xs) vs.push_back(t.Constant(m));
    return f(t, vs).value()(0, 0);
  };
  const double h = 1e-6;
  for (size_t a = 0; a < inputs.size(); ++a) {
    const Matrix analytic = tape.grad(leaves[a]);
    Matrix fd(inputs[a].rows(), inputs[a].cols());
    for (Eigen::Index i = 0; i < inputs[a].size(); ++i) {
      std::vector<Matrix> plus = inputs, minus = inputs;
      plus[a].data()[i] += h;
      minus[a].data()[i] -= h;
      fd.data()[i] = (eval(plus) - eval(minus)) / (2 * h);
    }
    const double scale = std::max({fd.norm(), analytic.norm(), 1.0});
    CHECK((analytic - fd).norm() / scale <= tol);
  }
}

// a^T v b with random a, b: every output entry gets a distinct adjoint.
Var Project(Tape& t, Var v, std::mt19937_64& rng) {
  Var a = t.Constant(Random(rng, 1, v.rows()));
  Var b = t.Constant(Random(rng, v.cols(), 1));
  return ad::MatMul(ad::MatMul(a, v), b);
}

}  // namespace

TEST_CASE("linear operations") {
  std::mt19937_64 rng(1);
  const Matrix a = Random(rng, 3, 4), b = Random(rng, 3, 4), c = Random(rng, 4, 2), row = Random(rng, 1, 4);
  auto seed = [](uint64_t s) { return std::mt19937_64(s); };
  CheckGradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    auto r = seed(2);
    return Project(t, ad::Add(ad::Sub(v[0], ad::Scale(v[1], 2.5)), v[0]), r);
  });
  CheckGradients({a, c}, [&](Tape& t, const std::vector<Var>& v) {
    auto r = seed(3);
    return Project(t, ad::MatMul(v[0], v[1]), r);
  });
  CheckGradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    auto r = seed(4);
    return Project(t, ad::MatMulBT(v[0], v[1]), r);
  });
  CheckGradients({a, row}, [&](Tape& t, const std::vector<Var>& v) {
    auto r = seed(5);
    return Project(t, ad::AddRow(v[0], v[1]), r);
  });
  CheckGradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    auto r = seed(6);
    return Project(t, ad::Transpose(ad::ConcatCols(v[0], v[1])), r);
  });
  CheckGradients({a}, [&](Tape& t, const std::vector<Var>& v) {
    auto r = seed(7);
    Var x = ad::Add(ad::SliceRows(v[0], 1, 2), ad::SliceRows(v[0], 0, 2));
    return ad::Add(Project(t, ad::SliceCols(x, 1, 3), r), ad::Sum(ad::MeanRows(v[0])));
  });
  CheckGradients({a, b}, [&](Tape& t, const std::vector<Var>& v) {
    auto r = seed(8);
    std::vector<Var> rows = {ad::SliceRows(v[0], 2, 1), ad::SliceRows(v[1], 0, 1), ad::SliceRows(v[0], 0, 1)};
    return Project(t, ad::StackRows(rows), r);
  });
}

TEST_CASE("nonlinear operations") {
  std::mt19937_64 rng(11);
  const Matrix a = Random(rng, 3, 5), gain = Random(rng, 1, 5), bias = Random(rng, 1, 5), table = Random(rng, 6, 4);
  CheckGradients({a}, [&](Tape& t, const std::vector<Var>& v) {
    std::mt19937_64 r(12);
    return Project(t, ad::Relu(v[0]), r);
  });
  CheckGradients({a}, [&](Tape& t, const std::vector<Var>& v) {
    std::mt19937_64 r(13);
    return Project(t, ad::SoftmaxRows(v[0]), r);
  });
  Matrix mask = Matrix::Zero(3, 5);
  mask(0, 4) = mask(1, 3) = -1e9;
  CheckGradients({a}, [&](Tape& t, const std::vector<Var>& v) {
    std::mt19937_64 r(14);
    return Project(t, ad::SoftmaxRows(v[0], &mask), r);
  });
  CheckGradients({a, gain, bias}, [&](Tape& t, const std::vector<Var>& v) {
    std::mt19937_64 r(15);
    return Project(t, ad::LayerNormRows(v[0], v[1], v[2]), r);
  }, 1e-5);
  const std::vector<int> ids = {5, 0, 5, 2};
  CheckGradients({table}, [&](Tape& t, const std::vector<Var>& v) {
    std::mt19937_64 r(16);
    return Project(t, ad::Gather(v[0], ids), r);
  });
  const std::vector<int> targets = {4, 0, 2};
  CheckGradients({a}, [&](Tape&, const std::vector<Var>& v) { return ad::CrossEntropySum(v[0], targets); });
}

TEST_CASE("forward values") {
  Tape t(false);
  Var x = t.Constant((Matrix(2, 2) << 1, 2, 3, 4).finished());
  CHECK(ad::Sum(x).value()(0, 0) == 10.0);
  CHECK(ad::MeanRows(x).value() == (Matrix(1, 2) << 2, 3).finished());
  Matrix sm = ad::SoftmaxRows(x).value();
  CHECK(sm.rowwise().sum().isApproxToConstant(1.0, 1e-15));
  Var logits = t.Constant(Matrix::Zero(3, 7));
  CHECK(ad::CrossEntropySum(logits, std::vector<int>{1, 2, 3}).value()(0, 0) ==
        doctest::Approx(3.0 * std::log(7.0)).epsilon(1e-14));
  Var g = t.Constant(Matrix::Ones(1, 2));
  Var b = t.Constant(Matrix::Zero(1, 2));
  Matrix ln = ad::LayerNormRows(x, g, b).value();
  CHECK(ln.rowwise().mean().cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gradients of unused leaves are zero and constants are skipped") {
  Tape t;
  Var a = t.Leaf(Matrix::Ones(2, 2));
  Var unused = t.Leaf(Matrix::Ones(3, 1));
  Var c = t.Constant(Matrix::Ones(2, 2));
  Var loss = ad::Sum(ad::Add(ad::Scale(a, 3.0), c));
  t.Backward(loss);
  CHECK(t.grad(a) == Matrix::Constant(2, 2, 3.0));
  CHECK(t.grad(unused) == Matrix::Zero(3, 1));
  CHECK_FALSE(t.requires_grad(c));
}

TEST_CASE("shape and token errors") {
  Tape t;
  Var a = t.Leaf(Matrix::Ones(2, 3));
  Var b = t.Leaf(Matrix::Ones(2, 2));
  CHECK(CodeOf([&] { ad::Add(a, b); }) == ErrorCode::kShape);
  CHECK(CodeOf([&] { ad::MatMul(a, a); }) == ErrorCode::kShape);
  CHECK(CodeOf([&] { ad::Gather(a, std::vector<int>{2}); }) == ErrorCode::kInvalidToken);
  CHECK(CodeOf([&] { ad::CrossEntropySum(a, std::vector<int>{0, 3}); }) == ErrorCode::kInvalidToken);
  CHECK(CodeOf([&] { t.Backward(a); }) == ErrorCode::kShape);
}
