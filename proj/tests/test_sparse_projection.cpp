#include <doctest.h>

#include <algorithm>
#include <random>

#include "spmoe/error.hpp"
#include "spmoe/sparse_projection.hpp"

using namespace spmoe;

namespace {

Eigen::VectorXd RandomVector(std::mt19937_64& rng, int k, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Eigen::VectorXd v(k);
  for (int i = 0; i < k; ++i) v[i] = u(rng);
  return v;
}

void CheckClose(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double tol) {
  REQUIRE(a.size() == b.size());
  CHECK((a - b).cwiseAbs().maxCoeff() <= tol);
}

}  // namespace

TEST_CASE("constant logits project to the uniform distribution") {
  for (double lambda : {-2.0, 0.0, 0.5, 0.9}) {
    for (int k : {1, 2, 5, 9}) {
      ProjectionSolution sol = SparsegenLin(LogitVector(Eigen::VectorXd::Constant(k, 3.7)), lambda);
      CheckClose(sol.distribution.probs, Eigen::VectorXd::Constant(k, 1.0 / k), 1e-12);
      CHECK(static_cast<int>(sol.support.size()) == k);
    }
  }
}

TEST_CASE("sparsemax matches frozen QP oracle values") {
  // Expected values from an interior-point QP solve of min ||p - z||^2 over
  // the simplex (cvxpy, tolerance 1e-12).
  CheckClose(Sparsemax({0.9, 0.5, -0.3}).distribution.probs, Eigen::Vector3d(0.7, 0.3, 0.0), 1e-6);
  CheckClose(Sparsemax({0.2, 0.1, 0.0}).distribution.probs,
             Eigen::Vector3d(0.43333333, 0.33333333, 0.23333333), 1e-6);
  CheckClose(Sparsemax({0.5, 0.3, 0.2}).distribution.probs, Eigen::Vector3d(0.5, 0.3, 0.2), 1e-6);
  Eigen::VectorXd expected(5);
  expected << 0.20625, 0.15625, 0.0, 0.55625, 0.08125;
  CheckClose(SparsegenLin({0.3, 0.2, -0.5, 1.0, 0.05}, -1.0).distribution.probs, expected, 1e-6);
}

TEST_CASE("closed form exposes threshold and support") {
  ProjectionSolution sol = Sparsemax({0.9, 0.5, -0.3});
  CHECK(sol.threshold == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(sol.support == std::vector<int>{0, 1});
  // p_i = z_i / (1 - lambda) - tau on the support.
  const LogitVector z{0.3, 0.2, -0.5, 1.0, 0.05};
  ProjectionSolution lin = SparsegenLin(z, -1.0);
  CHECK(lin.support.size() == 4);
  for (int i : lin.support) {
    CHECK(std::abs(lin.distribution[i] - (z[i] / 2.0 - lin.threshold)) <= 1e-9);
  }
}

TEST_CASE("lambda near one gives a one-hot at the unique maximum") {
  ProjectionSolution sol = SparsegenLin({0.1, 0.4, 0.35, -1.0}, 0.999);
  CheckClose(sol.distribution.probs, Eigen::Vector4d(0, 1, 0, 0), 0.0);
  CHECK(sol.support == std::vector<int>{1});
}

TEST_CASE("sparsemax collapses when the gap reaches one") {
  for (double t : {1.0, 1.5, 10.0}) {
    CheckClose(Sparsemax({t, 0.0}).distribution.probs, Eigen::Vector2d(1.0, 0.0), 0.0);
  }
}

TEST_CASE("sparsemax is sparsegen-lin at lambda zero") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + trial % 7;
    LogitVector z(RandomVector(rng, k, 2.0));
    CHECK(Sparsemax(z).distribution.probs == SparsegenLin(z, 0.0).distribution.probs);
  }
}

TEST_CASE("invalid arguments are rejected") {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInternal;
  };
  CHECK(code_of([] { SparsegenLin({1.0, 2.0}, 1.0); }) == ErrorCode::kInvalidParameter);
  CHECK(code_of([] { SparsegenLin({1.0, 2.0}, 3.0); }) == ErrorCode::kInvalidParameter);
  CHECK(code_of([] { LogitVector({1.0, std::nan("")}); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([] { LogitVector({1.0, INFINITY}); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([] { LogitVector(Eigen::VectorXd()); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([] { BruteForceProjection(LogitVector(Eigen::VectorXd::Zero(6)), 0.0); }) ==
        ErrorCode::kUnsupportedSize);
  CHECK(code_of([] {
          ProjectionSolution empty;
          empty.distribution.probs = Eigen::VectorXd::Zero(3);
          ProjectionJacobian(empty);
        }) == ErrorCode::kInternal);
}

TEST_CASE("ties are resolved identically regardless of order") {
  ProjectionSolution a = Sparsemax({0.5, 0.5, 0.1, 0.5});
  ProjectionSolution b = Sparsemax({0.5, 0.1, 0.5, 0.5});
  CHECK(a.distribution[0] == b.distribution[0]);
  CHECK(a.distribution[1] == b.distribution[2]);
  CHECK(a.distribution[2] == b.distribution[1]);
  CHECK(a.distribution[3] == b.distribution[3]);
  CHECK(a.distribution[0] == a.distribution[1]);
  CHECK(a.support == std::vector<int>{0, 1, 3});
  CHECK(b.support == std::vector<int>{0, 2, 3});
}

TEST_CASE("entries at the threshold are off the support") {
  // u = (2.6, -0.8, 1.6, 0.2): the third entry sits exactly at tau = 1.6.
  ProjectionSolution sol = SparsegenLin({1.3, -0.4, 0.8, 0.1}, 0.5);
  CHECK(sol.support == std::vector<int>{0});
  CheckClose(sol.distribution.probs, Eigen::Vector4d(1, 0, 0, 0), 0.0);
}

TEST_CASE("brute-force oracle basics") {
  CheckClose(BruteForceProjection({1.0, 0.0, 0.0}, 0.0).probs, Eigen::Vector3d(1, 0, 0), 1e-12);
  CheckClose(BruteForceProjection({2.0, 2.0, 2.0, 2.0}, 0.3).probs, Eigen::Vector4d::Constant(0.25), 1e-12);
}

TEST_CASE("projection properties on random inputs") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> lam_dist(-1.0, 0.95);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + trial % 4;
    const Eigen::VectorXd zv = RandomVector(rng, k, 3.0);
    const double lambda = lam_dist(rng);
    const ProjectionSolution sol = SparsegenLin(LogitVector(zv), lambda);

    CHECK(sol.distribution.IsValid(1e-9));
    for (int i = 0; i < k; ++i) {
      const bool in_support = std::find(sol.support.begin(), sol.support.end(), i) != sol.support.end();
      CHECK(in_support == (sol.distribution[i] > 0.0));
    }

    // Oracle equivalence.
    CheckClose(sol.distribution.probs, BruteForceProjection(LogitVector(zv), lambda).probs, 1e-6);

    // Translation invariance.
    const ProjectionSolution shifted =
        SparsegenLin(LogitVector(Eigen::VectorXd(zv.array() + 1.75)), lambda);
    CheckClose(shifted.distribution.probs, sol.distribution.probs, 1e-9);

    // Argmax preservation.
    Eigen::Index arg_z = 0;
    zv.maxCoeff(&arg_z);
    CHECK(sol.distribution[arg_z] == doctest::Approx(sol.distribution.probs.maxCoeff()));
    CHECK(sol.distribution[arg_z] > 0.0);

    // Support shrinks as lambda grows.
    const double larger = lambda + (0.99 - lambda) * 0.5;
    CHECK(SparsegenLin(LogitVector(zv), larger).support.size() <= sol.support.size());
  }
}

TEST_CASE("sparsemax is idempotent on simplex points satisfying the support condition") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd z = RandomVector(rng, 4, 1.0).cwiseAbs();
    z /= z.sum();
    CheckClose(Sparsemax(LogitVector(z)).distribution.probs, z, 1e-12);
  }
}

TEST_CASE("Jacobian formula") {
  SUBCASE("full support K=2") {
    SimplexJacobian j = ProjectionJacobian(Sparsemax({0.3, 0.1}));
    Eigen::Matrix2d expected;
    expected << 0.5, -0.5, -0.5, 0.5;
    CHECK((j.matrix - expected).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }
  SUBCASE("one-hot gives zero") {
    for (double lambda : {0.0, 0.5, -1.0}) {
      SimplexJacobian j = ProjectionJacobian(SparsegenLin({5.0, 0.0, -1.0}, lambda));
      CHECK(j.matrix.cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("off-support rows vanish and the matrix is symmetric") {
    ProjectionSolution sol = Sparsemax({0.9, 0.5, -0.3, 0.45});
    SimplexJacobian j = ProjectionJacobian(sol);
    CHECK(j.matrix.row(2).cwiseAbs().maxCoeff() == 0.0);
    CHECK((j.matrix - j.matrix.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("Jacobian agrees with central finite differences") {
  std::mt19937_64 rng(99);
  const double h = 1e-5;
  int checked = 0;
  for (double lambda : {0.0, 0.5, -1.0}) {
    for (int trial = 0; trial < 40; ++trial) {
      const int k = 2 + trial % 4;
      const Eigen::VectorXd zv = RandomVector(rng, k, 1.5);
      const ProjectionSolution sol = SparsegenLin(LogitVector(zv), lambda);
      // Skip points within 1e-3 of a support change.
      const Eigen::VectorXd u = zv / (1.0 - lambda);
      if (((u.array() - sol.threshold).abs() < 1e-3).any()) continue;
      const Eigen::MatrixXd jac = ProjectionJacobian(sol).matrix;
      Eigen::MatrixXd fd(k, k);
      for (int c = 0; c < k; ++c) {
        Eigen::VectorXd plus = zv, minus = zv;
        plus[c] += h;
        minus[c] -= h;
        fd.col(c) = (SparsegenLin(LogitVector(plus), lambda).distribution.probs -
                     SparsegenLin(LogitVector(minus), lambda).distribution.probs) / (2 * h);
      }
      // One-hot points have a zero Jacobian; floor the scale to avoid dividing noise by noise.
      const double scale = std::max({fd.norm(), jac.norm(), 1.0});
      CHECK((jac - fd).norm() / scale <= 1e-4);
      ++checked;
    }
  }
  CHECK(checked > 60);
}
