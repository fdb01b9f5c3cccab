#pragma once

#include <Eigen/Dense>

#include <vector>

namespace spmoe {

// Unnormalized pattern scores. Non-empty and finite.
class LogitVector {
 public:
  explicit LogitVector(Eigen::VectorXd values);
  LogitVector(std::initializer_list<double> values);

  const Eigen::VectorXd& values() const { return values_; }
  Eigen::Index size() const { return values_.size(); }
  double operator[](Eigen::Index i) const { return values_[i]; }

 private:
  Eigen::VectorXd values_;
};

// A point on the probability simplex.
struct SimplexDistribution {
  Eigen::VectorXd probs;

  Eigen::Index size() const { return probs.size(); }
  double operator[](Eigen::Index i) const { return probs[i]; }
  // Non-negative entries summing to one within tol.
  bool IsValid(double tol = 1e-9) const;
};

struct ProjectionSolution {
  SimplexDistribution distribution;
  std::vector<int> support;  // ascending indices with probs > 0
  double threshold = 0.0;    // tau*
  double lambda = 0.0;
};

struct SimplexJacobian {
  Eigen::MatrixXd matrix;  // d p / d z
};

// Entries whose scaled logit lies within this distance of the threshold are
// dropped from the support.
inline constexpr double kSupportEpsilon = 1e-12;

// argmin over the simplex of ||p - z / (1 - lambda)||^2, via the sorted
// threshold rule. Requires lambda < 1.
ProjectionSolution SparsegenLin(const LogitVector& z, double lambda);

// SparsegenLin at lambda = 0.
ProjectionSolution Sparsemax(const LogitVector& z);

// J = (Diag(s) - s s^T / |S|) / (1 - lambda) with s the support indicator.
// At support-change points this is the Jacobian of the current support.
SimplexJacobian ProjectionJacobian(const ProjectionSolution& sol);

// Test oracle: enumerates every face of the simplex, minimizes the objective
// on its affine hull in closed form and keeps the best face solution that is
// feasible up to `resolution`. Independent of the sort/threshold rule.
// Only K <= 5 is supported.
SimplexDistribution BruteForceProjection(const LogitVector& z, double lambda,
                                         double resolution = 1e-12);

}  // namespace spmoe
