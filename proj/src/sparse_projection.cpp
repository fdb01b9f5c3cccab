#include "spmoe/sparse_projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "spmoe/error.hpp"

namespace spmoe {

LogitVector::LogitVector(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() < 1) {
    throw Error(ErrorCode::kInvalidInput, "logit vector must have at least one entry");
  }
  if (!values_.allFinite()) {
    throw Error(ErrorCode::kInvalidInput, "logit vector has non-finite entries");
  }
}

LogitVector::LogitVector(std::initializer_list<double> values)
    : LogitVector(Eigen::VectorXd::Map(values.begin(), static_cast<Eigen::Index>(values.size()))) {}

bool SimplexDistribution::IsValid(double tol) const {
  if (probs.size() == 0 || !probs.allFinite()) return false;
  if ((probs.array() < 0.0).any()) return false;
  return std::abs(probs.sum() - 1.0) <= tol;
}

ProjectionSolution SparsegenLin(const LogitVector& z, double lambda) {
  if (!(lambda < 1.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::kInvalidParameter,
                "sparsegen-lin requires finite lambda < 1, got " + std::to_string(lambda));
  }
  const Eigen::Index k_total = z.size();
  const Eigen::VectorXd u = z.values() / (1.0 - lambda);
  if (!u.allFinite()) {
    throw Error(ErrorCode::kInvalidInput, "scaled logits overflow");
  }

  // Stable sort keeps ties in original index order.
  std::vector<int> order(static_cast<size_t>(k_total));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return u[a] > u[b]; });

  // k(z) = max{k : u_(k) - (sum_{j<=k} u_(j) - 1) / k > eps}; k = 1 always holds.
  double cumsum = 0.0;
  double tau = u[order[0]] - 1.0;
  int support_size = 1;
  for (int k = 1; k <= k_total; ++k) {
    cumsum += u[order[static_cast<size_t>(k - 1)]];
    const double tau_k = (cumsum - 1.0) / k;
    if (u[order[static_cast<size_t>(k - 1)]] - tau_k > kSupportEpsilon) {
      support_size = k;
      tau = tau_k;
    }
  }

  ProjectionSolution sol;
  sol.lambda = lambda;
  sol.threshold = tau;
  sol.distribution.probs = Eigen::VectorXd::Zero(k_total);
  sol.support.assign(order.begin(), order.begin() + support_size);
  std::sort(sol.support.begin(), sol.support.end());
  for (int i : sol.support) {
    sol.distribution.probs[i] = u[i] - tau;
  }
  return sol;
}

ProjectionSolution Sparsemax(const LogitVector& z) { return SparsegenLin(z, 0.0); }

SimplexJacobian ProjectionJacobian(const ProjectionSolution& sol) {
  const Eigen::Index k_total = sol.distribution.size();
  if (sol.support.empty()) {
    throw Error(ErrorCode::kInternal, "projection solution has an empty support");
  }
  Eigen::VectorXd s = Eigen::VectorXd::Zero(k_total);
  for (int i : sol.support) s[i] = 1.0;
  const double support_size = static_cast<double>(sol.support.size());
  SimplexJacobian jac;
  jac.matrix = (Eigen::MatrixXd(s.asDiagonal()) - s * s.transpose() / support_size) /
               (1.0 - sol.lambda);
  return jac;
}

SimplexDistribution BruteForceProjection(const LogitVector& z, double lambda, double resolution) {
  const Eigen::Index k_total = z.size();
  if (k_total > 5) {
    throw Error(ErrorCode::kUnsupportedSize,
                "brute-force projection supports K <= 5, got K = " + std::to_string(k_total));
  }
  if (!(lambda < 1.0)) {
    throw Error(ErrorCode::kInvalidParameter, "brute-force projection requires lambda < 1");
  }
  if (!(resolution > 0.0)) {
    throw Error(ErrorCode::kInvalidParameter, "resolution must be positive");
  }
  const Eigen::VectorXd u = z.values() / (1.0 - lambda);

  double best_objective = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best = Eigen::VectorXd::Zero(k_total);
  const unsigned n_faces = 1u << static_cast<unsigned>(k_total);
  for (unsigned mask = 1; mask < n_faces; ++mask) {
    // On the face {p_i = 0 for i not in mask, sum p = 1} the minimizer of
    // ||p - u||^2 shifts the face coordinates of u by a common constant.
    double face_sum = 0.0;
    int face_size = 0;
    for (Eigen::Index i = 0; i < k_total; ++i) {
      if (mask & (1u << i)) {
        face_sum += u[i];
        ++face_size;
      }
    }
    const double shift = (1.0 - face_sum) / face_size;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(k_total);
    bool feasible = true;
    for (Eigen::Index i = 0; i < k_total; ++i) {
      if (mask & (1u << i)) {
        p[i] = u[i] + shift;
        if (p[i] < -resolution) feasible = false;
      }
    }
    if (!feasible) continue;
    p = p.cwiseMax(0.0);
    p /= p.sum();
    const double objective = (p - u).squaredNorm();
    if (objective < best_objective) {
      best_objective = objective;
      best = p;
    }
  }
  return SimplexDistribution{best};
}

}  // namespace spmoe
