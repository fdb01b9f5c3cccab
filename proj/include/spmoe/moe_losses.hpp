#pragma once

// Pattern logits, per-expert cross-entropies, the sparse mixture
// reconstruction loss and the batch load-balance loss.

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "spmoe/autodiff.hpp"
#include "spmoe/model.hpp"
#include "spmoe/sparse_projection.hpp"

namespace spmoe {

// Token-summed negative log-likelihood of the target under each expert.
struct CEVector {
  Eigen::VectorXd values;
};

// One pattern distribution per batch sample.
struct BatchAssignment {
  std::vector<SimplexDistribution> rows;
};

// z = [w_enc E_enc ; w_dec E_dec] w + b. States with fewer rows than the
// pooler lengths are treated as zero-padded.
LogitVector PatternLogits(const Eigen::MatrixXd& enc_states, const Eigen::MatrixXd& dec_states,
                          const PatternPooler& pooler);

// Teacher-forced run of the backbone, each head applied to the shared decoder
// states. An end-of-sequence token is appended to `target` when missing.
CEVector ExpertCrossEntropies(const ExpertBundle& bundle, std::span<const int> source,
                              std::span<const int> target);

// -log sum_j p_j exp(-CE_j), evaluated in log space over the support of p.
double ReconstructionLoss(const SimplexDistribution& p, const CEVector& ce);

// KL(mean_i p_i || uniform).
double LoadBalanceLoss(const BatchAssignment& batch);

// L_rec + gamma * L_balance.
double FinalLoss(double l_rec, double l_balance, double gamma);

// Tape versions.
namespace ops {

// 1 x K logits from the two state matrices.
ad::Var PatternLogits(const BoundParameters& p, ad::Var enc_states, ad::Var dec_states);

// Projection of a 1 x K logit row; backpropagates with ProjectionJacobian.
ad::Var SparsegenLin(ad::Var z, double lambda, ProjectionSolution* solution = nullptr);

// p and ce are 1 x K rows.
ad::Var ReconstructionLoss(ad::Var p, ad::Var ce);

// rows is B x K.
ad::Var LoadBalanceLoss(ad::Var rows);

}  // namespace ops

}  // namespace spmoe
