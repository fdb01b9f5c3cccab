#include "spmoe/moe_losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "spmoe/error.hpp"

namespace spmoe {

using ad::Matrix;
using ad::Var;

namespace {

// log sum_{j : p_j > 0} exp(log p_j - ce_j) with max shift.
double LogMixture(const Eigen::VectorXd& p, const Eigen::VectorXd& ce) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) mx = std::max(mx, std::log(p[j]) - ce[j]);
  }
  if (!std::isfinite(mx)) {
    throw Error(ErrorCode::kInternal, "mixture support is empty");
  }
  double acc = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) acc += std::exp(std::log(p[j]) - ce[j] - mx);
  }
  return mx + std::log(acc);
}

Eigen::VectorXd MeanRow(const Eigen::MatrixXd& rows) { return rows.colwise().mean().transpose(); }

double KlToUniform(const Eigen::VectorXd& m) {
  const double k = static_cast<double>(m.size());
  double kl = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (m[i] > 0.0) kl += m[i] * std::log(m[i] * k);
  }
  return kl;
}

}  // namespace

LogitVector PatternLogits(const Eigen::MatrixXd& enc_states, const Eigen::MatrixXd& dec_states,
                          const PatternPooler& pooler) {
  const Eigen::Index d = enc_states.cols();
  if (dec_states.cols() != d) throw Error(ErrorCode::kShape, "encoder and decoder widths differ");
  if (pooler.w.rows() != 2 * d) {
    throw Error(ErrorCode::kShape, "pooler w has " + std::to_string(pooler.w.rows()) +
                                       " rows, expected 2 * d_model = " + std::to_string(2 * d));
  }
  if (pooler.b.size() != pooler.w.cols()) throw Error(ErrorCode::kShape, "pooler bias length != K");
  if (enc_states.rows() > pooler.w_enc.size() || dec_states.rows() > pooler.w_dec.size()) {
    throw Error(ErrorCode::kShape, "state sequence longer than the pooler length");
  }
  Eigen::RowVectorXd pooled(2 * d);
  pooled.head(d) = pooler.w_enc.head(enc_states.rows()) * enc_states;
  pooled.tail(d) = pooler.w_dec.head(dec_states.rows()) * dec_states;
  const Eigen::RowVectorXd z = pooled * pooler.w + pooler.b;
  return LogitVector(Eigen::VectorXd(z.transpose()));
}

CEVector ExpertCrossEntropies(const ExpertBundle& bundle, std::span<const int> source,
                              std::span<const int> target) {
  if (source.empty() || target.empty()) {
    throw Error(ErrorCode::kInvalidInput, "source and target must be non-empty");
  }
  std::vector<int> labels(target.begin(), target.end());
  if (labels.back() != kEosId) labels.push_back(kEosId);
  std::vector<int> dec_in{kBosId};
  dec_in.insert(dec_in.end(), labels.begin(), labels.end() - 1);

  ad::Tape tape(false);
  BoundParameters p(tape, bundle.params);
  const ModelConfig& cfg = bundle.config;
  Var enc = EncodeSource(p, cfg, source);
  Var dec = DecodeStates(p, cfg, enc, static_cast<int>(source.size()), dec_in);
  CEVector ce;
  ce.values.resize(cfg.num_experts);
  for (int k = 0; k < cfg.num_experts; ++k) {
    Var logits = HeadLogits(p, dec, k, static_cast<Eigen::Index>(labels.size()));
    ce.values[k] = ad::CrossEntropySum(logits, labels).value()(0, 0);
  }
  return ce;
}

double ReconstructionLoss(const SimplexDistribution& p, const CEVector& ce) {
  if (p.size() != ce.values.size()) {
    throw Error(ErrorCode::kShape, "distribution and CE vector lengths differ");
  }
  return -LogMixture(p.probs, ce.values);
}

double LoadBalanceLoss(const BatchAssignment& batch) {
  if (batch.rows.empty()) throw Error(ErrorCode::kEmptyInput, "load balance needs a non-empty batch");
  const Eigen::Index k = batch.rows.front().size();
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(batch.rows.size()), k);
  for (size_t i = 0; i < batch.rows.size(); ++i) {
    if (batch.rows[i].size() != k) throw Error(ErrorCode::kShape, "batch rows differ in length");
    rows.row(static_cast<Eigen::Index>(i)) = batch.rows[i].probs.transpose();
  }
  return KlToUniform(MeanRow(rows));
}

double FinalLoss(double l_rec, double l_balance, double gamma) { return l_rec + gamma * l_balance; }

namespace ops {

Var PatternLogits(const BoundParameters& p, Var enc_states, Var dec_states) {
  Var pooled = ad::ConcatCols(ad::MatMul(p["pooler.w_enc"], enc_states),
                              ad::MatMul(p["pooler.w_dec"], dec_states));
  return ad::AddRow(ad::MatMul(pooled, p["pooler.w"]), p["pooler.b"]);
}

Var SparsegenLin(Var z, double lambda, ProjectionSolution* solution) {
  if (z.rows() != 1) throw Error(ErrorCode::kShape, "SparsegenLin expects a 1 x K row");
  ProjectionSolution sol = spmoe::SparsegenLin(LogitVector(Eigen::VectorXd(z.value().row(0).transpose())), lambda);
  if (solution) *solution = sol;
  const Matrix jac = ProjectionJacobian(sol).matrix;
  Matrix out = sol.distribution.probs.transpose();
  return z.tape->Push(std::move(out), {z}, [z, jac](ad::Tape& t, const Matrix& g) {
    // Jacobian is symmetric.
    t.Accumulate(z, g * jac);
  });
}

Var ReconstructionLoss(Var p, Var ce) {
  if (p.rows() != 1 || ce.rows() != 1 || p.cols() != ce.cols()) {
    throw Error(ErrorCode::kShape, "ReconstructionLoss expects matching 1 x K rows");
  }
  const Eigen::VectorXd pv = p.value().row(0).transpose();
  const Eigen::VectorXd cv = ce.value().row(0).transpose();
  const double log_mix = LogMixture(pv, cv);
  // d/dp_j = -exp(-ce_j - log_mix); d/dce_j = responsibility of expert j.
  Matrix dp(1, pv.size());
  Matrix dce(1, pv.size());
  for (Eigen::Index j = 0; j < pv.size(); ++j) {
    dp(0, j) = -std::exp(-cv[j] - log_mix);
    dce(0, j) = pv[j] > 0.0 ? std::exp(std::log(pv[j]) - cv[j] - log_mix) : 0.0;
  }
  Matrix out(1, 1);
  out(0, 0) = -log_mix;
  return p.tape->Push(std::move(out), {p, ce}, [p, ce, dp, dce](ad::Tape& t, const Matrix& g) {
    t.Accumulate(p, dp * g(0, 0));
    t.Accumulate(ce, dce * g(0, 0));
  });
}

Var LoadBalanceLoss(Var rows) {
  if (rows.rows() < 1) throw Error(ErrorCode::kEmptyInput, "load balance needs a non-empty batch");
  const Eigen::VectorXd m = MeanRow(rows.value());
  const double k = static_cast<double>(m.size());
  const double n = static_cast<double>(rows.rows());
  // d KL / d m_i = log(K m_i) + 1; zero-mass coordinates are off every
  // row's support, where the projection Jacobian discards the adjoint.
  Matrix dm(1, m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    dm(0, i) = m[i] > 0.0 ? std::log(k * m[i]) + 1.0 : 0.0;
  }
  Matrix out(1, 1);
  out(0, 0) = KlToUniform(m);
  return rows.tape->Push(std::move(out), {rows}, [rows, dm, n](ad::Tape& t, const Matrix& g) {
    t.Accumulate(rows, dm.replicate(t.value(rows).rows(), 1) * (g(0, 0) / n));
  });
}

}  // namespace ops

}  // namespace spmoe
