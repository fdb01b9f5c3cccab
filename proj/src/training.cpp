#include "spmoe/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "spmoe/error.hpp"

namespace spmoe {

using ad::Matrix;
using ad::Var;

std::vector<TrainingExample> ExamplesFrom(const PatternCorpus& corpus) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.size());
  for (const CorpusPair& p : corpus.pairs) out.push_back(TrainingExample{p.source.tokens, p.target.tokens});
  return out;
}

namespace {

struct SampleGraph {
  Var z;
  Var p;
  Var rec;
  ProjectionSolution solution;
};

SampleGraph BuildSample(const BoundParameters& p, const ModelConfig& cfg, const TrainingExample& ex) {
  if (ex.source.empty() || ex.target.empty()) {
    throw Error(ErrorCode::kInvalidInput, "training example with empty source or target");
  }
  std::vector<int> labels = ex.target;
  labels.push_back(kEosId);
  std::vector<int> dec_in{kBosId};
  dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.end());

  Var enc = EncodeSource(p, cfg, ex.source);
  Var dec = DecodeStates(p, cfg, enc, static_cast<int>(ex.source.size()), dec_in);
  SampleGraph g;
  g.z = ops::PatternLogits(p, enc, dec);
  g.p = ops::SparsegenLin(g.z, cfg.lambda, &g.solution);
  std::vector<Var> ce;
  for (int k = 0; k < cfg.num_experts; ++k) {
    Var logits = HeadLogits(p, dec, k, static_cast<Eigen::Index>(labels.size()));
    ce.push_back(ad::CrossEntropySum(logits, labels));
  }
  g.rec = ops::ReconstructionLoss(g.p, ad::Transpose(ad::StackRows(ce)));
  return g;
}

struct BatchGraph {
  Var loss;
  LossReport report;
};

BatchGraph BuildBatch(const BoundParameters& p, const ModelConfig& cfg,
                      std::span<const TrainingExample> batch) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyInput, "empty batch");
  std::vector<Var> recs;
  std::vector<Var> rows;
  BatchGraph out;
  for (const TrainingExample& ex : batch) {
    SampleGraph g = BuildSample(p, cfg, ex);
    recs.push_back(g.rec);
    rows.push_back(g.p);
    out.report.assignments.push_back(g.solution.distribution);
  }
  Var rec_col = ad::StackRows(recs);
  Var l_rec = ad::Scale(ad::Sum(rec_col), 1.0 / static_cast<double>(batch.size()));
  Var p_rows = ad::StackRows(rows);
  Var l_bal = ops::LoadBalanceLoss(p_rows);
  out.loss = ad::Add(l_rec, ad::Scale(l_bal, cfg.gamma));
  out.report.l_rec = l_rec.value()(0, 0);
  out.report.l_balance = l_bal.value()(0, 0);
  out.report.l_final = out.loss.value()(0, 0);
  out.report.usage = p_rows.value().colwise().mean().transpose();
  return out;
}

}  // namespace

LossReport EvaluateBatch(const ExpertBundle& bundle, std::span<const TrainingExample> batch) {
  ad::Tape tape(false);
  BoundParameters p(tape, bundle.params);
  return BuildBatch(p, bundle.config, batch).report;
}

LogitVector RouterLogits(const ExpertBundle& bundle, const TrainingExample& example) {
  ad::Tape tape(false);
  BoundParameters p(tape, bundle.params);
  const SampleGraph g = BuildSample(p, bundle.config, example);
  return LogitVector(Eigen::VectorXd(g.z.value().row(0).transpose()));
}

BatchGradients ComputeGradients(const ExpertBundle& bundle, std::span<const TrainingExample> batch) {
  ad::Tape tape(true);
  BoundParameters p(tape, bundle.params);
  BatchGraph graph = BuildBatch(p, bundle.config, batch);
  tape.Backward(graph.loss);
  BatchGradients out;
  out.report = std::move(graph.report);
  out.grads.reserve(p.vars().size());
  for (const Var& v : p.vars()) out.grads.push_back(tape.grad(v));
  return out;
}

void SgdOptimizer::Apply(ParameterSet& params, const std::vector<Eigen::MatrixXd>& grads,
                         double learning_rate) {
  for (size_t i = 0; i < grads.size(); ++i) params.tensors()[i].value -= learning_rate * grads[i];
}

void AdamOptimizer::Apply(ParameterSet& params, const std::vector<Eigen::MatrixXd>& grads,
                          double learning_rate) {
  if (m_.empty()) {
    for (const Eigen::MatrixXd& g : grads) {
      m_.push_back(Eigen::MatrixXd::Zero(g.rows(), g.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(g.rows(), g.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < grads.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    params.tensors()[i].value.array() -=
        learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

LossReport TrainStep(ExpertBundle& bundle, std::span<const TrainingExample> batch, double learning_rate) {
  SgdOptimizer sgd;
  return TrainStep(bundle, batch, learning_rate, sgd);
}

LossReport TrainStep(ExpertBundle& bundle, std::span<const TrainingExample> batch, double learning_rate,
                     Optimizer& optimizer) {
  BatchGradients g = ComputeGradients(bundle, batch);
  bool finite = std::isfinite(g.report.l_final);
  for (const Eigen::MatrixXd& m : g.grads) finite = finite && m.allFinite();
  if (!finite) {
    std::ostringstream msg;
    msg << "non-finite loss or gradient at step " << bundle.step << " (L_final=" << g.report.l_final
        << ", L_rec=" << g.report.l_rec << ", L_balance=" << g.report.l_balance << ")";
    throw Error(ErrorCode::kDivergedTraining, msg.str());
  }
  optimizer.Apply(bundle.params, g.grads, learning_rate);
  ++bundle.step;
  return g.report;
}

std::vector<SimplexDistribution> PatternDistributions(const ExpertBundle& bundle,
                                                      std::span<const TrainingExample> examples) {
  std::vector<SimplexDistribution> out;
  out.reserve(examples.size());
  for (const TrainingExample& ex : examples) {
    ad::Tape tape(false);
    BoundParameters p(tape, bundle.params);
    SampleGraph g = BuildSample(p, bundle.config, ex);
    out.push_back(g.solution.distribution);
  }
  return out;
}

std::vector<int> AssignExperts(const ExpertBundle& bundle, std::span<const TrainingExample> examples) {
  std::vector<int> out;
  for (const SimplexDistribution& d : PatternDistributions(bundle, examples)) {
    Eigen::Index arg = 0;
    d.probs.maxCoeff(&arg);
    out.push_back(static_cast<int>(arg));
  }
  return out;
}

GenerationSet GenerateAllPatterns(const ExpertBundle& bundle, std::span<const int> source, int max_len) {
  if (source.empty()) throw Error(ErrorCode::kInvalidInput, "empty source");
  const ModelConfig& cfg = bundle.config;
  const int limit = std::min(max_len, cfg.max_output_len);
  GenerationSet out;
  out.input.assign(source.begin(), source.end());

  ad::Tape tape(false);
  BoundParameters p(tape, bundle.params);
  Var enc = EncodeSource(p, cfg, source);
  for (int k = 0; k < cfg.num_experts; ++k) {
    std::vector<int> dec_in{kBosId};
    std::vector<int> produced;
    bool finished = false;
    while (static_cast<int>(produced.size()) < limit) {
      Var dec = DecodeStates(p, cfg, enc, static_cast<int>(source.size()), dec_in);
      const Eigen::Index row = static_cast<Eigen::Index>(dec_in.size()) - 1;
      Var logits = HeadLogits(p, ad::SliceRows(dec, row, 1), k, 1);
      Eigen::Index next = 0;
      logits.value().row(0).maxCoeff(&next);
      if (next == kEosId) {
        finished = true;
        break;
      }
      produced.push_back(static_cast<int>(next));
      dec_in.push_back(static_cast<int>(next));
      if (static_cast<int>(dec_in.size()) > cfg.max_output_len) break;
    }
    out.outputs.push_back(std::move(produced));
    out.truncated.push_back(!finished);
  }
  return out;
}

void Train(ExpertBundle& bundle, std::span<const TrainingExample> examples, const TrainOptions& options,
           const std::function<void(const StepLog&)>& on_step) {
  if (examples.empty()) throw Error(ErrorCode::kEmptyCorpus, "no training examples");
  if (options.batch_size < 1) throw Error(ErrorCode::kInvalidParameter, "batch size must be >= 1");
  std::unique_ptr<Optimizer> optimizer;
  if (options.optimizer == OptimizerKind::kAdam) {
    optimizer = std::make_unique<AdamOptimizer>();
  } else {
    optimizer = std::make_unique<SgdOptimizer>();
  }
  std::mt19937_64 rng(options.shuffle_seed);
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();
  std::vector<TrainingExample> batch;
  for (int step = 0; step < options.steps; ++step) {
    batch.clear();
    while (static_cast<int>(batch.size()) < options.batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(examples[order[cursor++]]);
      if (static_cast<int>(batch.size()) == static_cast<int>(examples.size())) break;
    }
    LossReport report = TrainStep(bundle, batch, options.learning_rate, *optimizer);
    if (on_step) on_step(StepLog{step, std::move(report)});
  }
}

}  // namespace spmoe
