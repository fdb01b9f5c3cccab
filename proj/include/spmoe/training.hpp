#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "spmoe/corpus.hpp"
#include "spmoe/model.hpp"
#include "spmoe/moe_losses.hpp"

namespace spmoe {

// Source ids and target ids without the end-of-sequence token.
struct TrainingExample {
  std::vector<int> source;
  std::vector<int> target;
};

std::vector<TrainingExample> ExamplesFrom(const PatternCorpus& corpus);

struct LossReport {
  double l_final = 0.0;
  double l_rec = 0.0;      // batch mean
  double l_balance = 0.0;
  Eigen::VectorXd usage;   // batch mean of the pattern distributions
  std::vector<SimplexDistribution> assignments;
};

struct BatchGradients {
  LossReport report;
  std::vector<Eigen::MatrixXd> grads;  // aligned with ParameterSet::tensors()
};

// Forward-only evaluation of the training objective.
LossReport EvaluateBatch(const ExpertBundle& bundle, std::span<const TrainingExample> batch);

// Objective and its gradient with respect to every parameter.
BatchGradients ComputeGradients(const ExpertBundle& bundle, std::span<const TrainingExample> batch);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void Apply(ParameterSet& params, const std::vector<Eigen::MatrixXd>& grads,
                     double learning_rate) = 0;
};

class SgdOptimizer : public Optimizer {
 public:
  void Apply(ParameterSet& params, const std::vector<Eigen::MatrixXd>& grads,
             double learning_rate) override;
};

class AdamOptimizer : public Optimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void Apply(ParameterSet& params, const std::vector<Eigen::MatrixXd>& grads,
             double learning_rate) override;

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

// One plain gradient step of L_final. Throws kDivergedTraining when the loss
// or a gradient is not finite; the bundle is left untouched in that case.
LossReport TrainStep(ExpertBundle& bundle, std::span<const TrainingExample> batch,
                     double learning_rate);
LossReport TrainStep(ExpertBundle& bundle, std::span<const TrainingExample> batch,
                     double learning_rate, Optimizer& optimizer);

// Teacher-forced pattern logits z for one example.
LogitVector RouterLogits(const ExpertBundle& bundle, const TrainingExample& example);

// Argmax expert of the teacher-forced pattern distribution for each example.
std::vector<int> AssignExperts(const ExpertBundle& bundle, std::span<const TrainingExample> examples);
// Full pattern distributions, one per example.
std::vector<SimplexDistribution> PatternDistributions(const ExpertBundle& bundle,
                                                      std::span<const TrainingExample> examples);

struct GenerationSet {
  std::vector<int> input;
  std::vector<std::vector<int>> outputs;  // one per expert, without eos
  std::vector<bool> truncated;            // hit max_len before eos
};

// Greedy decoding with each head in turn. max_len is capped at the model's
// output length.
GenerationSet GenerateAllPatterns(const ExpertBundle& bundle, std::span<const int> source, int max_len);

enum class OptimizerKind { kSgd, kAdam };

struct TrainOptions {
  int steps = 0;  // total optimizer steps
  int batch_size = 32;
  double learning_rate = 0.05;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  uint64_t shuffle_seed = 1;
};

struct StepLog {
  int step = 0;
  LossReport report;
};

// Shuffled mini-batch loop over `examples`; `on_step` sees every step.
void Train(ExpertBundle& bundle, std::span<const TrainingExample> examples, const TrainOptions& options,
           const std::function<void(const StepLog&)>& on_step = {});

}  // namespace spmoe
