#pragma once

// Shared encoder-decoder backbone, K pattern heads and the pattern pooler.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "spmoe/autodiff.hpp"
#include "spmoe/corpus.hpp"

namespace spmoe {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int ffn_dim = 128;
  int n_layers = 2;     // per stack
  int n_heads = 1;      // attention heads per block
  int max_input_len = 8;   // L_input
  int max_output_len = 9;  // L_output, counts the end-of-sequence token
  int num_experts = 3;     // K
  double lambda = 0.5;
  double gamma = 1.0;
  double learning_rate = 0.05;
  uint64_t seed = 1;

  // Throws kInvalidParameter on a violated invariant.
  void Validate() const;
};

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

// Ordered collection of named parameter tensors.
class ParameterSet {
 public:
  void Add(std::string name, Eigen::MatrixXd value);
  Eigen::MatrixXd& Get(const std::string& name);
  const Eigen::MatrixXd& Get(const std::string& name) const;
  bool Contains(const std::string& name) const { return index_.count(name) != 0; }
  size_t IndexOf(const std::string& name) const;

  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  size_t size() const { return tensors_.size(); }
  size_t NumScalars() const;

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<NamedTensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// Pattern pooling parameters, detached from the bundle.
struct PatternPooler {
  Eigen::RowVectorXd w_enc;  // L_input
  Eigen::RowVectorXd w_dec;  // L_output
  Eigen::MatrixXd w;         // 2 d_model x K
  Eigen::RowVectorXd b;      // K
};

struct ExpertBundle {
  ModelConfig config;
  Vocabulary vocabulary;
  ParameterSet params;
  uint64_t step = 0;
  uint64_t rng_state = 0;

  int num_experts() const { return config.num_experts; }
  PatternPooler Pooler() const;
  void SetPooler(const PatternPooler& pooler);
  // Throws kShape when a tensor disagrees with the configuration.
  void ValidateShapes() const;
};

// Names and shapes of every parameter for a configuration, in storage order.
std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> ParameterLayout(
    const ModelConfig& config);

// Random initialization: scaled normal weights, unit layer-norm gains, zero
// biases, pooler weights around mean pooling, all-zero pattern heads.
ExpertBundle InitBundle(const ModelConfig& config, const Vocabulary& vocabulary);

// Router bias favoring expert 0 by `margin` logits.
void ApplyAdversarialInit(ExpertBundle& bundle, double margin);

// Parameters bound to one tape: leaves when recording, constants otherwise.
class BoundParameters {
 public:
  BoundParameters(ad::Tape& tape, const ParameterSet& params);
  ad::Var operator[](const std::string& name) const;
  const std::vector<ad::Var>& vars() const { return vars_; }

 private:
  const ParameterSet* params_;
  std::vector<ad::Var> vars_;
};

// Token ids right-padded with kPadId to `length`; throws kShape when longer.
std::vector<int> PadTo(std::span<const int> ids, int length);

// Encoder output states, L_input x d_model.
ad::Var EncodeSource(const BoundParameters& p, const ModelConfig& cfg, std::span<const int> source);

// Decoder output states for decoder inputs [bos, y_1, ...], L_output x
// d_model, causal, attending to `memory` for the real source positions.
ad::Var DecodeStates(const BoundParameters& p, const ModelConfig& cfg, ad::Var memory,
                     int source_len, std::span<const int> decoder_inputs);

// Logits of expert k over the first `rows` decoder states.
ad::Var HeadLogits(const BoundParameters& p, ad::Var dec_states, int expert, Eigen::Index rows);

}  // namespace spmoe
