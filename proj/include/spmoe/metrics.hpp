#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace spmoe::metrics {

using Tokens = std::vector<std::string>;

// Lowercase, split on whitespace, strip leading and trailing punctuation,
// drop tokens that were punctuation only.
Tokens MetricTokenize(const std::string& text);

struct NGramMultiset {
  int order = 1;
  std::map<Tokens, int> counts;

  static NGramMultiset From(const Tokens& tokens, int order);
  int Total() const;
  int Count(const Tokens& gram) const;
};

struct PDConfig {
  int max_order = 4;
  std::vector<double> weights;  // empty: uniform 1 / max_order

  // Fills default weights and checks they are positive and sum to one.
  PDConfig Resolved() const;
};

struct GenerationSet {
  Tokens input;
  std::vector<Tokens> outputs;
};

// (total candidate n-grams - overlap) / total. The overlap clips each
// candidate n-gram count by its reference count; with clip = false an
// n-gram present in the reference removes its full candidate count.
double NgramDiversity(const Tokens& candidate, const Tokens& reference, int n, bool clip = true);

// 1 when c > r, exp(1 - r / c) otherwise.
double BrevityPenalty(int c, int r);

// BP * exp(sum_n w_n log diver_n). Orders longer than the candidate are
// skipped with weights renormalized; zero diversities are floored at 1e-9
// unless every order is zero, which yields exactly 0.
double PatternDiversity(const Tokens& candidate, const Tokens& reference, const PDConfig& cfg);

// Mean PatternDiversity over ordered output pairs. An empty candidate scores 0.
double PdOverSet(const GenerationSet& set, const PDConfig& cfg);

// Sentence BLEU: clipped precisions up to max_order with uniform weights and
// the closest-length reference for BP. No smoothing.
double Bleu(const Tokens& candidate, const std::vector<Tokens>& references, int max_order);

// Mean Bleu over ordered output pairs.
double PairwiseBleu(const GenerationSet& set, int max_order);

// Unique unigrams / total unigrams over all outputs.
double Distinct1(const std::vector<Tokens>& outputs);

struct EvalRecord {
  std::string input;
  std::vector<std::string> outputs;
  std::vector<std::string> references;
};

struct MetricReport {
  std::optional<std::vector<double>> bleu;  // orders 1..N, only with references
  std::vector<double> p_bleu;
  std::vector<double> pd;
  double distinct_1 = 0.0;
  size_t records = 0;
};

// Corpus scores are means over records. BLEU is the mean over every output
// of every record against that record's references.
MetricReport Evaluate(const std::vector<EvalRecord>& records, int max_order = 4);

}  // namespace spmoe::metrics
