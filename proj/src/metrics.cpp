#include "spmoe/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <sstream>

#include "spmoe/error.hpp"

namespace spmoe::metrics {

namespace {

constexpr double kDiversityFloor = 1e-9;

bool IsPunct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

void RequirePairs(const GenerationSet& set) {
  if (set.outputs.size() < 2) {
    throw Error(ErrorCode::kInsufficientOutputs,
                "pattern-level metrics need at least 2 outputs, got " +
                    std::to_string(set.outputs.size()));
  }
}

}  // namespace

Tokens MetricTokenize(const std::string& text) {
  std::istringstream in(text);
  Tokens out;
  std::string w;
  while (in >> w) {
    size_t b = 0;
    size_t e = w.size();
    while (b < e && IsPunct(w[b])) ++b;
    while (e > b && IsPunct(w[e - 1])) --e;
    if (b == e) continue;
    std::string t = w.substr(b, e - b);
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(t));
  }
  return out;
}

NGramMultiset NGramMultiset::From(const Tokens& tokens, int order) {
  if (order < 1) throw Error(ErrorCode::kUndefinedOrder, "n-gram order must be >= 1");
  NGramMultiset ms;
  ms.order = order;
  const size_t n = static_cast<size_t>(order);
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    ++ms.counts[Tokens(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i + n))];
  }
  return ms;
}

int NGramMultiset::Total() const {
  int total = 0;
  for (const auto& [gram, c] : counts) total += c;
  return total;
}

int NGramMultiset::Count(const Tokens& gram) const {
  auto it = counts.find(gram);
  return it == counts.end() ? 0 : it->second;
}

PDConfig PDConfig::Resolved() const {
  PDConfig out = *this;
  if (out.max_order < 1) throw Error(ErrorCode::kInvalidParameter, "max n-gram order must be >= 1");
  if (out.weights.empty()) {
    out.weights.assign(static_cast<size_t>(out.max_order), 1.0 / out.max_order);
  }
  if (static_cast<int>(out.weights.size()) != out.max_order) {
    throw Error(ErrorCode::kInvalidParameter, "need one weight per n-gram order");
  }
  double sum = 0.0;
  for (double w : out.weights) {
    if (!(w > 0.0)) throw Error(ErrorCode::kInvalidParameter, "n-gram weights must be positive");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidParameter, "n-gram weights must sum to one");
  }
  return out;
}

double NgramDiversity(const Tokens& candidate, const Tokens& reference, int n, bool clip) {
  if (n < 1 || candidate.size() < static_cast<size_t>(n)) {
    throw Error(ErrorCode::kUndefinedOrder, "candidate of " + std::to_string(candidate.size()) +
                                                " tokens has no " + std::to_string(n) + "-grams");
  }
  const NGramMultiset cand = NGramMultiset::From(candidate, n);
  const NGramMultiset ref = NGramMultiset::From(reference, n);
  const int total = cand.Total();
  int overlap = 0;
  for (const auto& [gram, count] : cand.counts) {
    const int ref_count = ref.Count(gram);
    if (clip) {
      overlap += std::min(count, ref_count);
    } else if (ref_count > 0) {
      overlap += count;
    }
  }
  return static_cast<double>(total - overlap) / static_cast<double>(total);
}

double BrevityPenalty(int c, int r) {
  if (c < 1 || r < 1) {
    throw Error(ErrorCode::kInvalidLength, "brevity penalty needs positive lengths (c=" +
                                               std::to_string(c) + ", r=" + std::to_string(r) + ")");
  }
  if (c > r) return 1.0;
  return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

double PatternDiversity(const Tokens& candidate, const Tokens& reference, const PDConfig& raw_cfg) {
  const PDConfig cfg = raw_cfg.Resolved();
  if (candidate.empty()) throw Error(ErrorCode::kInvalidLength, "empty candidate");
  const int c = static_cast<int>(candidate.size());
  const int r = static_cast<int>(reference.size());
  const double bp = r == 0 ? 1.0 : BrevityPenalty(c, r);

  double weight_sum = 0.0;
  double log_sum = 0.0;
  bool any_nonzero = false;
  for (int n = 1; n <= cfg.max_order && n <= c; ++n) {
    const double w = cfg.weights[static_cast<size_t>(n - 1)];
    const double d = NgramDiversity(candidate, reference, n);
    any_nonzero = any_nonzero || d > 0.0;
    weight_sum += w;
    log_sum += w * std::log(std::max(d, kDiversityFloor));
  }
  if (!any_nonzero) return 0.0;
  return bp * std::exp(log_sum / weight_sum);
}

double PdOverSet(const GenerationSet& set, const PDConfig& cfg) {
  RequirePairs(set);
  double total = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < set.outputs.size(); ++i) {
    for (size_t j = 0; j < set.outputs.size(); ++j) {
      if (i == j) continue;
      ++pairs;
      if (set.outputs[i].empty()) continue;
      total += PatternDiversity(set.outputs[i], set.outputs[j], cfg);
    }
  }
  return total / static_cast<double>(pairs);
}

double Bleu(const Tokens& candidate, const std::vector<Tokens>& references, int max_order) {
  if (max_order < 1) throw Error(ErrorCode::kInvalidParameter, "BLEU order must be >= 1");
  if (references.empty()) throw Error(ErrorCode::kEmptyInput, "BLEU needs at least one reference");
  if (candidate.empty()) return 0.0;
  const int c = static_cast<int>(candidate.size());

  // Closest reference length; ties go to the shorter reference.
  int r = static_cast<int>(references.front().size());
  for (const Tokens& ref : references) {
    const int len = static_cast<int>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) {
      r = len;
    }
  }

  double log_sum = 0.0;
  for (int n = 1; n <= max_order; ++n) {
    if (c < n) return 0.0;
    const NGramMultiset cand = NGramMultiset::From(candidate, n);
    std::map<Tokens, int> max_ref;
    for (const Tokens& ref : references) {
      for (const auto& [gram, count] : NGramMultiset::From(ref, n).counts) {
        int& m = max_ref[gram];
        m = std::max(m, count);
      }
    }
    int matched = 0;
    for (const auto& [gram, count] : cand.counts) {
      auto it = max_ref.find(gram);
      if (it != max_ref.end()) matched += std::min(count, it->second);
    }
    if (matched == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched) / cand.Total()) / max_order;
  }
  const double bp = r == 0 ? 1.0 : BrevityPenalty(c, r);
  return bp * std::exp(log_sum);
}

double PairwiseBleu(const GenerationSet& set, int max_order) {
  RequirePairs(set);
  double total = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < set.outputs.size(); ++i) {
    for (size_t j = 0; j < set.outputs.size(); ++j) {
      if (i == j) continue;
      total += Bleu(set.outputs[i], {set.outputs[j]}, max_order);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double Distinct1(const std::vector<Tokens>& outputs) {
  if (outputs.empty()) throw Error(ErrorCode::kEmptyInput, "distinct-1 needs at least one output");
  std::set<std::string> unique;
  size_t total = 0;
  for (const Tokens& out : outputs) {
    total += out.size();
    unique.insert(out.begin(), out.end());
  }
  if (total == 0) return 0.0;
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

MetricReport Evaluate(const std::vector<EvalRecord>& records, int max_order) {
  if (records.empty()) throw Error(ErrorCode::kEmptyInput, "no records to evaluate");
  MetricReport report;
  report.records = records.size();
  const bool with_refs = std::all_of(records.begin(), records.end(),
                                     [](const EvalRecord& r) { return !r.references.empty(); });
  std::vector<double> bleu(static_cast<size_t>(max_order), 0.0);
  size_t bleu_count = 0;
  report.p_bleu.assign(static_cast<size_t>(max_order), 0.0);
  report.pd.assign(static_cast<size_t>(max_order), 0.0);
  std::vector<Tokens> all_outputs;

  for (const EvalRecord& rec : records) {
    GenerationSet set;
    set.input = MetricTokenize(rec.input);
    for (const std::string& o : rec.outputs) set.outputs.push_back(MetricTokenize(o));
    all_outputs.insert(all_outputs.end(), set.outputs.begin(), set.outputs.end());
    std::vector<Tokens> refs;
    for (const std::string& r : rec.references) refs.push_back(MetricTokenize(r));

    for (int n = 1; n <= max_order; ++n) {
      const size_t i = static_cast<size_t>(n - 1);
      report.p_bleu[i] += PairwiseBleu(set, n);
      report.pd[i] += PdOverSet(set, PDConfig{n, {}});
      if (with_refs) {
        for (const Tokens& o : set.outputs) bleu[i] += Bleu(o, refs, n);
      }
    }
    bleu_count += set.outputs.size();
  }
  const double n_rec = static_cast<double>(records.size());
  for (int n = 0; n < max_order; ++n) {
    report.p_bleu[static_cast<size_t>(n)] /= n_rec;
    report.pd[static_cast<size_t>(n)] /= n_rec;
    bleu[static_cast<size_t>(n)] /= static_cast<double>(bleu_count);
  }
  if (with_refs) report.bleu = bleu;
  report.distinct_1 = Distinct1(all_outputs);
  return report;
}

}  // namespace spmoe::metrics
