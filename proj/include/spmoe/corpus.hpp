#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace spmoe {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

// Lowercased whitespace split.
std::vector<std::string> Tokenize(const std::string& text);

// Token <-> id map; ids 0..3 are pad, bos, eos, unk.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);  // words include reserved

  int Add(const std::string& word);
  // kUnkId when absent.
  int Id(const std::string& word) const;
  bool Contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::string& Word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct TokenSequence {
  std::vector<int> tokens;
  std::string text;

  size_t size() const { return tokens.size(); }
  bool operator==(const TokenSequence& other) const { return tokens == other.tokens; }
};

// Encodes `text`; unknown tokens become kUnkId and are counted in *unknown.
TokenSequence Encode(const Vocabulary& vocab, const std::string& text, int* unknown = nullptr);
std::string Decode(const Vocabulary& vocab, const std::vector<int>& tokens);

struct CorpusPair {
  TokenSequence source;
  TokenSequence target;
  std::optional<int> true_pattern;
};

struct PatternCorpus {
  std::vector<CorpusPair> pairs;
  Vocabulary vocabulary;

  size_t size() const { return pairs.size(); }
  bool labeled() const;
  // Longest source / target in tokens.
  size_t MaxSourceLength() const;
  size_t MaxTargetLength() const;
};

enum class RuleKind { kPrefix, kReverse, kSynonym, kDuplicate };

struct PatternRule {
  RuleKind kind = RuleKind::kPrefix;
  std::string prefix = "pfx";  // used by kPrefix

  std::string Name() const;
};

std::optional<RuleKind> ParseRuleKind(const std::string& name);

struct SyntheticSpec {
  int k_true = 3;
  int n_sources = 500;
  uint64_t seed = 7;
  std::vector<PatternRule> rules;  // empty: first k_true default rules
  int min_length = 4;
  int max_length = 4;
  std::vector<std::string> words;                    // empty: built-in list
  std::map<std::string, std::string> synonyms;       // empty: built-in table

  // Fills defaults and checks invariants; throws kInvalidSpec.
  SyntheticSpec Resolved() const;
};

// Applies one rule to whitespace-separated text.
std::string ApplyRule(const PatternRule& rule, const std::string& source,
                      const std::map<std::string, std::string>& synonyms);

// n_sources distinct random sources, each expanded by every rule in order.
PatternCorpus GenerateSynthetic(const SyntheticSpec& spec);

// Builds a corpus from raw text triples, assigning vocabulary ids in order of
// first appearance.
PatternCorpus BuildCorpus(const std::vector<std::tuple<std::string, std::string, std::optional<int>>>& rows);

// One JSON object per line: {"source": str, "target": str, "pattern": int?}.
PatternCorpus LoadCorpus(const std::filesystem::path& path);
void SaveCorpus(const PatternCorpus& corpus, const std::filesystem::path& path);

// Size-weighted majority-label fraction over experts.
double PatternPurity(const std::vector<std::pair<size_t, int>>& assignments,
                     const PatternCorpus& corpus);

}  // namespace spmoe
