#include "spmoe/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spmoe/error.hpp"

namespace spmoe {

namespace {

const std::vector<std::pair<std::string, std::string>>& DefaultLexicon() {
  static const std::vector<std::pair<std::string, std::string>> lexicon = {
      {"big", "large"},    {"small", "tiny"},  {"quick", "fast"},    {"happy", "glad"},
      {"smart", "clever"}, {"cold", "chilly"}, {"old", "aged"},      {"rich", "wealthy"},
      {"angry", "mad"},    {"calm", "serene"}, {"loud", "noisy"},    {"hard", "tough"},
  };
  return lexicon;
}

std::string Lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> SplitRaw(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string Join(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

std::vector<std::string> Tokenize(const std::string& text) {
  std::vector<std::string> out = SplitRaw(text);
  for (std::string& w : out) w = Lower(std::move(w));
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>"}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  if (words.size() < kNumReserved) {
    throw Error(ErrorCode::kInvalidInput, "vocabulary must contain the reserved tokens");
  }
  for (const std::string& w : words) {
    if (index_.count(w)) throw Error(ErrorCode::kInvalidInput, "duplicate vocabulary entry '" + w + "'");
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }
}

int Vocabulary::Add(const std::string& word) {
  auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  index_.emplace(word, id);
  words_.push_back(word);
  return id;
}

int Vocabulary::Id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::Word(int id) const {
  if (id < 0 || id >= size()) {
    throw Error(ErrorCode::kInvalidToken, "token id " + std::to_string(id) + " out of vocabulary");
  }
  return words_[static_cast<size_t>(id)];
}

TokenSequence Encode(const Vocabulary& vocab, const std::string& text, int* unknown) {
  TokenSequence seq;
  seq.text = text;
  for (const std::string& w : Tokenize(text)) {
    const int id = vocab.Id(w);
    if (id == kUnkId && unknown) ++*unknown;
    seq.tokens.push_back(id);
  }
  return seq;
}

std::string Decode(const Vocabulary& vocab, const std::vector<int>& tokens) {
  std::vector<std::string> words;
  for (int id : tokens) {
    if (id == kEosId) break;
    if (id == kPadId || id == kBosId) continue;
    words.push_back(vocab.Word(id));
  }
  return Join(words);
}

bool PatternCorpus::labeled() const {
  return !pairs.empty() &&
         std::all_of(pairs.begin(), pairs.end(), [](const CorpusPair& p) { return p.true_pattern.has_value(); });
}

size_t PatternCorpus::MaxSourceLength() const {
  size_t n = 0;
  for (const CorpusPair& p : pairs) n = std::max(n, p.source.size());
  return n;
}

size_t PatternCorpus::MaxTargetLength() const {
  size_t n = 0;
  for (const CorpusPair& p : pairs) n = std::max(n, p.target.size());
  return n;
}

std::string PatternRule::Name() const {
  switch (kind) {
    case RuleKind::kPrefix: return "prefix";
    case RuleKind::kReverse: return "reverse";
    case RuleKind::kSynonym: return "synonym";
    case RuleKind::kDuplicate: return "duplicate";
  }
  return "unknown";
}

std::optional<RuleKind> ParseRuleKind(const std::string& name) {
  if (name == "prefix") return RuleKind::kPrefix;
  if (name == "reverse") return RuleKind::kReverse;
  if (name == "synonym") return RuleKind::kSynonym;
  if (name == "duplicate") return RuleKind::kDuplicate;
  return std::nullopt;
}

SyntheticSpec SyntheticSpec::Resolved() const {
  SyntheticSpec out = *this;
  if (out.k_true < 2) throw Error(ErrorCode::kInvalidSpec, "k_true must be at least 2");
  if (out.n_sources < 1) throw Error(ErrorCode::kInvalidSpec, "n_sources must be positive");
  if (out.min_length < 1 || out.max_length < out.min_length) {
    throw Error(ErrorCode::kInvalidSpec, "source length range is empty");
  }
  if (out.words.empty() || out.synonyms.empty()) {
    std::vector<std::string> words;
    std::map<std::string, std::string> synonyms;
    for (const auto& [w, s] : DefaultLexicon()) {
      words.push_back(w);
      synonyms.emplace(w, s);
    }
    if (out.words.empty()) out.words = words;
    if (out.synonyms.empty()) out.synonyms = synonyms;
  }
  if (out.rules.empty()) {
    static const RuleKind defaults[] = {RuleKind::kPrefix, RuleKind::kReverse, RuleKind::kSynonym,
                                        RuleKind::kDuplicate};
    if (out.k_true > 4) {
      throw Error(ErrorCode::kInvalidSpec, "only 4 default rules exist; pass rules explicitly");
    }
    for (int k = 0; k < out.k_true; ++k) out.rules.push_back(PatternRule{defaults[k], "pfx"});
  }
  if (static_cast<int>(out.rules.size()) != out.k_true) {
    throw Error(ErrorCode::kInvalidSpec, "rule count differs from k_true");
  }
  // Probe with distinct words so that order-changing rules are visible.
  std::vector<std::string> probe_words;
  for (int i = 0; i < std::max(out.min_length, 2) && i < static_cast<int>(out.words.size()); ++i) {
    probe_words.push_back(out.words[static_cast<size_t>(i)]);
  }
  const std::string probe = Join(probe_words);
  std::set<std::vector<std::string>> seen;
  for (const PatternRule& rule : out.rules) {
    if (!seen.insert(Tokenize(ApplyRule(rule, probe, out.synonyms))).second) {
      throw Error(ErrorCode::kInvalidSpec,
                  "rule '" + rule.Name() + "' collides with another rule on probe '" + probe + "'");
    }
  }
  return out;
}

std::string ApplyRule(const PatternRule& rule, const std::string& source,
                      const std::map<std::string, std::string>& synonyms) {
  std::vector<std::string> words = SplitRaw(source);
  switch (rule.kind) {
    case RuleKind::kPrefix:
      words.insert(words.begin(), rule.prefix);
      break;
    case RuleKind::kReverse:
      std::reverse(words.begin(), words.end());
      break;
    case RuleKind::kSynonym:
      for (std::string& w : words) {
        auto it = synonyms.find(Lower(w));
        if (it != synonyms.end()) w = it->second;
      }
      break;
    case RuleKind::kDuplicate: {
      std::vector<std::string> doubled;
      for (const std::string& w : words) {
        doubled.push_back(w);
        doubled.push_back(w);
      }
      words = std::move(doubled);
      break;
    }
  }
  return Join(words);
}

PatternCorpus BuildCorpus(
    const std::vector<std::tuple<std::string, std::string, std::optional<int>>>& rows) {
  PatternCorpus corpus;
  for (const auto& [src, tgt, pattern] : rows) {
    for (const std::string& w : Tokenize(src)) corpus.vocabulary.Add(w);
    for (const std::string& w : Tokenize(tgt)) corpus.vocabulary.Add(w);
  }
  for (const auto& [src, tgt, pattern] : rows) {
    corpus.pairs.push_back(
        CorpusPair{Encode(corpus.vocabulary, src), Encode(corpus.vocabulary, tgt), pattern});
  }
  return corpus;
}

PatternCorpus GenerateSynthetic(const SyntheticSpec& raw_spec) {
  const SyntheticSpec spec = raw_spec.Resolved();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> length_dist(spec.min_length, spec.max_length);
  std::uniform_int_distribution<size_t> word_dist(0, spec.words.size() - 1);

  std::set<std::string> used;
  std::vector<std::tuple<std::string, std::string, std::optional<int>>> rows;
  size_t attempts = 0;
  const size_t max_attempts = static_cast<size_t>(spec.n_sources) * 1000 + 1000;
  while (static_cast<int>(used.size()) < spec.n_sources) {
    if (++attempts > max_attempts) {
      throw Error(ErrorCode::kInvalidSpec, "cannot draw enough distinct sources from the vocabulary");
    }
    const int len = length_dist(rng);
    std::vector<std::string> words;
    for (int i = 0; i < len; ++i) words.push_back(spec.words[word_dist(rng)]);
    std::string source = Join(words);
    if (!used.insert(source).second) continue;
    for (int k = 0; k < spec.k_true; ++k) {
      rows.emplace_back(source, ApplyRule(spec.rules[static_cast<size_t>(k)], source, spec.synonyms), k);
    }
  }
  return BuildCorpus(rows);
}

PatternCorpus LoadCorpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open corpus file " + path.string());
  std::vector<std::tuple<std::string, std::string, std::optional<int>>> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kParse, where + ": " + e.what());
    }
    if (!rec.is_object()) throw Error(ErrorCode::kParse, where + ": record is not an object");
    if (!rec.contains("source") || !rec["source"].is_string()) {
      throw Error(ErrorCode::kParse, where + ": missing string field 'source'");
    }
    if (!rec.contains("target") || !rec["target"].is_string()) {
      throw Error(ErrorCode::kParse, where + ": missing string field 'target'");
    }
    std::optional<int> pattern;
    if (rec.contains("pattern") && !rec["pattern"].is_null()) {
      if (!rec["pattern"].is_number_integer() || rec["pattern"].get<int>() < 0) {
        throw Error(ErrorCode::kParse, where + ": 'pattern' must be a non-negative integer");
      }
      pattern = rec["pattern"].get<int>();
    }
    std::string src = rec["source"].get<std::string>();
    std::string tgt = rec["target"].get<std::string>();
    if (Tokenize(src).empty() || Tokenize(tgt).empty()) {
      throw Error(ErrorCode::kParse, where + ": source and target must be non-empty");
    }
    rows.emplace_back(std::move(src), std::move(tgt), pattern);
  }
  if (rows.empty()) throw Error(ErrorCode::kEmptyCorpus, path.string() + " has no records");
  return BuildCorpus(rows);
}

void SaveCorpus(const PatternCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write corpus file " + path.string());
  for (const CorpusPair& p : corpus.pairs) {
    nlohmann::ordered_json rec;
    rec["source"] = p.source.text;
    rec["target"] = p.target.text;
    if (p.true_pattern) rec["pattern"] = *p.true_pattern;
    out << rec.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

double PatternPurity(const std::vector<std::pair<size_t, int>>& assignments,
                     const PatternCorpus& corpus) {
  if (!corpus.labeled()) {
    throw Error(ErrorCode::kUnlabeledCorpus, "pattern purity needs ground-truth pattern labels");
  }
  if (assignments.empty()) throw Error(ErrorCode::kEmptyInput, "no assignments");
  std::map<int, std::map<int, size_t>> table;  // expert -> label -> count
  std::vector<bool> covered(corpus.size(), false);
  for (const auto& [idx, expert] : assignments) {
    if (idx >= corpus.size()) {
      throw Error(ErrorCode::kInvalidInput, "assignment index " + std::to_string(idx) + " out of range");
    }
    covered[idx] = true;
    ++table[expert][*corpus.pairs[idx].true_pattern];
  }
  if (std::find(covered.begin(), covered.end(), false) != covered.end()) {
    throw Error(ErrorCode::kInvalidInput, "assignments do not cover every labeled sample");
  }
  size_t majority_total = 0;
  for (const auto& [expert, labels] : table) {
    size_t best = 0;
    for (const auto& [label, count] : labels) best = std::max(best, count);
    majority_total += best;
  }
  return static_cast<double>(majority_total) / static_cast<double>(assignments.size());
}

}  // namespace spmoe
