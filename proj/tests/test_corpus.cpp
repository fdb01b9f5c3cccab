#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "spmoe/corpus.hpp"
#include "spmoe/error.hpp"
#include "test_util.hpp"

using namespace spmoe;
using spmoe::testing::CodeOf;

namespace {

std::filesystem::path TempPath(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("spmoe_corpus_" + name);
}


}  // namespace

TEST_CASE("rules applied by hand") {
  const std::map<std::string, std::string> syn = {{"a", "x"}, {"b", "y"}};
  CHECK(ApplyRule(PatternRule{RuleKind::kPrefix, "PFX"}, "a b c", syn) == "PFX a b c");
  CHECK(ApplyRule(PatternRule{RuleKind::kReverse}, "a b c", syn) == "c b a");
  CHECK(ApplyRule(PatternRule{RuleKind::kSynonym}, "a b c", syn) == "x y c");
  CHECK(ApplyRule(PatternRule{RuleKind::kDuplicate}, "a b c", syn) == "a a b b c c");
}

TEST_CASE("two-rule corpus on a single known source") {
  SyntheticSpec spec;
  spec.k_true = 2;
  spec.n_sources = 1;
  spec.rules = {PatternRule{RuleKind::kPrefix, "PFX"}, PatternRule{RuleKind::kReverse}};
  spec.words = {"a", "b", "c"};
  spec.synonyms = {{"a", "a2"}};
  spec.min_length = 3;
  spec.max_length = 3;
  // Force the source "a b c" through BuildCorpus with the resolved rules.
  const SyntheticSpec resolved = spec.Resolved();
  PatternCorpus corpus = BuildCorpus({
      {"a b c", ApplyRule(resolved.rules[0], "a b c", resolved.synonyms), 0},
      {"a b c", ApplyRule(resolved.rules[1], "a b c", resolved.synonyms), 1},
  });
  REQUIRE(corpus.size() == 2);
  CHECK(corpus.pairs[0].target.text == "PFX a b c");
  CHECK(corpus.pairs[1].target.text == "c b a");
  CHECK(*corpus.pairs[0].true_pattern == 0);
  CHECK(*corpus.pairs[1].true_pattern == 1);
  // Token ids are lowercased words.
  CHECK(corpus.vocabulary.Word(corpus.pairs[0].target.tokens[0]) == "pfx");

  // The random generator over a one-sentence space produces the same pairs.
  spec.words = {"a"};
  spec.synonyms = {{"a", "b"}};
  spec.min_length = spec.max_length = 2;
  PatternCorpus gen = GenerateSynthetic(spec);
  REQUIRE(gen.size() == 2);
  CHECK(gen.pairs[0].source.text == "a a");
  CHECK(gen.pairs[0].target.text == "PFX a a");
  CHECK(gen.pairs[1].target.text == "a a");
}

TEST_CASE("synthetic generation is deterministic and balanced") {
  SyntheticSpec spec;
  spec.k_true = 3;
  spec.n_sources = 500;
  spec.seed = 42;
  PatternCorpus a = GenerateSynthetic(spec);
  PatternCorpus b = GenerateSynthetic(spec);
  REQUIRE(a.size() == 1500);
  CHECK(a.vocabulary == b.vocabulary);
  std::array<int, 3> counts{};
  std::set<std::pair<std::string, int>> seen;
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.pairs[i].source == b.pairs[i].source);
    CHECK(a.pairs[i].target == b.pairs[i].target);
    ++counts[static_cast<size_t>(*a.pairs[i].true_pattern)];
    // (source, pattern) determines the target uniquely.
    CHECK(seen.insert({a.pairs[i].source.text, *a.pairs[i].true_pattern}).second);
  }
  CHECK(counts == std::array<int, 3>{500, 500, 500});
  spec.seed = 43;
  CHECK(GenerateSynthetic(spec).pairs[0].source.text != a.pairs[0].source.text);
}

TEST_CASE("invalid synthetic specs") {
  SyntheticSpec spec;
  spec.k_true = 1;
  CHECK(CodeOf([&] { GenerateSynthetic(spec); }) == ErrorCode::kInvalidSpec);
  spec.k_true = 2;
  spec.rules = {PatternRule{RuleKind::kReverse}, PatternRule{RuleKind::kReverse}};
  CHECK(CodeOf([&] { GenerateSynthetic(spec); }) == ErrorCode::kInvalidSpec);
  spec.rules = {PatternRule{RuleKind::kPrefix, "x"}, PatternRule{RuleKind::kPrefix, "X"}};
  CHECK(CodeOf([&] { GenerateSynthetic(spec); }) == ErrorCode::kInvalidSpec);
  spec.rules.clear();
  spec.words = {"a"};
  spec.synonyms = {{"a", "b"}};
  spec.min_length = spec.max_length = 1;
  spec.n_sources = 2;  // only one distinct sentence exists
  CHECK(CodeOf([&] { GenerateSynthetic(spec); }) == ErrorCode::kInvalidSpec);
}

TEST_CASE("corpus file round trip") {
  SyntheticSpec spec;
  spec.k_true = 3;
  spec.n_sources = 20;
  PatternCorpus corpus = GenerateSynthetic(spec);
  const auto path = TempPath("roundtrip.jsonl");
  SaveCorpus(corpus, path);
  PatternCorpus loaded = LoadCorpus(path);
  REQUIRE(loaded.size() == corpus.size());
  CHECK(loaded.vocabulary == corpus.vocabulary);
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(loaded.pairs[i].source.text == corpus.pairs[i].source.text);
    CHECK(loaded.pairs[i].target.tokens == corpus.pairs[i].target.tokens);
    CHECK(loaded.pairs[i].true_pattern == corpus.pairs[i].true_pattern);
  }
  std::filesystem::remove(path);
}

TEST_CASE("corpus loading errors") {
  const auto path = TempPath("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"source": "a b", "target": "b a"})" << '\n'
        << R"({"source": "c d", "target": "d c", "pattern": 1})" << '\n';
  }
  PatternCorpus two = LoadCorpus(path);
  CHECK(two.size() == 2);
  CHECK_FALSE(two.pairs[0].true_pattern.has_value());
  CHECK(two.vocabulary.Id("<pad>") == kPadId);
  CHECK(two.vocabulary.Id("<unk>") == kUnkId);
  CHECK(two.vocabulary.Id("zzz") == kUnkId);

  {
    std::ofstream out(path);
    out << R"({"source": "a b", "target": "b a"})" << '\n' << R"({"source": "c d"})" << '\n';
  }
  try {
    LoadCorpus(path);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "not json\n";
  }
  CHECK(CodeOf([&] { LoadCorpus(path); }) == ErrorCode::kParse);
  { std::ofstream out(path); }
  CHECK(CodeOf([&] { LoadCorpus(path); }) == ErrorCode::kEmptyCorpus);
  std::filesystem::remove(path);
  CHECK(CodeOf([&] { LoadCorpus(path); }) == ErrorCode::kNotFound);
}

TEST_CASE("pattern purity") {
  PatternCorpus corpus;
  for (int i = 0; i < 9; ++i) {
    corpus.pairs.push_back(CorpusPair{{{4}, "a"}, {{4}, "a"}, i % 3});
  }
  std::vector<std::pair<size_t, int>> perfect, renamed, single;
  for (size_t i = 0; i < 9; ++i) {
    perfect.emplace_back(i, static_cast<int>(i % 3));
    renamed.emplace_back(i, static_cast<int>((i + 1) % 3) * 7);
    single.emplace_back(i, 0);
  }
  CHECK(PatternPurity(perfect, corpus) == 1.0);
  CHECK(PatternPurity(renamed, corpus) == 1.0);
  CHECK(PatternPurity(single, corpus) == doctest::Approx(1.0 / 3.0));

  corpus.pairs[0].true_pattern.reset();
  CHECK(CodeOf([&] { PatternPurity(perfect, corpus); }) == ErrorCode::kUnlabeledCorpus);
}

TEST_CASE("random assignments have low purity") {
  // Monte Carlo: random assignment over 3 experts on 1500 balanced labels
  // concentrates near 1/3; 0.45 is far outside its spread.
  PatternCorpus corpus;
  for (int i = 0; i < 1500; ++i) corpus.pairs.push_back(CorpusPair{{{4}, "a"}, {{4}, "a"}, i % 3});
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<size_t, int>> a;
    for (size_t i = 0; i < 1500; ++i) a.emplace_back(i, pick(rng));
    const double purity = PatternPurity(a, corpus);
    CHECK(purity <= 0.45);
    CHECK(purity >= 1.0 / 3.0);
  }
}

TEST_CASE("purity is invariant under expert relabeling") {
  PatternCorpus corpus;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> pick(0, 2);
  for (int i = 0; i < 60; ++i) corpus.pairs.push_back(CorpusPair{{{4}, "a"}, {{4}, "a"}, pick(rng)});
  std::vector<std::pair<size_t, int>> a, b;
  const int perm[3] = {2, 0, 1};
  for (size_t i = 0; i < 60; ++i) {
    const int e = pick(rng);
    a.emplace_back(i, e);
    b.emplace_back(i, perm[e]);
  }
  CHECK(PatternPurity(a, corpus) == PatternPurity(b, corpus));
}
