#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "spmoe/error.hpp"
#include "spmoe/persistence.hpp"
#include "spmoe/training.hpp"
#include "test_util.hpp"

using namespace spmoe;
using spmoe::testing::CodeOf;

namespace {

std::filesystem::path TempPath(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("spmoe_persist_" + name);
}

std::string ReadBytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void WriteBytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ExpertBundle SmallBundle() {
  Vocabulary vocab;
  for (const char* w : {"alpha", "beta", "gamma", "déjà"}) vocab.Add(w);
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(vocab.size());
  cfg.d_model = 8;
  cfg.ffn_dim = 12;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_input_len = 4;
  cfg.max_output_len = 5;
  cfg.num_experts = 3;
  cfg.lambda = 0.25;
  cfg.gamma = 0.75;
  cfg.learning_rate = 0.01;
  cfg.seed = 99;
  ExpertBundle b = InitBundle(cfg, vocab);
  b.step = 1234;
  b.rng_state = 0xdeadbeefcafef00dULL;
  return b;
}

}  // namespace

TEST_CASE("checkpoint round trip is exact") {
  const ExpertBundle b = SmallBundle();
  const auto path = TempPath("rt.ckpt");
  SaveCheckpoint(b, path);
  const ExpertBundle loaded = LoadCheckpoint(path);
  CHECK(loaded.params == b.params);
  CHECK(loaded.vocabulary == b.vocabulary);
  CHECK(loaded.step == b.step);
  CHECK(loaded.rng_state == b.rng_state);
  CHECK(loaded.config.lambda == b.config.lambda);
  CHECK(loaded.config.gamma == b.config.gamma);
  CHECK(loaded.config.learning_rate == b.config.learning_rate);
  CHECK(loaded.config.n_heads == b.config.n_heads);
  CHECK(loaded.config.seed == b.config.seed);
  std::filesystem::remove(path);
}

TEST_CASE("saving twice gives identical bytes") {
  const ExpertBundle b = SmallBundle();
  const auto a = TempPath("a.ckpt"), c = TempPath("c.ckpt");
  SaveCheckpoint(b, a);
  SaveCheckpoint(LoadCheckpoint(a), c);
  CHECK(ReadBytes(a) == ReadBytes(c));
  CHECK(ReadBytes(a).substr(0, 8) == "SPMOECKP");
  std::filesystem::remove(a);
  std::filesystem::remove(c);
}

TEST_CASE("checkpoint loading errors") {
  const ExpertBundle b = SmallBundle();
  const auto path = TempPath("bad.ckpt");
  SaveCheckpoint(b, path);
  const std::string good = ReadBytes(path);

  SUBCASE("unknown version") {
    std::string bytes = good;
    bytes[8] = 7;
    WriteBytes(path, bytes);
    CHECK(CodeOf([&] { LoadCheckpoint(path); }) == ErrorCode::kVersion);
  }
  SUBCASE("bad magic") {
    std::string bytes = good;
    bytes[0] = 'X';
    WriteBytes(path, bytes);
    CHECK(CodeOf([&] { LoadCheckpoint(path); }) == ErrorCode::kCorruptCheckpoint);
  }
  SUBCASE("tampered shape header") {
    std::string bytes = good;
    const std::string name = "embed.token";
    const size_t at = bytes.find(name);
    REQUIRE(at != std::string::npos);
    bytes[at + name.size()] = static_cast<char>(bytes[at + name.size()] + 1);  // rows
    WriteBytes(path, bytes);
    CHECK(CodeOf([&] { LoadCheckpoint(path); }) == ErrorCode::kCorruptCheckpoint);
  }
  SUBCASE("truncated at every tenth byte") {
    for (size_t len = 0; len < good.size(); len += good.size() / 10) {
      WriteBytes(path, good.substr(0, len));
      CHECK(CodeOf([&] { LoadCheckpoint(path); }) == ErrorCode::kCorruptCheckpoint);
    }
    WriteBytes(path, good.substr(0, good.size() - 1));
    CHECK(CodeOf([&] { LoadCheckpoint(path); }) == ErrorCode::kCorruptCheckpoint);
  }
  SUBCASE("trailing bytes") {
    WriteBytes(path, good + "x");
    CHECK(CodeOf([&] { LoadCheckpoint(path); }) == ErrorCode::kCorruptCheckpoint);
  }
  std::filesystem::remove(path);
  CHECK(CodeOf([&] { LoadCheckpoint(path); }) == ErrorCode::kNotFound);
}

TEST_CASE("metric report json round trip") {
  metrics::MetricReport r;
  r.bleu = std::vector<double>{0.5, 0.25, 0.125, 0.1};
  r.p_bleu = {0.9, 0.8, 0.7, 0.6};
  r.pd = {0.1, 0.2, 0.3, 1.0 / 3.0};
  r.distinct_1 = 0.4;
  r.records = 12;
  const nlohmann::ordered_json j = ReportToJson(r);
  CHECK(j.contains("bleu_1"));
  CHECK(j.contains("p_bleu_4"));
  CHECK(j.contains("pd_2"));
  CHECK(j["distinct_1"] == 0.4);
  const metrics::MetricReport back = ReportFromJson(nlohmann::json::parse(j.dump()));
  CHECK(back.bleu == r.bleu);
  CHECK(back.p_bleu == r.p_bleu);
  CHECK(back.pd == r.pd);
  CHECK(back.distinct_1 == r.distinct_1);
  CHECK(back.records == r.records);

  r.bleu.reset();
  CHECK_FALSE(ReportFromJson(nlohmann::json::parse(ReportToJson(r).dump())).bleu.has_value());
}
