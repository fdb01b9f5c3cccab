#include "spmoe/persistence.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "spmoe/error.hpp"

namespace spmoe {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'P', 'M', 'O', 'E', 'C', 'K', 'P'};
constexpr std::array<char, 4> kEnd = {'E', 'N', 'D', '!'};

class Writer {
 public:
  void Bytes(const void* data, size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void U32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void U64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void I32(int32_t v) { U32(static_cast<uint32_t>(v)); }
  void F64(double v) { U64(std::bit_cast<uint64_t>(v)); }
  void Str(const std::string& s) {
    U32(static_cast<uint32_t>(s.size()));
    Bytes(s.data(), s.size());
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string where) : buf_(std::move(data)), where_(std::move(where)) {}

  void Bytes(void* out, size_t n) {
    Need(n);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  uint32_t U32() {
    Need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t U64() {
    Need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  int32_t I32() { return static_cast<int32_t>(U32()); }
  double F64() { return std::bit_cast<double>(U64()); }
  std::string Str() {
    const uint32_t n = U32();
    Need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  size_t remaining() const { return buf_.size() - pos_; }
  [[noreturn]] void Corrupt(const std::string& what) const {
    throw Error(ErrorCode::kCorruptCheckpoint, where_ + ": " + what);
  }

 private:
  void Need(size_t n) const {
    if (buf_.size() - pos_ < n) Corrupt("truncated at byte " + std::to_string(pos_));
  }
  std::vector<char> buf_;
  std::string where_;
  size_t pos_ = 0;
};

}  // namespace

void SaveCheckpoint(const ExpertBundle& bundle, const std::filesystem::path& path) {
  const ModelConfig& c = bundle.config;
  Writer w;
  w.Bytes(kMagic.data(), kMagic.size());
  w.U32(kCheckpointVersion);
  for (int v : {c.vocab_size, c.d_model, c.ffn_dim, c.n_layers, c.n_heads, c.max_input_len,
                c.max_output_len, c.num_experts}) {
    w.I32(v);
  }
  w.F64(c.lambda);
  w.F64(c.gamma);
  w.F64(c.learning_rate);
  w.U64(c.seed);
  w.U64(bundle.step);
  w.U64(bundle.rng_state);
  w.U32(static_cast<uint32_t>(bundle.vocabulary.size()));
  for (const std::string& word : bundle.vocabulary.words()) w.Str(word);
  w.U32(static_cast<uint32_t>(bundle.params.size()));
  for (const NamedTensor& t : bundle.params.tensors()) {
    w.Str(t.name);
    w.U32(static_cast<uint32_t>(t.value.rows()));
    w.U32(static_cast<uint32_t>(t.value.cols()));
    w.U64(static_cast<uint64_t>(t.value.size()) * 8u);
    for (Eigen::Index i = 0; i < t.value.size(); ++i) w.F64(t.value.data()[i]);
  }
  w.Bytes(kEnd.data(), kEnd.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

ExpertBundle LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open checkpoint " + path.string());
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());

  std::array<char, 8> magic{};
  r.Bytes(magic.data(), magic.size());
  if (magic != kMagic) r.Corrupt("bad magic bytes");
  const uint32_t version = r.U32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersion, path.string() + ": unsupported checkpoint version " +
                                         std::to_string(version));
  }

  ExpertBundle bundle;
  ModelConfig& c = bundle.config;
  c.vocab_size = r.I32();
  c.d_model = r.I32();
  c.ffn_dim = r.I32();
  c.n_layers = r.I32();
  c.n_heads = r.I32();
  c.max_input_len = r.I32();
  c.max_output_len = r.I32();
  c.num_experts = r.I32();
  c.lambda = r.F64();
  c.gamma = r.F64();
  c.learning_rate = r.F64();
  c.seed = r.U64();
  bundle.step = r.U64();
  bundle.rng_state = r.U64();

  const uint32_t n_words = r.U32();
  if (n_words > r.remaining()) r.Corrupt("vocabulary count exceeds file size");
  std::vector<std::string> words;
  for (uint32_t i = 0; i < n_words; ++i) words.push_back(r.Str());
  try {
    bundle.vocabulary = Vocabulary(words);
  } catch (const Error& e) {
    r.Corrupt(e.what());
  }

  const uint32_t n_tensors = r.U32();
  if (n_tensors > r.remaining()) r.Corrupt("tensor count exceeds file size");
  for (uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.Str();
    const uint32_t rows = r.U32();
    const uint32_t cols = r.U32();
    const uint64_t bytes = r.U64();
    if (bytes != static_cast<uint64_t>(rows) * cols * 8u) {
      r.Corrupt("tensor " + name + " shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                " does not match payload of " + std::to_string(bytes) + " bytes");
    }
    if (bytes > r.remaining()) r.Corrupt("tensor " + name + " payload truncated");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.F64();
    try {
      bundle.params.Add(std::move(name), std::move(m));
    } catch (const Error& e) {
      r.Corrupt(e.what());
    }
  }
  std::array<char, 4> end{};
  r.Bytes(end.data(), end.size());
  if (end != kEnd) r.Corrupt("missing end marker");
  if (r.remaining() != 0) r.Corrupt("trailing bytes after end marker");

  try {
    bundle.ValidateShapes();
  } catch (const Error& e) {
    r.Corrupt(e.what());
  }
  return bundle;
}

nlohmann::ordered_json ReportToJson(const metrics::MetricReport& report) {
  nlohmann::ordered_json j;
  auto put = [&](const std::string& prefix, const std::vector<double>& values) {
    for (size_t i = 0; i < values.size(); ++i) j[prefix + std::to_string(i + 1)] = values[i];
  };
  if (report.bleu) put("bleu_", *report.bleu);
  put("p_bleu_", report.p_bleu);
  put("pd_", report.pd);
  j["distinct_1"] = report.distinct_1;
  j["records"] = report.records;
  return j;
}

metrics::MetricReport ReportFromJson(const nlohmann::json& j) {
  metrics::MetricReport report;
  auto get = [&](const std::string& prefix) {
    std::vector<double> out;
    for (int n = 1; j.contains(prefix + std::to_string(n)); ++n) {
      out.push_back(j.at(prefix + std::to_string(n)).get<double>());
    }
    return out;
  };
  if (j.contains("bleu_1")) report.bleu = get("bleu_");
  report.p_bleu = get("p_bleu_");
  report.pd = get("pd_");
  report.distinct_1 = j.at("distinct_1").get<double>();
  report.records = j.value("records", size_t{0});
  return report;
}

void SaveReport(const metrics::MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write report " + path.string());
  out << ReportToJson(report).dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace spmoe
