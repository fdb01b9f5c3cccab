#include "spmoe/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "spmoe/error.hpp"

namespace spmoe {

namespace {

using ad::Matrix;
using ad::Var;

constexpr double kMaskedScore = -1e9;

std::string Layer(const char* stack, int l) { return std::string(stack) + "." + std::to_string(l) + "."; }

}  // namespace

void ModelConfig::Validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidParameter, what); };
  if (vocab_size <= kNumReserved) fail("vocab_size must exceed the reserved tokens");
  if (d_model < 1 || ffn_dim < 1 || n_layers < 1) fail("model dimensions must be positive");
  if (n_heads < 1 || d_model % n_heads != 0) fail("n_heads must divide d_model");
  if (max_input_len < 1 || max_output_len < 2) fail("sequence lengths too small");
  if (num_experts < 2) fail("K must be at least 2");
  if (!(lambda < 1.0) || !std::isfinite(lambda)) fail("lambda must be finite and < 1");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be >= 0");
  if (!(learning_rate >= 0.0)) fail("learning rate must be >= 0");
}

void ParameterSet::Add(std::string name, Eigen::MatrixXd value) {
  if (index_.count(name)) throw Error(ErrorCode::kInternal, "duplicate parameter " + name);
  index_.emplace(name, tensors_.size());
  tensors_.push_back(NamedTensor{std::move(name), std::move(value)});
}

size_t ParameterSet::IndexOf(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kNotFound, "no parameter named " + name);
  return it->second;
}

Eigen::MatrixXd& ParameterSet::Get(const std::string& name) { return tensors_[IndexOf(name)].value; }

const Eigen::MatrixXd& ParameterSet::Get(const std::string& name) const {
  return tensors_[IndexOf(name)].value;
}

size_t ParameterSet::NumScalars() const {
  size_t n = 0;
  for (const NamedTensor& t : tensors_) n += static_cast<size_t>(t.value.size());
  return n;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      return false;
    }
    if (a.value != b.value) return false;
  }
  return true;
}

PatternPooler ExpertBundle::Pooler() const {
  PatternPooler pooler;
  pooler.w_enc = params.Get("pooler.w_enc").row(0);
  pooler.w_dec = params.Get("pooler.w_dec").row(0);
  pooler.w = params.Get("pooler.w");
  pooler.b = params.Get("pooler.b").row(0);
  return pooler;
}

void ExpertBundle::SetPooler(const PatternPooler& pooler) {
  auto assign = [&](const std::string& name, const Eigen::MatrixXd& value) {
    Eigen::MatrixXd& dst = params.Get(name);
    if (dst.rows() != value.rows() || dst.cols() != value.cols()) {
      throw Error(ErrorCode::kShape, "pooler tensor " + name + " has the wrong shape");
    }
    dst = value;
  };
  assign("pooler.w_enc", pooler.w_enc);
  assign("pooler.w_dec", pooler.w_dec);
  assign("pooler.w", pooler.w);
  assign("pooler.b", pooler.b);
}

std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> ParameterLayout(
    const ModelConfig& c) {
  const Eigen::Index d = c.d_model;
  const Eigen::Index f = c.ffn_dim;
  const Eigen::Index v = c.vocab_size;
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> out;
  auto add = [&](std::string name, Eigen::Index r, Eigen::Index cols) {
    out.emplace_back(std::move(name), std::make_pair(r, cols));
  };
  auto add_ln = [&](const std::string& prefix) {
    add(prefix + ".g", 1, d);
    add(prefix + ".b", 1, d);
  };
  auto add_attn = [&](const std::string& prefix) {
    for (const char* m : {".wq", ".wk", ".wv", ".wo"}) add(prefix + m, d, d);
  };
  auto add_ffn = [&](const std::string& prefix) {
    add(prefix + ".w1", d, f);
    add(prefix + ".b1", 1, f);
    add(prefix + ".w2", f, d);
    add(prefix + ".b2", 1, d);
  };
  add("embed.token", v, d);
  add("encoder.pos", c.max_input_len, d);
  add("decoder.pos", c.max_output_len, d);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = Layer("encoder", l);
    add_ln(p + "ln1");
    add_attn(p + "attn");
    add_ln(p + "ln2");
    add_ffn(p + "ffn");
  }
  add_ln("encoder.ln");
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = Layer("decoder", l);
    add_ln(p + "ln1");
    add_attn(p + "self");
    add_ln(p + "ln2");
    add_attn(p + "cross");
    add_ln(p + "ln3");
    add_ffn(p + "ffn");
  }
  add_ln("decoder.ln");
  for (int k = 0; k < c.num_experts; ++k) {
    add("head." + std::to_string(k) + ".w", d, v);
    add("head." + std::to_string(k) + ".b", 1, v);
  }
  add("pooler.w_enc", 1, c.max_input_len);
  add("pooler.w_dec", 1, c.max_output_len);
  add("pooler.w", 2 * d, c.num_experts);
  add("pooler.b", 1, c.num_experts);
  return out;
}

void ExpertBundle::ValidateShapes() const {
  config.Validate();
  if (vocabulary.size() != config.vocab_size) {
    throw Error(ErrorCode::kShape, "vocabulary size differs from configuration");
  }
  const auto layout = ParameterLayout(config);
  if (layout.size() != params.size()) throw Error(ErrorCode::kShape, "parameter count mismatch");
  for (size_t i = 0; i < layout.size(); ++i) {
    const NamedTensor& t = params.tensors()[i];
    if (t.name != layout[i].first || t.value.rows() != layout[i].second.first ||
        t.value.cols() != layout[i].second.second) {
      throw Error(ErrorCode::kShape, "parameter " + t.name + " does not match layout entry " +
                                         layout[i].first);
    }
  }
}

ExpertBundle InitBundle(const ModelConfig& config, const Vocabulary& vocabulary) {
  config.Validate();
  if (vocabulary.size() != config.vocab_size) {
    throw Error(ErrorCode::kInvalidParameter, "vocab_size differs from the vocabulary");
  }
  ExpertBundle bundle;
  bundle.config = config;
  bundle.vocabulary = vocabulary;
  bundle.rng_state = config.seed;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random = [&](Eigen::Index r, Eigen::Index c, double std) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = std * normal(rng);
    }
    return m;
  };
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };

  for (const auto& [name, shape] : ParameterLayout(config)) {
    const auto [r, c] = shape;
    Eigen::MatrixXd value;
    if (name == "pooler.w_enc" || name == "pooler.w_dec") {
      value = Eigen::MatrixXd::Constant(r, c, 1.0 / static_cast<double>(c)) + random(r, c, 0.1 / c);
    } else if (name == "pooler.w") {
      value = random(r, c, 0.1 / std::sqrt(static_cast<double>(r)));
    } else if (name == "embed.token" || ends_with(name, ".pos")) {
      value = random(r, c, 1.0);
    } else if (ends_with(name, ".g")) {
      value = Eigen::MatrixXd::Ones(r, c);
    } else if (name.rfind("head.", 0) == 0) {
      // Heads start identical; the router breaks the tie.
      value = Eigen::MatrixXd::Zero(r, c);
    } else if (r == 1) {
      value = Eigen::MatrixXd::Zero(r, c);  // biases
    } else {
      value = random(r, c, 1.0 / std::sqrt(static_cast<double>(r)));
    }
    bundle.params.Add(name, std::move(value));
  }
  return bundle;
}

void ApplyAdversarialInit(ExpertBundle& bundle, double margin) {
  Eigen::MatrixXd& b = bundle.params.Get("pooler.b");
  b.setZero();
  b(0, 0) = margin;
}

BoundParameters::BoundParameters(ad::Tape& tape, const ParameterSet& params) : params_(&params) {
  vars_.reserve(params.size());
  for (const NamedTensor& t : params.tensors()) {
    vars_.push_back(tape.recording() ? tape.Leaf(t.value) : tape.Constant(t.value));
  }
}

Var BoundParameters::operator[](const std::string& name) const { return vars_[params_->IndexOf(name)]; }

std::vector<int> PadTo(std::span<const int> ids, int length) {
  if (static_cast<int>(ids.size()) > length) {
    throw Error(ErrorCode::kShape, "sequence of " + std::to_string(ids.size()) +
                                       " tokens exceeds the configured length " + std::to_string(length));
  }
  std::vector<int> out(ids.begin(), ids.end());
  out.resize(static_cast<size_t>(length), kPadId);
  return out;
}

namespace {

Var LayerNorm(const BoundParameters& p, const std::string& prefix, Var x) {
  return ad::LayerNormRows(x, p[prefix + ".g"], p[prefix + ".b"]);
}

Var Attention(const BoundParameters& p, const std::string& prefix, int n_heads, Var query_in,
              Var memory, const Matrix& mask) {
  const Var q = ad::MatMul(query_in, p[prefix + ".wq"]);
  const Var k = ad::MatMul(memory, p[prefix + ".wk"]);
  const Var v = ad::MatMul(memory, p[prefix + ".wv"]);
  const Eigen::Index d = q.cols();
  const Eigen::Index dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Var combined;
  for (int h = 0; h < n_heads; ++h) {
    Var qh = n_heads == 1 ? q : ad::SliceCols(q, h * dh, dh);
    Var kh = n_heads == 1 ? k : ad::SliceCols(k, h * dh, dh);
    Var vh = n_heads == 1 ? v : ad::SliceCols(v, h * dh, dh);
    Var weights = ad::SoftmaxRows(ad::Scale(ad::MatMulBT(qh, kh), scale), &mask);
    Var out = ad::MatMul(weights, vh);
    combined = h == 0 ? out : ad::ConcatCols(combined, out);
  }
  return ad::MatMul(combined, p[prefix + ".wo"]);
}

Var FeedForward(const BoundParameters& p, const std::string& prefix, Var x) {
  Var h = ad::Relu(ad::AddRow(ad::MatMul(x, p[prefix + ".w1"]), p[prefix + ".b1"]));
  return ad::AddRow(ad::MatMul(h, p[prefix + ".w2"]), p[prefix + ".b2"]);
}

Matrix KeyMask(Eigen::Index rows, Eigen::Index cols, int valid_keys) {
  Matrix m = Matrix::Zero(rows, cols);
  for (Eigen::Index j = valid_keys; j < cols; ++j) m.col(j).setConstant(kMaskedScore);
  return m;
}

}  // namespace

Var EncodeSource(const BoundParameters& p, const ModelConfig& cfg, std::span<const int> source) {
  if (source.empty()) throw Error(ErrorCode::kInvalidInput, "empty source sequence");
  for (int id : source) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw Error(ErrorCode::kInvalidToken, "source token id " + std::to_string(id) + " out of vocabulary");
    }
  }
  const std::vector<int> ids = PadTo(source, cfg.max_input_len);
  const int len = static_cast<int>(source.size());
  Var x = ad::Add(ad::Gather(p["embed.token"], ids), p["encoder.pos"]);
  const Matrix mask = KeyMask(cfg.max_input_len, cfg.max_input_len, len);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = Layer("encoder", l);
    Var h = LayerNorm(p, pre + "ln1", x);
    x = ad::Add(x, Attention(p, pre + "attn", cfg.n_heads, h, h, mask));
    x = ad::Add(x, FeedForward(p, pre + "ffn", LayerNorm(p, pre + "ln2", x)));
  }
  return LayerNorm(p, "encoder.ln", x);
}

Var DecodeStates(const BoundParameters& p, const ModelConfig& cfg, Var memory, int source_len,
                 std::span<const int> decoder_inputs) {
  for (int id : decoder_inputs) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw Error(ErrorCode::kInvalidToken, "target token id " + std::to_string(id) + " out of vocabulary");
    }
  }
  const std::vector<int> ids = PadTo(decoder_inputs, cfg.max_output_len);
  const Eigen::Index lo = cfg.max_output_len;
  Var x = ad::Add(ad::Gather(p["embed.token"], ids), p["decoder.pos"]);
  Matrix causal = Matrix::Zero(lo, lo);
  for (Eigen::Index i = 0; i < lo; ++i) {
    for (Eigen::Index j = i + 1; j < lo; ++j) causal(i, j) = kMaskedScore;
  }
  const Matrix cross = KeyMask(lo, cfg.max_input_len, source_len);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = Layer("decoder", l);
    Var h = LayerNorm(p, pre + "ln1", x);
    x = ad::Add(x, Attention(p, pre + "self", cfg.n_heads, h, h, causal));
    x = ad::Add(x, Attention(p, pre + "cross", cfg.n_heads, LayerNorm(p, pre + "ln2", x), memory, cross));
    x = ad::Add(x, FeedForward(p, pre + "ffn", LayerNorm(p, pre + "ln3", x)));
  }
  return LayerNorm(p, "decoder.ln", x);
}

Var HeadLogits(const BoundParameters& p, Var dec_states, int expert, Eigen::Index rows) {
  const std::string pre = "head." + std::to_string(expert);
  Var states = rows == dec_states.rows() ? dec_states : ad::SliceRows(dec_states, 0, rows);
  return ad::AddRow(ad::MatMul(states, p[pre + ".w"]), p[pre + ".b"]);
}

}  // namespace spmoe
