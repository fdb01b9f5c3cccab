#include "spmoe/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spmoe/corpus.hpp"
#include "spmoe/error.hpp"
#include "spmoe/metrics.hpp"
#include "spmoe/persistence.hpp"
#include "spmoe/sparse_projection.hpp"
#include "spmoe/training.hpp"

namespace spmoe {

namespace {

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

LogLevel LevelFromEnv() {
  const char* v = std::getenv("SPMOE_LOG");
  if (v == nullptr) return LogLevel::kInfo;
  const std::string s(v);
  if (s == "quiet" || s == "0") return LogLevel::kQuiet;
  if (s == "debug" || s == "2") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

// Thrown for flag combinations CLI11 cannot express.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Streams {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
  LogLevel level;

  std::ostream* Log(LogLevel at) const { return level >= at ? &err : nullptr; }
};

std::string FormatVector(const Eigen::VectorXd& v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision);
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<double> ParseNumberList(const std::string& text) {
  std::vector<double> out;
  std::string cleaned = text;
  std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
  std::istringstream is(cleaned);
  std::string tok;
  while (is >> tok) {
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw UsageError("not a number: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  int patterns = 3;
  int sources = 500;
  uint64_t seed = 7;
  int min_length = 4;
  int max_length = 4;
  std::string out;
};

int CmdSynth(const SynthArgs& a, const Streams& io) {
  SyntheticSpec spec;
  spec.k_true = a.patterns;
  spec.n_sources = a.sources;
  spec.seed = a.seed;
  spec.min_length = a.min_length;
  spec.max_length = a.max_length;
  const SyntheticSpec resolved = spec.Resolved();
  const PatternCorpus corpus = GenerateSynthetic(resolved);
  SaveCorpus(corpus, a.out);
  io.out << "wrote " << corpus.size() << " pairs (" << a.sources << " sources x " << a.patterns
         << " patterns) to " << a.out << "\n";
  for (size_t k = 0; k < resolved.rules.size(); ++k) {
    const PatternRule& r = resolved.rules[k];
    io.out << "  pattern " << k << ": " << r.Name() << "  e.g. \"" << corpus.pairs[k].source.text << "\" -> \""
           << corpus.pairs[k].target.text << "\"\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string corpus;
  std::string out;
  int experts = 3;
  double lambda = 0.5;
  double gamma = 1.0;
  int d_model = 64;
  int ffn_dim = 0;  // 0: 2 * d_model
  int layers = 2;
  int heads = 1;
  int epochs = 15;
  int batch_size = 32;
  double learning_rate = 0.002;
  std::string optimizer = "adam";
  uint64_t seed = 1;
  std::optional<double> adversarial_margin;
};

void ValidateTrain(const TrainArgs& a) {
  if (a.experts < 2) throw UsageError("--experts must be >= 2");
  if (!(a.lambda < 1.0)) throw UsageError("--lambda must be < 1");
  if (!(a.gamma >= 0.0)) throw UsageError("--gamma must be >= 0");
  if (a.batch_size < 1) throw UsageError("--batch-size must be >= 1");
  if (a.epochs < 0) throw UsageError("--epochs must be >= 0");
  if (!(a.learning_rate >= 0.0)) throw UsageError("--lr must be >= 0");
  if (a.d_model < 1 || a.layers < 1 || a.heads < 1 || a.d_model % a.heads != 0) {
    throw UsageError("--d-model must be positive and divisible by --heads");
  }
}

int CmdTrain(const TrainArgs& a, const Streams& io) {
  ValidateTrain(a);
  const PatternCorpus corpus = LoadCorpus(a.corpus);
  const std::vector<TrainingExample> examples = ExamplesFrom(corpus);

  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(corpus.vocabulary.size());
  cfg.d_model = a.d_model;
  cfg.ffn_dim = a.ffn_dim > 0 ? a.ffn_dim : 2 * a.d_model;
  cfg.n_layers = a.layers;
  cfg.n_heads = a.heads;
  cfg.max_input_len = corpus.MaxSourceLength();
  cfg.max_output_len = corpus.MaxTargetLength() + 1;
  cfg.num_experts = a.experts;
  cfg.lambda = a.lambda;
  cfg.gamma = a.gamma;
  cfg.learning_rate = a.learning_rate;
  cfg.seed = a.seed;
  ExpertBundle bundle = InitBundle(cfg, corpus.vocabulary);
  if (a.adversarial_margin) ApplyAdversarialInit(bundle, *a.adversarial_margin);
  bundle.rng_state = a.seed;

  const int n = static_cast<int>(examples.size());
  const int steps_per_epoch = (n + a.batch_size - 1) / a.batch_size;
  TrainOptions opts;
  opts.steps = a.epochs * steps_per_epoch;
  opts.batch_size = a.batch_size;
  opts.learning_rate = a.learning_rate;
  opts.optimizer = a.optimizer == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
  opts.shuffle_seed = a.seed;

  if (auto* log = io.Log(LogLevel::kInfo)) {
    *log << "training on " << n << " pairs: K=" << cfg.num_experts << " lambda=" << cfg.lambda
         << " gamma=" << cfg.gamma << " d_model=" << cfg.d_model << " epochs=" << a.epochs << " ("
         << opts.steps << " steps) optimizer=" << a.optimizer << " lr=" << a.learning_rate << "\n";
  }

  double sum_rec = 0.0, sum_bal = 0.0;
  Eigen::VectorXd sum_usage = Eigen::VectorXd::Zero(cfg.num_experts);
  int in_epoch = 0;
  auto on_step = [&](const StepLog& s) {
    sum_rec += s.report.l_rec;
    sum_bal += s.report.l_balance;
    sum_usage += s.report.usage;
    ++in_epoch;
    if (auto* log = io.Log(LogLevel::kDebug)) {
      *log << "step " << s.step + 1 << " l_final " << s.report.l_final << "\n";
    }
    if ((s.step + 1) % steps_per_epoch != 0) return;
    const int epoch = (s.step + 1) / steps_per_epoch;
    std::ostringstream line;
    line << std::setprecision(5) << "epoch " << epoch << " l_rec " << sum_rec / in_epoch << " l_balance "
         << sum_bal / in_epoch << " usage " << FormatVector(sum_usage / in_epoch, 4);
    if (corpus.labeled()) {
      const std::vector<int> assigned = AssignExperts(bundle, examples);
      std::vector<std::pair<size_t, int>> pairs;
      for (size_t i = 0; i < assigned.size(); ++i) pairs.emplace_back(i, assigned[i]);
      line << " purity " << PatternPurity(pairs, corpus);
    }
    io.out << line.str() << "\n" << std::flush;
    SaveCheckpoint(bundle, a.out);
    sum_rec = sum_bal = 0.0;
    sum_usage.setZero();
    in_epoch = 0;
  };

  SaveCheckpoint(bundle, a.out);
  try {
    Train(bundle, examples, opts, on_step);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDivergedTraining) throw;
    // The bundle still holds the last finite parameters.
    SaveCheckpoint(bundle, a.out);
    io.err << "error: " << e.what() << "\nlast good checkpoint (step " << bundle.step << ") kept at " << a.out
           << "\n";
    return kExitRuntime;
  }
  SaveCheckpoint(bundle, a.out);
  io.out << "checkpoint written to " << a.out << " after " << bundle.step << " steps\n";
  return kExitOk;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string checkpoint;
  std::string input;
  std::string corpus;
  std::string out;
  int max_len = 0;  // 0: model output length
};

struct GenerateInput {
  std::string text;
  std::vector<std::string> references;
};

std::vector<GenerateInput> ReadGenerateInputs(const GenerateArgs& a, const Streams& io) {
  std::vector<GenerateInput> inputs;
  if (!a.corpus.empty()) {
    // Each distinct source once, with every target of that source as a reference.
    const PatternCorpus corpus = LoadCorpus(a.corpus);
    std::map<std::string, size_t> index;
    for (const CorpusPair& p : corpus.pairs) {
      auto [it, fresh] = index.emplace(p.source.text, inputs.size());
      if (fresh) inputs.push_back({p.source.text, {}});
      inputs[it->second].references.push_back(p.target.text);
    }
    return inputs;
  }
  std::ifstream file;
  std::istream* src = &io.in;
  if (a.input != "-") {
    file.open(a.input);
    if (!file) throw Error(ErrorCode::kNotFound, "cannot open input file: " + a.input);
    src = &file;
  }
  std::string line;
  while (std::getline(*src, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    inputs.push_back({line, {}});
  }
  return inputs;
}

int CmdGenerate(const GenerateArgs& a, const Streams& io) {
  if (a.input.empty() == a.corpus.empty()) throw UsageError("give exactly one of --input or --corpus");
  if (a.max_len < 0) throw UsageError("--max-len must be >= 0");
  const ExpertBundle bundle = LoadCheckpoint(a.checkpoint);
  const std::vector<GenerateInput> inputs = ReadGenerateInputs(a, io);
  if (inputs.empty()) throw Error(ErrorCode::kEmptyInput, "no inputs to generate from");

  std::ofstream file;
  std::ostream* sink = &io.out;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw Error(ErrorCode::kIo, "cannot write " + a.out);
    sink = &file;
  }
  const int max_len = a.max_len > 0 ? a.max_len : bundle.config.max_output_len;
  int unknown = 0, clipped = 0, truncated = 0;
  for (const GenerateInput& in : inputs) {
    int unk_here = 0;
    TokenSequence seq = Encode(bundle.vocabulary, in.text, &unk_here);
    unknown += unk_here;
    if (seq.tokens.empty()) throw Error(ErrorCode::kInvalidInput, "input has no tokens: '" + in.text + "'");
    if (static_cast<int>(seq.tokens.size()) > bundle.config.max_input_len) {
      seq.tokens.resize(static_cast<size_t>(bundle.config.max_input_len));
      ++clipped;
    }
    const GenerationSet g = GenerateAllPatterns(bundle, seq.tokens, max_len);
    nlohmann::ordered_json rec;
    rec["input"] = in.text;
    rec["outputs"] = nlohmann::json::array();
    for (size_t k = 0; k < g.outputs.size(); ++k) {
      rec["outputs"].push_back(Decode(bundle.vocabulary, g.outputs[k]));
      truncated += g.truncated[k] ? 1 : 0;
    }
    rec["references"] = in.references;
    *sink << rec.dump() << "\n";
  }
  if (auto* log = io.Log(LogLevel::kInfo)) {
    *log << "generated " << inputs.size() << " records with " << bundle.config.num_experts << " outputs each\n";
    if (unknown > 0) *log << "warning: " << unknown << " unknown tokens mapped to <unk>\n";
    if (clipped > 0) *log << "warning: " << clipped << " inputs cut to " << bundle.config.max_input_len << " tokens\n";
    if (truncated > 0) *log << "warning: " << truncated << " outputs hit the length limit\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string generations;
  std::string references;
  std::string out;
  int order = 4;
};

std::vector<std::string> StringList(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw Error(ErrorCode::kParse, where + ": expected a list of strings");
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw Error(ErrorCode::kParse, where + ": expected a list of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::vector<nlohmann::json> ReadJsonLines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kParse, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

int CmdEval(const EvalArgs& a, const Streams& io) {
  if (a.order < 1) throw UsageError("--order must be >= 1");
  const std::vector<nlohmann::json> rows = ReadJsonLines(a.generations);
  if (rows.empty()) throw Error(ErrorCode::kEmptyInput, "no records in " + a.generations);
  std::vector<metrics::EvalRecord> records;
  for (size_t i = 0; i < rows.size(); ++i) {
    const std::string where = a.generations + ": record " + std::to_string(i + 1);
    const nlohmann::json& r = rows[i];
    if (!r.is_object() || !r.contains("outputs")) throw Error(ErrorCode::kParse, where + ": missing \"outputs\"");
    metrics::EvalRecord rec;
    rec.input = r.value("input", std::string());
    rec.outputs = StringList(r["outputs"], where);
    if (r.contains("references")) rec.references = StringList(r["references"], where);
    records.push_back(std::move(rec));
  }
  if (!a.references.empty()) {
    const std::vector<nlohmann::json> refs = ReadJsonLines(a.references);
    if (refs.size() != records.size()) {
      const size_t first = std::min(refs.size(), records.size()) + 1;
      throw Error(ErrorCode::kInvalidInput,
                  "record/reference count mismatch (" + std::to_string(records.size()) + " records, " +
                      std::to_string(refs.size()) + " references): first unmatched line is " +
                      std::to_string(first));
    }
    for (size_t i = 0; i < refs.size(); ++i) {
      const std::string where = a.references + ": line " + std::to_string(i + 1);
      const nlohmann::json& r = refs[i];
      records[i].references = r.is_object() ? StringList(r.value("references", nlohmann::json()), where)
                              : r.is_string() ? std::vector<std::string>{r.get<std::string>()}
                                              : StringList(r, where);
    }
  }
  const metrics::MetricReport report = metrics::Evaluate(records, a.order);

  io.out << std::fixed << std::setprecision(4);
  io.out << "records     " << report.records << "\n";
  auto row = [&](const char* name, const std::vector<double>& v) {
    io.out << name;
    for (size_t n = 0; n < v.size(); ++n) io.out << "  " << n + 1 << ":" << v[n];
    io.out << "\n";
  };
  if (report.bleu) row("BLEU       ", *report.bleu);
  row("P-BLEU     ", report.p_bleu);
  row("PD         ", report.pd);
  io.out << "DISTINCT-1  " << report.distinct_1 << "\n";
  io.out.unsetf(std::ios::floatfield);
  if (!a.out.empty()) SaveReport(report, a.out);
  return kExitOk;
}

// ---------------------------------------------------------------- project

struct ProjectArgs {
  std::string z;
  double lambda = 0.5;
};

int CmdProject(const ProjectArgs& a, const Streams& io) {
  if (!(a.lambda < 1.0)) throw UsageError("--lambda must be < 1");
  std::vector<double> z;
  if (!a.z.empty()) {
    z = ParseNumberList(a.z);
  } else {
    std::ostringstream all;
    all << io.in.rdbuf();
    z = ParseNumberList(all.str());
  }
  if (z.empty()) throw UsageError("no logits given (use --z or standard input)");
  const ProjectionSolution sol =
      SparsegenLin(LogitVector(Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()))),
                   a.lambda);
  io.out << std::setprecision(4) << std::fixed;
  io.out << "p       ";
  for (Eigen::Index i = 0; i < sol.distribution.size(); ++i) io.out << (i ? "," : "") << sol.distribution[i];
  io.out << "\nsupport ";
  for (size_t i = 0; i < sol.support.size(); ++i) io.out << (i ? "," : "") << sol.support[i];
  io.out << "\ntau     " << sol.threshold << "\n";
  io.out.unsetf(std::ios::floatfield);
  return kExitOk;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse mixture of pattern experts: synthesize data, train, generate, evaluate."};
  app.name("spmoe");
  app.require_subcommand(1, 1);

  SynthArgs synth;
  CLI::App* c_synth = app.add_subcommand("synth", "Write a synthetic multi-pattern corpus");
  c_synth->add_option("--patterns", synth.patterns, "Number of pattern rules")->capture_default_str();
  c_synth->add_option("--sources", synth.sources, "Number of distinct sources")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  c_synth->add_option("--min-length", synth.min_length, "Shortest source")->capture_default_str();
  c_synth->add_option("--max-length", synth.max_length, "Longest source")->capture_default_str();
  c_synth->add_option("--out", synth.out, "Output JSONL corpus")->required();

  TrainArgs train;
  CLI::App* c_train = app.add_subcommand("train", "Train a mixture model and write a checkpoint");
  c_train->add_option("--corpus", train.corpus, "Training corpus (JSONL)")->required();
  c_train->add_option("--out", train.out, "Checkpoint path")->required();
  c_train->add_option("--experts,-K", train.experts, "Number of pattern heads")->capture_default_str();
  c_train->add_option("--lambda", train.lambda, "Sparsity of the pattern distribution")->capture_default_str();
  c_train->add_option("--gamma", train.gamma, "Load-balance weight")->capture_default_str();
  c_train->add_option("--d-model", train.d_model, "Hidden width")->capture_default_str();
  c_train->add_option("--ffn-dim", train.ffn_dim, "Feed-forward width (0: 2 x d-model)")->capture_default_str();
  c_train->add_option("--layers", train.layers, "Layers per stack")->capture_default_str();
  c_train->add_option("--heads", train.heads, "Attention heads")->capture_default_str();
  c_train->add_option("--epochs", train.epochs, "Passes over the corpus")->capture_default_str();
  c_train->add_option("--batch-size", train.batch_size, "Mini-batch size")->capture_default_str();
  c_train->add_option("--lr", train.learning_rate, "Learning rate")->capture_default_str();
  c_train->add_option("--optimizer", train.optimizer, "sgd or adam")
      ->check(CLI::IsMember({"sgd", "adam"}))
      ->capture_default_str();
  c_train->add_option("--seed", train.seed, "Initialization and shuffling seed")->capture_default_str();
  c_train->add_option("--adversarial-init", train.adversarial_margin,
                      "Bias the router toward expert 0 by this many logits");

  GenerateArgs gen;
  CLI::App* c_gen = app.add_subcommand("generate", "Decode every input with each pattern head");
  c_gen->add_option("--checkpoint", gen.checkpoint, "Trained checkpoint")->required();
  c_gen->add_option("--input", gen.input, "One source per line ('-' for standard input)");
  c_gen->add_option("--corpus", gen.corpus, "Corpus JSONL: distinct sources, targets become references");
  c_gen->add_option("--out", gen.out, "Output JSONL (default standard output)");
  c_gen->add_option("--max-len", gen.max_len, "Output length limit (0: model limit)")->capture_default_str();

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "Score generations for quality and diversity");
  c_eval->add_option("--generations", ev.generations, "JSONL records {input, outputs, references}")->required();
  c_eval->add_option("--references", ev.references, "Optional JSONL, one reference list per record");
  c_eval->add_option("--order,-N", ev.order, "Largest n-gram order")->capture_default_str();
  c_eval->add_option("--out", ev.out, "Write the report as JSON");

  ProjectArgs proj;
  CLI::App* c_proj = app.add_subcommand("project", "Project logits onto the simplex");
  c_proj->add_option("--z", proj.z, "Comma-separated logits (default: read standard input)");
  c_proj->add_option("--lambda", proj.lambda, "Sparsity parameter, < 1")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Streams io{in, out, err, LevelFromEnv()};
  try {
    if (*c_synth) return CmdSynth(synth, io);
    if (*c_train) return CmdTrain(train, io);
    if (*c_gen) return CmdGenerate(gen, io);
    if (*c_eval) return CmdEval(ev, io);
    if (*c_proj) return CmdProject(proj, io);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidSpec || e.code() == ErrorCode::kInvalidParameter) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    }
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace spmoe
