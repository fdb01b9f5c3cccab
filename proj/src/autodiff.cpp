#include "spmoe/autodiff.hpp"

#include <cmath>
#include <string>

#include "spmoe/error.hpp"

namespace spmoe::ad {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::Constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, false, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::Leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), record_, false, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::Push(Matrix value, std::span<const Var> parents,
               std::function<void(Tape&, const Matrix&)> backward) {
  bool needs = false;
  if (record_) {
    for (const Var& p : parents) needs = needs || requires_grad(p);
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, false,
                        needs ? std::move(backward) : nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::Accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[static_cast<size_t>(v.id)];
  if (!n.requires_grad) return;
  if (n.has_grad) {
    n.grad += g;
  } else {
    n.grad = g;
    n.has_grad = true;
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::Backward(Var loss) {
  if (!record_) throw Error(ErrorCode::kInternal, "backward on a non-recording tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw Error(ErrorCode::kShape, "backward requires a 1x1 loss");
  }
  for (Node& n : nodes_) n.has_grad = false;
  Accumulate(loss, Matrix::Ones(1, 1));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
}

namespace {

void RequireSameShape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kShape, std::string(op) + ": shape mismatch " +
                                       std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                       " vs " + std::to_string(b.rows()) + "x" +
                                       std::to_string(b.cols()));
  }
}

}  // namespace

Var Add(Var a, Var b) {
  RequireSameShape(a, b, "Add");
  return a.tape->Push(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.Accumulate(a, g);
    t.Accumulate(b, g);
  });
}

Var Sub(Var a, Var b) {
  RequireSameShape(a, b, "Sub");
  return a.tape->Push(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.Accumulate(a, g);
    t.Accumulate(b, -g);
  });
}

Var Scale(Var a, double s) {
  return a.tape->Push(a.value() * s, {a},
                      [a, s](Tape& t, const Matrix& g) { t.Accumulate(a, g * s); });
}

Var MatMul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kShape, "MatMul: inner dimensions differ (" +
                                       std::to_string(a.cols()) + " vs " +
                                       std::to_string(b.rows()) + ")");
  }
  return a.tape->Push(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.Accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.Accumulate(b, t.value(a).transpose() * g);
  });
}

Var MatMulBT(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kShape, "MatMulBT: column counts differ");
  }
  return a.tape->Push(a.value() * b.value().transpose(), {a, b},
                      [a, b](Tape& t, const Matrix& g) {
                        if (t.requires_grad(a)) t.Accumulate(a, g * t.value(b));
                        if (t.requires_grad(b)) t.Accumulate(b, g.transpose() * t.value(a));
                      });
}

Var AddRow(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error(ErrorCode::kShape, "AddRow: bias must be 1 x cols");
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape->Push(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.Accumulate(a, g);
    if (t.requires_grad(row)) t.Accumulate(row, g.colwise().sum());
  });
}

Var Relu(Var a) {
  return a.tape->Push(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.Accumulate(a, (t.value(a).array() > 0.0).select(g, 0.0));
  });
}

Var Transpose(Var a) {
  return a.tape->Push(a.value().transpose(), {a},
                      [a](Tape& t, const Matrix& g) { t.Accumulate(a, g.transpose()); });
}

Var ConcatCols(Var a, Var b) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::kShape, "ConcatCols: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ac = a.cols();
  const Eigen::Index bc = b.cols();
  return a.tape->Push(std::move(out), {a, b}, [a, b, ac, bc](Tape& t, const Matrix& g) {
    t.Accumulate(a, g.leftCols(ac));
    t.Accumulate(b, g.rightCols(bc));
  });
}

Var SliceRows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw Error(ErrorCode::kShape, "SliceRows: range out of bounds");
  }
  return a.tape->Push(a.value().middleRows(start, count), {a},
                      [a, start, count](Tape& t, const Matrix& g) {
                        Matrix full = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
                        full.middleRows(start, count) = g;
                        t.Accumulate(a, full);
                      });
}

Var SliceCols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw Error(ErrorCode::kShape, "SliceCols: range out of bounds");
  }
  return a.tape->Push(a.value().middleCols(start, count), {a},
                      [a, start, count](Tape& t, const Matrix& g) {
                        Matrix full = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
                        full.middleCols(start, count) = g;
                        t.Accumulate(a, full);
                      });
}

Var Sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->Push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.Accumulate(a, Matrix::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0)));
  });
}

Var MeanRows(Var a) {
  const double n = static_cast<double>(a.rows());
  return a.tape->Push(a.value().colwise().mean(), {a}, [a, n](Tape& t, const Matrix& g) {
    t.Accumulate(a, g.replicate(t.value(a).rows(), 1) / n);
  });
}

Var StackRows(std::span<const Var> rows) {
  if (rows.empty()) throw Error(ErrorCode::kShape, "StackRows: no rows");
  Tape* tape = rows[0].tape;
  const Eigen::Index cols = rows[0].cols();
  Matrix out(static_cast<Eigen::Index>(rows.size()), cols);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].rows() != 1 || rows[i].cols() != cols) {
      throw Error(ErrorCode::kShape, "StackRows: every input must be 1 x cols");
    }
    out.row(static_cast<Eigen::Index>(i)) = rows[i].value().row(0);
  }
  std::vector<Var> parents(rows.begin(), rows.end());
  return tape->Push(std::move(out), std::span<const Var>(parents), [parents](Tape& t, const Matrix& g) {
    for (size_t i = 0; i < parents.size(); ++i) {
      t.Accumulate(parents[i], g.row(static_cast<Eigen::Index>(i)));
    }
  });
}

Var Gather(Var table, std::span<const int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw Error(ErrorCode::kInvalidToken, "Gather: id " + std::to_string(ids[i]) +
                                                " outside table of " +
                                                std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape->Push(std::move(out), {table}, [table, idx](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
    for (size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.Accumulate(table, full);
  });
}

Var SoftmaxRows(Var a, const Matrix* additive_mask) {
  Matrix x = a.value();
  if (additive_mask) {
    if (additive_mask->rows() != x.rows() || additive_mask->cols() != x.cols()) {
      throw Error(ErrorCode::kShape, "SoftmaxRows: mask shape mismatch");
    }
    x += *additive_mask;
  }
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  Matrix y_copy = y;
  return a.tape->Push(std::move(y), {a}, [a, y_copy](Tape& t, const Matrix& g) {
    // dx = y * (g - rowsum(g * y))
    Eigen::VectorXd dot = (g.array() * y_copy.array()).rowwise().sum();
    Matrix dx = y_copy.array() * (g.colwise() - dot).array();
    t.Accumulate(a, dx);
  });
}

Var LayerNormRows(Var x, Var gain, Var bias, double eps) {
  const Eigen::Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw Error(ErrorCode::kShape, "LayerNormRows: gain/bias must be 1 x cols");
  }
  const Matrix& in = x.value();
  Matrix xhat(in.rows(), n);
  Eigen::VectorXd inv_std(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mean) * inv_std[r];
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  return x.tape->Push(std::move(out), {x, gain, bias},
                      [x, gain, bias, xhat, inv_std](Tape& t, const Matrix& g) {
                        if (t.requires_grad(gain)) {
                          t.Accumulate(gain, (g.array() * xhat.array()).colwise().sum().matrix());
                        }
                        if (t.requires_grad(bias)) t.Accumulate(bias, g.colwise().sum());
                        if (!t.requires_grad(x)) return;
                        Matrix gx = g.array().rowwise() * t.value(gain).row(0).array();
                        Matrix dx(gx.rows(), gx.cols());
                        for (Eigen::Index r = 0; r < gx.rows(); ++r) {
                          const double mean_g = gx.row(r).mean();
                          const double mean_gx = (gx.row(r).array() * xhat.row(r).array()).mean();
                          dx.row(r) = inv_std[r] * (gx.row(r).array() - mean_g -
                                                    xhat.row(r).array() * mean_gx);
                        }
                        t.Accumulate(x, dx);
                      });
}

Var CrossEntropySum(Var logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw Error(ErrorCode::kShape, "CrossEntropySum: one target per logits row required");
  }
  const Matrix& z = logits.value();
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = targets[static_cast<size_t>(r)];
    if (y < 0 || y >= z.cols()) {
      throw Error(ErrorCode::kInvalidToken, "target id " + std::to_string(y) +
                                                " outside vocabulary of " +
                                                std::to_string(z.cols()));
    }
    const double mx = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - mx).exp();
    const double denom = probs.row(r).sum();
    probs.row(r) /= denom;
    total += -(z(r, y) - mx - std::log(denom));
  }
  std::vector<int> ys(targets.begin(), targets.end());
  Matrix out(1, 1);
  out(0, 0) = total;
  return logits.tape->Push(std::move(out), {logits},
                           [logits, probs, ys](Tape& t, const Matrix& g) {
                             Matrix d = probs;
                             for (size_t r = 0; r < ys.size(); ++r) {
                               d(static_cast<Eigen::Index>(r), ys[r]) -= 1.0;
                             }
                             t.Accumulate(logits, d * g(0, 0));
                           });
}

}  // namespace spmoe::ad
