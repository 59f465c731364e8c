#include "tailgraph/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace tailgraph {

std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << '[' << rows << " x " << cols << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, Index r0, Index c0, Index r1, Index c1)
    : std::invalid_argument(op + ": shape mismatch " + shape_string(r0, c0) + " vs " +
                            shape_string(r1, c1)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : std::invalid_argument(op + ": " + detail) {}

NumericalError::NumericalError(const std::string& op, const std::string& detail)
    : std::runtime_error(op + ": non-finite value" + (detail.empty() ? "" : " (" + detail + ")")) {}

DataError::DataError(const std::string& what) : std::runtime_error(what) {}

DataError::DataError(const std::string& file, std::size_t line, const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}

}  // namespace tailgraph

namespace tailgraph::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

Matrix Var::grad() const {
  const Matrix& g = tape_->raw_grad(id_);
  if (g.size() == 0) return Matrix::Zero(rows(), cols());
  return g;
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar", v.rows(), v.cols(), 1, 1);
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) { return push("constant", std::move(value), {}, nullptr); }

Var Tape::leaf(Matrix value) {
  Var v = push("leaf", std::move(value), {}, nullptr);
  nodes_[v.id()].requires_grad = recording_;
  return v;
}

Var Tape::parameter(Parameter& p) {
  Var v = push("parameter:" + p.name, p.value, {}, nullptr);
  if (recording_) {
    nodes_[v.id()].requires_grad = true;
    nodes_[v.id()].binding = &p;
  }
  return v;
}

Var Tape::push(std::string op, Matrix value, std::vector<Var> parents, BackwardFn backward) {
  if (!value.allFinite()) throw NumericalError(op);
  if (backward_done_) throw std::logic_error(op + ": tape already ran backward; reset it first");
  Node node;
  node.op = std::move(op);
  node.value = std::move(value);
  bool needs_grad = false;
  for (const Var& p : parents) {
    if (&p.tape() != this) throw std::logic_error(node.op + ": operand belongs to another tape");
    needs_grad = needs_grad || nodes_[p.id()].requires_grad;
  }
  if (recording_ && needs_grad) {
    node.requires_grad = true;
    node.parents.reserve(parents.size());
    for (const Var& p : parents) node.parents.push_back(p.id());
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Matrix& contribution) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (contribution.rows() != n.value.rows() || contribution.cols() != n.value.cols())
    throw ShapeError("accumulate(" + n.op + ")", n.value.rows(), n.value.cols(), contribution.rows(),
                     contribution.cols());
  if (n.grad.size() == 0)
    n.grad = contribution;
  else
    n.grad += contribution;
}

void Tape::backward(const Var& loss) {
  if (nodes_.empty()) throw std::logic_error("backward: empty tape");
  if (backward_done_) throw std::logic_error("backward: already called on this tape; reset first");
  if (&loss.tape() != this) throw std::logic_error("backward: loss belongs to another tape");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) throw ShapeError("backward", lv.rows(), lv.cols(), 1, 1);
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(n.grad, *this);
    if (n.binding) {
      if (n.binding->grad.rows() != n.grad.rows() || n.binding->grad.cols() != n.grad.cols())
        n.binding->grad = n.grad;
      else
        n.binding->grad += n.grad;
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
  zero_norm_rows_ = 0;
}

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(op, a.rows(), a.cols(), b.rows(), b.cols());
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul", a.rows(), a.cols(), b.rows(), b.cols());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("matmul", a.value() * b.value(), {a, b}, [ia, ib](const Matrix& g, Tape& t) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var transpose(const Var& a) {
  const std::size_t ia = a.id();
  return a.tape().push("transpose", a.value().transpose(), {a},
                       [ia](const Matrix& g, Tape& t) { t.accumulate(ia, g.transpose()); });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("add", a.value() + b.value(), {a, b}, [ia, ib](const Matrix& g, Tape& t) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("sub", a.value() - b.value(), {a, b}, [ia, ib](const Matrix& g, Tape& t) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push("mul", a.value().cwiseProduct(b.value()), {a, b},
                       [ia, ib](const Matrix& g, Tape& t) {
                         if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                         if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                       });
}

Var scale(const Var& a, double c) {
  const std::size_t ia = a.id();
  return a.tape().push("scale", a.value() * c, {a},
                       [ia, c](const Matrix& g, Tape& t) { t.accumulate(ia, g * c); });
}

Var add_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeError("add_rowvec", a.rows(), a.cols(), row.rows(), row.cols());
  const std::size_t ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().push("add_rowvec", std::move(out), {a, row}, [ia, ir](const Matrix& g, Tape& t) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var sub_colvec(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows())
    throw ShapeError("sub_colvec", a.rows(), a.cols(), col.rows(), col.cols());
  const std::size_t ia = a.id(), ic = col.id();
  Matrix out = a.value().colwise() - col.value().col(0);
  return a.tape().push("sub_colvec", std::move(out), {a, col}, [ia, ic](const Matrix& g, Tape& t) {
    t.accumulate(ia, g);
    if (t.requires_grad(ic)) t.accumulate(ic, -g.rowwise().sum());
  });
}

Var relu(const Var& a) {
  const std::size_t ia = a.id();
  return a.tape().push("relu", a.value().cwiseMax(0.0), {a}, [ia](const Matrix& g, Tape& t) {
    const Matrix& x = t.value(ia);
    t.accumulate(ia, (x.array() > 0.0).select(g, 0.0));
  });
}

Var exp(const Var& a) {
  const std::size_t ia = a.id();
  Matrix y = a.value().array().exp().matrix();
  Matrix y_copy = y;
  return a.tape().push("exp", std::move(y), {a}, [ia, y = std::move(y_copy)](const Matrix& g, Tape& t) {
    t.accumulate(ia, g.cwiseProduct(y));
  });
}

Var log(const Var& a) {
  if ((a.value().array() <= 0.0).any()) throw NumericalError("log", "argument not positive");
  const std::size_t ia = a.id();
  return a.tape().push("log", a.value().array().log().matrix(), {a}, [ia](const Matrix& g, Tape& t) {
    t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
  });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= x.rows())
      throw ShapeError("gather_rows", "row index " + std::to_string(rows[r]) + " outside " +
                                          shape_string(x.rows(), x.cols()));
    out.row(static_cast<Index>(r)) = x.row(rows[r]);
  }
  const std::size_t ia = a.id();
  std::vector<Index> idx(rows.begin(), rows.end());
  return a.tape().push("gather_rows", std::move(out), {a}, [ia, idx = std::move(idx)](const Matrix& g, Tape& t) {
    Matrix ga = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    for (std::size_t r = 0; r < idx.size(); ++r) ga.row(idx[r]) += g.row(static_cast<Index>(r));
    t.accumulate(ia, ga);
  });
}

Var scatter_mean(const Var& a, std::span<const Index> groups, Index num_groups) {
  const Matrix& x = a.value();
  if (static_cast<Index>(groups.size()) != x.rows())
    throw ShapeError("scatter_mean", x.rows(), x.cols(), static_cast<Index>(groups.size()), 1);
  Matrix out = Matrix::Zero(num_groups, x.cols());
  Vector counts = Vector::Zero(num_groups);
  for (std::size_t r = 0; r < groups.size(); ++r) {
    if (groups[r] < 0 || groups[r] >= num_groups)
      throw ShapeError("scatter_mean", "group index " + std::to_string(groups[r]) + " outside [0, " +
                                           std::to_string(num_groups) + ")");
    out.row(groups[r]) += x.row(static_cast<Index>(r));
    counts(groups[r]) += 1.0;
  }
  for (Index gi = 0; gi < num_groups; ++gi)
    if (counts(gi) > 0) out.row(gi) /= counts(gi);
  const std::size_t ia = a.id();
  std::vector<Index> grp(groups.begin(), groups.end());
  return a.tape().push("scatter_mean", std::move(out), {a},
                       [ia, grp = std::move(grp), counts](const Matrix& g, Tape& t) {
                         Matrix ga(static_cast<Index>(grp.size()), g.cols());
                         for (std::size_t r = 0; r < grp.size(); ++r)
                           ga.row(static_cast<Index>(r)) = g.row(grp[r]) / counts(grp[r]);
                         t.accumulate(ia, ga);
                       });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows", "no operands");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows", parts[0].rows(), cols, p.rows(), p.cols());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return parts[0].tape().push("concat_rows", std::move(out), std::move(parents),
                              [ids, offsets](const Matrix& g, Tape& t) {
                                for (std::size_t k = 0; k < ids.size(); ++k)
                                  if (t.requires_grad(ids[k]))
                                    t.accumulate(ids[k], g.middleRows(offsets[k], t.value(ids[k]).rows()));
                              });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols", "no operands");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols", rows, parts[0].cols(), p.rows(), p.cols());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return parts[0].tape().push("concat_cols", std::move(out), std::move(parents),
                              [ids, offsets](const Matrix& g, Tape& t) {
                                for (std::size_t k = 0; k < ids.size(); ++k)
                                  if (t.requires_grad(ids[k]))
                                    t.accumulate(ids[k], g.middleCols(offsets[k], t.value(ids[k]).cols()));
                              });
}

Var l2_normalize_rows(const Var& a) {
  const Matrix& x = a.value();
  Vector norms = x.rowwise().norm();
  Matrix out = x;
  std::size_t zero_rows = 0;
  for (Index r = 0; r < x.rows(); ++r) {
    if (norms(r) > 0.0)
      out.row(r) /= norms(r);
    else
      ++zero_rows;
  }
  if (zero_rows > 0) a.tape().note_zero_norm_rows(zero_rows);
  const std::size_t ia = a.id();
  Matrix y = out;
  return a.tape().push("l2_normalize_rows", std::move(out), {a},
                       [ia, norms, y = std::move(y)](const Matrix& g, Tape& t) {
                         Matrix ga = Matrix::Zero(g.rows(), g.cols());
                         for (Index r = 0; r < g.rows(); ++r) {
                           if (norms(r) <= 0.0) continue;
                           const double proj = y.row(r).dot(g.row(r));
                           ga.row(r) = (g.row(r) - proj * y.row(r)) / norms(r);
                         }
                         t.accumulate(ia, ga);
                       });
}

Var dot_rows(const Var& a, const Var& b) {
  require_same_shape("dot_rows", a, b);
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return a.tape().push("dot_rows", std::move(out), {a, b}, [ia, ib](const Matrix& g, Tape& t) {
    const auto gcol = g.col(0);
    if (t.requires_grad(ia)) t.accumulate(ia, t.value(ib).array().colwise() * gcol.array());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).array().colwise() * gcol.array());
  });
}

Var sum(const Var& a) {
  const std::size_t ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().push("sum", std::move(out), {a}, [ia](const Matrix& g, Tape& t) {
    t.accumulate(ia, Matrix::Constant(t.value(ia).rows(), t.value(ia).cols(), g(0, 0)));
  });
}

Var sum_rows(const Var& a) {
  const std::size_t ia = a.id();
  Matrix out = a.value().rowwise().sum();
  return a.tape().push("sum_rows", std::move(out), {a}, [ia](const Matrix& g, Tape& t) {
    const Index cols = t.value(ia).cols();
    t.accumulate(ia, g.col(0).replicate(1, cols));
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

namespace {

// Log-sum-exp over kept entries of each row, plus the softmax weights over
// those entries (zero elsewhere). Rows with no kept entry return 0 with zero weights.
void masked_lse(const Matrix& x, const Matrix* keep, Matrix& lse, Matrix& weights) {
  lse.resize(x.rows(), 1);
  weights = Matrix::Zero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < x.cols(); ++c)
      if (!keep || (*keep)(r, c) != 0.0) mx = std::max(mx, x(r, c));
    if (!std::isfinite(mx)) {
      lse(r, 0) = 0.0;
      continue;
    }
    double acc = 0.0;
    for (Index c = 0; c < x.cols(); ++c) {
      if (keep && (*keep)(r, c) == 0.0) continue;
      const double e = std::exp(x(r, c) - mx);
      weights(r, c) = e;
      acc += e;
    }
    weights.row(r) /= acc;
    lse(r, 0) = mx + std::log(acc);
  }
}

Var push_lse(const char* op, const Var& a, const Matrix* keep) {
  Matrix lse, weights;
  masked_lse(a.value(), keep, lse, weights);
  const std::size_t ia = a.id();
  return a.tape().push(op, std::move(lse), {a}, [ia, weights = std::move(weights)](const Matrix& g, Tape& t) {
    t.accumulate(ia, weights.array().colwise() * g.col(0).array());
  });
}

}  // namespace

Var row_logsumexp(const Var& a) { return push_lse("row_logsumexp", a, nullptr); }

Var row_logsumexp(const Var& a, const Matrix& keep) {
  if (keep.rows() != a.rows() || keep.cols() != a.cols())
    throw ShapeError("row_logsumexp", a.rows(), a.cols(), keep.rows(), keep.cols());
  return push_lse("row_logsumexp", a, &keep);
}

Var log_sum_exp_with_prior(const Var& logits, const Vector& log_prior) {
  if (log_prior.size() != logits.cols())
    throw ShapeError("log_sum_exp_with_prior", logits.rows(), logits.cols(), log_prior.size(), 1);
  if (logits.cols() == 0) throw ShapeError("log_sum_exp_with_prior", "empty logit vector");
  if (!log_prior.allFinite()) throw NumericalError("log_sum_exp_with_prior", "log-prior");
  Matrix shifted = logits.value().rowwise() + log_prior.transpose();
  Matrix lse, weights;
  masked_lse(shifted, nullptr, lse, weights);
  const std::size_t ia = logits.id();
  return logits.tape().push("log_sum_exp_with_prior", std::move(lse), {logits},
                            [ia, weights = std::move(weights)](const Matrix& g, Tape& t) {
                              t.accumulate(ia, weights.array().colwise() * g.col(0).array());
                            });
}

Var detach(const Var& a) { return a.tape().constant(a.value()); }

}  // namespace tailgraph::ad
