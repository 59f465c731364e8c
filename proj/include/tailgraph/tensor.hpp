#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// Every value on a tape is a 2-D row-major matrix; vectors are n x 1 or
// 1 x n, scalars are 1 x 1. There is no implicit broadcasting. Shape rules:
//
//   matmul(a, b)           [m x k] . [k x n]            -> [m x n]
//   transpose(a)           [m x n]                      -> [n x m]
//   add/sub/mul(a, b)      [m x n], [m x n]             -> [m x n]  (mul is elementwise)
//   scale(a, c)            [m x n], real                -> [m x n]
//   add_rowvec(a, b)       [m x n], [1 x n]             -> [m x n]  (bias add)
//   sub_colvec(a, v)       [m x n], [m x 1]             -> [m x n]  (a_ij - v_i)
//   relu/exp/log(a)        [m x n]                      -> [m x n]
//   gather_rows(a, idx)    [m x n], idx in [0, m)^r     -> [r x n]
//   scatter_mean(a, g, G)  [r x n], g in [0, G)^r       -> [G x n]  (empty group -> zero row)
//   concat_rows(parts)     [m_i x n]                    -> [sum m_i x n]
//   concat_cols(parts)     [m x n_i]                    -> [m x sum n_i]
//   l2_normalize_rows(a)   [m x n]                      -> [m x n]  (zero row -> zero row)
//   dot_rows(a, b)         [m x n], [m x n]             -> [m x 1]
//   sum(a)                 [m x n]                      -> [1 x 1]
//   sum_rows(a)            [m x n]                      -> [m x 1]
//   row_logsumexp(a[, k])  [m x n], keep mask [m x n]   -> [m x 1]  (row with empty mask -> 0)
//   log_sum_exp_with_prior(o, log_prior)
//                          [m x n], log_prior [n]       -> [m x 1]
//
// Each op checks its output for NaN/Inf and throws NumericalError naming the op.

#include "tailgraph/common.hpp"

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tailgraph::ad {

// A trainable array that lives across steps. The tape binds to it for one step
// and accumulates d(loss)/d(value) into `grad` on backward.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to one node on a tape. Cheap to copy; valid as long as the tape lives
// and has not been reset.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  // Gradient accumulated by backward; a zero matrix when the node received none.
  Matrix grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& grad_out, Tape& tape)>;

  // A non-recording tape evaluates values only; no backward rules are kept.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var leaf(Matrix value);
  Var parameter(Parameter& p);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse order.
  // Parameters bound with parameter() receive their gradient in Parameter::grad.
  void backward(const Var& loss);
  void reset();

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  // Rows that l2_normalize_rows met with zero norm since the last reset.
  std::size_t zero_norm_rows() const { return zero_norm_rows_; }
  void note_zero_norm_rows(std::size_t n) { zero_norm_rows_ += n; }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& raw_grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

  // Used by op implementations.
  Var push(std::string op, Matrix value, std::vector<Var> parents, BackwardFn backward);
  void accumulate(std::size_t id, const Matrix& contribution);

 private:
  struct Node {
    std::string op;
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* binding = nullptr;
  };

  std::deque<Node> nodes_;
  bool recording_ = true;
  bool backward_done_ = false;
  std::size_t zero_norm_rows_ = 0;
};

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_rowvec(const Var& a, const Var& row);
Var sub_colvec(const Var& a, const Var& col);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var gather_rows(const Var& a, std::span<const Index> rows);
Var scatter_mean(const Var& a, std::span<const Index> groups, Index num_groups);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var l2_normalize_rows(const Var& a);
Var dot_rows(const Var& a, const Var& b);
Var sum(const Var& a);
Var sum_rows(const Var& a);
Var mean(const Var& a);
Var row_logsumexp(const Var& a);
// `keep` holds 1 for entries that take part in the row's sum and 0 otherwise.
Var row_logsumexp(const Var& a, const Matrix& keep);
// Row-wise log sum_m exp(o_m + log_prior_m), the denominator of the
// prior-weighted softmax.
Var log_sum_exp_with_prior(const Var& logits, const Vector& log_prior);
// Same value, no gradient path.
Var detach(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

}  // namespace tailgraph::ad
