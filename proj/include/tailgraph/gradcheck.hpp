#pragma once

// Central finite-difference checks of tape gradients.

#include "tailgraph/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tailgraph::gradcheck {

// Builds a scalar from leaves that hold the given inputs, in order.
using Builder = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

// ||a - b|| / max(||a||, ||b||, floor); the floor keeps vanishing gradients
// from turning round-off into a large ratio.
double relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-8);

struct Comparison {
  std::vector<Matrix> analytic;
  std::vector<Matrix> numeric;
  double rel_error = 0;  // over all inputs stacked into one vector
};

Comparison compare(const Builder& f, const std::vector<Matrix>& inputs, double step = 1e-5);

// One random instance per call: returns the relative error for that instance.
struct Case {
  std::string name;
  std::function<double(std::uint64_t seed)> instance;
};

// Loss kernels: contrastive, prior-weighted NLL, hard-class NLL, gated fusion,
// distillation and the total objective.
std::vector<Case> loss_cases();
// Individual tape operations and one expert's encoder/classifier.
std::vector<Case> op_cases();

struct Report {
  std::string name;
  int instances = 0;
  int failures = 0;
  double max_rel_error = 0;
  double seconds = 0;
};

Report run_case(const Case& c, int instances, std::uint64_t seed, double tolerance = 1e-4);

}  // namespace tailgraph::gradcheck
