#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mutatt/graph.hpp"
#include "mutatt/params.hpp"

namespace mutatt {

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
double gradient_relative_error(double analytic, double numeric);

// Per-tensor comparison. `relative_error` is ||a - n|| / max(||a||, ||n||, 1e-8)
// over the whole tensor; the worst single element is kept for diagnostics.
struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  double relative_error = 0.0;
  double diff_norm = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;

  double max_relative_error() const;
  bool passed(double tolerance) const { return max_relative_error() < tolerance; }
};

using ParamFunction = std::function<double(const ModelParams&)>;

// Central differences (f(x+h) - f(x-h)) / 2h for every element of every
// parameter tensor, compared with `analytic`. Parameters are perturbed in
// place and restored. Throws NonFiniteError naming the perturbed element when
// f is not finite.
GradCheckReport finite_difference_check(const ParamFunction& f, ModelParams& params,
                                        const ModelParams& analytic, double step = 1e-5);

// Same check for a graph-built function of plain tensors: `build` receives
// one differentiable leaf per input and returns a scalar.
using GraphFunction = std::function<Var(Graph&, const std::vector<Var>&)>;

GradCheckReport check_op_gradients(const GraphFunction& build, std::vector<Tensor> inputs,
                                   double step = 1e-5);

}  // namespace mutatt
