#include "mutatt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mutatt/error.hpp"

namespace mutatt {

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double GradCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& t : tensors) worst = std::max(worst, t.relative_error);
  return worst;
}

namespace {

// Accumulates squared norms; finish() turns them into the relative error.
void record(TensorCheck& check, std::size_t index, double analytic, double numeric) {
  const double diff = analytic - numeric;
  if (check.checked == 0 ||
      std::abs(diff) > std::abs(check.worst_analytic - check.worst_numeric)) {
    check.worst_index = index;
    check.worst_analytic = analytic;
    check.worst_numeric = numeric;
  }
  ++check.checked;
  check.diff_norm += diff * diff;
  check.analytic_norm += analytic * analytic;
  check.numeric_norm += numeric * numeric;
}

void finish(TensorCheck& check) {
  check.diff_norm = std::sqrt(check.diff_norm);
  check.analytic_norm = std::sqrt(check.analytic_norm);
  check.numeric_norm = std::sqrt(check.numeric_norm);
  check.relative_error =
      check.diff_norm / std::max({check.analytic_norm, check.numeric_norm, 1e-8});
}

}  // namespace

GradCheckReport finite_difference_check(const ParamFunction& f, ModelParams& params,
                                        const ModelParams& analytic, double step) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  GradCheckReport report;
  auto tensors = params.named();
  const auto grads = analytic.named();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& [name, tensor] = tensors[i];
    TensorCheck check;
    check.name = name;
    for (std::size_t k = 0; k < tensor->numel(); ++k) {
      const double original = (*tensor)[k];
      (*tensor)[k] = original + step;
      const double up = f(params);
      (*tensor)[k] = original - step;
      const double down = f(params);
      (*tensor)[k] = original;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteError("non-finite objective while perturbing " + name + "[" +
                             std::to_string(k) + "]");
      }
      record(check, k, (*grads[i].second)[k], (up - down) / (2.0 * step));
    }
    finish(check);
    report.tensors.push_back(check);
  }
  return report;
}

GradCheckReport check_op_gradients(const GraphFunction& build, std::vector<Tensor> inputs,
                                   double step) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(g.leaf(t));
    Var out = build(g, leaves);
    g.backward(out);
    for (const Var& v : leaves) analytic.push_back(g.grad(v));
  }
  auto evaluate = [&build, &inputs]() {
    Graph g;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(g.constant(t));
    return build(g, leaves).item();
  };
  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    TensorCheck check;
    check.name = "input" + std::to_string(i);
    for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
      const double original = inputs[i][k];
      inputs[i][k] = original + step;
      const double up = evaluate();
      inputs[i][k] = original - step;
      const double down = evaluate();
      inputs[i][k] = original;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteError("non-finite value while perturbing " + check.name + "[" +
                             std::to_string(k) + "]");
      }
      record(check, k, analytic[i][k], (up - down) / (2.0 * step));
    }
    finish(check);
    report.tensors.push_back(check);
  }
  return report;
}

}  // namespace mutatt
