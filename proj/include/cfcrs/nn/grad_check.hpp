#pragma once

#include <functional>
#include <string>

#include "cfcrs/nn/graph.hpp"

namespace cfcrs::nn {

using LossFn = std::function<Expr(Graph&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
};

// Analytic gradients of f for every parameter of `store` (via backward()).
Gradients analytic_gradient(const LossFn& f, const ParamStore& store);

// Central differences over every coordinate of every parameter in `store`.
Gradients numeric_gradient(const LossFn& f, ParamStore& store, double eps);

// max |a - n| / max(|a|, |n|, 1e-12) over all coordinates.
GradCheckReport compare_gradients(const Gradients& analytic, const Gradients& numeric);

GradCheckReport grad_check(const LossFn& f, ParamStore& store, double eps = 1e-5);

}  // namespace cfcrs::nn
