#include "cfcrs/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "cfcrs/error.hpp"

namespace cfcrs::nn {

Gradients analytic_gradient(const LossFn& f, const ParamStore& store) {
  Graph g;
  Expr loss = f(g);
  Gradients all = g.backward(loss);
  Gradients out;
  for (const std::string& name : store.names()) {
    auto it = all.find(name);
    out.emplace(name, it != all.end() ? it->second : Tensor(store.get(name).shape()));
  }
  return out;
}

Gradients numeric_gradient(const LossFn& f, ParamStore& store, double eps) {
  auto eval = [&f]() {
    Graph g(false);
    const double v = f(g).scalar();
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "loss during grad check");
    return v;
  };
  Gradients out;
  for (const std::string& name : store.names()) {
    Tensor& p = store.get(name);
    Tensor grad(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double up = eval();
      p[i] = orig - eps;
      const double down = eval();
      p[i] = orig;
      grad[i] = (up - down) / (2.0 * eps);
    }
    out.emplace(name, std::move(grad));
  }
  return out;
}

GradCheckReport compare_gradients(const Gradients& analytic, const Gradients& numeric) {
  GradCheckReport report;
  for (const auto& [name, n] : numeric) {
    auto it = analytic.find(name);
    if (it == analytic.end()) {
      throw Error(ErrorCode::kMissingArtifact, "no analytic gradient for " + name);
    }
    const Tensor& a = it->second;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (!std::isfinite(a[i]) || !std::isfinite(n[i])) {
        throw Error(ErrorCode::kNonFinite, "gradient of " + name);
      }
      const double denom = std::max({std::abs(a[i]), std::abs(n[i]), 1e-12});
      const double err = std::abs(a[i] - n[i]) / denom;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

GradCheckReport grad_check(const LossFn& f, ParamStore& store, double eps) {
  Gradients analytic = analytic_gradient(f, store);
  Gradients numeric = numeric_gradient(f, store, eps);
  return compare_gradients(analytic, numeric);
}

}  // namespace cfcrs::nn
