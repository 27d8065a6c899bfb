#include "cfcrs/nn/optimizer.hpp"

#include <cmath>

#include "cfcrs/error.hpp"

namespace cfcrs::nn {

void optimizer_step(ParamStore& store, const Gradients& grads, const AdamW& opt) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw Error(ErrorCode::kNonFiniteGradient, name);
  }
  for (const auto& [name, g] : grads) {
    if (!store.contains(name)) continue;
    Tensor& p = store.get(name);
    if (p.size() != g.size()) {
      throw Error(ErrorCode::kShapeMismatch, "gradient shape for " + name);
    }
    ParamStore::Moments& mo = store.moments(name);
    ++mo.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(mo.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(mo.step));
    const double decay = 1.0 - opt.lr * opt.weight_decay;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= decay;
      double& m = mo.first[i];
      double& v = mo.second[i];
      m = opt.beta1 * m + (1.0 - opt.beta1) * g[i];
      v = opt.beta2 * v + (1.0 - opt.beta2) * g[i] * g[i];
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      p[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
  }
  store.count_step();
}

void accumulate(Gradients& into, const Gradients& other, double weight) {
  for (const auto& [name, g] : other) {
    auto it = into.find(name);
    if (it == into.end()) {
      Tensor scaled = g;
      for (double& v : scaled.values()) v *= weight;
      into.emplace(name, std::move(scaled));
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += weight * g[i];
    }
  }
}

}  // namespace cfcrs::nn
