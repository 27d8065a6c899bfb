#pragma once

#include "cfcrs/nn/param_store.hpp"

namespace cfcrs::nn {

// AdamW with decoupled weight decay. Defaults follow the usual library
// defaults (betas 0.9/0.999, eps 1e-8, decay 0.01).
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Updates every stored parameter that has an entry in `grads`; entries
// naming no stored parameter are ignored. Throws NonFiniteGradient.
void optimizer_step(ParamStore& store, const Gradients& grads, const AdamW& opt);

// grads[name] += other[name] for every entry of other.
void accumulate(Gradients& into, const Gradients& other, double weight = 1.0);

}  // namespace cfcrs::nn
