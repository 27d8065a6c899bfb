#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfcrs/nn/tensor.hpp"
#include "cfcrs/random.hpp"

namespace cfcrs::nn {

using Gradients = std::map<std::string, Tensor>;

// Named parameters plus per-parameter AdamW moments. Ordered by name so that
// iteration and checkpoints are deterministic.
class ParamStore {
 public:
  struct Moments {
    Tensor first;
    Tensor second;
    std::int64_t step = 0;
  };

  Tensor& add(const std::string& name, Tensor init);
  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;
  const std::map<std::string, Tensor>& entries() const { return params_; }
  std::size_t parameter_count() const;

  // A frozen store enters graphs as constants: no gradients are produced.
  void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

  Moments& moments(const std::string& name);
  std::int64_t steps() const { return steps_; }
  void count_step() { ++steps_; }

  // Order-sensitive hash over names and value bits.
  std::uint64_t checksum() const;

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Moments> moments_;
  std::int64_t steps_ = 0;
  bool frozen_ = false;
};

Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace cfcrs::nn
