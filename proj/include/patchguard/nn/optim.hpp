#pragma once

#include <map>
#include <string>
#include <vector>

#include "patchguard/nn/graph.hpp"

namespace patchguard::nn {

struct AdamConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Adam over a fixed list of parameters. Only trainable entries are
/// registered; frozen ones are never touched.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void add(const std::string& name, Param<float>& p);
  void add_all(ParamMap<float>& params, const std::string& prefix = "");

  /// Applies one update using grads averaged over `accumulated` samples,
  /// then zeroes the grads.
  void step(std::size_t accumulated = 1);
  void zero_grad();

  std::size_t parameter_count() const;
  std::size_t steps() const { return t_; }

 private:
  struct Slot {
    std::string name;
    Param<float>* param;
    std::vector<float> m;
    std::vector<float> v;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

}  // namespace patchguard::nn
