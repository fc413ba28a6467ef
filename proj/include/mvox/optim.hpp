#pragma once

#include "mvox/nn.hpp"

#include <map>
#include <string>
#include <vector>

namespace mvox {

struct AdamWConfig {
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// lr * gamma^step.
double decay_lr(double base_lr, double gamma, long long step);

// Global-norm clipping over every non-frozen parameter that holds a
// gradient. Returns the norm before clipping; NaN/Inf is a NumericError.
template <typename Scalar>
double clip_gradients(ParameterStore<Scalar>& store, double threshold);

// Same rule on bare vectors.
double clip_gradients(std::vector<Eigen::ArrayXd>& grads, double threshold);

// Decoupled weight decay Adam with bias correction. Moments are kept in
// double per parameter name. Frozen parameters and parameters without a
// gradient are skipped entirely.
template <typename Scalar>
class AdamW {
 public:
  AdamW(ParameterStore<Scalar>& store, AdamWConfig cfg);

  void step(double lr);
  long long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  // Moments as records "<prefix>m.<param>" / "<prefix>v.<param>" (f64), and
  // the step count.
  std::vector<TensorRecord> state(const std::string& prefix) const;
  void load_state(const std::vector<TensorRecord>& records, const std::string& prefix, long long steps);

 private:
  struct Moments {
    Eigen::ArrayXd m, v;
  };
  ParameterStore<Scalar>* store_;
  AdamWConfig cfg_;
  long long t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace mvox
