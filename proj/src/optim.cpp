#include "mvox/optim.hpp"

#include "mvox/errors.hpp"

#include <cmath>

namespace mvox {

double decay_lr(double base_lr, double gamma, long long step) {
  if (step < 0) throw ContractError("decay_lr: negative step");
  return base_lr * std::pow(gamma, static_cast<double>(step));
}

template <typename Scalar>
double clip_gradients(ParameterStore<Scalar>& store, double threshold) {
  if (!(threshold > 0) || !std::isfinite(threshold)) throw ConfigError("clip threshold must be positive and finite");
  double sq = 0.0;
  for (const auto& p : store.params()) {
    if (p.frozen || !p.tensor.has_grad()) continue;
    const double s = p.tensor.grad().template cast<double>().square().sum();
    if (!std::isfinite(s)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    sq += s;
  }
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const Scalar factor = static_cast<Scalar>(threshold / norm);
    for (auto& p : store.params())
      if (!p.frozen && p.tensor.has_grad()) p.tensor.grad() *= factor;
  }
  return norm;
}

double clip_gradients(std::vector<Eigen::ArrayXd>& grads, double threshold) {
  if (!(threshold > 0) || !std::isfinite(threshold)) throw ConfigError("clip threshold must be positive and finite");
  double sq = 0.0;
  for (const auto& g : grads) sq += g.square().sum();
  if (!std::isfinite(sq)) throw NumericError("non-finite gradient");
  const double norm = std::sqrt(sq);
  if (norm > threshold)
    for (auto& g : grads) g *= threshold / norm;
  return norm;
}

template <typename Scalar>
AdamW<Scalar>::AdamW(ParameterStore<Scalar>& store, AdamWConfig cfg) : store_(&store), cfg_(cfg) {
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1))
    throw ConfigError("AdamW betas must lie in [0,1)");
  if (!(cfg.eps > 0) || cfg.weight_decay < 0) throw ConfigError("AdamW eps must be > 0 and weight decay >= 0");
}

template <typename Scalar>
void AdamW<Scalar>::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : store_->params()) {
    if (p.frozen || !p.tensor.has_grad()) continue;
    const Eigen::ArrayXd g = p.tensor.grad().template cast<double>();
    if (!g.allFinite()) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    auto& mo = moments_[p.name];
    if (mo.m.size() == 0) {
      mo.m = Eigen::ArrayXd::Zero(g.size());
      mo.v = Eigen::ArrayXd::Zero(g.size());
    }
    mo.m = cfg_.beta1 * mo.m + (1.0 - cfg_.beta1) * g;
    mo.v = cfg_.beta2 * mo.v + (1.0 - cfg_.beta2) * g.square();
    Eigen::ArrayXd w = p.tensor.data().template cast<double>();
    w *= 1.0 - lr * cfg_.weight_decay;
    w -= lr * (mo.m / c1) / ((mo.v / c2).sqrt() + cfg_.eps);
    p.tensor.data() = w.cast<Scalar>();
  }
}

template <typename Scalar>
std::vector<TensorRecord> AdamW<Scalar>::state(const std::string& prefix) const {
  std::vector<TensorRecord> out;
  for (const auto& [name, mo] : moments_) {
    out.push_back({prefix + "m." + name, DType::F64, {mo.m.size()}, mo.m});
    out.push_back({prefix + "v." + name, DType::F64, {mo.v.size()}, mo.v});
  }
  return out;
}

template <typename Scalar>
void AdamW<Scalar>::load_state(const std::vector<TensorRecord>& records, const std::string& prefix,
                               long long steps) {
  moments_.clear();
  t_ = steps;
  for (const auto& r : records) {
    if (r.name.rfind(prefix, 0) != 0) continue;
    const std::string rest = r.name.substr(prefix.size());
    if (rest.size() < 3 || rest[1] != '.' || (rest[0] != 'm' && rest[0] != 'v')) continue;
    const std::string name = rest.substr(2);
    const auto* p = store_->find(name);
    if (!p) throw StateError("optimizer state names unknown parameter '" + name + "'");
    if (r.values.size() != p->tensor.size())
      throw StateError("optimizer state for '" + name + "' has the wrong size");
    (rest[0] == 'm' ? moments_[name].m : moments_[name].v) = r.values;
  }
}

template double clip_gradients(ParameterStore<float>&, double);
template double clip_gradients(ParameterStore<double>&, double);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace mvox
