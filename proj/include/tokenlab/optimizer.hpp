#pragma once

#include <cmath>
#include <map>
#include <string>

#include "tokenlab/autodiff.hpp"
#include "tokenlab/tensor.hpp"

namespace tokenlab {

// Named parameter bundle. std::map keeps iteration order stable, which keeps
// training runs and checkpoints reproducible.
struct ParamStore {
  std::map<std::string, Tensor> params;

  Tensor& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw TkError("params", name, "unknown parameter");
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw TkError("params", name, "unknown parameter");
    return it->second;
  }

  void add(const std::string& name, Tensor t) {
    if (!params.emplace(name, std::move(t)).second)
      throw TkError("params", name, "duplicate parameter");
  }

  // Registers every parameter as a tape input; returns name -> node id.
  std::map<std::string, Tape::NodeId> leaves(Tape& tape) const {
    std::map<std::string, Tape::NodeId> out;
    for (const auto& [name, t] : params) out[name] = tape.input(name, t);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [k, t] : params) n += t.numel();
    return n;
  }
};

// Adam with bias correction. Moments are keyed by parameter name and created
// lazily, so one optimizer can drive any subset of a store.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::int64_t steps() const { return t_; }

  // Applies one update over the given gradients. Parameters without a
  // gradient entry are left untouched; a zero gradient still advances the
  // moment decay for that parameter.
  void step(ParamStore& store, const std::map<std::string, Tensor>& grads) {
    ++t_;
    double c1 = 1.0 - std::pow(b1_, double(t_));
    double c2 = 1.0 - std::pow(b2_, double(t_));
    for (auto& [name, g] : grads) {
      Tensor& p = store.at(name);
      if (!(g.shape == p.shape))
        throw TkError("optimizer", name, "gradient shape " + shape_str(g.shape) +
                                             " != parameter shape " + shape_str(p.shape));
      Tensor& m = moment(m_, name, p.shape);
      Tensor& v = moment(v_, name, p.shape);
      for (std::size_t i = 0; i < p.data.size(); ++i) {
        double gi = g.data[i];
        m.data[i] = b1_ * m.data[i] + (1.0 - b1_) * gi;
        v.data[i] = b2_ * v.data[i] + (1.0 - b2_) * gi * gi;
        double mhat = m.data[i] / c1;
        double vhat = v.data[i] / c2;
        double upd = lr_ * mhat / (std::sqrt(vhat) + eps_);
        if (!std::isfinite(upd)) throw TkError("optimizer", name, "non-finite update");
        p.data[i] -= upd;
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;

  static Tensor& moment(std::map<std::string, Tensor>& side, const std::string& name,
                        const Shape& shape) {
    auto it = side.find(name);
    if (it == side.end()) it = side.emplace(name, Tensor(shape)).first;
    return it->second;
  }
};

}  // namespace tokenlab
