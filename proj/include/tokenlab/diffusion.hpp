#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tokenlab/autodiff.hpp"
#include "tokenlab/rng.hpp"
#include "tokenlab/tensor.hpp"

namespace tokenlab {

// Variance-preserving schedule: alpha_bar holds the cumulative signal
// coefficient for t = 0..T, with alpha_t = sqrt(alpha_bar_t) and
// sigma_t = sqrt(1 - alpha_bar_t), so alpha^2 + sigma^2 = 1 exactly.
struct DiffusionSchedule {
  std::size_t T = 0;
  std::vector<double> alpha_bar;  // T+1 entries

  double alpha(std::size_t t) const { return std::sqrt(alpha_bar.at(t)); }
  double sigma(std::size_t t) const { return std::sqrt(1.0 - alpha_bar.at(t)); }
};

// Cosine signal curve, rescaled so t=0 sits exactly at 1; the tail is floored
// (raw value at t=T is exactly zero) while staying strictly decreasing.
inline DiffusionSchedule make_schedule(std::size_t T) {
  if (T < 2) throw TkError("diffusion", "schedule", "T must be at least 2");
  const double s = 0.008;
  const double pi = 3.14159265358979323846;
  auto f = [&](double t) {
    double a = std::cos((t / double(T) + s) / (1.0 + s) * pi / 2.0);
    return a * a;
  };
  DiffusionSchedule sched;
  sched.T = T;
  sched.alpha_bar.resize(T + 1);
  double f0 = f(0.0);
  const double tail_floor = 1e-6;
  for (std::size_t t = 0; t <= T; ++t) {
    double v = f(double(t)) / f0;
    sched.alpha_bar[t] = std::max(v, tail_floor);
  }
  sched.alpha_bar[0] = 1.0;
  for (std::size_t t = 1; t <= T; ++t)
    if (!(sched.alpha_bar[t] < sched.alpha_bar[t - 1]))
      throw TkError("diffusion", "schedule", "signal curve not strictly decreasing");
  if (sched.alpha_bar[T] > 1e-4)
    throw TkError("diffusion", "schedule", "terminal signal level above 1e-4");
  return sched;
}

// x_t = alpha_t x0 + sigma_t eps
inline Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps,
                            const DiffusionSchedule& sched) {
  if (!x0.same_shape(eps))
    throw TkError("diffusion", "forward-noise", "noise shape differs from signal");
  Tensor out = x0;
  double a = sched.alpha(t), sg = sched.sigma(t);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a * out.data[i] + sg * eps.data[i];
  return out;
}

inline Tape::NodeId forward_noise(Tape& tape, Tape::NodeId x0, std::size_t t,
                                  Tape::NodeId eps, const DiffusionSchedule& sched) {
  return tape.add(tape.mul_const(x0, sched.alpha(t)), tape.mul_const(eps, sched.sigma(t)));
}

// x0_hat = (x_t - sigma_t eps_hat) / alpha_t; at t=0 the noising is the
// identity, so x_t is returned as-is.
inline Tensor posterior_x0(const Tensor& x_t, std::size_t t, const Tensor& eps_hat,
                           const DiffusionSchedule& sched) {
  if (t == 0) return x_t;
  Tensor out = x_t;
  double a = sched.alpha(t), sg = sched.sigma(t);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (out.data[i] - sg * eps_hat.data[i]) / a;
  return out;
}

inline Tape::NodeId posterior_x0(Tape& tape, Tape::NodeId x_t, std::size_t t,
                                 Tape::NodeId eps_hat, const DiffusionSchedule& sched) {
  if (t == 0) return x_t;
  double a = sched.alpha(t), sg = sched.sigma(t);
  return tape.mul_const(tape.add(x_t, tape.mul_const(eps_hat, -sg)), 1.0 / a);
}

// Conditional noise predictor living on the caller's tape: (x_t, t) -> eps.
using Denoiser = std::function<Tape::NodeId(Tape&, Tape::NodeId x_t, std::size_t t)>;

// Uniformly spaced descending timesteps T, ..., down to (not including) 0.
inline std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t steps) {
  if (steps < 1) throw TkError("diffusion", "ddim", "need at least one step");
  std::vector<std::size_t> ts(steps);
  for (std::size_t i = 0; i < steps; ++i)
    ts[i] = std::size_t(std::llround(double(T) * double(steps - i) / double(steps)));
  return ts;
}

// Deterministic DDIM walk from seeded noise, differentiable end-to-end.
// Returns the tape node holding the final sample.
inline Tape::NodeId ddim_sample(Tape& tape, const Denoiser& denoiser, const Shape& shape,
                                std::size_t steps, const DiffusionSchedule& sched,
                                RngStream rng) {
  std::vector<std::size_t> ts = ddim_timesteps(sched.T, steps);
  Tape::NodeId x = tape.input("", rng.normal_tensor(shape));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    std::size_t t = ts[i];
    std::size_t t_next = (i + 1 < ts.size()) ? ts[i + 1] : 0;
    Tape::NodeId eps_hat = denoiser(tape, x, t);
    Tape::NodeId x0_hat = posterior_x0(tape, x, t, eps_hat, sched);
    if (t_next == 0) {
      x = x0_hat;
    } else {
      x = tape.add(tape.mul_const(x0_hat, sched.alpha(t_next)),
                   tape.mul_const(eps_hat, sched.sigma(t_next)));
    }
  }
  return x;
}

}  // namespace tokenlab
