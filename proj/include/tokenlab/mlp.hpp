#pragma once

#include <cmath>
#include <map>
#include <string>

#include "tokenlab/autodiff.hpp"
#include "tokenlab/optimizer.hpp"
#include "tokenlab/rng.hpp"

namespace tokenlab {

// Dense SiLU stack: `depth` hidden layers of `width`, linear readout.
struct MlpSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t width = 256;
  std::size_t depth = 3;
};

// He-style draws for the hidden layers, smaller scale on the readout; biases
// start at zero. Parameter names are <prefix>.w<i>/<prefix>.b<i>.
inline void mlp_init(ParamStore& store, const std::string& prefix, const MlpSpec& spec,
                     RngStream rng) {
  std::size_t fan_in = spec.in;
  for (std::size_t layer = 0; layer <= spec.depth; ++layer) {
    bool last = layer == spec.depth;
    std::size_t fan_out = last ? spec.out : spec.width;
    double scale = last ? 1.0 / std::sqrt(double(fan_in)) : std::sqrt(2.0 / double(fan_in));
    Tensor w = rng.fork(layer).normal_tensor({fan_in, fan_out});
    for (double& v : w.data) v *= scale;
    store.add(prefix + ".w" + std::to_string(layer), std::move(w));
    store.add(prefix + ".b" + std::to_string(layer), Tensor({fan_out}));
    fan_in = fan_out;
  }
}

// Forward through the stack. `leaves` maps parameter names to tape inputs
// (typically ParamStore::leaves); x is [rows, in].
inline Tape::NodeId mlp_apply(Tape& tape, const std::map<std::string, Tape::NodeId>& leaves,
                              const std::string& prefix, const MlpSpec& spec, Tape::NodeId x) {
  Tape::NodeId h = x;
  for (std::size_t layer = 0; layer <= spec.depth; ++layer) {
    auto w = leaves.find(prefix + ".w" + std::to_string(layer));
    auto b = leaves.find(prefix + ".b" + std::to_string(layer));
    if (w == leaves.end() || b == leaves.end())
      throw TkError("mlp", prefix, "missing layer " + std::to_string(layer) + " parameters");
    h = tape.affine(h, w->second, b->second);
    if (layer != spec.depth) h = tape.silu(h);
  }
  return h;
}

// Sinusoidal position code for a scalar timestep; dim must be even. Computed
// outside the graph — it carries no parameters.
inline Tensor sinusoidal_embedding(double t, std::size_t dim) {
  if (dim % 2 != 0) throw TkError("mlp", "time-embedding", "dimension must be even");
  std::size_t half = dim / 2;
  Tensor out({dim});
  for (std::size_t i = 0; i < half; ++i) {
    double freq = std::pow(10000.0, -double(i) / double(half));
    out.data[i] = std::sin(t * freq);
    out.data[half + i] = std::cos(t * freq);
  }
  return out;
}

constexpr std::size_t kTimeEmbedDim = 16;

}  // namespace tokenlab
