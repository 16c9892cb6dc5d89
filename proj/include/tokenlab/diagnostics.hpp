#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tokenlab/autodiff.hpp"
#include "tokenlab/config.hpp"
#include "tokenlab/io.hpp"
#include "tokenlab/rng.hpp"
#include "tokenlab/synthworld.hpp"
#include "tokenlab/tensor.hpp"
#include "tokenlab/tokenizer.hpp"

namespace tokenlab {

// Decoder abstraction shared by every metric: a graph builder mapping a
// latent row-batch [B, latent_dim] to images [B, 256] on the caller's tape.
// Any sampling seeds are baked in, so the mapping is a pure function.
struct LatentDecoder {
  std::size_t latent_dim = 0;
  std::function<Tape::NodeId(Tape&, Tape::NodeId)> graph;
};

inline LatentDecoder identity_latent_decoder() {
  return {kPixels, [](Tape&, Tape::NodeId z) { return z; }};
}

inline LatentDecoder constant_latent_decoder(Tensor image) {
  Tensor row = image.shape.size() == 1 ? image.reshaped({1, image.numel()}) : image;
  return {kPixels, [row](Tape& tape, Tape::NodeId z) {
            Shape target = {tape.value(z).shape.at(0), row.last_dim()};
            return tape.broadcast(tape.constant(row.reshaped({row.last_dim()})), target);
          }};
}

// Full DDIM decode of the tokenizer with a frozen initialization seed.
inline LatentDecoder tokenizer_latent_decoder(const TokenizerBundle& b,
                                              std::uint64_t seed = 0xDEC0DEull) {
  return {b.token_dim(), [&b, seed](Tape& tape, Tape::NodeId z) {
            Leaves leaves = b.params.leaves(tape);
            return decode(tape, leaves, b, z, RngStream(kRealismNoiseRoot, {seed}));
          }};
}

// Batched per-image realism scores; deterministic by construction.
using RealismFn = std::function<std::vector<double>(const Tensor& images)>;

inline RealismFn tokenizer_realism(const TokenizerBundle& b) {
  return [&b](const Tensor& images) { return realism_scores(b, images); };
}

// ---- latent-space optimization ----

// One gradient-descent trace on 1/2 ||D(z) - x||^2. `mse` holds the mean
// per-pixel error before each step plus one entry after the last; `delta_bits`
// holds the per-step information gain.
struct LsoTrajectory {
  double eta = 0.0;
  std::size_t steps = 0;
  std::size_t pixels = 0;
  Tensor z0;                       // starting latent, for exact reproduction
  std::vector<double> mse;         // steps+1 entries when clean
  std::vector<double> delta_bits;  // steps entries when clean
  bool error = false;              // non-finite value met; arrays hold the prefix
};

// Per-step information gain in bits for an N-pixel image.
inline double info_gain(double mse_t, double mse_t1, std::size_t pixels) {
  return 0.5 * double(pixels) * std::log2(mse_t / mse_t1);
}

inline LsoTrajectory lso_run(const LatentDecoder& dec, const Tensor& image, RngStream rng,
                             double eta = 0.001, std::size_t steps = 100,
                             double floor = 1e-12) {
  Tensor x = image.shape.size() == 1 ? image.reshaped({1, image.numel()}) : image;
  LsoTrajectory traj;
  traj.eta = eta;
  traj.steps = steps;
  traj.pixels = x.numel();
  Tensor z = rng.normal_tensor({1, dec.latent_dim});
  traj.z0 = z;

  try {
    for (std::size_t t = 0; t <= steps; ++t) {
      Tape tape;
      Tape::NodeId z_in = tape.input("z", z);
      Tape::NodeId x_hat = dec.graph(tape, z_in);
      Tape::NodeId err = tape.mse(x_hat, tape.constant(x));
      traj.mse.push_back(std::max(tape.value(err).data[0], floor));
      if (t == steps) break;  // final measurement only
      // objective 1/2 sum of squares = mse * numel / 2
      Tape::NodeId obj = tape.mul_const(err, 0.5 * double(x.numel()));
      tape.backward(obj, Tensor::scalar(1.0));
      Tensor g = tape.grad(z_in);
      for (std::size_t i = 0; i < z.numel(); ++i) z.data[i] -= eta * g.data[i];
      if (!z.all_finite())
        throw TkError("diagnostics", "lso", "latent left the finite range");
    }
  } catch (const TkError&) {
    traj.error = true;  // keep the prefix recorded so far
  }
  for (std::size_t t = 0; t + 1 < traj.mse.size(); ++t)
    traj.delta_bits.push_back(info_gain(traj.mse[t], traj.mse[t + 1], traj.pixels));
  return traj;
}

// Telescoping check: the per-step gains must sum to the end-to-end gain.
inline void check_telescoping(const LsoTrajectory& traj, double tol = 1e-9) {
  if (traj.mse.size() < 2) return;
  double total = 0;
  for (double d : traj.delta_bits) total += d;
  double direct = info_gain(traj.mse.front(), traj.mse.back(), traj.pixels);
  if (std::abs(total - direct) > tol * std::max(1.0, std::abs(direct)))
    throw TkError("diagnostics", "lso", "per-step gains do not telescope");
}

// ---- averaged information gain ----

struct AvgIgResult {
  double avg_ig = 0.0;                   // pooled mean over steps, restarts, images
  std::vector<double> step_profile;      // mean gain at each step index
  std::vector<LsoTrajectory> trajectories;  // image-major, restart-minor
  std::size_t excluded = 0;              // error-flagged runs left out of the mean
};

inline AvgIgResult avg_ig(const LatentDecoder& dec, const std::vector<Tensor>& images,
                          const Config& cfg, RngStream rng) {
  if (images.empty()) throw TkError("diagnostics", "avgig", "empty evaluation set");
  AvgIgResult res;
  res.step_profile.assign(cfg.lso_steps, 0.0);
  std::vector<std::size_t> step_counts(cfg.lso_steps, 0);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t r = 0; r < cfg.lso_restarts; ++r) {
      LsoTrajectory traj = lso_run(dec, images[i], rng.fork(i).fork(r), cfg.lso_eta,
                                   cfg.lso_steps, cfg.mse_floor);
      if (traj.error) {
        ++res.excluded;
      } else {
        check_telescoping(traj);
        for (std::size_t t = 0; t < traj.delta_bits.size(); ++t) {
          sum += traj.delta_bits[t];
          ++count;
          res.step_profile[t] += traj.delta_bits[t];
          ++step_counts[t];
        }
      }
      res.trajectories.push_back(std::move(traj));
    }
  }
  if (count == 0) throw TkError("diagnostics", "avgig", "every trajectory errored out");
  res.avg_ig = sum / double(count);
  for (std::size_t t = 0; t < res.step_profile.size(); ++t)
    if (step_counts[t] > 0) res.step_profile[t] /= double(step_counts[t]);
  return res;
}

// ---- mode connectivity ----

struct McPairRecord {
  std::vector<double> grid;    // u values, endpoints included
  std::vector<double> losses;  // realism along the decoded path
  double l_ref = 0.0;          // min of the endpoint losses
  double l_max = 0.0;          // max over the whole grid
  double delta = 0.0;
  double mc = 0.0;
  bool same_class = false;     // filled by dataset-level evaluation
};

// Interpolate rows: (1-u) zA + u zB stacked for every grid value.
inline Tensor lerp_rows(const Tensor& zA, const Tensor& zB, const std::vector<double>& grid) {
  if (!zA.same_shape(zB)) throw TkError("diagnostics", "mc", "endpoint shapes differ");
  std::size_t dim = zA.numel();
  Tensor out({grid.size(), dim});
  for (std::size_t g = 0; g < grid.size(); ++g)
    for (std::size_t c = 0; c < dim; ++c)
      out.data[g * dim + c] = (1.0 - grid[g]) * zA.data[c] + grid[g] * zB.data[c];
  return out;
}

inline McPairRecord mc_pair(const LatentDecoder& dec, const RealismFn& realism,
                            const Tensor& zA, const Tensor& zB, std::size_t grid_size = 17,
                            double delta = 1e-6) {
  if (grid_size < 2) throw TkError("diagnostics", "mc", "grid must include both endpoints");
  McPairRecord rec;
  rec.delta = delta;
  rec.grid.resize(grid_size);
  for (std::size_t i = 0; i < grid_size; ++i)
    rec.grid[i] = double(i) / double(grid_size - 1);

  Tensor path = lerp_rows(zA, zB, rec.grid);
  try {
    Tape tape;
    rec.losses = realism(tape.value(dec.graph(tape, tape.constant(path))));
  } catch (const TkError&) {
    // locate the offending grid point for the error message
    for (std::size_t i = 0; i < grid_size; ++i) {
      try {
        Tensor one({1, zA.numel()});
        for (std::size_t c = 0; c < zA.numel(); ++c) one.data[c] = path.data[i * zA.numel() + c];
        Tape tape;
        realism(tape.value(dec.graph(tape, tape.constant(one))));
      } catch (const TkError&) {
        throw TkError("diagnostics", "mc",
                      "non-finite path loss at u=" + fmt_f64(rec.grid[i]));
      }
    }
    throw;  // batched failure that no single point reproduces
  }
  if (rec.losses.size() != grid_size)
    throw TkError("diagnostics", "mc", "realism returned wrong count");
  for (std::size_t i = 0; i < grid_size; ++i)
    if (!std::isfinite(rec.losses[i]))
      throw TkError("diagnostics", "mc", "non-finite path loss at u=" + fmt_f64(rec.grid[i]));

  rec.l_ref = std::min(rec.losses.front(), rec.losses.back());
  rec.l_max = *std::max_element(rec.losses.begin(), rec.losses.end());
  rec.mc = rec.l_ref / (rec.l_max + delta);
  return rec;
}

struct McDatasetResult {
  double mean = 0.0;
  double same_mean = 0.0;   // nearest neighbour within the class
  double cross_mean = 0.0;  // nearest neighbour across classes
  std::size_t same_count = 0, cross_count = 0;
  std::vector<McPairRecord> records;
};

// Aggregation kept separate so the arithmetic is testable on its own.
inline McDatasetResult mc_aggregate(std::vector<McPairRecord> records) {
  if (records.empty()) throw TkError("diagnostics", "mc", "no pairs to aggregate");
  McDatasetResult res;
  double same = 0, cross = 0;
  for (const McPairRecord& r : records) {
    res.mean += r.mc;
    if (r.same_class) {
      same += r.mc;
      ++res.same_count;
    } else {
      cross += r.mc;
      ++res.cross_count;
    }
  }
  res.mean /= double(records.size());
  res.same_mean = res.same_count ? same / double(res.same_count) : 0.0;
  res.cross_mean = res.cross_count ? cross / double(res.cross_count) : 0.0;
  res.records = std::move(records);
  return res;
}

// Encoder hook: image row -> token row.
using EncodeFn = std::function<Tensor(const Tensor& image)>;

inline EncodeFn tokenizer_encode_fn(const TokenizerBundle& b) {
  return [&b](const Tensor& image) { return encode_images(b, image); };
}

// Index pair plus the mode it was sampled under.
struct NearbyPair {
  std::size_t a = 0, b = 0;
  bool same_class = false;
};

inline std::vector<NearbyPair> tag_pairs(
    const std::vector<std::pair<std::size_t, std::size_t>>& idx, bool same_class) {
  std::vector<NearbyPair> out;
  out.reserve(idx.size());
  for (const auto& [a, b] : idx) out.push_back({a, b, same_class});
  return out;
}

inline McDatasetResult mc_dataset(const EncodeFn& enc, const LatentDecoder& dec,
                                  const RealismFn& realism, const Dataset& ds,
                                  const std::vector<NearbyPair>& pairs,
                                  std::size_t grid_size = 17, double delta = 1e-6) {
  if (pairs.empty()) throw TkError("diagnostics", "mc", "empty pair list");
  std::vector<McPairRecord> records;
  records.reserve(pairs.size());
  for (const NearbyPair& p : pairs) {
    Tensor zA = enc(ds.images.at(p.a));
    Tensor zB = enc(ds.images.at(p.b));
    McPairRecord rec = mc_pair(dec, realism, zA, zB, grid_size, delta);
    rec.same_class = p.same_class;
    records.push_back(std::move(rec));
  }
  return mc_aggregate(std::move(records));
}

// ---- report files ----

inline std::string avgig_csv(const AvgIgResult& res, std::size_t restarts) {
  CsvBuilder csv;
  csv.row({"image", "restart", "step", "delta_bits"});
  for (std::size_t idx = 0; idx < res.trajectories.size(); ++idx) {
    const LsoTrajectory& traj = res.trajectories[idx];
    std::size_t image = idx / restarts, restart = idx % restarts;
    for (std::size_t t = 0; t < traj.delta_bits.size(); ++t)
      csv.row({std::to_string(image), std::to_string(restart), std::to_string(t),
               fmt_f64(traj.delta_bits[t])});
  }
  return csv.text;
}

inline std::string mc_pairs_csv(const McDatasetResult& res) {
  CsvBuilder csv;
  csv.row({"pair", "class_mode", "l_ref", "l_max", "mc"});
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    const McPairRecord& r = res.records[i];
    csv.row({std::to_string(i), r.same_class ? "same" : "cross", fmt_f64(r.l_ref),
             fmt_f64(r.l_max), fmt_f64(r.mc)});
  }
  return csv.text;
}

inline std::string summary_json(const AvgIgResult& ig, const McDatasetResult& mc,
                                const Config& cfg) {
  nlohmann::json j;
  j["avg_ig"] = ig.avg_ig;
  j["avg_ig_excluded_runs"] = ig.excluded;
  j["mc"] = mc.mean;
  j["mc_same_class"] = mc.same_mean;
  j["mc_cross_class"] = mc.cross_mean;
  j["mc_same_count"] = mc.same_count;
  j["mc_cross_count"] = mc.cross_count;
  j["config_hash"] = config_hash(cfg);
  return j.dump(2) + "\n";
}

}  // namespace tokenlab
