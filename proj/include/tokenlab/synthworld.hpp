#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tokenlab/io.hpp"
#include "tokenlab/mlp.hpp"
#include "tokenlab/optimizer.hpp"
#include "tokenlab/rng.hpp"
#include "tokenlab/tensor.hpp"

namespace tokenlab {

// Procedural blob world: 16x16 grayscale, 8 classes. A class fixes the blob
// count (1..4) and the placement layout (corner anchors or the diagonal);
// centers, radii and intensities carry the remaining variation.

constexpr std::size_t kImageH = 16;
constexpr std::size_t kImageW = 16;
constexpr std::size_t kPixels = kImageH * kImageW;
constexpr std::size_t kClasses = 8;
constexpr std::size_t kMaxBlobs = 4;

struct Blob {
  double cx = 0.0, cy = 0.0;  // center in [0,1]
  double radius = 0.0;        // in [0.05, 0.3]
  double intensity = 0.0;     // in [0.2, 1.0]
};

struct FactorVector {
  std::uint32_t class_id = 0;
  std::vector<Blob> blobs;
};

inline std::size_t class_blob_count(std::uint32_t c) { return c / 2 + 1; }
inline bool class_uses_diagonal(std::uint32_t c) { return c % 2 == 1; }

// Anchor positions before jitter: the first `count` image corners, or evenly
// spaced points on the main diagonal.
inline void class_anchor(std::uint32_t c, std::size_t i, double& ax, double& ay) {
  std::size_t count = class_blob_count(c);
  if (class_uses_diagonal(c)) {
    ax = ay = (double(i) + 0.5) / double(count);
    return;
  }
  static const double corners[4][2] = {{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}};
  ax = corners[i][0];
  ay = corners[i][1];
}

inline FactorVector sample_factors(std::uint32_t class_id, RngStream rng) {
  if (class_id >= kClasses) throw TkError("synthworld", "class", "class id out of range");
  FactorVector f;
  f.class_id = class_id;
  std::size_t count = class_blob_count(class_id);
  for (std::size_t i = 0; i < count; ++i) {
    Blob b;
    double ax, ay;
    class_anchor(class_id, i, ax, ay);
    // jitter keeps centers inside [0,1] for every anchor (margin 0.15)
    b.cx = ax + rng.uniform(-0.1, 0.1);
    b.cy = ay + rng.uniform(-0.1, 0.1);
    b.radius = rng.uniform(0.05, 0.3);
    b.intensity = rng.uniform(0.2, 1.0);
    f.blobs.push_back(b);
  }
  return f;
}

// pixel(p) = clamp(sum_b intensity_b * exp(-|p - center_b|^2 / (2 r_b^2)), 0, 1)
// with p = (col/W, row/H): the grid contains (0.5, 0.5), so a unit-intensity
// blob centered there saturates its pixel exactly.
inline Tensor render(const FactorVector& f) {
  Tensor img({kPixels});
  for (std::size_t row = 0; row < kImageH; ++row) {
    double py = double(row) / double(kImageH);
    for (std::size_t col = 0; col < kImageW; ++col) {
      double px = double(col) / double(kImageW);
      double v = 0.0;
      for (const Blob& b : f.blobs) {
        double dx = px - b.cx, dy = py - b.cy;
        v += b.intensity * std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
      }
      img.data[row * kImageW + col] = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

// Euclidean distance over canonically sorted blob tuples, zero-padded to
// kMaxBlobs. Class id is excluded: nearness is appearance, not label.
inline std::vector<double> factor_coords(const FactorVector& f) {
  std::vector<std::array<double, 4>> tuples;
  for (const Blob& b : f.blobs) tuples.push_back({b.cx, b.cy, b.radius, b.intensity});
  std::sort(tuples.begin(), tuples.end());
  std::vector<double> out(kMaxBlobs * 4, 0.0);
  for (std::size_t i = 0; i < tuples.size(); ++i)
    for (std::size_t j = 0; j < 4; ++j) out[i * 4 + j] = tuples[i][j];
  return out;
}

inline double factor_distance(const FactorVector& a, const FactorVector& b) {
  std::vector<double> ca = factor_coords(a), cb = factor_coords(b);
  double s = 0.0;
  for (std::size_t i = 0; i < ca.size(); ++i) {
    double d = ca[i] - cb[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// ---- dataset ----

struct Dataset {
  std::vector<Tensor> images;        // each [kPixels]
  std::vector<FactorVector> factors;

  std::size_t size() const { return images.size(); }
  std::uint32_t label(std::size_t i) const { return factors.at(i).class_id; }
};

// One stream per image index: content is independent of generation order.
inline Dataset make_dataset(std::size_t count, RngStream rng) {
  Dataset ds;
  ds.images.reserve(count);
  ds.factors.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream item = rng.fork(i);
    std::uint32_t c = std::uint32_t(item.below(kClasses));
    FactorVector f = sample_factors(c, item.fork(1));
    ds.images.push_back(render(f));
    ds.factors.push_back(std::move(f));
  }
  return ds;
}

// Binary layout (little-endian): u32 H, W, count; count * H*W f64 pixels;
// count factor records (u32 class, u32 nblobs, kMaxBlobs * 4 f64, zero-padded).
inline std::string serialize_dataset(const Dataset& ds) {
  std::string out;
  put_u32(out, std::uint32_t(kImageH));
  put_u32(out, std::uint32_t(kImageW));
  put_u32(out, std::uint32_t(ds.size()));
  for (const Tensor& img : ds.images)
    for (double v : img.data) put_f64(out, v);
  for (const FactorVector& f : ds.factors) {
    put_u32(out, f.class_id);
    put_u32(out, std::uint32_t(f.blobs.size()));
    for (std::size_t i = 0; i < kMaxBlobs; ++i) {
      Blob b = i < f.blobs.size() ? f.blobs[i] : Blob{};
      put_f64(out, b.cx);
      put_f64(out, b.cy);
      put_f64(out, b.radius);
      put_f64(out, b.intensity);
    }
  }
  return out;
}

inline Dataset parse_dataset(const std::string& bytes) {
  ByteReader r(bytes);
  std::uint32_t h = r.u32(), w = r.u32(), count = r.u32();
  if (h != kImageH || w != kImageW)
    throw TkError("synthworld", "dataset", "unexpected image size " + std::to_string(h) + "x" +
                                               std::to_string(w));
  Dataset ds;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor img({kPixels});
    for (double& v : img.data) v = r.f64();
    ds.images.push_back(std::move(img));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    FactorVector f;
    f.class_id = r.u32();
    std::uint32_t nb = r.u32();
    if (nb > kMaxBlobs) throw TkError("synthworld", "dataset", "blob count out of range");
    for (std::size_t k = 0; k < kMaxBlobs; ++k) {
      Blob b;
      b.cx = r.f64();
      b.cy = r.f64();
      b.radius = r.f64();
      b.intensity = r.f64();
      if (k < nb) f.blobs.push_back(b);
    }
    ds.factors.push_back(std::move(f));
  }
  if (!r.done()) throw TkError("synthworld", "dataset", "trailing bytes");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  atomic_write_file(path, serialize_dataset(ds));
}

inline Dataset load_dataset(const std::string& path) { return parse_dataset(read_file(path)); }

// ---- nearest-neighbor pairs for the connectivity probe ----

enum class PairMode { SameClass, CrossClass };

// For each anchor (in seeded random order) find its factor-space nearest
// neighbor under the mode constraint; keep the pair if the distance is within
// epsilon. Empty result means epsilon is too tight for this dataset.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_nearby_pairs(
    const Dataset& ds, double epsilon, PairMode mode, RngStream rng,
    std::size_t max_pairs = 0) {
  if (ds.size() == 0) throw TkError("synthworld", "pairs", "empty dataset");
  if (!(epsilon > 0)) throw TkError("synthworld", "pairs", "epsilon must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::vector<std::size_t> order = rng.permutation(ds.size());
  for (std::size_t anchor : order) {
    if (max_pairs && out.size() >= max_pairs) break;
    double best = 0.0;
    std::size_t best_j = ds.size();
    for (std::size_t j = 0; j < ds.size(); ++j) {
      if (j == anchor) continue;
      bool same = ds.label(j) == ds.label(anchor);
      if ((mode == PairMode::SameClass) != same) continue;
      double d = factor_distance(ds.factors[anchor], ds.factors[j]);
      if (best_j == ds.size() || d < best) {
        best = d;
        best_j = j;
      }
    }
    if (best_j != ds.size() && best <= epsilon) out.emplace_back(anchor, best_j);
  }
  return out;
}

// ---- downstream task classifier ----

struct TaskClassifier {
  MlpSpec spec{kPixels, kClasses, 128, 2};
  ParamStore params;
};

inline std::uint32_t classify(const TaskClassifier& clf, const Tensor& image) {
  Tape tape;
  auto leaves = clf.params.leaves(tape);
  auto logits = mlp_apply(tape, leaves, "task", clf.spec,
                          tape.constant(image.reshaped({1, kPixels})));
  const auto& v = tape.value(logits).data;
  return std::uint32_t(std::max_element(v.begin(), v.end()) - v.begin());
}

inline double classifier_accuracy(const TaskClassifier& clf, const std::vector<Tensor>& images,
                                  const std::vector<std::uint32_t>& labels) {
  if (images.size() != labels.size())
    throw TkError("synthworld", "accuracy", "image/label length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    if (classify(clf, images[i]) == labels[i]) ++hits;
  return double(hits) / double(images.size());
}

// Small dense classifier trained on clean renders; one-hot regression is
// enough at this scale. The holdout accuracy floor is a hard gate: the task
// metric downstream is meaningless with a weak judge. Clears 0.95 with margin
// on 4,096-image datasets; smaller sets are data-limited.
inline TaskClassifier train_task_classifier(const Dataset& ds, RngStream rng,
                                            std::size_t steps = 6000,
                                            double accuracy_floor = 0.95) {
  if (ds.size() < 64) throw TkError("synthworld", "classifier", "dataset too small");
  std::size_t holdout = std::min<std::size_t>(256, ds.size() / 4);
  std::size_t train_n = ds.size() - holdout;

  TaskClassifier clf;
  mlp_init(clf.params, "task", clf.spec, rng.fork(0));
  Adam opt(3e-3);
  RngStream batches = rng.fork(1);
  const std::size_t batch = 64;

  for (std::size_t step = 0; step < steps; ++step) {
    if (step == steps - steps / 3) opt.set_learning_rate(opt.learning_rate() * 0.1);
    RngStream bs = batches.fork(step);
    Tensor x({batch, kPixels});
    Tensor y({batch, kClasses});
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t idx = bs.below(train_n);
      const Tensor& img = ds.images[idx];
      std::copy(img.data.begin(), img.data.end(), x.data.begin() + b * kPixels);
      y.data[b * kClasses + ds.label(idx)] = 1.0;
    }
    Tape tape;
    auto leaves = clf.params.leaves(tape);
    auto loss = tape.mse(mlp_apply(tape, leaves, "task", clf.spec, tape.constant(x)),
                         tape.constant(y));
    tape.backward(loss, Tensor::scalar(1.0));
    std::map<std::string, Tensor> grads;
    for (const auto& [name, id] : leaves) grads[name] = tape.grad(id);
    opt.step(clf.params, grads);
  }

  std::vector<Tensor> himgs(ds.images.end() - holdout, ds.images.end());
  std::vector<std::uint32_t> hlbls;
  for (std::size_t i = train_n; i < ds.size(); ++i) hlbls.push_back(ds.label(i));
  double acc = classifier_accuracy(clf, himgs, hlbls);
  if (acc < accuracy_floor)
    throw TkError("synthworld", "classifier",
                  "holdout accuracy " + fmt_f64(acc) + " below floor " + fmt_f64(accuracy_floor));
  return clf;
}

}  // namespace tokenlab
