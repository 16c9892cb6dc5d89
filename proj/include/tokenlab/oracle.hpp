#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tokenlab/diagnostics.hpp"
#include "tokenlab/tokenizer.hpp"

namespace tokenlab {

// Independent reference implementations with known closed forms, used to
// cross-check the runtime code paths: analytic linear-decoder descent,
// dense-grid path search, Lipschitz certificates with the score floor they
// imply, planted-barrier construction, and matched ablation experiments.

// ---- linear decoder with a stored operator norm ----

// Largest singular value via power iteration on W^T W. Plain loops on
// purpose: this must not share code with the autodiff stack it checks.
inline double spectral_norm(const Tensor& w, std::size_t iters = 300, double tol = 1e-12) {
  if (w.shape.size() != 2) throw TkError("oracle", "spectral", "matrix expected");
  std::size_t rows = w.shape[0], cols = w.shape[1];
  RngStream rng(0x5FEC7441u, {rows, cols});
  std::vector<double> v(cols), wv(rows);
  for (double& x : v) x = rng.normal();
  double sigma = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) s += w.data[r * cols + c] * v[c];
      wv[r] = s;
    }
    double prev = sigma;
    sigma = 0;
    for (double x : wv) sigma += x * x;
    sigma = std::sqrt(sigma);
    if (sigma == 0.0) return 0.0;  // annihilated: norm of the zero map
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0;
      for (std::size_t r = 0; r < rows; ++r) s += w.data[r * cols + c] * wv[r];
      v[c] = s / sigma;
    }
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    if (it > 0 && std::abs(sigma - prev) <= tol * std::max(1.0, sigma)) break;
  }
  return sigma;
}

struct LinearDecoder {
  Tensor a;       // [pixels, latent]
  Tensor offset;  // [pixels]
  double op_norm = 0.0;
};

inline LinearDecoder make_linear_decoder(Tensor a, Tensor offset) {
  if (a.shape.size() != 2 || offset.shape.size() != 1 || offset.numel() != a.shape[0])
    throw TkError("oracle", "linear", "need a [pixels, latent] matrix and [pixels] offset");
  if (!a.all_finite() || !offset.all_finite())
    throw TkError("oracle", "linear", "non-finite entries");
  LinearDecoder dec{std::move(a), std::move(offset), 0.0};
  dec.op_norm = spectral_norm(dec.a);
  return dec;
}

// Plain-tensor application, shared by the analytic recursion below.
inline Tensor linear_apply(const LinearDecoder& dec, const Tensor& z) {
  std::size_t n = dec.a.shape[0], m = dec.a.shape[1];
  if (z.numel() != m) throw TkError("oracle", "linear", "latent size mismatch");
  Tensor out({n});
  for (std::size_t p = 0; p < n; ++p) {
    double s = dec.offset.data[p];
    for (std::size_t c = 0; c < m; ++c) s += dec.a.data[p * m + c] * z.data[c];
    out.data[p] = s;
  }
  return out;
}

// Graph form for the runtime descent path.
inline LatentDecoder linear_latent_decoder(const LinearDecoder& dec) {
  return {dec.a.shape[1], [&dec](Tape& tape, Tape::NodeId z) {
            std::size_t rows = tape.value(z).shape.at(0);  // read before recording
            Tape::NodeId ax = tape.matmul(z, tape.constant(dec.a), false, true);
            return tape.add(ax, tape.broadcast(tape.constant(dec.offset),
                                               {rows, dec.offset.numel()}));
          }};
}

// Exact gradient-descent trace on 1/2 ||A z + b - x||^2, no autodiff
// involved. The per-coordinate error follows e_{t+1} = (I - eta A^T A) e_t.
inline std::vector<double> analytic_lso(const LinearDecoder& dec, const Tensor& x,
                                        const Tensor& z0, double eta, std::size_t steps,
                                        double floor = 1e-12) {
  std::size_t n = dec.a.shape[0], m = dec.a.shape[1];
  if (x.numel() != n) throw TkError("oracle", "lso", "target size mismatch");
  if (z0.numel() != m) throw TkError("oracle", "lso", "start size mismatch");
  double limit = 2.0 / (dec.op_norm * dec.op_norm);
  if (!(eta > 0.0) || !(eta < limit))
    throw TkError("oracle", "lso",
                  "step size " + fmt_f64(eta) + " outside the convergent range (0, " +
                      fmt_f64(limit) + ")");
  std::vector<double> z(z0.data.begin(), z0.data.end());
  std::vector<double> r(n), mse;
  for (std::size_t t = 0; t <= steps; ++t) {
    double sum = 0;
    for (std::size_t p = 0; p < n; ++p) {
      double s = dec.offset.data[p] - x.data[p];
      for (std::size_t c = 0; c < m; ++c) s += dec.a.data[p * m + c] * z[c];
      r[p] = s;
      sum += s * s;
    }
    mse.push_back(std::max(sum / double(n), floor));
    if (t == steps) break;
    for (std::size_t c = 0; c < m; ++c) {
      double g = 0;
      for (std::size_t p = 0; p < n; ++p) g += dec.a.data[p * m + c] * r[p];
      z[c] -= eta * g;
    }
  }
  return mse;
}

// ---- information gain vs Gaussian log-likelihood improvement ----

// Under a Gaussian decoding model with variance sigma^2, the likelihood gain
// of one descent step is (mse_t - mse_{t+1}) * N / (2 sigma^2 ln 2) bits. The
// per-step gain is its scale-free form: the two must agree in sign always,
// and to first order (with an explicit log-remainder bound) for small steps.
struct LikelihoodAgreement {
  std::vector<double> delta_ll_bits;
  std::vector<double> first_order_gap;   // |gain - scaled likelihood gain|
  std::vector<double> remainder_bound;   // admissible gap; 0 where skipped
  std::size_t sign_mismatches = 0;
  std::size_t first_order_checked = 0;   // steps with relative change < 1/2
  std::size_t first_order_violations = 0;
  bool pass = false;
};

inline LikelihoodAgreement likelihood_agreement(double sigma, const LsoTrajectory& traj) {
  if (!(sigma > 0)) throw TkError("oracle", "likelihood", "sigma must be positive");
  LikelihoodAgreement rep;
  double n = double(traj.pixels);
  const double ln2 = 0.6931471805599453;
  for (std::size_t t = 0; t + 1 < traj.mse.size(); ++t) {
    double m0 = traj.mse[t], m1 = traj.mse[t + 1];
    double dll = (m0 - m1) * n / (2.0 * sigma * sigma * ln2);
    rep.delta_ll_bits.push_back(dll);
    double gain = traj.delta_bits[t];
    if ((gain > 0) != (dll > 0) || (gain < 0) != (dll < 0)) ++rep.sign_mismatches;
    double rel = (m0 - m1) / m0;
    if (std::abs(rel) < 0.5) {
      // gain = -(N / 2 ln2) ln(1 - rel); its Taylor tail past the linear term
      // is at most rel^2 / (2 (1 - |rel|)) in magnitude.
      double scaled = dll * sigma * sigma / m0;
      double gap = std::abs(gain - scaled);
      double bound =
          n / (2.0 * ln2) * rel * rel / (2.0 * (1.0 - std::abs(rel))) + 1e-12 * n;
      rep.first_order_gap.push_back(gap);
      rep.remainder_bound.push_back(bound);
      ++rep.first_order_checked;
      if (gap > bound) ++rep.first_order_violations;
    } else {
      rep.first_order_gap.push_back(0.0);
      rep.remainder_bound.push_back(0.0);
    }
  }
  rep.pass = rep.sign_mismatches == 0 && rep.first_order_violations == 0;
  return rep;
}

// ---- Lipschitz certificates and the connectivity floor ----

// Upper bound on the slope of the silu activation.
inline constexpr double kSiluSlopeBound = 1.1;
// Safety factor on every power-iteration norm estimate.
inline constexpr double kSpectralSlack = 1.0 + 1e-6;

// Product of layer operator norms times the activation slope per hidden
// layer: a loose but sound Lipschitz bound for the whole net.
inline double mlp_lipschitz(const ParamStore& store, const std::string& prefix,
                            const MlpSpec& spec) {
  double k = 1.0;
  for (std::size_t layer = 0; layer <= spec.depth; ++layer) {
    k *= spectral_norm(store.at(prefix + ".w" + std::to_string(layer))) * kSpectralSlack;
    if (layer != spec.depth) k *= kSiluSlopeBound;
  }
  return k;
}

struct LipschitzCertificate {
  double k_bound = 0.0;  // certified slope of realism(decode(z)) in z
  double delta_z = 0.0;  // endpoint token distance
  double d_end = 0.0;    // endpoint realism difference
  double l_end_a = 0.0, l_end_b = 0.0;
};

// Floor that a certified-smooth composition puts under the connectivity
// score of one pair.
inline double lipschitz_mc_floor(const LipschitzCertificate& cert, double l_ref,
                                 double delta) {
  return 1.0 / (1.0 + (cert.k_bound * cert.delta_z + std::abs(cert.d_end)) /
                          (l_ref + delta));
}

// Certify realism(decode(z)) for a tokenizer bundle by propagating layer
// norms through the sampling recursion: the start noise is constant in z, and
// each step is affine in (x_t, predicted noise).
inline LipschitzCertificate certify_tokenizer(const TokenizerBundle& b, const Tensor& zA,
                                              const Tensor& zB,
                                              std::uint64_t decode_seed = 0xDEC0DEull) {
  double l_dec = mlp_lipschitz(b.params, "dec", b.dec_spec);
  double l_dsc = mlp_lipschitz(b.params, "dsc", b.dsc_spec);
  std::vector<std::size_t> ts = ddim_timesteps(b.sched.T, b.s_eval);
  double lx = 0.0;  // slope of x_t with respect to z
  for (std::size_t i = 0; i < ts.size(); ++i) {
    std::size_t t = ts[i];
    std::size_t t_next = (i + 1 < ts.size()) ? ts[i + 1] : 0;
    double l_eps = l_dec * (lx + 1.0);
    double l_x0 = (lx + b.sched.sigma(t) * l_eps) / b.sched.alpha(t);
    lx = t_next == 0 ? l_x0 : b.sched.alpha(t_next) * l_x0 + b.sched.sigma(t_next) * l_eps;
  }
  double a_mean = (b.sched.alpha(b.sched.T / 8) + b.sched.alpha(b.sched.T / 4) +
                   b.sched.alpha(b.sched.T / 2)) /
                  3.0;
  LipschitzCertificate cert;
  cert.k_bound = l_dsc * a_mean * lx;

  if (!zA.same_shape(zB)) throw TkError("oracle", "certify", "endpoint shapes differ");
  for (std::size_t c = 0; c < zA.numel(); ++c) {
    double d = zA.data[c] - zB.data[c];
    cert.delta_z += d * d;
  }
  cert.delta_z = std::sqrt(cert.delta_z);

  Tensor ends({2, zA.numel()});
  for (std::size_t c = 0; c < zA.numel(); ++c) {
    ends.data[c] = zA.data[c];
    ends.data[zA.numel() + c] = zB.data[c];
  }
  std::vector<double> losses = realism_scores(
      b, decode_tokens(b, ends, RngStream(kRealismNoiseRoot, {decode_seed})));
  cert.l_end_a = losses[0];
  cert.l_end_b = losses[1];
  cert.d_end = losses[0] - losses[1];
  return cert;
}

// Worst finite-difference slope of f over random latent chords; any sound
// certificate must sit above this.
inline double fd_lipschitz(const std::function<double(const Tensor&)>& f, std::size_t dim,
                           std::size_t chords, RngStream rng, double radius = 2.0) {
  double worst = 0.0;
  for (std::size_t i = 0; i < chords; ++i) {
    RngStream fork = rng.fork(i);
    Tensor z1 = fork.normal_tensor({dim});
    Tensor z2 = fork.normal_tensor({dim});
    for (double& v : z1.data) v *= radius / 2.0;
    for (double& v : z2.data) v *= radius / 2.0;
    double dist = 0;
    for (std::size_t c = 0; c < dim; ++c) {
      double d = z1.data[c] - z2.data[c];
      dist += d * d;
    }
    dist = std::sqrt(dist);
    if (dist == 0.0) continue;
    worst = std::max(worst, std::abs(f(z1) - f(z2)) / dist);
  }
  return worst;
}

// ---- planted barrier ----

// Linear decoder paired with a judge that reads the chord coordinate out of
// the decoded image and raises a smooth bump of height beta over it: endpoint
// loss base_loss, chord midpoint loss exactly beta * base_loss.
struct BarrierDecoder {
  Tensor zA, zB;
  double beta = 0.0;
  double base_loss = 0.0;
  LinearDecoder base;
  Tensor chord_origin;  // decoded zA
  Tensor chord_dir;     // decoded zB minus decoded zA
  double chord_norm2 = 0.0;
};

inline RealismFn barrier_realism(const BarrierDecoder& bd) {
  return [&bd](const Tensor& images) {
    std::size_t rows = images.shape.at(0), cols = images.last_dim();
    const double pi = 3.14159265358979323846;
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double u = 0;
      for (std::size_t c = 0; c < cols; ++c)
        u += (images.data[r * cols + c] - bd.chord_origin.data[c]) * bd.chord_dir.data[c];
      u /= bd.chord_norm2;
      double s = std::sin(pi * u);
      out[r] = bd.base_loss * (1.0 + (bd.beta - 1.0) * s * s);
    }
    return out;
  };
}

inline LatentDecoder barrier_latent_decoder(const BarrierDecoder& bd) {
  return linear_latent_decoder(bd.base);
}

inline BarrierDecoder make_barrier_decoder(std::size_t latent_dim, double beta,
                                           double base_loss, RngStream rng,
                                           std::size_t pixels = kPixels) {
  if (!(beta > 1.0)) throw TkError("oracle", "barrier", "height must exceed 1");
  BarrierDecoder bd;
  bd.beta = beta;
  bd.base_loss = base_loss;
  bd.base = make_linear_decoder(rng.fork(0).normal_tensor({pixels, latent_dim}),
                                rng.fork(1).normal_tensor({pixels}));
  bd.zA = rng.fork(2).normal_tensor({latent_dim});
  bd.zB = rng.fork(3).normal_tensor({latent_dim});
  bd.chord_origin = linear_apply(bd.base, bd.zA);
  Tensor end = linear_apply(bd.base, bd.zB);
  bd.chord_dir = Tensor({pixels});
  for (std::size_t c = 0; c < pixels; ++c) {
    bd.chord_dir.data[c] = end.data[c] - bd.chord_origin.data[c];
    bd.chord_norm2 += bd.chord_dir.data[c] * bd.chord_dir.data[c];
  }
  if (bd.chord_norm2 < 1e-12) throw TkError("oracle", "barrier", "degenerate chord");

  // verify the construction before handing it out
  RealismFn judge = barrier_realism(bd);
  Tensor mid({1, latent_dim});
  for (std::size_t c = 0; c < latent_dim; ++c)
    mid.data[c] = 0.5 * (bd.zA.data[c] + bd.zB.data[c]);
  double at_a = judge(bd.chord_origin.reshaped({1, pixels}))[0];
  double at_mid = judge(linear_apply(bd.base, mid).reshaped({1, pixels}))[0];
  if (std::abs(at_a - base_loss) > 1e-9 * base_loss ||
      std::abs(at_mid - beta * base_loss) > 1e-9 * beta * base_loss)
    throw TkError("oracle", "barrier", "bump profile failed its build check");
  return bd;
}

// ---- dense-grid path search ----

struct DensePathMax {
  double l_max = 0.0;
  double u_at_max = 0.0;
};

// Reference maximum of the path loss over a dense uniform grid, evaluated in
// chunks so huge grids stay cheap on memory.
inline DensePathMax brute_force_lmax(const LatentDecoder& dec, const RealismFn& realism,
                                     const Tensor& zA, const Tensor& zB,
                                     std::size_t n = 10001) {
  if (n < 2) throw TkError("oracle", "dense-path", "need both endpoints");
  DensePathMax best;
  best.l_max = -HUGE_VAL;
  const std::size_t chunk = 512;
  std::vector<double> grid;
  for (std::size_t start = 0; start < n; start += chunk) {
    std::size_t count = std::min(chunk, n - start);
    grid.resize(count);
    for (std::size_t i = 0; i < count; ++i)
      grid[i] = double(start + i) / double(n - 1);
    Tape tape;
    Tensor path = lerp_rows(zA, zB, grid);
    std::vector<double> losses = realism(tape.value(dec.graph(tape, tape.constant(path))));
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::isfinite(losses[i]))
        throw TkError("oracle", "dense-path", "non-finite loss at u=" + fmt_f64(grid[i]));
      if (losses[i] > best.l_max) {
        best.l_max = losses[i];
        best.u_at_max = grid[i];
      }
    }
  }
  return best;
}

// ---- per-token decoder sensitivity ----

// Estimates the Frobenius norm of each token's decoder Jacobian block by
// probing with random pixel directions: for v ~ N(0, I), the expectation of
// (v^T J)_c^2 is the squared norm of column c.
inline std::vector<double> token_sensitivity(const TokenizerBundle& b, const Tensor& z_row,
                                             std::size_t probes, RngStream rng,
                                             std::uint64_t decode_seed = 0xDEC0DEull) {
  if (probes == 0) throw TkError("oracle", "sensitivity", "need at least one probe");
  Tensor z = z_row.shape.size() == 1 ? z_row.reshaped({1, z_row.numel()}) : z_row;
  std::vector<double> acc(b.token_dim(), 0.0);
  for (std::size_t p = 0; p < probes; ++p) {
    Tape tape;
    Leaves leaves = b.params.leaves(tape);
    Tape::NodeId zn = tape.input("z", z);
    Tape::NodeId x = decode(tape, leaves, b, zn, RngStream(kRealismNoiseRoot, {decode_seed}));
    Tape::NodeId s =
        tape.sum_all(tape.mul(x, tape.constant(rng.fork(p).normal_tensor({1, kPixels}))));
    tape.backward(s, Tensor::scalar(1.0));
    Tensor g = tape.grad(zn);
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += g.data[c] * g.data[c];
  }
  std::vector<double> per_token(b.K, 0.0);
  for (std::size_t k = 0; k < b.K; ++k) {
    double s = 0;
    for (std::size_t j = 0; j < b.d; ++j) s += acc[k * b.d + j] / double(probes);
    per_token[k] = std::sqrt(s);
  }
  return per_token;
}

// ---- matched ablation experiments ----

struct DirectionalResult {
  std::string metric;
  double mean_with = 0.0;     // full objective
  double mean_without = 0.0;  // one loss term removed
  std::size_t wins = 0;       // seeds where the full arm points the right way
  std::size_t seeds = 0;
  bool lower_is_better = false;
};

struct DirectionalReport {
  std::vector<DirectionalResult> rows;
};

inline std::string directional_csv(const DirectionalReport& rep) {
  CsvBuilder csv;
  csv.row({"metric", "mean_with", "mean_without", "wins", "seeds", "direction"});
  for (const DirectionalResult& r : rep.rows)
    csv.row({r.metric, fmt_f64(r.mean_with), fmt_f64(r.mean_without),
             std::to_string(r.wins), std::to_string(r.seeds),
             r.lower_is_better ? "lower" : "higher"});
  return csv.text;
}

namespace detail {

// Per-seed, per-arm measurements feeding the directional rows.
struct ArmStats {
  double sensitivity = 0.0;
  double avg_gain = 0.0;
  double chord_l_max = 0.0;
  double chord_mc = 0.0;
  double swap_realism = 0.0;
};

}  // namespace detail

// Train matched arms (identical data, identical seeds, one loss flag off) and
// measure which way each diagnostic moves. All arms of one seed are judged by
// the full arm's discriminator so the measuring stick is shared.
inline DirectionalReport directional_experiments(const Config& cfg, RngStream rng,
                                                 std::size_t seeds,
                                                 std::size_t probe_pairs = 4,
                                                 std::size_t sens_probes = 8,
                                                 std::size_t ig_images = 2) {
  if (seeds == 0) throw TkError("oracle", "experiments", "need at least one seed");
  enum Arm { kFull = 0, kNoMi, kNoSwap, kNoAfm, kArms };
  std::vector<std::vector<detail::ArmStats>> stats(kArms);

  for (std::size_t seed = 0; seed < seeds; ++seed) {
    Dataset ds = make_dataset(cfg.data_count, rng.fork(seed).fork(0));
    std::size_t train_count = ds.size() - cfg.tok_holdout;
    auto pair_idx = sample_nearby_pairs(ds, cfg.data_epsilon, PairMode::SameClass,
                                        rng.fork(seed).fork(1), probe_pairs);
    if (pair_idx.empty())
      throw TkError("oracle", "experiments", "no nearby pairs at this epsilon");

    std::vector<TokTrainResult> arms;
    for (int arm = 0; arm < kArms; ++arm) {
      Config c = cfg;
      if (arm == kNoMi) c.use_mi = false;
      if (arm == kNoSwap) c.use_swap = false;
      if (arm == kNoAfm) c.use_afm = false;
      arms.push_back(train_tokenizer(c, ds, rng.fork(seed).fork(2)));
      if (arms.back().diverged)
        throw TkError("oracle", "experiments",
                      "arm " + std::to_string(arm) + " diverged at seed " +
                          std::to_string(seed));
    }
    RealismFn judge = tokenizer_realism(arms[kFull].bundle);

    for (int arm = 0; arm < kArms; ++arm) {
      const TokenizerBundle& b = arms[arm].bundle;
      detail::ArmStats st;

      for (std::size_t i = 0; i < ig_images; ++i) {
        Tensor z = encode_images(b, ds.images.at(train_count + i));
        std::vector<double> sens =
            token_sensitivity(b, z, sens_probes, rng.fork(seed).fork(3).fork(i));
        for (double s : sens) st.sensitivity += s / double(sens.size() * ig_images);
      }

      std::vector<Tensor> targets;
      for (std::size_t i = 0; i < ig_images; ++i)
        targets.push_back(ds.images.at(train_count + i));
      AvgIgResult ig =
          avg_ig(tokenizer_latent_decoder(b), targets, cfg, rng.fork(seed).fork(4));
      st.avg_gain = ig.avg_ig;

      LatentDecoder dec = tokenizer_latent_decoder(b);
      RngStream mask_rng = rng.fork(seed).fork(5);
      for (std::size_t i = 0; i < pair_idx.size(); ++i) {
        Tensor zA = encode_images(b, ds.images.at(pair_idx[i].first));
        Tensor zB = encode_images(b, ds.images.at(pair_idx[i].second));
        McPairRecord rec = mc_pair(dec, judge, zA, zB, cfg.mc_grid, cfg.mc_delta);
        st.chord_l_max += rec.l_max / double(pair_idx.size());
        st.chord_mc += rec.mc / double(pair_idx.size());

        std::vector<bool> mask(b.K);
        for (std::size_t k = 0; k < b.K; ++k) mask[k] = mask_rng.uniform() < 0.5;
        Tensor swapped = swap_tokens(b, zA, zB, mask, cfg.renormalize_swap);
        Tensor img = decode_tokens(b, swapped, RngStream(kRealismNoiseRoot, {0xDEC0DEull}));
        st.swap_realism += judge(img)[0] / double(pair_idx.size());
      }
      stats[arm].push_back(st);
    }
  }

  auto row = [&](const std::string& metric, Arm other, double detail::ArmStats::*field,
                 bool lower_is_better) {
    DirectionalResult r;
    r.metric = metric;
    r.seeds = seeds;
    r.lower_is_better = lower_is_better;
    for (std::size_t s = 0; s < seeds; ++s) {
      double w = stats[kFull][s].*field, wo = stats[other][s].*field;
      r.mean_with += w / double(seeds);
      r.mean_without += wo / double(seeds);
      if (lower_is_better ? w < wo : w > wo) ++r.wins;
    }
    return r;
  };

  DirectionalReport rep;
  rep.rows.push_back(row("token_sensitivity", kNoMi, &detail::ArmStats::sensitivity, false));
  rep.rows.push_back(row("avg_gain", kNoMi, &detail::ArmStats::avg_gain, false));
  rep.rows.push_back(row("chord_l_max", kNoSwap, &detail::ArmStats::chord_l_max, true));
  rep.rows.push_back(row("chord_mc_vs_no_swap", kNoSwap, &detail::ArmStats::chord_mc, false));
  rep.rows.push_back(row("chord_mc_vs_no_afm", kNoAfm, &detail::ArmStats::chord_mc, false));
  rep.rows.push_back(row("swap_realism", kNoAfm, &detail::ArmStats::swap_realism, true));
  return rep;
}

// ---- assembled consistency checks ----

struct CheckRow {
  std::string name;
  bool pass = false;
  double margin = 0.0;  // distance to the failing side; negative means failed
  std::string detail;
};

inline std::string oracle_checks_csv(const std::vector<CheckRow>& rows) {
  CsvBuilder csv;
  csv.row({"check", "pass", "margin", "detail"});
  for (const CheckRow& r : rows)
    csv.row({r.name, r.pass ? "1" : "0", fmt_f64(r.margin), r.detail});
  return csv.text;
}

struct OracleBudget {
  std::size_t lso_cases = 20;
  std::size_t mc_random_pairs = 1000;
  std::size_t floor_pairs = 200;
  std::size_t fd_chords = 1000;
  std::size_t dense_grid = 10001;
};

// Every closed-form and cross-implementation check in one sweep. The bundle
// argument supplies the model under test for the certificate rows; pass an
// untrained bundle to check machinery only.
inline std::vector<CheckRow> run_oracle_checks(const TokenizerBundle& bundle,
                                               const std::vector<Tensor>& probe_images,
                                               RngStream rng,
                                               const OracleBudget& budget = {}) {
  std::vector<CheckRow> rows;

  // linear descent: runtime vs analytic, telescoping, likelihood agreement
  {
    double worst = 0.0, worst_tel = 0.0;
    std::size_t sign_bad = 0, order_bad = 0;
    for (std::size_t i = 0; i < budget.lso_cases; ++i) {
      RngStream fork = rng.fork(1).fork(i);
      std::size_t n = 24, m = 6;
      Tensor a = fork.fork(0).normal_tensor({n, m});
      for (double& v : a.data) v *= 0.4;
      LinearDecoder dec = make_linear_decoder(a, fork.fork(1).normal_tensor({n}));
      Tensor x = fork.fork(2).normal_tensor({1, n});
      double eta = 0.5 / (dec.op_norm * dec.op_norm);
      LsoTrajectory traj = lso_run(linear_latent_decoder(dec), x, fork.fork(3), eta, 50);
      std::vector<double> oracle = analytic_lso(dec, x, traj.z0, eta, 50);
      for (std::size_t t = 0; t < oracle.size(); ++t)
        worst = std::max(worst,
                         std::abs(traj.mse[t] - oracle[t]) / std::max(1.0, oracle[t]));
      double total = 0;
      for (double d : traj.delta_bits) total += d;
      worst_tel = std::max(
          worst_tel, std::abs(total - info_gain(traj.mse.front(), traj.mse.back(),
                                                traj.pixels)));
      LikelihoodAgreement agree = likelihood_agreement(1.0, traj);
      sign_bad += agree.sign_mismatches;
      order_bad += agree.first_order_violations;
    }
    rows.push_back({"linear_descent_matches_analytic", worst <= 1e-9, 1e-9 - worst,
                    "worst per-step relative gap " + fmt_f64(worst)});
    rows.push_back({"gains_telescope", worst_tel <= 1e-9, 1e-9 - worst_tel,
                    "worst telescoping gap " + fmt_f64(worst_tel)});
    rows.push_back({"likelihood_sign_agreement", sign_bad == 0, -double(sign_bad),
                    std::to_string(sign_bad) + " sign mismatches"});
    rows.push_back({"likelihood_first_order", order_bad == 0, -double(order_bad),
                    std::to_string(order_bad) + " remainder violations"});
  }

  // identity closed form
  {
    Config cfg;
    cfg.lso_steps = 100;
    cfg.lso_eta = 0.001;
    std::vector<Tensor> targets;
    for (std::size_t i = 0; i < 4; ++i)
      targets.push_back(rng.fork(2).fork(i).uniform_tensor({1, kPixels}));
    AvgIgResult res = avg_ig(identity_latent_decoder(), targets, cfg, rng.fork(3));
    double closed = -double(kPixels) * std::log2(1.0 - cfg.lso_eta);
    double gap = std::abs(res.avg_ig - closed);
    rows.push_back({"identity_gain_closed_form", gap <= 1e-5, 1e-5 - gap,
                    "measured " + fmt_f64(res.avg_ig) + " vs " + fmt_f64(closed)});
  }

  // connectivity score: range and reversal on random endpoints
  {
    RealismFn judge = [](const Tensor& images) {
      std::size_t rows_n = images.shape.at(0), cols = images.last_dim();
      std::vector<double> out(rows_n);
      for (std::size_t r = 0; r < rows_n; ++r) {
        double s = 0.01;
        for (std::size_t c = 0; c < cols; ++c) s += std::abs(images.data[r * cols + c]);
        out[r] = s / double(cols);
      }
      return out;
    };
    LatentDecoder ident = identity_latent_decoder();
    bool in_range = true;
    double worst_rev = 0.0;
    for (std::size_t i = 0; i < budget.mc_random_pairs; ++i) {
      RngStream fork = rng.fork(4).fork(i);
      Tensor zA = fork.normal_tensor({kPixels});
      Tensor zB = fork.normal_tensor({kPixels});
      McPairRecord ab = mc_pair(ident, judge, zA, zB);
      in_range = in_range && ab.mc >= 0.0 && ab.mc <= 1.0;
      if (i < 50) {
        McPairRecord ba = mc_pair(ident, judge, zB, zA);
        worst_rev = std::max(worst_rev, std::abs(ab.mc - ba.mc));
      }
    }
    rows.push_back({"connectivity_in_unit_range", in_range, in_range ? 0.0 : -1.0,
                    std::to_string(budget.mc_random_pairs) + " random pairs"});
    rows.push_back({"connectivity_reversal_symmetry", worst_rev <= 1e-12,
                    1e-12 - worst_rev, "worst |ab-ba| " + fmt_f64(worst_rev)});
  }

  // planted barrier against the dense oracle
  {
    BarrierDecoder bd = make_barrier_decoder(8, 10.0, 1.0, rng.fork(5));
    McPairRecord rec =
        mc_pair(barrier_latent_decoder(bd), barrier_realism(bd), bd.zA, bd.zB);
    DensePathMax dense = brute_force_lmax(barrier_latent_decoder(bd), barrier_realism(bd),
                                          bd.zA, bd.zB, budget.dense_grid);
    double gap = std::abs(rec.mc - 0.1);
    rows.push_back({"planted_barrier_score", gap <= 0.005, 0.005 - gap,
                    "score " + fmt_f64(rec.mc) + ", dense max " + fmt_f64(dense.l_max) +
                        " at u=" + fmt_f64(dense.u_at_max)});
    rows.push_back({"dense_max_dominates_grid", dense.l_max >= rec.l_max,
                    dense.l_max - rec.l_max, "dense vs 17-point maxima"});
  }

  // certificate soundness and the score floor on real probe pairs
  {
    double l_comp = mlp_lipschitz(bundle.params, "dec", bundle.dec_spec);
    auto f = [&](const Tensor& z) {
      return realism_loss(bundle,
                          decode_tokens(bundle, z, RngStream(kRealismNoiseRoot,
                                                             {0xDEC0DEull})));
    };
    double fd = fd_lipschitz(f, bundle.token_dim(), budget.fd_chords, rng.fork(6));
    LipschitzCertificate probe_cert =
        certify_tokenizer(bundle, Tensor({bundle.token_dim()}),
                          rng.fork(7).normal_tensor({bundle.token_dim()}));
    rows.push_back({"certificate_bounds_fd_slope", probe_cert.k_bound >= fd,
                    probe_cert.k_bound - fd,
                    "certified " + fmt_f64(probe_cert.k_bound) + " vs measured " +
                        fmt_f64(fd) + " (decoder net alone " + fmt_f64(l_comp) + ")"});

    LatentDecoder dec = tokenizer_latent_decoder(bundle);
    RealismFn judge = tokenizer_realism(bundle);
    double worst = HUGE_VAL;
    std::size_t violations = 0, pairs_run = 0;
    for (std::size_t i = 0; i + 1 < probe_images.size() && pairs_run < budget.floor_pairs;
         i += 2, ++pairs_run) {
      Tensor zA = encode_images(bundle, probe_images[i]);
      Tensor zB = encode_images(bundle, probe_images[i + 1]);
      McPairRecord rec = mc_pair(dec, judge, zA, zB);
      LipschitzCertificate cert = certify_tokenizer(bundle, zA, zB);
      double floor = lipschitz_mc_floor(cert, rec.l_ref, rec.delta);
      worst = std::min(worst, rec.mc - floor);
      if (rec.mc < floor - 1e-12) ++violations;
    }
    rows.push_back({"certified_floor_below_score", violations == 0,
                    pairs_run ? worst : 0.0,
                    std::to_string(pairs_run) + " probe pairs, " +
                        std::to_string(violations) + " violations"});
  }

  return rows;
}

}  // namespace tokenlab
