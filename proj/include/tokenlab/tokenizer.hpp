#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tokenlab/autodiff.hpp"
#include "tokenlab/checkpoint.hpp"
#include "tokenlab/config.hpp"
#include "tokenlab/diffusion.hpp"
#include "tokenlab/io.hpp"
#include "tokenlab/mlp.hpp"
#include "tokenlab/optimizer.hpp"
#include "tokenlab/rng.hpp"
#include "tokenlab/synthworld.hpp"

namespace tokenlab {

// Image tokenizer: an encoder mapping images to K continuous d-dimensional
// tokens, a conditional diffusion decoder predicting noise from
// [x_t ∥ time-embedding ∥ tokens], a recognition net mapping images back to
// token space, and a time-conditioned discriminator scoring noised images.
struct TokenizerBundle {
  std::size_t K = 8;       // token count
  std::size_t d = 4;       // per-token dimension
  std::size_t s_eval = 4;  // DDIM steps used for differentiable decodes
  DiffusionSchedule sched;
  MlpSpec enc_spec, dec_spec, rec_spec, dsc_spec;
  ParamStore params;  // enc.* / dec.* / rec.* / dsc.*

  std::size_t token_dim() const { return K * d; }
};

inline TokenizerBundle make_tokenizer(const Config& cfg, RngStream rng) {
  TokenizerBundle b;
  b.K = cfg.tok_k;
  b.d = cfg.tok_d;
  b.s_eval = cfg.tok_s_eval;
  b.sched = make_schedule(cfg.tok_T);
  std::size_t kd = b.token_dim();
  b.enc_spec = {kPixels, kd, cfg.tok_width, cfg.tok_depth};
  b.dec_spec = {kPixels + kTimeEmbedDim + kd, kPixels, cfg.tok_width, cfg.tok_depth};
  b.rec_spec = {kPixels, kd, cfg.tok_width, cfg.tok_depth};
  b.dsc_spec = {kPixels + kTimeEmbedDim, 1, cfg.tok_width, cfg.tok_depth};
  mlp_init(b.params, "enc", b.enc_spec, rng.fork(0));
  mlp_init(b.params, "dec", b.dec_spec, rng.fork(1));
  mlp_init(b.params, "rec", b.rec_spec, rng.fork(2));
  mlp_init(b.params, "dsc", b.dsc_spec, rng.fork(3));
  return b;
}

using Leaves = std::map<std::string, Tape::NodeId>;

// ---- token normalization ----

// Zero mean, unit variance across the K·d entries of each sample. eps=0 keeps
// the postcondition exact (layer_norm guards against variance collapse).
inline Tape::NodeId normalize_tokens(Tape& tape, Tape::NodeId z_raw) {
  return tape.layer_norm(z_raw, 0.0);
}

inline Tensor normalize_rows(const Tensor& raw) {
  Tensor out = raw;
  std::size_t cols = raw.last_dim();
  std::size_t rows = raw.numel() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    double* p = out.data.data() + r * cols;
    double mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += p[c];
    mean /= double(cols);
    double var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (p[c] - mean) * (p[c] - mean);
    var /= double(cols);
    if (var < 1e-12)
      throw TkError("tokenizer", "normalize", "variance collapse in token normalization");
    double inv = 1.0 / std::sqrt(var);
    for (std::size_t c = 0; c < cols; ++c) p[c] = (p[c] - mean) * inv;
  }
  return out;
}

// ---- encode / decode ----

// x: [B, 256] -> normalized tokens [B, K·d]
inline Tape::NodeId encode(Tape& tape, const Leaves& leaves, const TokenizerBundle& b,
                           Tape::NodeId x) {
  return normalize_tokens(tape, mlp_apply(tape, leaves, "enc", b.enc_spec, x));
}

// [x_t ∥ t-embedding ∥ z] for the decoder; [x_t ∥ t-embedding] when z absent.
inline Tape::NodeId time_conditioned_input(Tape& tape, Tape::NodeId x_t, std::size_t t,
                                           Tape::NodeId z = Tape::kNoNode) {
  std::size_t rows = tape.value(x_t).shape.at(0);
  Tape::NodeId temb = tape.broadcast(
      tape.constant(sinusoidal_embedding(double(t), kTimeEmbedDim)), {rows, kTimeEmbedDim});
  Tape::NodeId joined = tape.concat_cols(x_t, temb);
  if (z != Tape::kNoNode) joined = tape.concat_cols(joined, z);
  return joined;
}

inline Tape::NodeId apply_decoder(Tape& tape, const Leaves& leaves, const TokenizerBundle& b,
                                  Tape::NodeId x_t, std::size_t t, Tape::NodeId z) {
  return mlp_apply(tape, leaves, "dec", b.dec_spec, time_conditioned_input(tape, x_t, t, z));
}

inline Tape::NodeId apply_discriminator(Tape& tape, const Leaves& leaves,
                                        const TokenizerBundle& b, Tape::NodeId x_t,
                                        std::size_t t) {
  return mlp_apply(tape, leaves, "dsc", b.dsc_spec, time_conditioned_input(tape, x_t, t));
}

inline Denoiser conditional_denoiser(const Leaves& leaves, const TokenizerBundle& b,
                                     Tape::NodeId z) {
  return [&leaves, &b, z](Tape& tape, Tape::NodeId x_t, std::size_t t) {
    return apply_decoder(tape, leaves, b, x_t, t, z);
  };
}

// Full DDIM decode, differentiable end to end; deterministic given rng.
inline Tape::NodeId decode(Tape& tape, const Leaves& leaves, const TokenizerBundle& b,
                           Tape::NodeId z, RngStream rng) {
  std::size_t rows = tape.value(z).shape.at(0);
  return ddim_sample(tape, conditional_denoiser(leaves, b, z), {rows, kPixels}, b.s_eval,
                     b.sched, rng);
}

// Plain-tensor convenience: encode then decode a batch outside any caller tape.
inline Tensor decode_tokens(const TokenizerBundle& b, const Tensor& z, RngStream rng) {
  Tape tape;
  Leaves leaves = b.params.leaves(tape);
  Tensor z2 = z.shape.size() == 1 ? z.reshaped({1, z.numel()}) : z;
  return tape.value(decode(tape, leaves, b, tape.constant(z2), rng));
}

inline Tensor encode_images(const TokenizerBundle& b, const Tensor& x) {
  Tape tape;
  Leaves leaves = b.params.leaves(tape);
  Tensor x2 = x.shape.size() == 1 ? x.reshaped({1, x.numel()}) : x;
  return tape.value(encode(tape, leaves, b, tape.constant(x2)));
}

// ---- losses ----

// Denoising loss: ‖ε − ε̂(x_t, t; z)‖² summed per image, averaged over batch.
inline Tape::NodeId loss_tok_given_z(Tape& tape, const Leaves& leaves,
                                     const TokenizerBundle& b, Tape::NodeId x, Tape::NodeId z,
                                     std::size_t t, Tape::NodeId eps) {
  Tape::NodeId x_t = forward_noise(tape, x, t, eps, b.sched);
  Tape::NodeId eps_hat = apply_decoder(tape, leaves, b, x_t, t, z);
  return tape.mul_const(tape.mse(eps_hat, eps), double(kPixels));
}

inline Tape::NodeId loss_tok(Tape& tape, const Leaves& leaves, const TokenizerBundle& b,
                             Tape::NodeId x, std::size_t t, Tape::NodeId eps) {
  return loss_tok_given_z(tape, leaves, b, x, encode(tape, leaves, b, x), t, eps);
}

// Token-recovery loss. A cheap differentiable decode stands in for a full
// sampling chain: draw x_t ~ N(0, I) at a random t, predict noise once, and
// jump to the one-step posterior mean. The recognition net must read the
// tokens back out of that sample: Σ_k ‖Q(x̂)_k − z_k‖², batch mean.
inline Tape::NodeId loss_mi(Tape& tape, const Leaves& leaves, const TokenizerBundle& b,
                            Tape::NodeId z, RngStream& rng) {
  std::size_t rows = tape.value(z).shape.at(0);
  std::size_t t = 1 + std::size_t(rng.below(std::uint64_t(b.sched.T)));
  Tape::NodeId x_t = tape.constant(rng.normal_tensor({rows, kPixels}));
  Tape::NodeId eps_hat = apply_decoder(tape, leaves, b, x_t, t, z);
  Tape::NodeId x0_hat = posterior_x0(tape, x_t, t, eps_hat, b.sched);
  Tape::NodeId z_back = mlp_apply(tape, leaves, "rec", b.rec_spec, x0_hat);
  return tape.mul_const(tape.mse(z_back, z), double(b.token_dim()));
}

// ---- token swapping ----

// Expands a per-token mask to per-coordinate 0/1 values.
inline Tensor expand_mask(const std::vector<bool>& mask, std::size_t d) {
  Tensor m({mask.size() * d});
  for (std::size_t k = 0; k < mask.size(); ++k)
    for (std::size_t j = 0; j < d; ++j) m.data[k * d + j] = mask[k] ? 1.0 : 0.0;
  return m;
}

// Token k comes from zB where mask is set, from zA otherwise. Empty and full
// masks return the endpoint unchanged, so endpoint reductions are exact; mixed
// results are re-normalized (already-normalized inputs make this a no-op in
// exact arithmetic).
inline Tape::NodeId swap_tokens(Tape& tape, const TokenizerBundle& b, Tape::NodeId zA,
                                Tape::NodeId zB, const std::vector<bool>& mask,
                                bool renormalize = true) {
  if (mask.size() != b.K)
    throw TkError("tokenizer", "swap", "mask length " + std::to_string(mask.size()) +
                                           " != token count " + std::to_string(b.K));
  bool any = false, all = true;
  for (bool m : mask) {
    any = any || m;
    all = all && m;
  }
  if (!any) return zA;
  if (all) return zB;
  Shape shape = tape.value(zA).shape;  // copy: recording nodes may reallocate
  Tensor take = expand_mask(mask, b.d);
  Tensor keep = take;
  for (double& v : keep.data) v = 1.0 - v;
  Tape::NodeId mixed = tape.add(tape.mul(zA, tape.broadcast(tape.constant(keep), shape)),
                                tape.mul(zB, tape.broadcast(tape.constant(take), shape)));
  return renormalize ? normalize_tokens(tape, mixed) : mixed;
}

inline Tensor swap_tokens(const TokenizerBundle& b, const Tensor& zA, const Tensor& zB,
                          const std::vector<bool>& mask, bool renormalize = true) {
  if (!zA.same_shape(zB)) throw TkError("tokenizer", "swap", "token shapes differ");
  bool any = false, all = true;
  for (bool m : mask) {
    any = any || m;
    all = all && m;
  }
  if (!any) return zA;
  if (all) return zB;
  Tensor out = zA;
  std::size_t kd = b.token_dim();
  std::size_t rows = zA.numel() / kd;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < b.K; ++k)
      if (mask[k])
        for (std::size_t j = 0; j < b.d; ++j)
          out.data[r * kd + k * b.d + j] = zB.data[r * kd + k * b.d + j];
  return renormalize ? normalize_rows(out) : out;
}

// Token-recovery loss on mixed tokens; the targets are the mixed tokens.
inline Tape::NodeId loss_mi_swap(Tape& tape, const Leaves& leaves, const TokenizerBundle& b,
                                 Tape::NodeId zA, Tape::NodeId zB,
                                 const std::vector<bool>& mask, RngStream& rng,
                                 bool renormalize = true) {
  return loss_mi(tape, leaves, b, swap_tokens(tape, b, zA, zB, mask, renormalize), rng);
}

// ---- adversarial flow losses ----

// Relativistic generator-side score: softplus(D(real_t) − D(fake_t)), with an
// optional pixel anchor λ·‖x̃ − x‖² when x̃ reconstructs a known image. Real
// and fake sides are noised with independent draws at the same t.
inline Tape::NodeId loss_afm_generator(Tape& tape, const Leaves& leaves,
                                       const TokenizerBundle& b, Tape::NodeId x,
                                       Tape::NodeId x_tilde, std::size_t t, RngStream& rng,
                                       bool paired, double lambda_ot) {
  Shape shape = tape.value(x).shape;  // copy: recording nodes may reallocate
  Tape::NodeId x_t = forward_noise(tape, x, t, tape.constant(rng.normal_tensor(shape)), b.sched);
  Tape::NodeId xt_tilde =
      forward_noise(tape, x_tilde, t, tape.constant(rng.normal_tensor(shape)), b.sched);
  Tape::NodeId s_real = apply_discriminator(tape, leaves, b, x_t, t);
  Tape::NodeId s_fake = apply_discriminator(tape, leaves, b, xt_tilde, t);
  Tape::NodeId loss = tape.mean_all(tape.softplus(tape.sub(s_real, s_fake)));
  if (paired)
    loss = tape.add(loss, tape.mul_const(tape.mse(x_tilde, x), lambda_ot * double(kPixels)));
  return loss;
}

// Discriminator counterpart: same construction, arguments swapped.
inline Tape::NodeId loss_afm_discriminator(Tape& tape, const Leaves& leaves,
                                           const TokenizerBundle& b, Tape::NodeId x,
                                           Tape::NodeId x_tilde, std::size_t t,
                                           RngStream& rng) {
  Shape shape = tape.value(x).shape;  // copy: recording nodes may reallocate
  Tape::NodeId x_t = forward_noise(tape, x, t, tape.constant(rng.normal_tensor(shape)), b.sched);
  Tape::NodeId xt_tilde =
      forward_noise(tape, x_tilde, t, tape.constant(rng.normal_tensor(shape)), b.sched);
  Tape::NodeId s_real = apply_discriminator(tape, leaves, b, x_t, t);
  Tape::NodeId s_fake = apply_discriminator(tape, leaves, b, xt_tilde, t);
  return tape.mean_all(tape.softplus(tape.sub(s_fake, s_real)));
}

// ---- realism score ----

// Deterministic per-image realism: softplus(−D(x_t, t)) averaged over the
// fixed timestep grid {T/8, T/4, T/2}. One frozen noise draw per timestep —
// shared by every image ever scored — keeps the metric a pure function of x.
inline constexpr std::uint64_t kRealismNoiseRoot = 0x5EA11CE5u;

inline std::vector<double> realism_scores(const TokenizerBundle& b, const Tensor& images) {
  Tensor x = images.shape.size() == 1 ? images.reshaped({1, images.numel()}) : images;
  std::size_t rows = x.shape.at(0);
  if (x.last_dim() != kPixels)
    throw TkError("tokenizer", "realism", "expected image rows of " + std::to_string(kPixels));
  std::vector<std::size_t> grid = {b.sched.T / 8, b.sched.T / 4, b.sched.T / 2};
  std::vector<double> acc(rows, 0.0);
  for (std::size_t t : grid) {
    Tensor eps_row = RngStream(kRealismNoiseRoot, {std::uint64_t(t)}).normal_tensor({kPixels});
    Tape tape;
    Leaves leaves = b.params.leaves(tape);
    Tape::NodeId eps =
        tape.broadcast(tape.constant(eps_row), {rows, kPixels});
    Tape::NodeId x_t = forward_noise(tape, tape.constant(x), t, eps, b.sched);
    Tape::NodeId neg_score = tape.softplus(tape.mul_const(
        apply_discriminator(tape, leaves, b, x_t, t), -1.0));
    const Tensor& v = tape.value(neg_score);
    for (std::size_t r = 0; r < rows; ++r) acc[r] += v.data[r] / double(grid.size());
  }
  return acc;
}

inline double realism_loss(const TokenizerBundle& b, const Tensor& image) {
  if (image.numel() != kPixels)
    throw TkError("tokenizer", "realism", "single image expected");
  return realism_scores(b, image)[0];
}

// ---- training ----

struct TokTrainResult {
  TokenizerBundle bundle;
  std::string log_csv;
  bool diverged = false;
  std::size_t steps_done = 0;
  double final_recon_mse = -1.0;  // -1 until measured
};

// Mean per-pixel reconstruction MSE of decode(encode(x)) over given images,
// with a fixed decode seed so the measurement is deterministic.
inline double reconstruction_mse(const TokenizerBundle& b, const std::vector<Tensor>& images,
                                 std::size_t first, std::size_t count) {
  if (count == 0) throw TkError("tokenizer", "recon", "empty evaluation set");
  Tensor batch({count, kPixels});
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t p = 0; p < kPixels; ++p)
      batch.data[i * kPixels + p] = images.at(first + i).data[p];
  Tape tape;
  Leaves leaves = b.params.leaves(tape);
  Tape::NodeId x = tape.constant(batch);
  Tape::NodeId x_hat = decode(tape, leaves, b, encode(tape, leaves, b, x),
                              RngStream(kRealismNoiseRoot, {0x4ECu}));
  return tape.value(tape.mse(x_hat, x)).data[0];
}

inline TokTrainResult train_tokenizer(const Config& cfg, const Dataset& ds, RngStream rng) {
  if (ds.size() <= cfg.tok_holdout)
    throw TkError("tokenizer", "train", "dataset smaller than holdout split");
  std::size_t train_count = ds.size() - cfg.tok_holdout;
  std::size_t B = cfg.tok_batch;
  const std::size_t recon_interval = 500;
  const std::size_t recon_quick = std::min<std::size_t>(64, cfg.tok_holdout);

  TokTrainResult res;
  res.bundle = make_tokenizer(cfg, rng.fork(0));
  TokenizerBundle& bundle = res.bundle;
  Adam opt_gen(cfg.tok_lr), opt_dsc(cfg.dsc_lr);

  CsvBuilder log;
  log.row({"step", "l_tok", "l_mi", "l_mi_swap", "l_afm_g", "l_afm_d", "recon_mse"});

  ParamStore last_good = bundle.params;
  double recon = -1.0;

  auto gather = [&](RngStream& st) {
    Tensor batch({B, kPixels});
    for (std::size_t i = 0; i < B; ++i) {
      std::size_t idx = std::size_t(st.below(train_count));
      for (std::size_t p = 0; p < kPixels; ++p)
        batch.data[i * kPixels + p] = ds.images[idx].data[p];
    }
    return batch;
  };

  for (std::size_t step = 0; step < cfg.tok_steps; ++step) {
    RngStream st = rng.fork(1).fork(step);
    double l_tok_v = 0, l_mi_v = 0, l_swap_v = 0, l_afm_g_v = 0, l_afm_d_v = 0;
    Tensor x_tilde_value;  // carried from phase 1 into the discriminator step
    bool have_fake = false;

    try {
      // ---- phase 1: encoder / decoder / recognition update ----
      Tape tape;
      Leaves leaves = bundle.params.leaves(tape);
      RngStream draw = st.fork(0);
      Tape::NodeId xA = tape.constant(gather(draw));
      Tape::NodeId xB = tape.constant(gather(draw));
      Tape::NodeId zA = encode(tape, leaves, bundle, xA);
      Tape::NodeId zB = encode(tape, leaves, bundle, xB);

      std::size_t t1 = 1 + std::size_t(draw.below(bundle.sched.T));
      Tape::NodeId eps1 = tape.constant(draw.normal_tensor({B, kPixels}));
      Tape::NodeId total = loss_tok_given_z(tape, leaves, bundle, xA, zA, t1, eps1);
      Tape::NodeId l_tok_node = total;

      Tape::NodeId l_mi_node = Tape::kNoNode;
      if (cfg.use_mi) {
        RngStream mi_rng = st.fork(1);
        l_mi_node = loss_mi(tape, leaves, bundle, zA, mi_rng);
        total = tape.add(total, l_mi_node);
      }

      Tape::NodeId l_swap_node = Tape::kNoNode;
      std::vector<bool> mask(bundle.K);
      {
        RngStream mask_rng = st.fork(2);
        for (std::size_t k = 0; k < bundle.K; ++k)
          mask[k] = mask_rng.uniform() < cfg.swap_density;
      }
      Tape::NodeId z_mix = Tape::kNoNode;
      if (cfg.use_swap) {
        RngStream swap_rng = st.fork(3);
        z_mix = swap_tokens(tape, bundle, zA, zB, mask, cfg.renormalize_swap);
        l_swap_node = loss_mi(tape, leaves, bundle, z_mix, swap_rng);
        total = tape.add(total, l_swap_node);
      }

      Tape::NodeId l_afm_node = Tape::kNoNode;
      if (cfg.use_afm) {
        RngStream afm_rng = st.fork(4);
        // Alternate between anchored reconstructions and free swapped decodes;
        // the pixel anchor only applies when a ground-truth image exists.
        bool paired = step % 2 == 0 || z_mix == Tape::kNoNode;
        Tape::NodeId z_cond = paired ? zA : z_mix;
        Tape::NodeId x_tilde = decode(tape, leaves, bundle, z_cond, afm_rng.fork(0));
        std::size_t t_afm = 1 + std::size_t(afm_rng.below(bundle.sched.T));
        RngStream noise_rng = afm_rng.fork(1);
        l_afm_node = loss_afm_generator(tape, leaves, bundle, xA, x_tilde, t_afm, noise_rng,
                                        paired, cfg.lambda_ot);
        total = tape.add(total, l_afm_node);
        x_tilde_value = tape.value(x_tilde);
        have_fake = true;
      }

      tape.backward(total, Tensor::scalar(1.0));

      // equal-weight bookkeeping: the logged terms must add up to the total
      l_tok_v = tape.value(l_tok_node).data[0];
      if (l_mi_node != Tape::kNoNode) l_mi_v = tape.value(l_mi_node).data[0];
      if (l_swap_node != Tape::kNoNode) l_swap_v = tape.value(l_swap_node).data[0];
      if (l_afm_node != Tape::kNoNode) l_afm_g_v = tape.value(l_afm_node).data[0];
      double total_v = tape.value(total).data[0];
      double parts = l_tok_v + l_mi_v + l_swap_v + l_afm_g_v;
      if (std::abs(total_v - parts) > 1e-12 * std::max(1.0, std::abs(total_v)))
        throw TkError("tokenizer", "train",
                      "loss total drifted from sum of logged terms");

      std::map<std::string, Tensor> grads;
      for (const auto& [name, node] : leaves)
        if (name.rfind("dsc.", 0) != 0) grads.emplace(name, tape.grad(node));
      opt_gen.step(bundle.params, grads);

      // ---- phase 2: discriminator update on detached fakes ----
      if (cfg.use_afm && have_fake) {
        Tape dtape;
        Leaves dleaves = bundle.params.leaves(dtape);
        RngStream drng = st.fork(5);
        Tape::NodeId xr = dtape.constant(gather(drng));
        Tape::NodeId xf = dtape.constant(x_tilde_value);
        std::size_t t2 = 1 + std::size_t(drng.below(bundle.sched.T));
        Tape::NodeId l_d =
            loss_afm_discriminator(dtape, dleaves, bundle, xr, xf, t2, drng);
        dtape.backward(l_d, Tensor::scalar(1.0));
        l_afm_d_v = dtape.value(l_d).data[0];
        std::map<std::string, Tensor> dgrads;
        for (const auto& [name, node] : dleaves)
          if (name.rfind("dsc.", 0) == 0) dgrads.emplace(name, dtape.grad(node));
        opt_dsc.step(bundle.params, dgrads);
      }

      if (step % recon_interval == 0 || step + 1 == cfg.tok_steps) {
        recon = reconstruction_mse(bundle, ds.images, train_count, recon_quick);
        last_good = bundle.params;
      }
    } catch (const TkError&) {
      // divergence: surface the last finite state rather than a poisoned one
      bundle.params = last_good;
      res.diverged = true;
      res.steps_done = step;
      res.log_csv = log.text;
      return res;
    }
    log.row({std::to_string(step), fmt_f64(l_tok_v), fmt_f64(l_mi_v), fmt_f64(l_swap_v),
             fmt_f64(l_afm_g_v), fmt_f64(l_afm_d_v), fmt_f64(recon)});
  }

  res.steps_done = cfg.tok_steps;
  res.final_recon_mse =
      reconstruction_mse(bundle, ds.images, train_count, cfg.tok_holdout);
  res.log_csv = log.text;
  return res;
}

// ---- persistence ----

// meta.kind values stored in checkpoints
inline constexpr double kKindTokenizer = 1.0;
inline constexpr double kKindGenerator = 2.0;
inline constexpr double kKindIdentityFixture = 3.0;

inline Checkpoint tokenizer_checkpoint(const TokenizerBundle& b) {
  Checkpoint c = checkpoint_from_store(b.params, std::uint32_t(b.sched.T));
  c.arrays.emplace("meta.kind", Tensor::scalar(kKindTokenizer));
  c.arrays.emplace("meta.tokens", Tensor::scalar(double(b.K)));
  c.arrays.emplace("meta.token_dim", Tensor::scalar(double(b.d)));
  c.arrays.emplace("meta.decode_steps", Tensor::scalar(double(b.s_eval)));
  c.arrays.emplace("meta.width", Tensor::scalar(double(b.enc_spec.width)));
  c.arrays.emplace("meta.depth", Tensor::scalar(double(b.enc_spec.depth)));
  return c;
}

inline TokenizerBundle tokenizer_from_checkpoint(const Checkpoint& c) {
  auto meta = [&](const std::string& key) {
    auto it = c.arrays.find(key);
    if (it == c.arrays.end())
      throw TkError("checkpoint", key, "missing metadata array", 1);
    return it->second.data.at(0);
  };
  if (meta("meta.kind") != kKindTokenizer)
    throw TkError("checkpoint", "meta.kind", "not a tokenizer checkpoint", 1);
  Config cfg;
  cfg.tok_k = std::size_t(meta("meta.tokens"));
  cfg.tok_d = std::size_t(meta("meta.token_dim"));
  cfg.tok_s_eval = std::size_t(meta("meta.decode_steps"));
  cfg.tok_width = std::size_t(meta("meta.width"));
  cfg.tok_depth = std::size_t(meta("meta.depth"));
  cfg.tok_T = c.diffusion_steps;
  TokenizerBundle b = make_tokenizer(cfg, RngStream(0, {0}));
  for (auto& [name, t] : b.params.params) {
    auto it = c.arrays.find(name);
    if (it == c.arrays.end())
      throw TkError("checkpoint", name, "missing parameter array", 1);
    if (!(it->second.shape == t.shape))
      throw TkError("checkpoint", name, "parameter shape mismatch", 1);
    t = it->second;
  }
  return b;
}

}  // namespace tokenlab
