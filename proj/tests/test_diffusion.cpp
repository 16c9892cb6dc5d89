#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "tokenlab/diffusion.hpp"
#include "tokenlab/mlp.hpp"
#include "tokenlab/rng.hpp"

using namespace tokenlab;

TEST_CASE("schedule boundaries and monotonicity") {
  DiffusionSchedule s = make_schedule(64);
  REQUIRE(s.alpha_bar[0] == 1.0);
  REQUIRE(s.alpha_bar[64] <= 1e-4);
  for (std::size_t t = 1; t <= 64; ++t) REQUIRE(s.alpha_bar[t] < s.alpha_bar[t - 1]);
  for (std::size_t t = 0; t <= 64; ++t) {
    double a = s.alpha(t), g = s.sigma(t);
    REQUIRE(a * a + g * g == Catch::Approx(1.0).margin(1e-15));
  }
  REQUIRE_THROWS_AS(make_schedule(1), TkError);
}

TEST_CASE("forward noising endpoints") {
  DiffusionSchedule s = make_schedule(64);
  RngStream rng(5);
  Tensor x0 = rng.uniform_tensor({16});
  Tensor eps = rng.normal_tensor({16});
  Tensor at0 = forward_noise(x0, 0, eps, s);
  REQUIRE(at0.data == x0.data);
  Tensor atT = forward_noise(x0, 64, eps, s);
  for (std::size_t i = 0; i < 16; ++i)
    REQUIRE(std::abs(atT.data[i] - eps.data[i]) <= 1e-2 * (std::abs(x0.data[i]) + 1.0));
  REQUIRE_THROWS_AS(forward_noise(x0, 3, rng.normal_tensor({4}), s), TkError);
}

TEST_CASE("noised variance follows the schedule") {
  DiffusionSchedule s = make_schedule(64);
  RngStream rng(7);
  const std::size_t t = 20, n = 10000;
  // x0 with known variance 1/12 (uniform), eps standard normal
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double x0 = rng.uniform();
    double v = s.alpha(t) * x0 + s.sigma(t) * rng.normal();
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  double want = s.alpha_bar[t] / 12.0 + (1.0 - s.alpha_bar[t]);
  REQUIRE(var == Catch::Approx(want).epsilon(0.03));
}

TEST_CASE("posterior inverts the forward map") {
  DiffusionSchedule s = make_schedule(64);
  RngStream rng(11);
  Tensor x0 = rng.normal_tensor({32});
  Tensor eps = rng.normal_tensor({32});
  for (std::size_t t : {std::size_t(1), std::size_t(13), std::size_t(40), std::size_t(64)}) {
    Tensor xt = forward_noise(x0, t, eps, s);
    Tensor back = posterior_x0(xt, t, eps, s);
    for (std::size_t i = 0; i < 32; ++i)
      REQUIRE(back.data[i] == Catch::Approx(x0.data[i]).margin(1e-10));
  }
  // eps_hat = 0 scales by 1/alpha; t=0 is the identity
  Tensor xt = forward_noise(x0, 10, eps, s);
  Tensor scaled = posterior_x0(xt, 10, Tensor({32}), s);
  for (std::size_t i = 0; i < 32; ++i)
    REQUIRE(scaled.data[i] == Catch::Approx(xt.data[i] / s.alpha(10)).margin(1e-12));
  REQUIRE(posterior_x0(xt, 0, eps, s).data == xt.data);
}

TEST_CASE("ddim timesteps are uniform and end above zero") {
  auto ts = ddim_timesteps(64, 4);
  REQUIRE(ts == std::vector<std::size_t>{64, 48, 32, 16});
  REQUIRE(ddim_timesteps(64, 1) == std::vector<std::size_t>{64});
}

TEST_CASE("oracle denoiser makes ddim return the planted image") {
  DiffusionSchedule s = make_schedule(64);
  RngStream rng(13);
  Tensor x0 = rng.normal_tensor({1, 12});
  for (std::size_t steps : {std::size_t(1), std::size_t(4), std::size_t(8)}) {
    Tape tape;
    Tape::NodeId x0c = tape.constant(x0);
    Denoiser oracle = [&](Tape& t, Tape::NodeId xt, std::size_t tt) {
      // the noise consistent with x0: (x_t - alpha x0) / sigma
      return t.mul_const(t.add(xt, t.mul_const(x0c, -s.alpha(tt))), 1.0 / s.sigma(tt));
    };
    Tape::NodeId out = ddim_sample(tape, oracle, {1, 12}, steps, s, rng.fork(steps));
    for (std::size_t i = 0; i < 12; ++i)
      REQUIRE(tape.value(out).data[i] == Catch::Approx(x0.data[i]).margin(1e-10));
  }
}

TEST_CASE("ddim is deterministic under a fixed stream") {
  DiffusionSchedule s = make_schedule(64);
  ParamStore ps;
  MlpSpec spec{12 + kTimeEmbedDim, 12, 32, 1};
  mlp_init(ps, "net", spec, RngStream(3));

  auto run = [&] {
    Tape tape;
    auto leaves = ps.leaves(tape);
    Denoiser net = [&](Tape& t, Tape::NodeId xt, std::size_t tt) {
      auto temb = t.broadcast(t.constant(sinusoidal_embedding(double(tt), kTimeEmbedDim)),
                              {2, kTimeEmbedDim});
      return mlp_apply(t, leaves, "net", spec, t.concat_cols(xt, temb));
    };
    Tape::NodeId out = ddim_sample(tape, net, {2, 12}, 4, s, RngStream(99, {4}));
    return tape.value(out).data;
  };
  REQUIRE(run() == run());
}

TEST_CASE("ddim gradients w.r.t. the condition match finite differences") {
  DiffusionSchedule s = make_schedule(64);
  ParamStore ps;
  const std::size_t n = 8, zc = 4;
  MlpSpec spec{n + kTimeEmbedDim + zc, n, 24, 1};
  mlp_init(ps, "net", spec, RngStream(17));
  RngStream data(18);
  Tensor target = data.normal_tensor({1, n});

  auto graph = [&](Tape& t, const std::map<std::string, Tape::NodeId>& in) {
    auto leaves = ps.leaves(t);  // parameters enter as non-checked inputs
    Denoiser net = [&](Tape& tp, Tape::NodeId xt, std::size_t tt) {
      auto temb = tp.broadcast(tp.constant(sinusoidal_embedding(double(tt), kTimeEmbedDim)),
                               {1, kTimeEmbedDim});
      auto feat = tp.concat_cols(tp.concat_cols(xt, temb), in.at("z"));
      return mlp_apply(tp, leaves, "net", spec, feat);
    };
    Tape::NodeId sample = ddim_sample(t, net, {1, n}, 4, s, RngStream(7, {1}));
    return t.mse(sample, t.constant(target));
  };
  std::map<std::string, Tensor> point{{"z", data.normal_tensor({1, zc})}};
  REQUIRE(finite_difference_check(point, graph, 1e-6) <= 1e-4);
}
