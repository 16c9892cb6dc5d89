#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "tokenlab/optimizer.hpp"
#include "tokenlab/rng.hpp"

using namespace tokenlab;

TEST_CASE("first step moves by roughly lr in the gradient direction") {
  // with bias correction the first update is lr * g / (|g| + eps)
  ParamStore ps;
  ps.add("w", Tensor({1}, std::vector<double>{1.0}));
  Adam opt(0.1);
  opt.step(ps, {{"w", Tensor({1}, std::vector<double>{0.5})}});
  REQUIRE(ps.at("w").data[0] == Catch::Approx(0.9).margin(1e-7));

  ParamStore neg;
  neg.add("w", Tensor({1}, std::vector<double>{1.0}));
  Adam opt2(0.1);
  opt2.step(neg, {{"w", Tensor({1}, std::vector<double>{-2.0})}});
  REQUIRE(neg.at("w").data[0] == Catch::Approx(1.1).margin(1e-7));
}

TEST_CASE("zero gradients leave parameters bitwise unchanged") {
  ParamStore ps;
  ps.add("w", Tensor({3}, std::vector<double>{0.25, -1.5, 3.0}));
  std::vector<double> before = ps.at("w").data;
  Adam opt(0.01);
  for (int i = 0; i < 5; ++i) opt.step(ps, {{"w", Tensor({3}, 0.0)}});
  REQUIRE(ps.at("w").data == before);
}

TEST_CASE("identical runs produce identical parameters") {
  auto run = [] {
    RngStream rng(17);
    ParamStore ps;
    ps.add("a", rng.normal_tensor({4, 4}));
    ps.add("b", rng.normal_tensor({4}));
    Adam opt(0.003);
    RngStream gs(18);
    for (int i = 0; i < 50; ++i) {
      std::map<std::string, Tensor> grads;
      grads["a"] = gs.normal_tensor({4, 4});
      grads["b"] = gs.normal_tensor({4});
      opt.step(ps, grads);
    }
    return ps;
  };
  ParamStore x = run(), y = run();
  REQUIRE(x.at("a").data == y.at("a").data);
  REQUIRE(x.at("b").data == y.at("b").data);
}

TEST_CASE("adam descends a quadratic bowl") {
  // f(w) = sum w^2; gradient 2w
  ParamStore ps;
  ps.add("w", Tensor({4}, std::vector<double>{3.0, -2.0, 1.0, 0.5}));
  Adam opt(0.05);
  for (int i = 0; i < 500; ++i) {
    Tensor g({4});
    for (int j = 0; j < 4; ++j) g.data[j] = 2.0 * ps.at("w").data[j];
    opt.step(ps, {{"w", g}});
  }
  for (double v : ps.at("w").data) REQUIRE(std::abs(v) < 1e-3);
}

TEST_CASE("shape mismatches and unknown names are rejected") {
  ParamStore ps;
  ps.add("w", Tensor({2}, 0.0));
  REQUIRE_THROWS_AS(ps.add("w", Tensor({2}, 0.0)), TkError);
  REQUIRE_THROWS_AS(ps.at("missing"), TkError);
  Adam opt(0.1);
  REQUIRE_THROWS_AS(opt.step(ps, {{"w", Tensor({3}, 0.0)}}), TkError);
}

TEST_CASE("param leaves register on a tape in stable order") {
  ParamStore ps;
  ps.add("z_late", Tensor({1}, 1.0));
  ps.add("a_early", Tensor({1}, 2.0));
  Tape t;
  auto leaves = ps.leaves(t);
  REQUIRE(leaves.size() == 2);
  // std::map order: a_early first
  REQUIRE(leaves.at("a_early") < leaves.at("z_late"));
  REQUIRE(ps.count() == 2);
}
