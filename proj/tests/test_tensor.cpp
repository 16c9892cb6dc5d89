#include <catch2/catch_amalgamated.hpp>

#include "tokenlab/tensor.hpp"

using namespace tokenlab;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3}, 1.5);
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rank() == 2);
  REQUIRE(t.dim(0) == 2);
  REQUIRE(t.last_dim() == 3);
  REQUIRE(t.rows_collapsed() == 2);
  for (double v : t.data) REQUIRE(v == 1.5);

  Tensor r3({4, 2, 3});
  REQUIRE(r3.last_dim() == 3);
  REQUIRE(r3.rows_collapsed() == 8);
}

TEST_CASE("tensor constructors validate") {
  REQUIRE_THROWS_AS(Tensor({2, 0}), TkError);
  REQUIRE_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0, 2.0}), TkError);
  REQUIRE_THROWS_AS(Tensor({4}, 0.0).reshaped({3}), TkError);
}

TEST_CASE("tensor reshaped preserves data") {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor v = t.reshaped({3, 2});
  REQUIRE(v.shape == Shape{3, 2});
  REQUIRE(v.data == t.data);
}

TEST_CASE("tensor finiteness probe") {
  Tensor t({2}, std::vector<double>{1.0, 2.0});
  REQUIRE(t.all_finite());
  t.data[1] = std::nan("");
  REQUIRE_FALSE(t.all_finite());
  t.data[1] = 1.0 / 0.0;
  REQUIRE_FALSE(t.all_finite());
}

TEST_CASE("vector helpers") {
  std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  REQUIRE(dot(a, b) == Catch::Approx(32.0));
  REQUIRE(l2_norm(a) == Catch::Approx(std::sqrt(14.0)));
  Tensor ta({3}, a), tb({3}, b);
  REQUIRE(sum_sq_diff(ta, tb) == Catch::Approx(27.0));
}

TEST_CASE("error formatting carries module and key") {
  TkError e("diffusion", "schedule", "bad value", 2);
  REQUIRE(std::string(e.what()) == "diffusion/schedule: bad value");
  REQUIRE(e.exit_code == 2);
}
