#include <catch2/catch_amalgamated.hpp>

#include "autoda/core.hpp"
#include "autoda/rng.hpp"
#include "autoda/victims.hpp"

using namespace autoda;

namespace {

InputVector vec2(double a, double b) { return InputVector({a, b}, Shape::flat(2)); }

}  // namespace

TEST_CASE("shape count and validation") {
  CHECK(Shape::flat(5).count() == 5);
  CHECK(Shape::chw(3, 32, 32).count() == 3072);
  CHECK(Shape{}.count() == 0);
  CHECK_THROWS_AS(InputVector({1.0, 2.0}, Shape::flat(3)), ShapeMismatch);
}

TEST_CASE("l2 distance") {
  CHECK(l2_distance(vec2(0.3, 0.4), vec2(0.3, 0.4)) == 0.0);
  CHECK(l2_distance(InputVector({1, 0, 0}, Shape::flat(3)), InputVector({0, 0, 0}, Shape::flat(3))) == 1.0);
  // sqrt(0.4^2 + 0.3^2) = 0.5
  CHECK(l2_distance(vec2(0.5, 0.5), vec2(0.1, 0.2)) == Catch::Approx(0.5).margin(1e-15));
  CHECK_THROWS_AS(l2_distance(vec2(0, 0), InputVector({0, 0, 0}, Shape::flat(3))), ShapeMismatch);
}

TEST_CASE("l2 distance is symmetric and satisfies the triangle inequality") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(6), b(6), c(6);
    rng.fill_normal(a);
    rng.fill_normal(b);
    rng.fill_normal(c);
    InputVector va(a, Shape::flat(6)), vb(b, Shape::flat(6)), vc(c, Shape::flat(6));
    CHECK(l2_distance(va, vb) == l2_distance(vb, va));
    CHECK(l2_distance(va, vc) <= l2_distance(va, vb) + l2_distance(vb, vc) + 1e-12);
  }
}

TEST_CASE("clamp_to_domain") {
  CHECK(clamp_to_domain(vec2(0.5, 0.5)).data == std::vector<double>{0.5, 0.5});
  CHECK(clamp_to_domain(vec2(-0.2, 1.3)).data == std::vector<double>{0.0, 1.0});
  CHECK(clamp_to_domain(vec2(1.0, 0.0)).data == std::vector<double>{1.0, 0.0});
}

TEST_CASE("clamp_to_domain is idempotent and a no-op in-domain") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> raw(4);
    for (double& v : raw) v = rng.uniform(-2.0, 3.0);
    InputVector x(raw, Shape::flat(4));
    InputVector once = clamp_to_domain(x);
    InputVector twice = clamp_to_domain(once);
    CHECK(once.data == twice.data);
    for (double v : once.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    InputVector in_domain({rng.uniform01(), rng.uniform01(), rng.uniform01(), rng.uniform01()},
                          Shape::flat(4));
    CHECK(clamp_to_domain(in_domain).data == in_domain.data);
  }
}

TEST_CASE("is_adversarial") {
  HyperplaneOracle oracle({1.0, 0.0}, 0.5, Shape::flat(2));
  InputVector x0 = vec2(0.2, 0.2);
  Label original = oracle.label_of(x0);
  CHECK(original == Label{0});

  QueryBudget budget{3};
  SECTION("the original is never adversarial against its own label") {
    CHECK_FALSE(is_adversarial(oracle, x0, original, budget));
    CHECK(budget.used == 1);
  }
  SECTION("a point across the hyperplane is adversarial") {
    CHECK(is_adversarial(oracle, vec2(0.9, 0.2), original, budget));
    CHECK(budget.used == 1);
  }
  SECTION("an exhausted budget refuses the query") {
    budget.used = budget.max_queries;
    CHECK_THROWS_AS(is_adversarial(oracle, x0, original, budget), BudgetExhausted);
    CHECK(budget.used == budget.max_queries);
  }
}

TEST_CASE("every query moves exactly one budget counter") {
  auto inner = std::make_shared<HyperplaneOracle>(std::vector<double>{1.0, 0.0}, 0.5, Shape::flat(2));
  CountingOracle counting(inner);
  QueryBudget budget{10};
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    InputVector x({rng.uniform01(), rng.uniform01()}, Shape::flat(2));
    is_adversarial(counting, x, Label{0}, budget);
    CHECK(counting.count() == budget.used);
  }
  CHECK(budget.used == 10);
}
