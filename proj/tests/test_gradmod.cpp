#include <fedbatch/datagen.hpp>
#include <fedbatch/gradmod.hpp>

#include <doctest.h>

#include <cmath>
#include <random>

using namespace fedbatch;

namespace {

GradientVector with_squared_norm(double sq) {
  GradientVector g = GradientVector::Zero(3);
  g[0] = std::sqrt(sq);
  return g;
}

}  // namespace

TEST_CASE("grad_change arithmetic") {
  CHECK(grad_change(4.0, 5.0) == 0.25);
  CHECK(grad_change(4.0, 2.0) == 0.5);
  CHECK(grad_change(3.7, 3.7) == 0.0);
  CHECK(grad_change(0.0, 1.0) == kCriticalSentinel);
  CHECK(grad_change(0.0, 0.0) == kCriticalSentinel);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-3, 1e3);
  for (int t = 0; t < 1000; ++t) {
    const double p = u(rng);
    const double c = u(rng);
    CHECK(std::abs(grad_change(p, c) - std::abs((c - p) / p)) <= 1e-15 * std::abs((c - p) / p));
  }
  CHECK_THROWS(grad_change(-1.0, 1.0));
}

TEST_CASE("select_factor follows the threshold rule") {
  StepPolicy p{4.0, 0.5};
  CHECK(select_factor(0.6, p) == 4.0);
  CHECK(select_factor(0.5, p) == 4.0);
  CHECK(select_factor(0.3, p) == 1.0);
  CHECK(select_factor(std::nan(""), p) == 1.0);
  CHECK(select_factor(kCriticalSentinel, p) == 1.0);
  p.invert_branches = true;
  CHECK(select_factor(0.6, p) == 1.0);
  CHECK(select_factor(0.3, p) == 4.0);
  const StepPolicy noop{1.0, 0.5};
  for (double d : {0.0, 0.2, 0.5, 10.0}) CHECK(select_factor(d, noop) == 1.0);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int t = 0; t < 200; ++t) {
    const double f = select_factor(u(rng), StepPolicy{3.0, 0.7});
    CHECK((f == 1.0 || f == 3.0));
  }
}

TEST_CASE("StepPolicy validation") {
  CHECK_THROWS((StepPolicy{0.5, 0.5}.validate()));
  CHECK_THROWS((StepPolicy{2.0, -0.1}.validate()));
  CHECK_THROWS((StepPolicy{2.0, 0.5, -1}.validate()));
  CHECK_NOTHROW((StepPolicy{2.0, 0.5}.validate()));
}

TEST_CASE("scale_gradient") {
  GradientVector g(2);
  g << 1.0, -2.0;
  const GradientVector s = scale_gradient(g, 4.0);
  CHECK(s[0] == 4.0);
  CHECK(s[1] == -8.0);
  CHECK((scale_gradient(g, 1.0).array() == g.array()).all());
  const GradientVector r = GradientVector::Random(50);
  CHECK(((scale_gradient(r, 3.0) - r) - 2.0 * r).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS(scale_gradient(g, std::nan("")));
}

TEST_CASE("NormTracker records deltas and cumulative norms") {
  NormTracker t;
  CHECK(std::isnan(t.observe(1.0)));
  CHECK(t.observe(4.0) == 3.0);
  CHECK(t.observe(4.0) == 0.0);
  CHECK(t.count() == 3);
  CHECK(t.cumulative() == std::vector<double>{1.0, 3.0, 5.0});
  CHECK(t.previous() == 4.0);
}

TEST_CASE("step mapper on the stream 1, 4, 4") {
  auto mapper = step_mapper(StepPolicy{2.0, 0.5});
  std::vector<double> factors;
  for (double sq : {1.0, 4.0, 4.0}) {
    const GradientVector g = with_squared_norm(sq);
    const GradientVector out = mapper->map(g);
    factors.push_back(mapper->last().factor);
    CHECK((out.array() == (mapper->last().factor * g).array()).all());
  }
  CHECK(factors == std::vector<double>{1.0, 2.0, 1.0});
  CHECK(std::isnan(mapper->decisions()[0].delta));
  CHECK(mapper->decisions()[1].delta == 3.0);
  CHECK(mapper->decisions()[2].delta == 0.0);
}

TEST_CASE("step mapper: constant norms never step up") {
  auto mapper = step_mapper(StepPolicy{4.0, 0.5});
  for (int i = 0; i < 20; ++i) mapper->map(with_squared_norm(2.5));
  for (const auto& d : mapper->decisions()) CHECK(d.factor == 1.0);
}

TEST_CASE("step mapper: warmup forces 1x but keeps the measured delta") {
  auto mapper = step_mapper(StepPolicy{2.0, 0.5, 3});
  for (double sq : {1.0, 4.0, 16.0, 64.0}) mapper->map(with_squared_norm(sq));
  const auto& d = mapper->decisions();
  CHECK(d[1].delta == 3.0);
  CHECK(d[1].factor == 1.0);
  CHECK(d[2].factor == 1.0);
  CHECK(d[3].factor == 2.0);
}

TEST_CASE("step mapper: zero predecessor norm is treated as critical") {
  auto mapper = step_mapper(StepPolicy{2.0, 0.5});
  mapper->map(with_squared_norm(0.0));
  mapper->map(with_squared_norm(1.0));
  CHECK(mapper->last().delta == kCriticalSentinel);
  CHECK(mapper->last().factor == 1.0);
}

TEST_CASE("identity and function mappers") {
  const GradientVector g = GradientVector::Random(4);
  IdentityMapper id;
  CHECK((id.map(g).array() == g.array()).all());
  FunctionMapper half([](const GradientVector& x) { return GradientVector(0.5 * x); });
  CHECK((half.map(g).array() == (0.5 * g).array()).all());
}

TEST_CASE("factor_histogram and cumulative_norms") {
  const std::vector<double> ones(7, 1.0);
  const auto h1 = factor_histogram(ones);
  CHECK(h1.size() == 1);
  CHECK(h1.at(1.0) == 7);
  const std::vector<double> mixed{1, 2, 2, 1, 2};
  const auto h2 = factor_histogram(mixed);
  CHECK(h2.at(1.0) == 2);
  CHECK(h2.at(2.0) == 3);
  CHECK_THROWS(factor_histogram(std::vector<double>{}));
  const std::vector<double> sq{4.0, 9.0, 0.0};
  CHECK(cumulative_norms(sq) == std::vector<double>{2.0, 5.0, 5.0});
}

TEST_CASE("estimate_gamma") {
  const Dataset ds = make_synthetic(4, 5, 40, 0.5, 3);
  const ModelSpec spec{{5, 8, 4}};
  const ParamVector w = init_params(spec, 1);
  const int n = static_cast<int>(ds.size());

  const auto full = estimate_gamma(spec, w, ds, n, n, 3, 7);
  for (double g : full.gamma_norms) CHECK(g == 0.0);

  const auto one = estimate_gamma(spec, w, ds, 8, 64, 1, 7);
  REQUIRE(one.gamma_norms.size() == 1);
  CHECK(one.mean_gamma_norm == one.gamma_norms[0]);

  const auto small = estimate_gamma(spec, w, ds, 8, 128, 20, 11);
  const auto mid = estimate_gamma(spec, w, ds, 64, 128, 20, 11);
  CHECK(small.mean_gamma_norm > mid.mean_gamma_norm);

  const auto again = estimate_gamma(spec, w, ds, 8, 128, 20, 11);
  CHECK(again.gamma_norms == small.gamma_norms);
  CHECK_THROWS(estimate_gamma(spec, w, ds, 8, n + 1, 2, 1));
  CHECK_THROWS(estimate_gamma(spec, w, ds, 8, 16, 0, 1));
}
