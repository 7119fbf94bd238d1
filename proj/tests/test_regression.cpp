#include <doctest.h>

#include <cmath>
#include <random>

#include "gestalt/regression.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace gestalt;
using testing::error_code_of;

namespace {

const BasisSpec kLinear(Variable::kFA, {Term::kOne, Term::kX});
const BasisSpec kQuad = BasisSpec::quadratic(Variable::kFA);

}  // namespace

TEST_CASE("least squares matches the normal equations on five points") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> y{2.1, 3.9, 6.2, 8.1, 9.8};
  for (const auto& [basis, degree] : {std::pair{kLinear, 1}, std::pair{kQuad, 2}}) {
    const auto fit = fit_least_squares(x, y, basis);
    const auto ref = oracle::wls(x, y, oracle::poly(degree));
    for (std::size_t j = 0; j < ref.beta.size(); ++j) {
      CHECK(fit.mean.coefficients[j] == doctest::Approx(ref.beta[j]).epsilon(1e-9));
    }
    double ssr = 0.0;
    for (double r : fit.residuals) ssr += r * r;
    CHECK(ssr == doctest::Approx(ref.ssr).epsilon(1e-9));
  }

  const std::vector<double> w{1.0, 0.5, 2.0, 1.5, 0.25};
  const auto wfit = fit_least_squares(x, y, kQuad, w);
  const auto wref = oracle::wls(x, y, oracle::poly(2), w);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(wfit.mean.coefficients[j] == doctest::Approx(wref.beta[j]).epsilon(1e-9));
  }
}

TEST_CASE("least squares covariance is sigma^2 (X'X)^-1") {
  const std::vector<double> x{1, 2, 3, 4, 5, 6};
  const std::vector<double> y{1.2, 1.9, 3.2, 3.8, 5.1, 6.3};
  const auto fit = fit_least_squares(x, y, kLinear);
  const auto ref = oracle::wls(x, y, oracle::poly(1));
  const double s2 = ref.ssr / 4.0;
  // (X'X)^-1 for a straight line in closed form.
  double sx = 0, sxx = 0;
  for (double v : x) {
    sx += v;
    sxx += v * v;
  }
  const double det = 6.0 * sxx - sx * sx;
  CHECK(fit.coefficient_covariance(0, 0) == doctest::Approx(s2 * sxx / det).epsilon(1e-9));
  CHECK(fit.coefficient_covariance(0, 1) == doctest::Approx(-s2 * sx / det).epsilon(1e-9));
  CHECK(fit.coefficient_covariance(1, 1) == doctest::Approx(s2 * 6.0 / det).epsilon(1e-9));
}

TEST_CASE("exact data and poorly scaled covariates") {
  std::vector<double> x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(26.0 + 3.0 * i);
    y.push_back(-3.3108 - 0.2087 * x.back() + 0.01525 * x.back() * x.back());
  }
  const auto fit = fit_least_squares(x, y, kQuad);
  CHECK(fit.mean.coefficients[0] == doctest::Approx(-3.3108).epsilon(1e-9));
  CHECK(fit.mean.coefficients[2] == doctest::Approx(0.01525).epsilon(1e-9));
  CHECK(fit.r_squared == 1.0);
}

TEST_CASE("least squares error paths") {
  const std::vector<double> same{5, 5, 5, 5, 5};
  const std::vector<double> y{1, 2, 3, 4, 5};
  try {
    fit_least_squares(same, y, kQuad);
    FAIL("expected singular");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSingular);
    CHECK(std::string(e.what()).find("collinear") != std::string::npos);
  }
  const std::vector<double> three{1, 2, 3};
  CHECK(error_code_of([&] { fit_least_squares(three, std::vector<double>{1, 2, 3}, kQuad); }) ==
        ErrorCode::kInsufficientData);
  CHECK(error_code_of([&] { fit_least_squares(y, three, kQuad); }) == ErrorCode::kInvalidArgument);
  CHECK(error_code_of([&] { fit_least_squares(y, y, kQuad, std::vector<double>{1, 1}); }) ==
        ErrorCode::kInvalidArgument);
  CHECK(error_code_of([&] {
          fit_least_squares(y, y, kQuad, std::vector<double>{1, 1, -1, 1, 1});
        }) == ErrorCode::kDegenerateVariance);
}

TEST_CASE("highest-degree F test") {
  SUBCASE("five points, closed-form p-value") {
    const std::vector<double> fa{30, 31, 32, 33, 34};
    const std::vector<double> crl{5.0, 5.9, 7.1, 8.0, 9.4};
    const auto c = testing::cohort_from(fa, crl);
    const auto fit = fit_least_squares(c, kQuad, Variable::kCRL);
    const auto t = highest_degree_test(fit, c);
    const double full = oracle::wls(fa, crl, oracle::poly(2)).ssr;
    const double reduced = oracle::wls(fa, crl, oracle::poly(1)).ssr;
    const double f = (reduced - full) / (full / 2.0);
    CHECK(t.f == doctest::Approx(f).epsilon(1e-9));
    CHECK(t.df1 == 1.0);
    CHECK(t.df2 == 2.0);
    CHECK(t.p_value == doctest::Approx(2.0 * oracle::t2_sf(std::sqrt(f))).epsilon(1e-9));
  }
  SUBCASE("eight points") {
    const std::vector<double> fa{30, 35, 40, 45, 50, 55, 60, 65};
    const std::vector<double> crl{4.2, 7.9, 12.5, 18.4, 24.1, 31.6, 39.0, 47.9};
    const auto c = testing::cohort_from(fa, crl);
    const auto t = highest_degree_test(fit_least_squares(c, kQuad, Variable::kCRL), c);
    const double full = oracle::wls(fa, crl, oracle::poly(2)).ssr;
    const double reduced = oracle::wls(fa, crl, oracle::poly(1)).ssr;
    CHECK(t.f == doctest::Approx((reduced - full) / (full / 5.0)).epsilon(1e-9));
    CHECK(t.df2 == 5.0);
    CHECK(t.p_value < 0.01);
  }
  SUBCASE("exact quadratic data") {
    const std::vector<double> fa{30, 31, 32, 33, 34};
    std::vector<double> crl;
    for (double v : fa) crl.push_back(0.01 * v * v);
    const auto c = testing::cohort_from(fa, crl);
    const auto t = highest_degree_test(fit_least_squares(c, kQuad, Variable::kCRL), c);
    CHECK(t.f > 1e10);
    CHECK(t.p_value < 1e-6);
  }
  CHECK(f_upper_tail(0.0, 1, 10) == 1.0);
}

TEST_CASE("robust fit downweights gross outliers") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.5);
  std::vector<double> x, y;
  for (int i = 0; i < 60; ++i) {
    x.push_back(i * 0.5);
    y.push_back(1.0 + 2.0 * x.back() + noise(rng));
  }
  y[10] += 40.0;
  y[45] -= 35.0;
  const auto fit = fit_robust(x, y, kLinear);
  CHECK(fit.converged);
  CHECK(fit.robust_weights[10] == 0.0);
  CHECK(fit.robust_weights[45] == 0.0);
  CHECK(fit.mean.coefficients[0] == doctest::Approx(1.0).epsilon(0.3));
  CHECK(fit.mean.coefficients[1] == doctest::Approx(2.0).epsilon(0.02));
  CHECK(fit.coefficient_covariance(1, 1) > 0.0);
  const auto ols = fit_least_squares(x, y, kLinear);
  CHECK(std::abs(ols.mean.coefficients[1] - 2.0) > std::abs(fit.mean.coefficients[1] - 2.0));
}

TEST_CASE("robust fit edge cases") {
  std::vector<double> x, y;
  for (int i = 0; i < 10; ++i) {
    x.push_back(i);
    y.push_back(3.0 - 0.5 * i);
  }
  const auto exact = fit_robust(x, y, kLinear);
  CHECK(exact.converged);
  CHECK(exact.robust_weights == std::vector<double>(10, 1.0));
  CHECK(exact.mean.coefficients[1] == doctest::Approx(-0.5));

  // Most points exact, one off: the off point gets weight 0.
  y[3] += 5.0;
  const auto mostly = fit_robust(x, y, kLinear);
  CHECK(mostly.robust_weights[3] == 0.0);
  CHECK(mostly.mean.coefficients[0] == doctest::Approx(3.0));

  CHECK(error_code_of([] {
          fit_robust(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{1, 2, 3, 4, 5}, kQuad);
        }) == ErrorCode::kInsufficientData);
  CHECK(error_code_of([&] { fit_robust(x, y, kLinear, {}, RobustOptions{.tuning = 0.0}); }) ==
        ErrorCode::kInvalidArgument);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> ny;
  for (double v : x) ny.push_back(v + noise(rng));
  const auto capped = fit_robust(x, ny, kLinear, {}, RobustOptions{.max_iterations = 1});
  CHECK(!capped.converged);
  CHECK(!capped.warnings.empty());
}

TEST_CASE("heteroskedastic fit recovers a linear model with variance 1 + 0.5x") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> ux(1.0, 20.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> x, y;
  for (int i = 0; i < 2000; ++i) {
    x.push_back(ux(rng));
    y.push_back(2.0 + 0.7 * x.back() + std::sqrt(1.0 + 0.5 * x.back()) * z(rng));
  }
  const auto fit = fit_heteroskedastic(x, x, y, kLinear, kLinear);
  CHECK(std::abs(fit.mean.coefficients[0] - 2.0) < 0.15);
  CHECK(std::abs(fit.mean.coefficients[1] - 0.7) < 0.05);
  REQUIRE(fit.variance);
  CHECK(fit.variance->coefficients[1] == doctest::Approx(0.5).epsilon(0.3));
  // Final weights are 1 / sigma^2 of the variance model refitted before the
  // last solve, so they decrease along x.
  const auto lo = std::min_element(x.begin(), x.end()) - x.begin();
  const auto hi = std::max_element(x.begin(), x.end()) - x.begin();
  CHECK(fit.working_weights[static_cast<std::size_t>(lo)] >
        fit.working_weights[static_cast<std::size_t>(hi)]);
  CHECK(fit.coefficient_covariance(1, 1) > 0.0);
}

TEST_CASE("heteroskedastic variance floor") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> ux(1.0, 20.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> x, y, y10;
  for (int i = 0; i < 500; ++i) {
    x.push_back(ux(rng));
    y.push_back(1.0 + 0.3 * x.back() + z(rng));
    y10.push_back(10.0 * y.back());
  }
  // Homoskedastic noise keeps the fitted variance far above the relative floor.
  const auto with_floor = fit_heteroskedastic(x, x, y, kLinear, kLinear);
  HeteroskedasticOptions bare;
  bare.min_variance_fraction = 0.0;
  const auto without = fit_heteroskedastic(x, x, y, kLinear, kLinear, {}, bare);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(with_floor.mean.coefficients[j] == doctest::Approx(without.mean.coefficients[j]).epsilon(1e-12));
  }
  // Scaling the response scales the mean fit.
  const auto scaled = fit_heteroskedastic(x, x, y10, kLinear, kLinear);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(scaled.mean.coefficients[j] == doctest::Approx(10.0 * with_floor.mean.coefficients[j]).epsilon(1e-8));
  }
  for (double bad : {-0.1, 1.0}) {
    HeteroskedasticOptions o;
    o.min_variance_fraction = bad;
    CHECK(error_code_of([&] { fit_heteroskedastic(x, x, y, kLinear, kLinear, {}, o); }) ==
          ErrorCode::kInvalidArgument);
  }
}

TEST_CASE("variance model and degeneracy") {
  const std::vector<double> x{1, 2, 3, 4, 5, 6};
  const std::vector<double> r{0, 0, 0, 0, 0, 0};
  const auto vf = fit_variance_model(r, x, kLinear);
  CHECK(vf.degenerate);
  CHECK(!vf.warnings.empty());
  const std::vector<double> r2{1, -1, 1, -1, 1, -1};
  CHECK(!fit_variance_model(r2, x, kLinear).degenerate);
}

TEST_CASE("fit dispatch and response handling") {
  std::vector<double> fa, crl;
  for (int i = 0; i < 30; ++i) {
    fa.push_back(30.0 + i);
    crl.push_back(0.02 * fa.back() * fa.back() - 0.5 * fa.back() + 0.3 * std::sin(i));
  }
  const auto c = testing::cohort_from(fa, crl);
  for (auto m : {FitMethod::kLeastSquares, FitMethod::kHeteroskedastic, FitMethod::kRobust}) {
    FitSpec spec{.method = m};
    const auto r = fit(c, spec);
    CHECK(r.method == m);
    CHECK(r.mean.coefficients.size() == 3);
    CHECK(r.response == Variable::kCRL);
    CHECK((r.variance.has_value() == (m == FitMethod::kHeteroskedastic)));
  }
  CHECK(parse_fit_method("gls") == FitMethod::kHeteroskedastic);
  CHECK(error_code_of([] { parse_fit_method("lasso"); }) == ErrorCode::kParse);
  CHECK(error_code_of([&] { response_values(c, Variable::kGA); }) == ErrorCode::kUnsupported);
  CHECK(covariate_values(c, Variable::kGA)[0] == 44.0);
  CHECK(default_response(Variable::kCRL) == Variable::kFA);
  CHECK(default_response(Variable::kGA) == Variable::kCRL);

  // A GA basis is the FA basis shifted by 14 days.
  const auto ga = fit_least_squares(c, BasisSpec::quadratic(Variable::kGA), Variable::kCRL);
  const auto fa_fit = fit_least_squares(c, kQuad, Variable::kCRL);
  CHECK(ga.mean(44.0 + 10) == doctest::Approx(fa_fit.mean(40.0)));
}
