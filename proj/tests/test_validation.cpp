#include <doctest.h>

#include <cmath>
#include <random>

#include "gestalt/registry.hpp"
#include "gestalt/validation.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace gestalt;
using testing::error_code_of;

namespace {

const GrowthChart& chart(const char* name) { return ReferenceRegistry::builtin().lookup(name); }

FitSpec ols_spec(int degree) {
  std::vector<Term> terms{Term::kOne, Term::kX, Term::kX2};
  terms.resize(static_cast<std::size_t>(degree) + 1);
  return FitSpec{.method = FitMethod::kLeastSquares,
                 .mean_basis = BasisSpec(Variable::kFA, terms),
                 .response = Variable::kCRL};
}

oracle::LoocvModel oracle_refit(int degree) {
  return [degree](const std::vector<double>& tx, const std::vector<double>& ty, double x) {
    return std::optional<double>(oracle::predict(oracle::wls(tx, ty, oracle::poly(degree)).beta,
                                                 oracle::poly(degree), x));
  };
}

oracle::LoocvModel oracle_fixed(const GrowthChart& c) {
  // Hand evaluation of a quadratic-in-FA CRL chart.
  const auto& b = c.mean.coefficients;
  const Interval d = c.domain;
  return [b, d](const std::vector<double>&, const std::vector<double>&, double x) -> std::optional<double> {
    if (x < d.lo || x > d.hi) return std::nullopt;
    return b[0] + b[1] * x + b[2] * x * x;
  };
}

Cohort random_cohort(std::size_t n, std::uint64_t seed, double lo = 30.0, double hi = 80.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::normal_distribution<double> z(0.0, 3.0);
  std::vector<double> fa(n), crl(n);
  for (std::size_t i = 0; i < n; ++i) {
    fa[i] = u(rng);
    crl[i] = std::max(1.0, -3.0 - 0.2 * fa[i] + 0.015 * fa[i] * fa[i] + z(rng));
  }
  return testing::cohort_from(fa, crl);
}

void check_against_oracle(const ValidationReport& r, const oracle::LoocvCounts& o,
                          const std::vector<std::string>& names) {
  for (std::size_t m = 0; m < names.size(); ++m) {
    bool found = false;
    for (const auto& b : r.overall) {
      if (b.model != names[m]) continue;
      found = true;
      CHECK(b.count == doctest::Approx(o.best[m]).epsilon(1e-12));
      CHECK(b.percent == doctest::Approx(100.0 * o.best[m] / static_cast<double>(r.n)));
    }
    CHECK(found);
  }
  std::size_t p = 0;
  for (std::size_t a = 0; a < names.size(); ++a) {
    for (std::size_t b = a + 1; b < names.size(); ++b, ++p) {
      const auto& pw = r.pairwise[p];
      CHECK(pw.a == names[a]);
      CHECK(pw.b == names[b]);
      CHECK(pw.compared == o.compared[a][b]);
      CHECK(pw.count_a == doctest::Approx(o.wins[a][b]));
      CHECK(pw.count_b == doctest::Approx(o.wins[b][a]));
      CHECK(pw.count_a + pw.count_b == doctest::Approx(static_cast<double>(pw.compared)));
    }
  }
}

}  // namespace

TEST_CASE("error summary") {
  const std::vector<double> pred{11.0, 9.0, 10.0, 14.0};
  const std::vector<double> obs{10.0, 10.0, 10.0, 10.0};
  const auto s = error_summary(pred, obs);
  CHECK(s.n == 4);
  CHECK(s.min == -1.0);
  CHECK(s.max == 4.0);
  CHECK(s.median == 0.5);
  CHECK(s.mean == 1.0);
  CHECK(s.min_abs == 0.0);
  CHECK(s.median_abs == 1.0);
  CHECK(s.mean_abs == 1.5);
  CHECK(*s.std_dev == doctest::Approx(std::sqrt((0.0 + 4.0 + 1.0 + 9.0) / 3.0)));
  CHECK(*s.mean_abs_rel == doctest::Approx(15.0));

  const std::vector<double> one{2.0}, zero{0.0};
  const auto single = error_summary(one, zero);
  CHECK(!single.std_dev);
  CHECK(!single.mean_abs_rel);
  CHECK(!single.warnings.empty());
  CHECK(error_code_of([&] { error_summary(pred, one); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("LOOCV matches a brute-force oracle") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto c = random_cohort(12 + seed, seed);
    const std::vector<ModelUnderTest> models{
        ModelUnderTest::refit("linear", ols_spec(1)), ModelUnderTest::refit("quad", ols_spec(2)),
        ModelUnderTest::fixed("eq2", chart("eq2_spont_crl"))};
    const auto r = loocv_compare(c, models, Predicts::kCrlFromFa);
    const auto o = oracle::loocv(c.fa_values(), c.crl_values(),
                                 {oracle_refit(1), oracle_refit(2), oracle_fixed(chart("eq2_spont_crl"))});
    CHECK(r.n == c.size());
    check_against_oracle(r, o, {"linear", "quad", "eq2"});
    for (std::size_t i = 1; i < r.overall.size(); ++i) CHECK(r.overall[i - 1].count >= r.overall[i].count);
  }
}

TEST_CASE("LOOCV ties and exclusions") {
  // Two identical fixed charts tie on every fold.
  auto c = random_cohort(10, 3, 20.0, 60.0);
  const std::vector<ModelUnderTest> models{ModelUnderTest::fixed("a", chart("eq2_spont_crl")),
                                           ModelUnderTest::fixed("b", chart("eq2_spont_crl")),
                                           ModelUnderTest::refit("quad", ols_spec(2))};
  const auto r = loocv_compare(c, models, Predicts::kCrlFromFa);
  const auto o = oracle::loocv(c.fa_values(), c.crl_values(),
                               {oracle_fixed(chart("eq2_spont_crl")), oracle_fixed(chart("eq2_spont_crl")),
                                oracle_refit(2)});
  check_against_oracle(r, o, {"a", "b", "quad"});
  CHECK(r.pairwise[0].count_a == doctest::Approx(static_cast<double>(r.pairwise[0].compared) / 2.0));
  CHECK(!r.exclusions.empty());
  for (const auto& e : r.exclusions) CHECK(c[e.observation].fa < 26.0);
  CHECK(r.pairwise[0].compared + r.exclusions.size() / 2 == c.size());
}

TEST_CASE("LOOCV argument checks") {
  const auto c = random_cohort(10, 4);
  const std::vector<ModelUnderTest> one{ModelUnderTest::refit("q", ols_spec(2))};
  CHECK(error_code_of([&] { loocv_compare(c, one, Predicts::kCrlFromFa); }) == ErrorCode::kInvalidArgument);
  const std::vector<ModelUnderTest> dup{ModelUnderTest::refit("q", ols_spec(2)),
                                        ModelUnderTest::refit("q", ols_spec(1))};
  CHECK(error_code_of([&] { loocv_compare(c, dup, Predicts::kCrlFromFa); }) == ErrorCode::kInvalidArgument);
  const std::vector<ModelUnderTest> wrong{ModelUnderTest::refit("q", ols_spec(2)),
                                          ModelUnderTest::fixed("dating", chart("eq4_ivf_fa"))};
  CHECK(error_code_of([&] { loocv_compare(c, wrong, Predicts::kCrlFromFa); }) ==
        ErrorCode::kInvalidArgument);

  // Three points cannot support a quadratic refit on two of them.
  const auto tiny = random_cohort(3, 5);
  const std::vector<ModelUnderTest> ms{ModelUnderTest::refit("q", ols_spec(2)),
                                       ModelUnderTest::refit("l", ols_spec(1))};
  try {
    loocv_compare(tiny, ms, Predicts::kCrlFromFa);
    FAIL("expected fold failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFoldFailure);
    CHECK(std::string(e.what()).find("q") != std::string::npos);
  }
}

TEST_CASE("count formatting and report rendering") {
  CHECK(format_count_percent(192, 33.68) == "192 (33.68)");
  CHECK(format_count_percent(0, 0) == "0 (0.00)");
  CHECK(format_count_percent(12.5, 2.5) == "12.50 (2.50)");

  const auto c = random_cohort(15, 6);
  const std::vector<ModelUnderTest> models{ModelUnderTest::refit("linear", ols_spec(1)),
                                           ModelUnderTest::refit("quad", ols_spec(2))};
  const auto r = loocv_compare(c, models, Predicts::kCrlFromFa);
  const auto text = render_text(r);
  CHECK(text.find("linear") != std::string::npos);
  CHECK(text.find("Abs. error median") != std::string::npos);
  const auto j = report_to_json(r);
  CHECK(j["n"] == 15);
  CHECK(j["overall"].size() == 2);
  CHECK(j["pairwise"].size() == 1);
  CHECK(j["metadata"]["error_convention"].is_string());
}

TEST_CASE("rank-sum test against permutation oracle") {
  const std::vector<double> a{1.1, 2.3, 2.9, 4.0};
  const std::vector<double> b{3.1, 5.2, 6.0, 7.7};
  const auto r = wilcoxon_rank_sum(a, b);
  CHECK(r.u == oracle::mann_whitney_u(a, b));
  CHECK(r.rank_sum == doctest::Approx(r.u + 4.0 * 5.0 / 2.0));
  // Continuity-corrected normal approximation recomputed from U.
  const double mu = 8.0, var = 4.0 * 4.0 * 9.0 / 12.0;
  const double z = (std::fabs(r.u - mu) - 0.5) / std::sqrt(var);
  CHECK(r.p_value == doctest::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-12));
  CHECK(std::fabs(r.p_value - oracle::exact_rank_sum_p(a, b)) < 0.03);

  // Ties use midranks and the corrected variance.
  const std::vector<double> ta{1, 2, 2, 3, 5}, tb{2, 3, 3, 4};
  const auto t = wilcoxon_rank_sum(ta, tb);
  CHECK(t.u == oracle::mann_whitney_u(ta, tb));
  CHECK(std::fabs(t.p_value - oracle::exact_rank_sum_p(ta, tb)) < 0.1);

  const std::vector<double> same{4, 4, 4};
  CHECK(wilcoxon_rank_sum(same, same).p_value == 1.0);
  CHECK(error_code_of([&] { wilcoxon_rank_sum(std::vector<double>{}, b); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("Chow test against separate-fit oracle") {
  const std::vector<double> xa{1, 2, 3, 4, 5, 6}, ya{1.2, 1.9, 3.2, 3.8, 5.1, 6.0};
  const std::vector<double> xb{1, 2, 3, 4, 5, 6}, yb{2.1, 3.9, 6.2, 7.8, 10.1, 12.2};
  const BasisSpec line(Variable::kFA, {Term::kOne, Term::kX});
  const auto r = chow_test(xa, ya, xb, yb, line);

  std::vector<double> xp(xa), yp(ya);
  xp.insert(xp.end(), xb.begin(), xb.end());
  yp.insert(yp.end(), yb.begin(), yb.end());
  const double sp = oracle::wls(xp, yp, oracle::poly(1)).ssr;
  const double sa = oracle::wls(xa, ya, oracle::poly(1)).ssr;
  const double sb = oracle::wls(xb, yb, oracle::poly(1)).ssr;
  const double f = ((sp - sa - sb) / 2.0) / ((sa + sb) / 8.0);
  CHECK(r.df1 == 2);
  CHECK(r.df2 == 8);
  CHECK(r.f == doctest::Approx(f).epsilon(1e-9));
  // F(2, d) upper tail is (1 + 2F/d)^(-d/2).
  CHECK(r.p_value == doctest::Approx(std::pow(1.0 + 2.0 * f / 8.0, -4.0)).epsilon(1e-9));

  const std::vector<double> exact{1, 2, 3, 4, 5, 6};
  CHECK(error_code_of([&] { chow_test(xa, exact, xb, exact, line); }) == ErrorCode::kDegenerate);
  const std::vector<double> two{1, 2};
  CHECK(error_code_of([&] { chow_test(two, two, xb, yb, line); }) == ErrorCode::kInsufficientData);
}

TEST_CASE("Wald test against closed-form chi-square") {
  Eigen::VectorXd d(2);
  d << 1.0, -2.0;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(2, 2);
  v(0, 0) = 0.5;
  v(1, 1) = 2.0;
  auto r = wald_test(d, v);
  CHECK(r.df == 2);
  CHECK(r.statistic == doctest::Approx(1.0 / 0.5 + 4.0 / 2.0));
  CHECK(r.p_value == doctest::Approx(oracle::chi2_sf(4.0, 2)).epsilon(1e-10));

  Eigen::VectorXd d3(3);
  d3 << 0.3, -0.1, 0.4;
  Eigen::MatrixXd v3(3, 3);
  v3 << 0.04, 0.01, 0.0, 0.01, 0.05, 0.02, 0.0, 0.02, 0.09;
  oracle::Matrix m(3, std::vector<long double>(3));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = v3(i, j);
  const auto sol = oracle::solve(m, {d3(0), d3(1), d3(2)});
  const double w = static_cast<double>(d3(0) * sol[0] + d3(1) * sol[1] + d3(2) * sol[2]);
  r = wald_test(d3, v3);
  CHECK(r.df == 3);
  CHECK(r.statistic == doctest::Approx(w).epsilon(1e-10));
  CHECK(r.p_value == doctest::Approx(oracle::chi2_sf(w, 3)).epsilon(1e-9));

  // Rank one covariance: pseudo-inverse and a single degree of freedom.
  Eigen::MatrixXd s = Eigen::MatrixXd::Ones(2, 2);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(2);
  r = wald_test(ones, s);
  CHECK(r.rank_deficient);
  CHECK(r.df == 1);
  CHECK(r.statistic == doctest::Approx(1.0));
  CHECK(r.p_value == doctest::Approx(std::erfc(std::sqrt(0.5))));
  CHECK(!r.warnings.empty());

  CHECK(wald_test(Eigen::VectorXd::Zero(2), v).p_value == 1.0);
  CHECK(error_code_of([&] { wald_test(d3, v); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("over-estimation t-test") {
  const std::vector<double> ea{1, 1, -1}, eb{-1, -1, -1};
  const auto r = overestimation_test(ea, eb);
  CHECK(r.n == 3);
  CHECK(r.mean_difference == doctest::Approx(2.0 / 3.0));
  CHECK(r.t == doctest::Approx(2.0));
  CHECK(r.p_value == doctest::Approx(oracle::t2_sf(2.0)).epsilon(1e-10));
  CHECK(!r.degenerate);

  const std::vector<double> pos{1, 1, 1}, neg{-1, -1, -1};
  const auto all = overestimation_test(pos, neg);
  CHECK(all.degenerate);
  CHECK(all.p_value == 0.0);
  const auto none = overestimation_test(pos, pos);
  CHECK(none.degenerate);
  CHECK(none.p_value == 1.0);
  CHECK(error_code_of([&] { overestimation_test(pos, std::vector<double>{1.0}); }) ==
        ErrorCode::kInvalidArgument);
}
