#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gestalt/chart_io.hpp"
#include "gestalt/model.hpp"
#include "gestalt/prediction.hpp"
#include "gestalt/registry.hpp"
#include "helpers.hpp"

using namespace gestalt;
using testing::error_code_of;

namespace {

const GrowthChart& chart(const char* name) { return ReferenceRegistry::builtin().lookup(name); }

}  // namespace

TEST_CASE("term parsing and evaluation") {
  CHECK(parse_terms("1,x,x2") == std::vector<Term>{Term::kOne, Term::kX, Term::kX2});
  CHECK(parse_terms(" 1 , sqrtx ,x ") == std::vector<Term>{Term::kOne, Term::kSqrtX, Term::kX});
  CHECK(error_code_of([] { parse_terms("1,x3"); }) == ErrorCode::kParse);
  CHECK(error_code_of([] { parse_variable("HC"); }) == ErrorCode::kParse);
  CHECK(evaluate_term(Term::kX2, 3.0) == 9.0);
  CHECK(evaluate_term(Term::kSqrtX, 16.0) == 4.0);
  CHECK(error_code_of([] { evaluate_term(Term::kSqrtX, -1.0); }) == ErrorCode::kDomain);
}

TEST_CASE("basis construction") {
  CHECK(error_code_of([] { BasisSpec(Variable::kFA, {}); }) == ErrorCode::kInvalidArgument);
  CHECK(error_code_of([] { BasisSpec(Variable::kFA, {Term::kX, Term::kX}); }) ==
        ErrorCode::kInvalidArgument);
  const auto q = BasisSpec::quadratic(Variable::kFA);
  CHECK(q.without_last() == BasisSpec(Variable::kFA, {Term::kOne, Term::kX}));
  CHECK(error_code_of([] { BasisSpec(Variable::kFA, {Term::kOne}).without_last(); }) ==
        ErrorCode::kInvalidArgument);
  const std::vector<double> xs{2.0, 3.0};
  const auto X = q.design(xs);
  CHECK(X(0, 0) == 1.0);
  CHECK(X(1, 1) == 3.0);
  CHECK(X(1, 2) == 9.0);
  CHECK(BasisSpec::dating(Variable::kCRL).row(4.0)(1) == 2.0);
}

TEST_CASE("evaluation of published charts against hand arithmetic") {
  // eq1 at FA 56: -3.3108 - 0.2087*56 + 0.01525*56^2 and its variance polynomial.
  const auto e1 = evaluate(chart("eq1_ivf_crl"), 56.0);
  CHECK(e1.mean == doctest::Approx(-3.3108 - 0.2087 * 56 + 0.01525 * 3136).epsilon(1e-14));
  CHECK(*e1.sd == doctest::Approx(std::sqrt(46.2354 - 2.0194 * 56 + 0.0230 * 3136)).epsilon(1e-14));

  // Robinson's CRL curve is in GA; the query is FA.
  const double ga = 70.0;
  const double raw = 7.295 - 0.6444 * ga + 0.0144 * ga * ga;
  CHECK(evaluate_mean(chart("robinson_crl"), 56.0) == doctest::Approx(raw));
  CHECK(evaluate_mean(chart("robinson_crl"), 56.0, {.apply_correction = true}) ==
        doctest::Approx(raw - (1.0 + 0.037 * raw)));

  // Robinson's dating curve reports GA; the output is FA.
  CHECK(evaluate_mean(chart("robinson_fa"), 25.0) == doctest::Approx(23.73 + 8.052 * 5.0 - 14.0));

  // Papaioannou's CRL curve models sqrt(CRL).
  const double inner = -6.662367 + 0.246741 * ga - 0.001046 * ga * ga;
  CHECK(evaluate_mean(chart("papaioannou_crl"), 56.0) == doctest::Approx(inner * inner));
  CHECK(!evaluate(chart("robinson_crl"), 56.0).sd);
}

TEST_CASE("evaluation errors") {
  const auto& eq1 = chart("eq1_ivf_crl");
  CHECK(error_code_of([&] { evaluate(eq1, 25.9); }) == ErrorCode::kDomain);
  CHECK(error_code_of([&] { evaluate(eq1, 85.1); }) == ErrorCode::kDomain);
  CHECK(error_code_of([&] { evaluate(eq1, std::nan("")); }) == ErrorCode::kDomain);
  CHECK_NOTHROW(evaluate(eq1, 26.0));
  CHECK_NOTHROW(evaluate(eq1, 85.0));

  GrowthChart sq = chart("papaioannou_crl");
  sq.mean.coefficients = {-1.0, 0.0, 0.0};
  CHECK(error_code_of([&] { evaluate_mean(sq, 40.0); }) == ErrorCode::kDomain);

  GrowthChart flat = eq1;
  flat.variance = VarianceModel(BasisSpec(Variable::kFA, {Term::kOne}), {0.0});
  CHECK(error_code_of([&] { evaluate(flat, 40.0); }) == ErrorCode::kDegenerateVariance);
  CHECK_NOTHROW(evaluate_mean(flat, 40.0));
}

TEST_CASE("chart validation") {
  GrowthChart c = chart("eq1_ivf_crl");
  c.domain = {50, 40};
  CHECK(error_code_of([&] { validate(c); }) == ErrorCode::kInvalidArgument);
  c = chart("eq1_ivf_crl");
  c.kappa = 0.0;
  CHECK(error_code_of([&] { validate(c); }) == ErrorCode::kInvalidArgument);
  c = chart("eq1_ivf_crl");
  c.predicts = Predicts::kFaFromCrl;
  CHECK(error_code_of([&] { validate(c); }) == ErrorCode::kInvalidArgument);
  c = chart("eq3_spont_fa");
  c.response = Variable::kCRL;
  CHECK(error_code_of([&] { validate(c); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("curve intersection") {
  const BasisSpec q = BasisSpec::quadratic(Variable::kFA);
  const MeanModel parabola(q, {0.0, 0.0, 1.0});
  const MeanModel one(q, {1.0, 0.0, 0.0});
  const MeanModel line(q, {-1.0, 1.0, 0.0});

  CHECK(*curve_intersection(line, one, {0.0, 5.0}) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(*curve_intersection(line, one, {0.0, 5.0}) == *curve_intersection(one, line, {0.0, 5.0}));
  CHECK(*curve_intersection(parabola, one, {0.0, 3.0}) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(error_code_of([&] { curve_intersection(parabola, one, {-2.0, 2.0}); }) ==
        ErrorCode::kAmbiguous);
  CHECK(!curve_intersection(one, one, {0.0, 3.0}));
  CHECK(!curve_intersection(parabola, MeanModel(q, {0.0, 0.0, 0.0}), {-1.0, 1.0}));  // tangent
  CHECK(!curve_intersection(line, one, {3.0, 5.0}));
  CHECK(error_code_of([&] { curve_intersection(line, one, {1.0, 1.0}); }) ==
        ErrorCode::kInvalidArgument);
  CHECK(error_code_of([&] {
          curve_intersection(line, MeanModel(BasisSpec::quadratic(Variable::kCRL), {1, 0, 0}),
                             {0.0, 5.0});
        }) == ErrorCode::kInvalidArgument);

  // Root exactly on a grid point.
  const MeanModel at_two(q, {-2.0, 1.0, 0.0});
  CHECK(*curve_intersection(at_two, MeanModel(q, {0, 0, 0}), {0.0, 5.0}) ==
        doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("registry lookup") {
  const auto& reg = ReferenceRegistry::builtin();
  CHECK(reg.names().size() == 12);
  CHECK(reg.contains("eq4_ivf_fa"));
  CHECK(!reg.contains("eq5"));
  try {
    reg.lookup("nonexistent");
    FAIL("expected not-found");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNotFound);
    CHECK(std::string(e.what()).find("eq1_ivf_crl") != std::string::npos);
  }
  CHECK(reg.lookup("eq2_spont_crl").kappa == 1.85);
  CHECK_THROWS_AS(ReferenceRegistry({chart("eq1_ivf_crl"), chart("eq1_ivf_crl")}), Error);
}

TEST_CASE("chart JSON round trip keeps every digit") {
  for (const auto& name : ReferenceRegistry::builtin().names()) {
    const auto& c = chart(name.c_str());
    const auto back = chart_from_json(nlohmann::json::parse(chart_to_json(c).dump()));
    CHECK(back == c);
  }
  const auto path = testing::temp_path("eq3.json");
  save_chart(chart("eq3_spont_fa"), path);
  const auto loaded = load_chart(path);
  for (int i = 0; i < 100; ++i) {
    const double x = 1.0 + 83.0 * i / 99.0;
    const auto a = evaluate(chart("eq3_spont_fa"), x);
    const auto b = evaluate(loaded, x);
    CHECK(std::abs(a.mean - b.mean) <= 1e-15 * std::abs(a.mean));
    CHECK(std::abs(*a.sd - *b.sd) <= 1e-15 * *a.sd);
  }
  std::filesystem::remove(path);
}

TEST_CASE("chart loading errors") {
  auto doc = chart_to_json(chart("eq1_ivf_crl"));
  doc.erase("variance_coefficients");
  const auto no_var = chart_from_json(doc);
  CHECK(!no_var.variance);
  CHECK(error_code_of([&] { predict_with_ci(no_var, 40.0); }) == ErrorCode::kUnsupported);

  doc = chart_to_json(chart("eq1_ivf_crl"));
  doc["schema_version"] = 2;
  CHECK(error_code_of([&] { chart_from_json(doc); }) == ErrorCode::kSchema);
  doc = chart_to_json(chart("eq1_ivf_crl"));
  doc.erase("mean_coefficients");
  CHECK(error_code_of([&] { chart_from_json(doc); }) == ErrorCode::kSchema);
  doc = chart_to_json(chart("eq1_ivf_crl"));
  doc["mean_coefficients"] = {1.0, 2.0};
  CHECK(error_code_of([&] { chart_from_json(doc); }) == ErrorCode::kSchema);
  doc = chart_to_json(chart("eq1_ivf_crl"));
  doc["domain"] = {1.0};
  CHECK(error_code_of([&] { chart_from_json(doc); }) == ErrorCode::kSchema);

  const auto path = testing::temp_path("corrupt.json");
  write_file(path, "{\"schema_version\": 1, \"name\": ");
  try {
    load_chart(path);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  std::filesystem::remove(path);
  CHECK(error_code_of([] { load_chart("/nonexistent/chart.json"); }) == ErrorCode::kLoad);
}
