#include <doctest.h>

#include "gestalt/cohort.hpp"
#include "helpers.hpp"

using namespace gestalt;
using testing::error_code_of;
using testing::row;

TEST_CASE("age conversion") {
  CHECK(convert_age(Age::fa(56), AgeKind::kGA) == Age::ga(70));
  CHECK(convert_age(Age::ga(70), AgeKind::kFA) == Age::fa(56));
  CHECK(convert_age(Age::fa(10), AgeKind::kFA) == Age::fa(10));
  CHECK(convert_age(Age::ga(14), AgeKind::kFA).value == 0.0);
  CHECK(error_code_of([] { convert_age(Age::ga(13.5), AgeKind::kFA); }) == ErrorCode::kDomain);
  CHECK(error_code_of([] { Age::fa(-1); }) == ErrorCode::kDomain);
  CHECK(error_code_of([] { Age::ga(std::nan("")); }) == ErrorCode::kDomain);
}

TEST_CASE("weeks and days rendering") {
  CHECK(fa_to_weeks_days(56) == WeeksDays{8, 0});
  CHECK(fa_to_weeks_days(26) == WeeksDays{3, 5});
  CHECK(fa_to_weeks_days(0) == WeeksDays{0, 0});
  CHECK(to_string(fa_to_weeks_days(85)) == "12 + 1");
  CHECK(error_code_of([] { fa_to_weeks_days(-1); }) == ErrorCode::kDomain);
}

TEST_CASE("source and date parsing") {
  CHECK(parse_source("IVF") == Source::kIVF);
  CHECK(parse_source("SPONTANEOUS") == Source::kSpontaneous);
  CHECK(to_string(Source::kIVF) == "IVF");
  CHECK(error_code_of([] { parse_source("ivf?"); }) == ErrorCode::kParse);
  CHECK(format_date(parse_date("2020-02-29")) == "2020-02-29");
  CHECK(error_code_of([] { parse_date("2021-02-29"); }) == ErrorCode::kParse);
  CHECK(error_code_of([] { parse_date("03/01/2021"); }) == ErrorCode::kParse);
}

TEST_CASE("measurement validation") {
  CHECK_NOTHROW(validate(row("a", 40, 10)));
  CHECK(error_code_of([] { validate(row("a", 40, 0)); }) == ErrorCode::kDomain);
  CHECK(error_code_of([] { validate(row("a", -1, 10)); }) == ErrorCode::kDomain);
  CHECK(error_code_of([] { validate(row("a", 40, 10, 0.0)); }) == ErrorCode::kDomain);
  CHECK(error_code_of([] { validate(row("a", 40, std::numeric_limits<double>::infinity())); }) ==
        ErrorCode::kDomain);
}

TEST_CASE("cohort is immutable and transformations return copies") {
  const Cohort c({row("a", 30, 5), row("b", 40, 12), row("c", 50, 20)}, "unit");
  CHECK(c.size() == 3);
  CHECK(c.fa_values() == std::vector<double>{30, 40, 50});
  CHECK(c.crl_values() == std::vector<double>{5, 12, 20});
  CHECK(c.total_weight() == 3.0);

  const std::vector<double> w{1, 2, 3};
  const Cohort weighted = c.with_weights(w);
  CHECK(weighted.total_weight() == 6.0);
  CHECK(c.total_weight() == 3.0);
  CHECK(error_code_of([&] { c.with_weights(std::vector<double>{1.0}); }) == ErrorCode::kInvalidArgument);

  const std::vector<std::size_t> idx{2, 0};
  const Cohort s = c.subset(idx);
  CHECK(s[0].pregnancy_id == "c");
  CHECK(s[1].pregnancy_id == "a");
  CHECK(s.provenance() == "unit");

  const Cohort w1 = c.without(1);
  CHECK(w1.size() == 2);
  CHECK(w1[1].pregnancy_id == "c");
  CHECK(c.with_provenance("other").provenance() == "other");
  CHECK(Cohort().empty());
  CHECK_THROWS_AS(Cohort({row("bad", 30, -1)}), Error);
}
