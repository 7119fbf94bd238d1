#include "gestalt/cohort.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "gestalt/error.hpp"

namespace gestalt {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDomain: return "domain";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kSingular: return "singular";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kDegenerateVariance: return "degenerate-variance";
    case ErrorCode::kAmbiguous: return "ambiguous";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kSchema: return "schema";
    case ErrorCode::kLoad: return "load";
    case ErrorCode::kReweight: return "reweight";
    case ErrorCode::kFoldFailure: return "fold-failure";
    case ErrorCode::kCollapse: return "collapse";
    case ErrorCode::kDegenerate: return "degenerate";
  }
  return "unknown";
}

namespace {

void check_age_value(double v) {
  if (!std::isfinite(v) || v < 0.0) {
    throw Error(ErrorCode::kDomain,
                "age must be finite and non-negative, got " + std::to_string(v));
  }
}

}  // namespace

Age Age::fa(double days) {
  check_age_value(days);
  return Age{days, AgeKind::kFA};
}

Age Age::ga(double days) {
  check_age_value(days);
  return Age{days, AgeKind::kGA};
}

Age convert_age(Age age, AgeKind target) {
  check_age_value(age.value);
  if (age.kind == target) return age;
  if (target == AgeKind::kGA) return Age{age.value + kGestationalOffsetDays, target};
  if (age.value < kGestationalOffsetDays) {
    throw Error(ErrorCode::kDomain, "GA " + std::to_string(age.value) +
                                        " d is below 14 d and has no FA");
  }
  return Age{age.value - kGestationalOffsetDays, target};
}

WeeksDays fa_to_weeks_days(int fa_days) {
  if (fa_days < 0) {
    throw Error(ErrorCode::kDomain,
                "negative age in days: " + std::to_string(fa_days));
  }
  return WeeksDays{fa_days / 7, fa_days % 7};
}

std::string to_string(WeeksDays wd) {
  return std::to_string(wd.weeks) + " + " + std::to_string(wd.days);
}

std::string_view to_string(Source source) {
  return source == Source::kIVF ? "IVF" : "SPONTANEOUS";
}

Source parse_source(std::string_view text) {
  if (text == "IVF" || text == "ivf") return Source::kIVF;
  if (text == "SPONTANEOUS" || text == "spontaneous") return Source::kSpontaneous;
  throw Error(ErrorCode::kParse, "unknown source '" + std::string(text) + "'");
}

Date parse_date(std::string_view text) {
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  char tail = 0;
  const std::string s(text);
  if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
    throw Error(ErrorCode::kParse, "bad date '" + s + "', expected YYYY-MM-DD");
  }
  Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) throw Error(ErrorCode::kParse, "invalid calendar date '" + s + "'");
  return date;
}

std::string format_date(Date date) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
  return buf;
}

void validate(const Measurement& m) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(m.crl)) {
    throw Error(ErrorCode::kDomain, "CRL must be positive for '" + m.pregnancy_id + "'");
  }
  if (!positive(m.fa)) {
    throw Error(ErrorCode::kDomain, "FA must be positive for '" + m.pregnancy_id + "'");
  }
  if (!positive(m.weight)) {
    throw Error(ErrorCode::kDomain, "weight must be positive for '" + m.pregnancy_id + "'");
  }
}

Cohort::Cohort(std::vector<Measurement> measurements, std::string provenance)
    : rows_(std::move(measurements)), provenance_(std::move(provenance)) {
  for (const auto& m : rows_) validate(m);
}

std::vector<double> Cohort::fa_values() const {
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& m : rows_) out.push_back(m.fa);
  return out;
}

std::vector<double> Cohort::crl_values() const {
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& m : rows_) out.push_back(m.crl);
  return out;
}

std::vector<double> Cohort::weights() const {
  std::vector<double> out;
  out.reserve(rows_.size());
  for (const auto& m : rows_) out.push_back(m.weight);
  return out;
}

double Cohort::total_weight() const {
  return std::accumulate(rows_.begin(), rows_.end(), 0.0,
                         [](double s, const Measurement& m) { return s + m.weight; });
}

Cohort Cohort::with_weights(std::span<const double> weights) const {
  if (weights.size() != rows_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "weight vector length mismatch");
  }
  auto rows = rows_;
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].weight = weights[i];
  return Cohort(std::move(rows), provenance_);
}

Cohort Cohort::subset(std::span<const std::size_t> indices) const {
  std::vector<Measurement> rows;
  rows.reserve(indices.size());
  for (auto i : indices) rows.push_back(rows_.at(i));
  return Cohort(std::move(rows), provenance_);
}

Cohort Cohort::without(std::size_t index) const {
  std::vector<Measurement> rows;
  rows.reserve(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    if (i != index) rows.push_back(rows_[i]);
  }
  return Cohort(std::move(rows), provenance_);
}

Cohort Cohort::with_provenance(std::string provenance) const {
  return Cohort(rows_, std::move(provenance));
}

}  // namespace gestalt
