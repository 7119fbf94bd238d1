#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gestalt {

enum class AgeKind { kFA, kGA };

/// Foetal age (days since fertilisation) or gestational age (FA + 14 days).
struct Age {
  double value = 0.0;
  AgeKind kind = AgeKind::kFA;

  static Age fa(double days);
  static Age ga(double days);

  friend bool operator==(const Age&, const Age&) = default;
};

inline constexpr double kGestationalOffsetDays = 14.0;

Age convert_age(Age age, AgeKind target);

struct WeeksDays {
  int weeks = 0;
  int days = 0;

  friend bool operator==(const WeeksDays&, const WeeksDays&) = default;
};

WeeksDays fa_to_weeks_days(int fa_days);
/// Renders as "8 + 0".
std::string to_string(WeeksDays wd);

enum class Source { kIVF, kSpontaneous };

std::string_view to_string(Source source);
Source parse_source(std::string_view text);

using Date = std::chrono::year_month_day;

Date parse_date(std::string_view text);
std::string format_date(Date date);

struct Measurement {
  std::string pregnancy_id;
  Date exam_date{};
  double fa = 0.0;   // days
  double crl = 0.0;  // mm
  double weight = 1.0;
  Source source = Source::kSpontaneous;
  std::optional<bool> regular_cycles;
};

/// Throws Error(kDomain) unless crl > 0, fa > 0 and weight > 0 (all finite).
void validate(const Measurement& m);

/// Immutable, ordered collection of measurements. Transformations return new
/// cohorts.
class Cohort {
 public:
  Cohort() = default;
  explicit Cohort(std::vector<Measurement> measurements,
                  std::string provenance = {});

  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const Measurement& operator[](std::size_t i) const { return rows_[i]; }
  auto begin() const noexcept { return rows_.cbegin(); }
  auto end() const noexcept { return rows_.cend(); }
  std::span<const Measurement> measurements() const noexcept { return rows_; }
  const std::string& provenance() const noexcept { return provenance_; }

  std::vector<double> fa_values() const;
  std::vector<double> crl_values() const;
  std::vector<double> weights() const;
  double total_weight() const;

  Cohort with_weights(std::span<const double> weights) const;
  Cohort subset(std::span<const std::size_t> indices) const;
  Cohort without(std::size_t index) const;
  Cohort with_provenance(std::string provenance) const;

 private:
  std::vector<Measurement> rows_;
  std::string provenance_;
};

}  // namespace gestalt
