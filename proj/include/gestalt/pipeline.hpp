#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gestalt/cohort.hpp"
#include "gestalt/model.hpp"
#include "gestalt/regression.hpp"

namespace gestalt {

// Cohort CSV: pregnancy_id,exam_date,fa_days,crl_mm,source[,weight][,regular_cycles]
// with a header row. exam_date is YYYY-MM-DD, source IVF or SPONTANEOUS.

struct LoadOptions {
  /// Strict loading rejects the whole file when any row is invalid; otherwise
  /// invalid rows are skipped with a warning.
  bool strict = true;
};

struct LoadResult {
  Cohort cohort;
  std::vector<std::string> warnings;
  std::size_t rejected_rows = 0;
};

LoadResult parse_cohort_csv(std::string_view text, const LoadOptions& opts = {},
                            std::string provenance = {});
LoadResult load_cohort(const std::filesystem::path& path, const LoadOptions& opts = {});

std::string cohort_to_csv(const Cohort& cohort);
void save_cohort(const Cohort& cohort, const std::filesystem::path& path);

/// Keeps the earliest exam per pregnancy (ties: smaller CRL, then input
/// order), preserving input order.
Cohort dedup_first_exam(const Cohort& cohort);

/// Keeps crl < max_crl (strict). When `require_regular_cycles` is set, rows
/// flagged regular_cycles=false are dropped; rows without the flag are kept.
Cohort select_eligible(const Cohort& cohort, double max_crl = 85.0,
                       bool require_regular_cycles = false);

/// Round half away from zero.
long round_half_away(double v);

struct TrimCount {
  std::size_t count = 0;
  double fraction = 0.0;
};

struct TrimReport {
  std::size_t n_in = 0;
  TrimCount removed_low;
  TrimCount removed_high;
  double total_removed_fraction = 0.0;
  std::vector<std::string> removed_low_ids;
  std::vector<std::string> removed_high_ids;
  Cohort kept;
};

/// Robust fit of the cohort on `basis`, then removal of the round(lower_frac*n)
/// most negative and round(upper_frac*n) most positive residuals.
TrimReport trim_outliers(const Cohort& cohort, const BasisSpec& basis,
                         double lower_frac = 0.045, double upper_frac = 0.039,
                         const RobustOptions& robust = {});

nlohmann::json trim_report_to_json(const TrimReport& report);

struct Reweighted {
  Cohort cohort;
  std::size_t n_low = 0;
  std::size_t n_high = 0;
  double low_weight = 1.0;
  double high_weight = 1.0;
  std::vector<std::string> warnings;
};

inline constexpr double kImbalanceWarningWeight = 10.0;

/// Gives each side of the CRL threshold (crl < threshold vs >= threshold)
/// total weight N/2. Throws kReweight when a side is empty.
Reweighted reweight_split(const Cohort& cohort, double threshold_crl = 45.0);

}  // namespace gestalt
