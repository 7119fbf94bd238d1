#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gestalt/cohort.hpp"
#include "gestalt/model.hpp"

namespace gestalt {

struct Prediction {
  double x = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double kappa_used = 0.0;
};

/// mean +/- kappa * sd with kappa = override or the chart's own. Throws
/// kUnsupported when the chart has no variance model.
Prediction predict_with_ci(const GrowthChart& chart, double x,
                           std::optional<double> kappa = std::nullopt, EvalOptions opts = {});

double zscore(const GrowthChart& chart, double x, double observed, EvalOptions opts = {});

/// Smallest kappa whose band mean +/- kappa * sd covers at least `coverage` of
/// the cohort: the ceil(coverage * n)-th smallest standardized absolute
/// residual.
double calibrate_kappa(const GrowthChart& chart, const Cohort& cohort, double coverage = 0.95);
double calibrate_kappa(std::span<const double> standardized_abs_residuals, double coverage = 0.95);

/// Fraction of the cohort inside mean +/- kappa * sd.
double band_coverage(const GrowthChart& chart, const Cohort& cohort, double kappa);

struct OptimalWindow {
  double crl_star = 0.0;
  double fa_star = 0.0;
  double sd_star = 0.0;
  bool constant_sd = false;
};

/// Covariate minimizing the chart's SD over `search` (defaults to the chart
/// domain).
OptimalWindow optimal_window(const GrowthChart& chart,
                             std::optional<Interval> search = std::nullopt);

struct TableRow {
  double x = 0.0;
  std::optional<WeeksDays> weeks_days;
  double mean = 0.0;
  std::optional<double> sd;
};

/// One row per grid value from..to (inclusive, within 1e-9 of the end).
std::vector<TableRow> tabulate(const GrowthChart& chart, double from, double to,
                               double step = 1.0);

struct TableFormat {
  int significant_digits = 6;
  bool with_band = false;
  std::optional<double> kappa;
};

std::string table_to_csv(const GrowthChart& chart, const std::vector<TableRow>& rows,
                         const TableFormat& format = {});
std::string table_to_text(const GrowthChart& chart, const std::vector<TableRow>& rows,
                          const TableFormat& format = {});

}  // namespace gestalt
