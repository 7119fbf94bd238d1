#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gestalt/cohort.hpp"
#include "gestalt/model.hpp"
#include "gestalt/regression.hpp"

namespace gestalt {

/// A model compared by cross-validation: refitted on every training fold, or
/// a published chart that is evaluated as is.
struct ModelUnderTest {
  std::string name;
  std::variant<FitSpec, GrowthChart> model;

  static ModelUnderTest refit(std::string name, FitSpec spec);
  static ModelUnderTest fixed(std::string name, GrowthChart chart);
  bool is_fixed() const { return std::holds_alternative<GrowthChart>(model); }
};

/// Error convention: prediction - observation.
struct ErrorSummary {
  std::size_t n = 0;
  double min_abs = 0.0;
  double median_abs = 0.0;
  double mean_abs = 0.0;
  double max_abs = 0.0;
  double min = 0.0;
  double median = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::optional<double> std_dev;       // n - 1 denominator; absent for n = 1
  std::optional<double> median_abs_rel;  // percent
  std::optional<double> mean_abs_rel;    // percent
  std::vector<std::string> warnings;
};

ErrorSummary error_summary(std::span<const double> predictions,
                           std::span<const double> observations);

struct BestCount {
  std::string model;
  double count = 0.0;
  double percent = 0.0;
};

struct PairwiseCount {
  std::string a;
  std::string b;
  double count_a = 0.0;
  double count_b = 0.0;
  double percent_a = 0.0;
  double percent_b = 0.0;
  std::size_t compared = 0;
};

struct Exclusion {
  std::string model;
  std::size_t observation = 0;
  std::string reason;
};

struct ValidationReport {
  Predicts target = Predicts::kCrlFromFa;
  std::size_t n = 0;
  /// Ranked by descending best count; ties keep input order.
  std::vector<BestCount> overall;
  /// Every unordered pair, in input order.
  std::vector<PairwiseCount> pairwise;
  std::vector<std::pair<std::string, ErrorSummary>> summaries;
  std::vector<Exclusion> exclusions;
};

/// Leave-one-out comparison. On each fold refit models are trained on the
/// other n-1 observations (with their cohort weights) and every model predicts
/// the held-out response. The model(s) with the smallest absolute error win
/// the fold; t tied winners each get 1/t, and a tied pair gets 1/2 each. A
/// fixed chart that cannot be evaluated at an observation (outside its
/// domain) sits that fold out and is listed in `exclusions`.
ValidationReport loocv_compare(const Cohort& cohort, std::span<const ModelUnderTest> models,
                               Predicts target);

/// "192 (33.68)"; fractional counts from ties print with two decimals.
std::string format_count_percent(double count, double percent);
std::string render_text(const ValidationReport& report);
nlohmann::json report_to_json(const ValidationReport& report);

struct RankSumResult {
  double u = 0.0;         // Mann-Whitney U of the first sample
  double rank_sum = 0.0;  // sum of midranks of the first sample
  double z = 0.0;
  double p_value = 1.0;   // two-sided
};

/// Two-sample Wilcoxon rank-sum test: midranks, tie-corrected variance,
/// continuity-corrected normal approximation.
RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b);

struct FTestOutcome {
  double f = 0.0;
  double p_value = 1.0;
  double df1 = 0.0;
  double df2 = 0.0;
};

/// Chow test of one regression on the pooled sample against separate
/// regressions per group (unweighted least squares, response per the basis).
FTestOutcome chow_test(const Cohort& a, const Cohort& b, const BasisSpec& basis);
FTestOutcome chow_test(std::span<const double> xa, std::span<const double> ya,
                       std::span<const double> xb, std::span<const double> yb,
                       const BasisSpec& basis);

struct WaldResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int df = 0;
  bool rank_deficient = false;
  std::vector<std::string> warnings;
};

/// W = d' V^+ d with chi-square(rank V) reference. A singular V falls back to
/// its pseudo-inverse with reduced degrees of freedom and a warning.
WaldResult wald_test(const Eigen::VectorXd& difference, const Eigen::MatrixXd& covariance);
/// Tests the fit's coefficients against hypothesized values using the fit's
/// stored covariance.
WaldResult wald_coefficient_test(const FitReport& fit, std::span<const double> hypothesized);
/// Equality of the coefficients of two independent fits on the same basis.
WaldResult wald_difference_test(const FitReport& a, const FitReport& b);

struct OverestimationResult {
  double t = 0.0;
  double p_value = 1.0;
  double mean_difference = 0.0;
  std::size_t n = 0;
  bool degenerate = false;
};

/// Paired one-sided t-test that model A over-estimates more often than B:
/// d_i = [err_a > 0] - [err_b > 0], H1: mean(d) > 0. With zero variance the
/// result is flagged degenerate and p is 0 when mean(d) > 0, else 1.
OverestimationResult overestimation_test(std::span<const double> errors_a,
                                         std::span<const double> errors_b);

}  // namespace gestalt
