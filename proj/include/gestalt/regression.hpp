#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gestalt/cohort.hpp"
#include "gestalt/model.hpp"

namespace gestalt {

enum class FitMethod { kLeastSquares, kHeteroskedastic, kRobust };

std::string_view to_string(FitMethod m);
FitMethod parse_fit_method(std::string_view text);

struct FitReport {
  FitMethod method = FitMethod::kLeastSquares;
  MeanModel mean;
  std::optional<VarianceModel> variance;
  /// Cohort column used as the response (CRL or FA).
  Variable response = Variable::kCRL;
  std::vector<double> residuals;
  /// Bisquare weights in [0,1]; all 1 for non-robust fits.
  std::vector<double> robust_weights;
  /// Weights used in the final weighted solve (cohort weights times variance or
  /// robustness weights).
  std::vector<double> working_weights;
  double r_squared = 0.0;
  Eigen::MatrixXd coefficient_covariance;
  double scale = 0.0;
  int iterations = 0;
  bool converged = true;
  std::vector<std::string> warnings;
};

/// Covariate values of a cohort in the basis' units (FA, FA + 14, or CRL).
std::vector<double> covariate_values(const Cohort& cohort, Variable covariate);
std::vector<double> response_values(const Cohort& cohort, Variable response);
/// CRL for age covariates, FA for CRL.
Variable default_response(Variable covariate);

/// Weighted least squares through a column-pivoted Householder QR of the
/// equilibrated, sqrt-weighted design. Empty `weights` means all 1. `x` is in
/// the basis' own units.
FitReport fit_least_squares(std::span<const double> x, std::span<const double> y,
                            const BasisSpec& basis, std::span<const double> weights = {});
/// Weights default to the cohort's measurement weights.
FitReport fit_least_squares(const Cohort& cohort, const BasisSpec& basis, Variable response,
                            std::optional<std::span<const double>> weights = std::nullopt);

struct VarianceFit {
  VarianceModel model;
  /// Set when the fitted variance is <= floor over more than 10% of the
  /// observed covariate range.
  bool degenerate = false;
  std::vector<std::string> warnings;
};

/// Least-squares fit of squared residuals on the basis.
VarianceFit fit_variance_model(std::span<const double> residuals,
                               std::span<const double> covariate_values,
                               const BasisSpec& basis);

struct RobustOptions {
  double tuning = 4.685;
  int max_iterations = 100;
  double tolerance = 1e-8;
};

FitReport fit_robust(std::span<const double> x, std::span<const double> y,
                     const BasisSpec& basis, std::span<const double> weights = {},
                     const RobustOptions& opts = {});
FitReport fit_robust(const Cohort& cohort, const BasisSpec& basis, Variable response,
                     const RobustOptions& opts = {});

enum class FirstStage { kOrdinary, kRobust };

struct HeteroskedasticOptions {
  int max_rounds = 2;
  FirstStage first_stage = FirstStage::kOrdinary;
  RobustOptions robust;
  /// Weights use 1/max(var, floor, fraction * mean squared residual); 0
  /// leaves only the absolute floor.
  double min_variance_fraction = 0.05;
};

/// Two-stage feasible GLS: mean fit, variance fit on its residuals, reweighted
/// mean fit with weights 1/max(var, variance floor), the last two repeated
/// max_rounds times. Covariance is the HC1 sandwich estimator.
FitReport fit_heteroskedastic(std::span<const double> mean_x, std::span<const double> var_x,
                              std::span<const double> y, const BasisSpec& mean_basis,
                              const BasisSpec& variance_basis,
                              std::span<const double> weights = {},
                              const HeteroskedasticOptions& opts = {});
FitReport fit_heteroskedastic(const Cohort& cohort, const BasisSpec& mean_basis,
                              const BasisSpec& variance_basis, Variable response,
                              const HeteroskedasticOptions& opts = {});

/// Everything needed to refit a model on new data.
struct FitSpec {
  FitMethod method = FitMethod::kLeastSquares;
  BasisSpec mean_basis = BasisSpec::quadratic(Variable::kFA);
  std::optional<BasisSpec> variance_basis;  // defaults to mean_basis
  Variable response = Variable::kCRL;
  HeteroskedasticOptions gls;
  RobustOptions robust;
};

FitReport fit(const Cohort& cohort, const FitSpec& spec);

struct FTestResult {
  double f = 0.0;
  double p_value = 1.0;
  double df1 = 1.0;
  double df2 = 0.0;
};

/// F-test of the last basis term: the fit against the same basis minus that
/// term, both solved with the fit's working weights.
FTestResult highest_degree_test(const FitReport& fit, const Cohort& cohort);

/// Upper-tail p-value of F(df1, df2).
double f_upper_tail(double f, double df1, double df2);

}  // namespace gestalt
