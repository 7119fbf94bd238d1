#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace gestalt {

/// Variable a basis is expressed in. GA is FA shifted by 14 days.
enum class Variable { kFA, kGA, kCRL };

enum class Term { kOne, kX, kX2, kSqrtX };

std::string_view to_string(Variable v);
std::string_view to_string(Term t);
Variable parse_variable(std::string_view text);
Term parse_term(std::string_view text);
/// Parses a comma-separated list such as "1,x,x2".
std::vector<Term> parse_terms(std::string_view text);

double evaluate_term(Term term, double x);

class BasisSpec {
 public:
  BasisSpec(Variable covariate, std::vector<Term> terms);

  /// {1, x, x^2}
  static BasisSpec quadratic(Variable covariate);
  /// {1, sqrt(x), x}
  static BasisSpec dating(Variable covariate);

  Variable covariate() const noexcept { return covariate_; }
  const std::vector<Term>& terms() const noexcept { return terms_; }
  std::size_t size() const noexcept { return terms_.size(); }

  /// One row per value, one column per term.
  Eigen::MatrixXd design(std::span<const double> xs) const;
  Eigen::RowVectorXd row(double x) const;

  /// Same covariate, last term dropped.
  BasisSpec without_last() const;

  friend bool operator==(const BasisSpec&, const BasisSpec&) = default;

 private:
  Variable covariate_;
  std::vector<Term> terms_;
};

enum class ResponseTransform { kIdentity, kSquare };

std::string_view to_string(ResponseTransform t);
ResponseTransform parse_transform(std::string_view text);

struct MeanModel {
  BasisSpec basis;
  std::vector<double> coefficients;
  ResponseTransform transform = ResponseTransform::kIdentity;

  MeanModel(BasisSpec b, std::vector<double> c,
            ResponseTransform t = ResponseTransform::kIdentity);

  /// Dot product of coefficients and basis values, before the transform.
  double linear(double x) const;
  double operator()(double x) const;

  friend bool operator==(const MeanModel&, const MeanModel&) = default;
};

inline constexpr double kDefaultVarianceFloor = 1e-9;

struct VarianceModel {
  BasisSpec basis;
  std::vector<double> coefficients;
  double floor = kDefaultVarianceFloor;

  VarianceModel(BasisSpec b, std::vector<double> c,
                double f = kDefaultVarianceFloor);

  double variance(double x) const;
  bool degenerate_at(double x) const { return variance(x) <= floor; }
  /// sqrt(max(variance, floor))
  double sd(double x) const;

  friend bool operator==(const VarianceModel&, const VarianceModel&) = default;
};

enum class Predicts { kCrlFromFa, kFaFromCrl };

std::string_view to_string(Predicts p);
Predicts parse_predicts(std::string_view text);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
  double width() const noexcept { return hi - lo; }

  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Calibration adjustment subtracted from a chart's raw output:
/// out = raw - (absolute + relative * raw).
struct CorrectiveFactor {
  double absolute = 0.0;
  double relative = 0.0;

  friend bool operator==(const CorrectiveFactor&,
                         const CorrectiveFactor&) = default;
};

/// A mean curve, an optional variance curve, a validity domain and the
/// band multiplier kappa.
///
/// Queries are always made in FA days (CRL-from-FA charts) or CRL mm
/// (FA-from-CRL charts) and the mean is always reported in CRL mm or FA days.
/// Charts whose basis is in GA, or whose response is GA, are shifted by 14 days
/// internally.
struct GrowthChart {
  std::string name;
  MeanModel mean;
  std::optional<VarianceModel> variance;
  double kappa = 1.96;
  Interval domain;
  Predicts predicts = Predicts::kCrlFromFa;
  /// CRL for growth charts, FA or GA for dating charts.
  Variable response = Variable::kCRL;
  std::optional<CorrectiveFactor> correction;
  std::string citation;

  friend bool operator==(const GrowthChart&, const GrowthChart&) = default;
};

/// Throws Error(kInvalidArgument) when the chart violates its invariants.
void validate(const GrowthChart& chart);

/// The variable observations are queried in: FA for growth charts, CRL for
/// dating charts.
Variable query_variable(Predicts p);
/// The variable predictions are reported in: CRL or FA.
Variable reported_variable(Predicts p);

/// Converts a query value into the basis' own covariate units.
double to_basis_units(Variable basis_covariate, double query_value);

struct EvalOptions {
  bool apply_correction = false;
};

struct Evaluation {
  double mean = 0.0;
  std::optional<double> sd;
};

/// Mean (and SD when the chart has a variance model) at x. Throws kDomain
/// outside the chart domain or where a squared-response model has a negative
/// inner value, and kDegenerateVariance where variance <= floor.
Evaluation evaluate(const GrowthChart& chart, double x, EvalOptions opts = {});
/// Mean only; the variance model is not consulted.
double evaluate_mean(const GrowthChart& chart, double x, EvalOptions opts = {});

/// Root of a(x) - b(x) in the range, if exactly one sign change exists.
/// Throws kAmbiguous when several do.
std::optional<double> curve_intersection(const MeanModel& a,
                                         const MeanModel& b, Interval range);

}  // namespace gestalt
