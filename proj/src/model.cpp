#include "gestalt/model.hpp"

#include <cctype>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "gestalt/cohort.hpp"
#include "gestalt/error.hpp"

namespace gestalt {

std::string_view to_string(Variable v) {
  switch (v) {
    case Variable::kFA: return "FA";
    case Variable::kGA: return "GA";
    case Variable::kCRL: return "CRL";
  }
  return "?";
}

std::string_view to_string(Term t) {
  switch (t) {
    case Term::kOne: return "1";
    case Term::kX: return "x";
    case Term::kX2: return "x2";
    case Term::kSqrtX: return "sqrtx";
  }
  return "?";
}

Variable parse_variable(std::string_view text) {
  if (text == "FA") return Variable::kFA;
  if (text == "GA") return Variable::kGA;
  if (text == "CRL") return Variable::kCRL;
  throw Error(ErrorCode::kParse, "unknown variable '" + std::string(text) + "'");
}

Term parse_term(std::string_view text) {
  if (text == "1") return Term::kOne;
  if (text == "x") return Term::kX;
  if (text == "x2") return Term::kX2;
  if (text == "sqrtx") return Term::kSqrtX;
  throw Error(ErrorCode::kParse, "unknown basis term '" + std::string(text) +
                                     "' (expected 1, x, x2 or sqrtx)");
}

std::vector<Term> parse_terms(std::string_view text) {
  std::vector<Term> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    if (comma == std::string_view::npos) comma = text.size();
    auto item = text.substr(start, comma - start);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
    out.push_back(parse_term(item));
    start = comma + 1;
  }
  return out;
}

double evaluate_term(Term term, double x) {
  switch (term) {
    case Term::kOne: return 1.0;
    case Term::kX: return x;
    case Term::kX2: return x * x;
    case Term::kSqrtX:
      if (x < 0.0) {
        throw Error(ErrorCode::kDomain, "sqrt term evaluated at negative x=" + std::to_string(x));
      }
      return std::sqrt(x);
  }
  return 0.0;
}

BasisSpec::BasisSpec(Variable covariate, std::vector<Term> terms)
    : covariate_(covariate), terms_(std::move(terms)) {
  if (terms_.empty()) throw Error(ErrorCode::kInvalidArgument, "basis has no terms");
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    for (std::size_t j = i + 1; j < terms_.size(); ++j) {
      if (terms_[i] == terms_[j]) {
        throw Error(ErrorCode::kInvalidArgument,
                    "duplicate basis term '" + std::string(to_string(terms_[i])) + "'");
      }
    }
  }
}

BasisSpec BasisSpec::quadratic(Variable covariate) {
  return BasisSpec(covariate, {Term::kOne, Term::kX, Term::kX2});
}

BasisSpec BasisSpec::dating(Variable covariate) {
  return BasisSpec(covariate, {Term::kOne, Term::kSqrtX, Term::kX});
}

Eigen::MatrixXd BasisSpec::design(std::span<const double> xs) const {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(xs.size()),
                    static_cast<Eigen::Index>(terms_.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < terms_.size(); ++j) {
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          evaluate_term(terms_[j], xs[i]);
    }
  }
  return X;
}

Eigen::RowVectorXd BasisSpec::row(double x) const {
  Eigen::RowVectorXd r(static_cast<Eigen::Index>(terms_.size()));
  for (std::size_t j = 0; j < terms_.size(); ++j) {
    r(static_cast<Eigen::Index>(j)) = evaluate_term(terms_[j], x);
  }
  return r;
}

BasisSpec BasisSpec::without_last() const {
  if (terms_.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "cannot drop the only basis term");
  }
  return BasisSpec(covariate_, {terms_.begin(), terms_.end() - 1});
}

std::string_view to_string(ResponseTransform t) {
  return t == ResponseTransform::kSquare ? "square" : "identity";
}

ResponseTransform parse_transform(std::string_view text) {
  if (text == "identity") return ResponseTransform::kIdentity;
  if (text == "square") return ResponseTransform::kSquare;
  throw Error(ErrorCode::kParse, "unknown response transform '" + std::string(text) + "'");
}

namespace {

double dot(const BasisSpec& basis, const std::vector<double>& coefficients, double x) {
  double s = 0.0;
  for (std::size_t j = 0; j < coefficients.size(); ++j) {
    s += coefficients[j] * evaluate_term(basis.terms()[j], x);
  }
  return s;
}

void check_lengths(const BasisSpec& basis, const std::vector<double>& c) {
  if (c.size() != basis.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "coefficient count " + std::to_string(c.size()) +
                    " does not match basis size " + std::to_string(basis.size()));
  }
  for (double v : c) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "non-finite coefficient");
  }
}

}  // namespace

MeanModel::MeanModel(BasisSpec b, std::vector<double> c, ResponseTransform t)
    : basis(std::move(b)), coefficients(std::move(c)), transform(t) {
  check_lengths(basis, coefficients);
}

double MeanModel::linear(double x) const { return dot(basis, coefficients, x); }

double MeanModel::operator()(double x) const {
  const double v = linear(x);
  return transform == ResponseTransform::kSquare ? v * v : v;
}

VarianceModel::VarianceModel(BasisSpec b, std::vector<double> c, double f)
    : basis(std::move(b)), coefficients(std::move(c)), floor(f) {
  check_lengths(basis, coefficients);
  if (!(floor > 0.0) || !std::isfinite(floor)) {
    throw Error(ErrorCode::kInvalidArgument, "variance floor must be positive");
  }
}

double VarianceModel::variance(double x) const { return dot(basis, coefficients, x); }

double VarianceModel::sd(double x) const { return std::sqrt(std::max(variance(x), floor)); }

std::string_view to_string(Predicts p) {
  return p == Predicts::kCrlFromFa ? "CRL_from_FA" : "FA_from_CRL";
}

Predicts parse_predicts(std::string_view text) {
  if (text == "CRL_from_FA") return Predicts::kCrlFromFa;
  if (text == "FA_from_CRL") return Predicts::kFaFromCrl;
  throw Error(ErrorCode::kParse, "unknown predicts value '" + std::string(text) + "'");
}

Variable query_variable(Predicts p) {
  return p == Predicts::kCrlFromFa ? Variable::kFA : Variable::kCRL;
}

Variable reported_variable(Predicts p) {
  return p == Predicts::kCrlFromFa ? Variable::kCRL : Variable::kFA;
}

double to_basis_units(Variable basis_covariate, double query_value) {
  return basis_covariate == Variable::kGA ? query_value + kGestationalOffsetDays
                                          : query_value;
}

void validate(const GrowthChart& chart) {
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::kInvalidArgument, "chart '" + chart.name + "': " + why);
  };
  if (!(chart.domain.lo < chart.domain.hi)) fail("domain lower bound must be below upper");
  if (!(chart.kappa > 0.0) || !std::isfinite(chart.kappa)) fail("kappa must be positive");
  auto age_like = [](Variable v) { return v == Variable::kFA || v == Variable::kGA; };
  auto check_covariate = [&](const BasisSpec& b) {
    const bool ok = chart.predicts == Predicts::kCrlFromFa ? age_like(b.covariate())
                                                           : b.covariate() == Variable::kCRL;
    if (!ok) fail("basis covariate does not match the predicted direction");
  };
  check_covariate(chart.mean.basis);
  if (chart.variance) check_covariate(chart.variance->basis);
  const bool response_ok = chart.predicts == Predicts::kCrlFromFa
                               ? chart.response == Variable::kCRL
                               : age_like(chart.response);
  if (!response_ok) fail("response variable does not match the predicted direction");
}

double evaluate_mean(const GrowthChart& chart, double x, EvalOptions opts) {
  if (!std::isfinite(x) || !chart.domain.contains(x)) {
    std::ostringstream msg;
    msg << "chart '" << chart.name << "': " << to_string(query_variable(chart.predicts))
        << "=" << x << " outside domain [" << chart.domain.lo << ", " << chart.domain.hi
        << "]";
    throw Error(ErrorCode::kDomain, msg.str());
  }
  const double mean_x = to_basis_units(chart.mean.basis.covariate(), x);
  const double inner = chart.mean.linear(mean_x);
  if (chart.mean.transform == ResponseTransform::kSquare && inner < 0.0) {
    std::ostringstream msg;
    msg << "chart '" << chart.name << "': fitted square-root response is negative ("
        << inner << ") at " << x;
    throw Error(ErrorCode::kDomain, msg.str());
  }
  double mean = chart.mean.transform == ResponseTransform::kSquare ? inner * inner : inner;
  if (opts.apply_correction && chart.correction) {
    mean -= chart.correction->absolute + chart.correction->relative * mean;
  }
  if (chart.response == Variable::kGA) mean -= kGestationalOffsetDays;
  return mean;
}

Evaluation evaluate(const GrowthChart& chart, double x, EvalOptions opts) {
  const double mean = evaluate_mean(chart, x, opts);
  Evaluation out{mean, std::nullopt};
  if (chart.variance) {
    const double var_x = to_basis_units(chart.variance->basis.covariate(), x);
    const double v = chart.variance->variance(var_x);
    if (!(v > chart.variance->floor)) {
      std::ostringstream msg;
      msg << "chart '" << chart.name << "': variance " << v << " at " << x
          << " is at or below the floor " << chart.variance->floor;
      throw Error(ErrorCode::kDegenerateVariance, msg.str());
    }
    out.sd = std::sqrt(std::max(v, chart.variance->floor));
  }
  return out;
}

std::optional<double> curve_intersection(const MeanModel& a, const MeanModel& b,
                                         Interval range) {
  if (a.basis.covariate() != b.basis.covariate()) {
    throw Error(ErrorCode::kInvalidArgument, "models use different covariates");
  }
  if (a.transform != ResponseTransform::kIdentity ||
      b.transform != ResponseTransform::kIdentity) {
    throw Error(ErrorCode::kInvalidArgument, "intersection requires identity responses");
  }
  if (!(range.lo < range.hi)) {
    throw Error(ErrorCode::kInvalidArgument, "degenerate intersection range");
  }
  auto diff = [&](double x) { return a.linear(x) - b.linear(x); };

  constexpr double kStep = 0.01;
  const auto steps = static_cast<long>(std::ceil(range.width() / kStep));
  struct Bracket {
    double lo, hi;
  };
  std::vector<Bracket> brackets;
  double last_x = range.lo;
  double last_d = diff(range.lo);
  bool have_sign = last_d != 0.0;
  for (long i = 1; i <= steps; ++i) {
    const double x = i == steps ? range.hi : range.lo + static_cast<double>(i) * kStep;
    const double d = diff(x);
    if (d == 0.0) continue;
    if (have_sign && std::signbit(d) != std::signbit(last_d)) brackets.push_back({last_x, x});
    last_x = x;
    last_d = d;
    have_sign = true;
  }
  if (brackets.empty()) return std::nullopt;
  if (brackets.size() > 1) {
    std::ostringstream msg;
    msg << "curves cross " << brackets.size() << " times in [" << range.lo << ", "
        << range.hi << "]:";
    for (const auto& br : brackets) msg << " [" << br.lo << ", " << br.hi << "]";
    throw Error(ErrorCode::kAmbiguous, msg.str());
  }

  double lo = brackets.front().lo;
  double hi = brackets.front().hi;
  double d_lo = diff(lo);
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    const double d_mid = diff(mid);
    if (d_mid == 0.0) return mid;
    if (std::signbit(d_mid) == std::signbit(d_lo)) {
      lo = mid;
      d_lo = d_mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace gestalt
