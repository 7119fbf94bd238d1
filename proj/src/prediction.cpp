#include "gestalt/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gestalt/error.hpp"
#include "gestalt/regression.hpp"

namespace gestalt {

namespace {

double require_sd(const GrowthChart& chart, double x, EvalOptions opts, double* mean = nullptr) {
  if (!chart.variance) {
    throw Error(ErrorCode::kUnsupported, "chart '" + chart.name + "' has no variance model");
  }
  const auto ev = evaluate(chart, x, opts);
  if (mean) *mean = ev.mean;
  return *ev.sd;
}

std::string unit_of(Variable v) { return v == Variable::kCRL ? "mm" : "days"; }

}  // namespace

Prediction predict_with_ci(const GrowthChart& chart, double x, std::optional<double> kappa,
                           EvalOptions opts) {
  const double k = kappa.value_or(chart.kappa);
  if (!std::isfinite(k) || k < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "kappa must be finite and non-negative");
  }
  Prediction p;
  p.x = x;
  p.sd = require_sd(chart, x, opts, &p.mean);
  p.kappa_used = k;
  p.lower = p.mean - k * p.sd;
  p.upper = p.mean + k * p.sd;
  return p;
}

double zscore(const GrowthChart& chart, double x, double observed, EvalOptions opts) {
  double mean = 0.0;
  const double sd = require_sd(chart, x, opts, &mean);
  return (observed - mean) / sd;
}

double calibrate_kappa(std::span<const double> standardized_abs_residuals, double coverage) {
  if (standardized_abs_residuals.empty()) {
    throw Error(ErrorCode::kInsufficientData, "cannot calibrate kappa on an empty cohort");
  }
  if (!(coverage > 0.0 && coverage < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "coverage must lie strictly between 0 and 1");
  }
  std::vector<double> v(standardized_abs_residuals.begin(), standardized_abs_residuals.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  const auto m = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(coverage * n - 1e-12)), 1, v.size());
  return v[m - 1];
}

namespace {

std::vector<double> standardized_abs_residuals(const GrowthChart& chart, const Cohort& cohort) {
  const auto xs = covariate_values(cohort, query_variable(chart.predicts));
  const auto ys = response_values(cohort, reported_variable(chart.predicts));
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double mean = 0.0;
    const double sd = require_sd(chart, xs[i], {}, &mean);
    out[i] = std::abs(ys[i] - mean) / sd;
  }
  return out;
}

}  // namespace

double calibrate_kappa(const GrowthChart& chart, const Cohort& cohort, double coverage) {
  if (cohort.empty()) {
    throw Error(ErrorCode::kInsufficientData, "cannot calibrate kappa on an empty cohort");
  }
  return calibrate_kappa(standardized_abs_residuals(chart, cohort), coverage);
}

double band_coverage(const GrowthChart& chart, const Cohort& cohort, double kappa) {
  if (cohort.empty()) return 0.0;
  const auto z = standardized_abs_residuals(chart, cohort);
  const auto inside = std::count_if(z.begin(), z.end(), [&](double v) { return v <= kappa; });
  return static_cast<double>(inside) / static_cast<double>(z.size());
}

OptimalWindow optimal_window(const GrowthChart& chart, std::optional<Interval> search) {
  if (chart.predicts != Predicts::kFaFromCrl) {
    throw Error(ErrorCode::kInvalidArgument,
                "optimal window needs a chart that predicts FA from CRL");
  }
  if (!chart.variance) {
    throw Error(ErrorCode::kUnsupported, "chart '" + chart.name + "' has no variance model");
  }
  const Interval range = search.value_or(chart.domain);
  if (!(range.lo <= range.hi) || !chart.domain.contains(range.lo) ||
      !chart.domain.contains(range.hi)) {
    throw Error(ErrorCode::kDomain, "search range must lie inside the chart domain");
  }
  auto sd = [&](double x) { return require_sd(chart, x, {}); };

  constexpr double kStep = 0.01;
  const auto steps = static_cast<long>(std::ceil(range.width() / kStep - 1e-9));
  auto grid_x = [&](long i) { return i == steps ? range.hi : range.lo + kStep * static_cast<double>(i); };
  long best = 0;
  double best_sd = sd(range.lo);
  double max_sd = best_sd;
  for (long i = 1; i <= steps; ++i) {
    const double s = sd(grid_x(i));
    max_sd = std::max(max_sd, s);
    if (s < best_sd) {
      best_sd = s;
      best = i;
    }
  }

  OptimalWindow out;
  if (max_sd - best_sd <= 1e-12 * std::max(1.0, max_sd)) {
    out.constant_sd = true;
    best = 0;
    best_sd = sd(range.lo);
  }
  double x_star = grid_x(best);
  if (!out.constant_sd && best > 0 && best < steps) {
    double a = grid_x(best - 1);
    double b = grid_x(best + 1);
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = sd(c), fd = sd(d);
    while (b - a > 1e-10) {
      if (fc <= fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - inv_phi * (b - a);
        fc = sd(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + inv_phi * (b - a);
        fd = sd(d);
      }
    }
    const double refined = 0.5 * (a + b);
    const double refined_sd = sd(refined);
    if (refined_sd < best_sd) {
      x_star = refined;
      best_sd = refined_sd;
    }
  }
  out.crl_star = x_star;
  out.sd_star = best_sd;
  out.fa_star = evaluate_mean(chart, x_star);
  return out;
}

std::vector<TableRow> tabulate(const GrowthChart& chart, double from, double to, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw Error(ErrorCode::kInvalidArgument, "table step must be positive");
  }
  if (!(from <= to)) {
    throw Error(ErrorCode::kInvalidArgument, "table range is empty (from > to)");
  }
  if (!chart.domain.contains(from) || !chart.domain.contains(to)) {
    std::ostringstream msg;
    msg << "table range [" << from << ", " << to << "] leaves the domain of '" << chart.name
        << "' [" << chart.domain.lo << ", " << chart.domain.hi << "]";
    throw Error(ErrorCode::kDomain, msg.str());
  }
  const bool fa_grid = query_variable(chart.predicts) == Variable::kFA;
  const auto count = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9)) + 1;
  std::vector<TableRow> rows;
  rows.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double x = from + static_cast<double>(i) * step;
    const auto ev = evaluate(chart, x);
    TableRow row{.x = x, .mean = ev.mean, .sd = ev.sd};
    if (fa_grid && x == std::floor(x)) row.weeks_days = fa_to_weeks_days(static_cast<int>(x));
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string sig(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::vector<std::vector<std::string>> table_cells(const GrowthChart& chart,
                                                  const std::vector<TableRow>& rows,
                                                  const TableFormat& format,
                                                  std::vector<std::string> header) {
  if (format.significant_digits < 1 || format.significant_digits > 17) {
    throw Error(ErrorCode::kInvalidArgument, "significant digits must be in 1..17");
  }
  const bool fa_grid = query_variable(chart.predicts) == Variable::kFA;
  const bool has_sd = chart.variance.has_value();
  if (format.with_band && !has_sd) {
    throw Error(ErrorCode::kUnsupported,
                "chart '" + chart.name + "' has no variance model; no band to tabulate");
  }
  const double kappa = format.kappa.value_or(chart.kappa);
  std::vector<std::vector<std::string>> out{std::move(header)};
  for (const auto& r : rows) {
    std::vector<std::string> cells{sig(r.x, format.significant_digits)};
    if (fa_grid) cells.push_back(r.weeks_days ? to_string(*r.weeks_days) : "");
    cells.push_back(sig(r.mean, format.significant_digits));
    if (has_sd) cells.push_back(sig(*r.sd, format.significant_digits));
    if (format.with_band) {
      cells.push_back(sig(r.mean - kappa * *r.sd, format.significant_digits));
      cells.push_back(sig(r.mean + kappa * *r.sd, format.significant_digits));
    }
    out.push_back(std::move(cells));
  }
  return out;
}

}  // namespace

std::string table_to_csv(const GrowthChart& chart, const std::vector<TableRow>& rows,
                         const TableFormat& format) {
  std::vector<std::string> header{"x"};
  if (query_variable(chart.predicts) == Variable::kFA) header.push_back("weeks_days");
  header.push_back("mean");
  if (chart.variance) header.push_back("sd");
  if (format.with_band) {
    header.push_back("lower");
    header.push_back("upper");
  }
  std::ostringstream out;
  for (const auto& row : table_cells(chart, rows, format, header)) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << "\n";
  }
  return out.str();
}

std::string table_to_text(const GrowthChart& chart, const std::vector<TableRow>& rows,
                          const TableFormat& format) {
  const Variable q = query_variable(chart.predicts);
  const Variable r = reported_variable(chart.predicts);
  std::vector<std::string> header{std::string(to_string(q)) + " (" + unit_of(q) + ")"};
  if (q == Variable::kFA) header.push_back("weeks + days");
  header.push_back(std::string(to_string(r)) + " (" + unit_of(r) + ")");
  if (chart.variance) header.push_back("SD");
  if (format.with_band) {
    header.push_back("lower");
    header.push_back("upper");
  }
  const auto cells = table_cells(chart, rows, format, header);
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << "  ";
      out << std::string(width[c] - row[c].size(), ' ') << row[c];
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace gestalt
