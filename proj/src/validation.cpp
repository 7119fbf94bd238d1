#include "gestalt/validation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "gestalt/error.hpp"
#include "gestalt/order_stats.hpp"
#include "gestalt/parallel.hpp"

namespace gestalt {

ModelUnderTest ModelUnderTest::refit(std::string name, FitSpec spec) {
  return ModelUnderTest{std::move(name), std::move(spec)};
}

ModelUnderTest ModelUnderTest::fixed(std::string name, GrowthChart chart) {
  return ModelUnderTest{std::move(name), std::move(chart)};
}

ErrorSummary error_summary(std::span<const double> predictions,
                           std::span<const double> observations) {
  if (predictions.size() != observations.size() || predictions.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "error summary needs equal-length, non-empty prediction and observation vectors");
  }
  const std::size_t n = predictions.size();
  std::vector<double> err(n), abs_err(n), rel;
  std::size_t zero_obs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    err[i] = predictions[i] - observations[i];
    abs_err[i] = std::abs(err[i]);
    if (observations[i] == 0.0) {
      ++zero_obs;
    } else {
      rel.push_back(abs_err[i] / std::abs(observations[i]) * 100.0);
    }
  }
  auto mean_of = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  ErrorSummary s;
  s.n = n;
  const auto [amin, amax] = std::minmax_element(abs_err.begin(), abs_err.end());
  s.min_abs = *amin;
  s.max_abs = *amax;
  s.median_abs = median(abs_err);
  s.mean_abs = mean_of(abs_err);
  const auto [emin, emax] = std::minmax_element(err.begin(), err.end());
  s.min = *emin;
  s.max = *emax;
  s.median = median(err);
  s.mean = mean_of(err);
  if (n > 1) {
    double ss = 0.0;
    for (double e : err) ss += (e - s.mean) * (e - s.mean);
    s.std_dev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  if (!rel.empty()) {
    s.median_abs_rel = median(rel);
    s.mean_abs_rel = mean_of(rel);
  }
  if (zero_obs > 0) {
    s.warnings.push_back(std::to_string(zero_obs) +
                         " zero observation(s) excluded from relative errors");
  }
  return s;
}

namespace {

struct FoldResult {
  std::vector<std::optional<double>> predictions;
  std::vector<std::string> exclusion_reason;
};

}  // namespace

ValidationReport loocv_compare(const Cohort& cohort, std::span<const ModelUnderTest> models,
                               Predicts target) {
  if (models.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "cross-validation needs at least two models");
  }
  std::set<std::string> names;
  for (const auto& m : models) {
    if (!names.insert(m.name).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate model name '" + m.name + "'");
    }
    if (const auto* chart = std::get_if<GrowthChart>(&m.model)) {
      if (chart->predicts != target) {
        throw Error(ErrorCode::kInvalidArgument,
                    "chart '" + m.name + "' predicts the other direction");
      }
    } else {
      const auto& spec = std::get<FitSpec>(m.model);
      if (spec.response != reported_variable(target)) {
        throw Error(ErrorCode::kInvalidArgument,
                    "refit model '" + m.name + "' has the wrong response variable");
      }
    }
  }

  const std::size_t n = cohort.size();
  const std::size_t k = models.size();
  const auto xs = covariate_values(cohort, query_variable(target));
  const auto ys = response_values(cohort, reported_variable(target));

  std::vector<FoldResult> folds(n);
  parallel_for(n, [&](std::size_t i) {
    FoldResult& fr = folds[i];
    fr.predictions.resize(k);
    fr.exclusion_reason.resize(k);
    std::optional<Cohort> training;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& model = models[j];
      if (const auto* chart = std::get_if<GrowthChart>(&model.model)) {
        try {
          fr.predictions[j] = evaluate_mean(*chart, xs[i]);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kDomain) throw;
          fr.exclusion_reason[j] = e.what();
        }
        continue;
      }
      const auto& spec = std::get<FitSpec>(model.model);
      if (!training) training = cohort.without(i);
      try {
        const auto f = fit(*training, spec);
        fr.predictions[j] = f.mean(to_basis_units(spec.mean_basis.covariate(), xs[i]));
      } catch (const Error& e) {
        throw Error(ErrorCode::kFoldFailure, "fold " + std::to_string(i) + " (model '" +
                                                 model.name + "'): " + e.what());
      }
    }
  });

  ValidationReport report{.target = target, .n = n};
  std::vector<double> overall(k, 0.0);
  struct PairAcc {
    double a = 0.0, b = 0.0;
    std::size_t compared = 0;
  };
  std::vector<PairAcc> pairs(k * k);
  std::vector<std::vector<double>> model_pred(k), model_obs(k);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& fr = folds[i];
    std::vector<double> abs_err(k, std::numeric_limits<double>::infinity());
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (!fr.predictions[j]) {
        report.exclusions.push_back({models[j].name, i, fr.exclusion_reason[j]});
        continue;
      }
      abs_err[j] = std::abs(*fr.predictions[j] - ys[i]);
      best = std::min(best, abs_err[j]);
      model_pred[j].push_back(*fr.predictions[j]);
      model_obs[j].push_back(ys[i]);
    }
    if (std::isinf(best)) continue;
    std::size_t tied = 0;
    for (std::size_t j = 0; j < k; ++j) tied += abs_err[j] == best;
    for (std::size_t j = 0; j < k; ++j) {
      if (abs_err[j] == best) overall[j] += 1.0 / static_cast<double>(tied);
    }
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        if (!fr.predictions[a] || !fr.predictions[b]) continue;
        auto& acc = pairs[a * k + b];
        ++acc.compared;
        if (abs_err[a] < abs_err[b]) {
          acc.a += 1.0;
        } else if (abs_err[b] < abs_err[a]) {
          acc.b += 1.0;
        } else {
          acc.a += 0.5;
          acc.b += 0.5;
        }
      }
    }
  }

  const double dn = static_cast<double>(n);
  for (std::size_t j = 0; j < k; ++j) {
    report.overall.push_back({models[j].name, overall[j], n ? overall[j] / dn * 100.0 : 0.0});
  }
  std::stable_sort(report.overall.begin(), report.overall.end(),
                   [](const BestCount& l, const BestCount& r) { return l.count > r.count; });
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      const auto& acc = pairs[a * k + b];
      const double c = static_cast<double>(acc.compared);
      report.pairwise.push_back({models[a].name, models[b].name, acc.a, acc.b,
                                 c > 0 ? acc.a / c * 100.0 : 0.0,
                                 c > 0 ? acc.b / c * 100.0 : 0.0, acc.compared});
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (model_pred[j].empty()) continue;
    report.summaries.emplace_back(models[j].name, error_summary(model_pred[j], model_obs[j]));
  }
  return report;
}

std::string format_count_percent(double count, double percent) {
  char buf[64];
  if (count == std::floor(count)) {
    std::snprintf(buf, sizeof buf, "%.0f (%.2f)", count, percent);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f (%.2f)", count, percent);
  }
  return buf;
}

namespace {

std::string fixed4(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::string render_text(const ValidationReport& report) {
  std::vector<std::string> cols;
  for (const auto& [name, _] : report.summaries) cols.push_back(name);
  for (const auto& o : report.overall) {
    if (std::find(cols.begin(), cols.end(), o.model) == cols.end()) cols.push_back(o.model);
  }
  std::vector<std::vector<std::string>> rows;
  auto add_row = [&](std::string label, auto cell) {
    std::vector<std::string> row{std::move(label)};
    for (const auto& c : cols) row.push_back(cell(c));
    rows.push_back(std::move(row));
  };
  rows.push_back([&] {
    std::vector<std::string> h{""};
    h.insert(h.end(), cols.begin(), cols.end());
    return h;
  }());
  add_row("Best performances", [&](const std::string& c) {
    for (const auto& o : report.overall) {
      if (o.model == c) return format_count_percent(o.count, o.percent);
    }
    return std::string("-");
  });
  for (const auto& p : report.pairwise) {
    add_row(p.a + " vs " + p.b, [&](const std::string& c) {
      if (c == p.a) return format_count_percent(p.count_a, p.percent_a);
      if (c == p.b) return format_count_percent(p.count_b, p.percent_b);
      return std::string("");
    });
  }
  auto summary_row = [&](std::string label, auto get) {
    add_row(std::move(label), [&](const std::string& c) {
      for (const auto& [name, s] : report.summaries) {
        if (name == c) return fixed4(get(s));
      }
      return std::string("-");
    });
  };
  using S = ErrorSummary;
  using O = std::optional<double>;
  summary_row("Abs. error min", [](const S& s) { return O(s.min_abs); });
  summary_row("Abs. error median", [](const S& s) { return O(s.median_abs); });
  summary_row("Abs. error mean", [](const S& s) { return O(s.mean_abs); });
  summary_row("Abs. error max", [](const S& s) { return O(s.max_abs); });
  summary_row("Error min", [](const S& s) { return O(s.min); });
  summary_row("Error median", [](const S& s) { return O(s.median); });
  summary_row("Error mean", [](const S& s) { return O(s.mean); });
  summary_row("Error max", [](const S& s) { return O(s.max); });
  summary_row("Error SD", [](const S& s) { return s.std_dev; });
  summary_row("Rel. error median (%)", [](const S& s) { return s.median_abs_rel; });
  summary_row("Rel. error mean (%)", [](const S& s) { return s.mean_abs_rel; });

  std::vector<std::size_t> width(cols.size() + 1, 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  out << "Leave-one-out comparison, n = " << report.n << "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << row[c] << std::string(width[c] - row[c].size() + (c + 1 < row.size() ? 2 : 0), ' ');
    }
    out << "\n";
  }
  if (!report.exclusions.empty()) {
    out << report.exclusions.size() << " prediction(s) excluded (outside a chart domain)\n";
  }
  return out.str();
}

nlohmann::json report_to_json(const ValidationReport& report) {
  using nlohmann::json;
  json overall = json::array();
  for (const auto& o : report.overall) {
    overall.push_back({{"model", o.model}, {"count", o.count}, {"percent", o.percent}});
  }
  json pairwise = json::array();
  for (const auto& p : report.pairwise) {
    pairwise.push_back({{"a", p.a},
                        {"b", p.b},
                        {"count_a", p.count_a},
                        {"count_b", p.count_b},
                        {"percent_a", p.percent_a},
                        {"percent_b", p.percent_b},
                        {"compared", p.compared}});
  }
  json summaries = json::object();
  for (const auto& [name, s] : report.summaries) {
    summaries[name] = {{"n", s.n},
                       {"min_abs", s.min_abs},
                       {"median_abs", s.median_abs},
                       {"mean_abs", s.mean_abs},
                       {"max_abs", s.max_abs},
                       {"min", s.min},
                       {"median", s.median},
                       {"mean", s.mean},
                       {"max", s.max},
                       {"std_dev", optional_json(s.std_dev)},
                       {"median_abs_rel", optional_json(s.median_abs_rel)},
                       {"mean_abs_rel", optional_json(s.mean_abs_rel)}};
  }
  json exclusions = json::array();
  for (const auto& e : report.exclusions) {
    exclusions.push_back(
        {{"model", e.model}, {"observation", e.observation}, {"reason", e.reason}});
  }
  return {{"target", std::string(to_string(report.target))},
          {"n", report.n},
          {"overall", std::move(overall)},
          {"pairwise", std::move(pairwise)},
          {"summaries", std::move(summaries)},
          {"exclusions", std::move(exclusions)},
          {"metadata",
           {{"error_convention", "prediction - observation"},
            {"tie_rule", "t tied winners get 1/t each overall; tied pairs get 1/2 each"},
            {"exclusion_rule",
             "a fixed chart outside its domain sits the fold out of overall and pairwise "
             "tallies"}}}};
}

RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "rank-sum test needs two non-empty samples");
  }
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  const std::size_t total = na + nb;
  std::vector<std::pair<double, bool>> pooled;  // value, from first sample
  pooled.reserve(total);
  for (double v : a) pooled.emplace_back(v, true);
  for (double v : b) pooled.emplace_back(v, false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& l, const auto& r) { return l.first < r.first; });

  double rank_sum = 0.0;
  double tie_term = 0.0;
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j < total && pooled[j].first == pooled[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t q = i; q < j; ++q) {
      if (pooled[q].second) rank_sum += midrank;
    }
    i = j;
  }
  const double dna = static_cast<double>(na);
  const double dnb = static_cast<double>(nb);
  const double dn = static_cast<double>(total);
  RankSumResult out;
  out.rank_sum = rank_sum;
  out.u = rank_sum - dna * (dna + 1.0) / 2.0;
  const double mu = dna * dnb / 2.0;
  const double var =
      dn > 1.0 ? dna * dnb / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0))) : 0.0;
  if (!(var > 0.0)) {
    out.z = 0.0;
    out.p_value = 1.0;
    return out;
  }
  const double dev = std::max(std::abs(out.u - mu) - 0.5, 0.0);
  out.z = std::copysign(dev / std::sqrt(var), out.u - mu);
  out.p_value = std::min(1.0, std::erfc(std::abs(out.z) / std::sqrt(2.0)));
  return out;
}

FTestOutcome chow_test(std::span<const double> xa, std::span<const double> ya,
                       std::span<const double> xb, std::span<const double> yb,
                       const BasisSpec& basis) {
  const std::size_t k = basis.size();
  if (xa.size() <= k || xb.size() <= k) {
    throw Error(ErrorCode::kInsufficientData,
                "each Chow group needs more observations than basis terms");
  }
  auto ssr_of = [&](std::span<const double> x, std::span<const double> y) {
    const auto r = fit_least_squares(x, y, basis);
    double s = 0.0;
    for (double e : r.residuals) s += e * e;
    return s;
  };
  std::vector<double> xp(xa.begin(), xa.end()), yp(ya.begin(), ya.end());
  xp.insert(xp.end(), xb.begin(), xb.end());
  yp.insert(yp.end(), yb.begin(), yb.end());
  const double ssr_a = ssr_of(xa, ya);
  const double ssr_b = ssr_of(xb, yb);
  const double ssr_p = ssr_of(xp, yp);

  double y2 = 0.0;
  for (double v : yp) y2 += v * v;
  const double separate = ssr_a + ssr_b;
  if (separate <= 1e-24 * std::max(1.0, y2)) {
    throw Error(ErrorCode::kDegenerate, "both groups are fitted exactly; Chow test undefined");
  }
  FTestOutcome out;
  out.df1 = static_cast<double>(k);
  out.df2 = static_cast<double>(xa.size() + xb.size() - 2 * k);
  out.f = ((ssr_p - separate) / out.df1) / (separate / out.df2);
  out.p_value = f_upper_tail(out.f, out.df1, out.df2);
  return out;
}

FTestOutcome chow_test(const Cohort& a, const Cohort& b, const BasisSpec& basis) {
  const auto response = default_response(basis.covariate());
  const auto xa = covariate_values(a, basis.covariate());
  const auto xb = covariate_values(b, basis.covariate());
  const auto ya = response_values(a, response);
  const auto yb = response_values(b, response);
  return chow_test(xa, ya, xb, yb, basis);
}

WaldResult wald_test(const Eigen::VectorXd& difference, const Eigen::MatrixXd& covariance) {
  const auto k = difference.size();
  if (covariance.rows() != k || covariance.cols() != k) {
    throw Error(ErrorCode::kInvalidArgument, "covariance shape does not match coefficients");
  }
  const Eigen::MatrixXd sym = 0.5 * (covariance + covariance.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const auto& lambda = eig.eigenvalues();
  const double tol = std::max(lambda.cwiseAbs().maxCoeff(), 0.0) * 1e-10 *
                     static_cast<double>(k);
  WaldResult out;
  const Eigen::VectorXd proj = eig.eigenvectors().transpose() * difference;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (lambda(i) > tol) {
      out.statistic += proj(i) * proj(i) / lambda(i);
      ++out.df;
    }
  }
  if (out.df < k) {
    out.rank_deficient = true;
    out.warnings.push_back("coefficient covariance has rank " + std::to_string(out.df) +
                           " of " + std::to_string(k) +
                           "; using its pseudo-inverse with reduced degrees of freedom");
  }
  if (out.df == 0 || out.statistic <= 0.0) {
    out.p_value = 1.0;
    return out;
  }
  boost::math::chi_squared dist(out.df);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  return out;
}

WaldResult wald_coefficient_test(const FitReport& fit, std::span<const double> hypothesized) {
  if (hypothesized.size() != fit.mean.coefficients.size()) {
    throw Error(ErrorCode::kInvalidArgument, "hypothesized coefficient count mismatch");
  }
  Eigen::VectorXd d(static_cast<Eigen::Index>(hypothesized.size()));
  for (std::size_t i = 0; i < hypothesized.size(); ++i) {
    d(static_cast<Eigen::Index>(i)) = fit.mean.coefficients[i] - hypothesized[i];
  }
  return wald_test(d, fit.coefficient_covariance);
}

WaldResult wald_difference_test(const FitReport& a, const FitReport& b) {
  if (!(a.mean.basis == b.mean.basis)) {
    throw Error(ErrorCode::kInvalidArgument, "fits use different bases");
  }
  Eigen::VectorXd d(static_cast<Eigen::Index>(a.mean.coefficients.size()));
  for (std::size_t i = 0; i < a.mean.coefficients.size(); ++i) {
    d(static_cast<Eigen::Index>(i)) = a.mean.coefficients[i] - b.mean.coefficients[i];
  }
  return wald_test(d, a.coefficient_covariance + b.coefficient_covariance);
}

OverestimationResult overestimation_test(std::span<const double> errors_a,
                                         std::span<const double> errors_b) {
  if (errors_a.size() != errors_b.size() || errors_a.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "over-estimation test needs paired, non-empty error vectors");
  }
  const std::size_t n = errors_a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = (errors_a[i] > 0.0 ? 1.0 : 0.0) - (errors_b[i] > 0.0 ? 1.0 : 0.0);
  }
  OverestimationResult out;
  out.n = n;
  out.mean_difference = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - out.mean_difference) * (v - out.mean_difference);
  const double var = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;
  if (!(var > 0.0)) {
    out.degenerate = true;
    if (out.mean_difference > 0.0) {
      out.t = std::numeric_limits<double>::infinity();
      out.p_value = 0.0;
    } else {
      out.t = out.mean_difference < 0.0 ? -std::numeric_limits<double>::infinity() : 0.0;
      out.p_value = 1.0;
    }
    return out;
  }
  out.t = out.mean_difference / std::sqrt(var / static_cast<double>(n));
  boost::math::students_t dist(static_cast<double>(n - 1));
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.t));
  return out;
}

}  // namespace gestalt
