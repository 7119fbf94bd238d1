#include "gestalt/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gestalt/error.hpp"
#include "gestalt/prediction.hpp"

namespace gestalt {

namespace {

using nlohmann::json;

const json& section(const json& doc, const char* key, std::set<std::string> allowed) {
  static const json empty = json::object();
  if (!doc.contains(key)) return empty;
  const auto& s = doc[key];
  if (!s.is_object()) throw Error(ErrorCode::kSchema, std::string("config '") + key + "' must be an object");
  for (const auto& [k, _] : s.items()) {
    if (!allowed.count(k)) {
      throw Error(ErrorCode::kSchema, "unknown key '" + k + "' in config '" + key + "'");
    }
  }
  return s;
}

template <typename T>
void read(const json& s, const char* key, T& target) {
  if (!s.contains(key)) return;
  try {
    target = s[key].get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kSchema, std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

PipelineConfig pipeline_config_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kSchema, "config must be a JSON object");
  static const std::set<std::string> top{"dedup", "select", "trim", "reweight", "order",
                                         "fit", "kappa", "chart_name"};
  for (const auto& [k, _] : doc.items()) {
    if (!top.count(k)) throw Error(ErrorCode::kSchema, "unknown config key '" + k + "'");
  }
  PipelineConfig c;

  read(section(doc, "dedup", {"enabled"}), "enabled", c.dedup);

  const auto& sel = section(doc, "select", {"enabled", "max_crl", "require_regular_cycles"});
  read(sel, "enabled", c.select);
  read(sel, "max_crl", c.max_crl);
  read(sel, "require_regular_cycles", c.require_regular_cycles);

  const auto& trim = section(doc, "trim", {"enabled", "lower", "upper", "covariate", "terms"});
  read(trim, "enabled", c.trim);
  read(trim, "lower", c.trim_lower);
  read(trim, "upper", c.trim_upper);
  std::string cov = std::string(to_string(c.trim_basis.covariate()));
  std::string terms = "1,x,x2";
  read(trim, "covariate", cov);
  read(trim, "terms", terms);
  c.trim_basis = BasisSpec(parse_variable(cov), parse_terms(terms));

  const auto& rw = section(doc, "reweight", {"enabled", "threshold_crl"});
  read(rw, "enabled", c.reweight);
  read(rw, "threshold_crl", c.reweight_threshold);

  if (doc.contains("order")) {
    std::string order;
    read(doc, "order", order);
    if (order == "trim_then_reweight") {
      c.order = StageOrder::kTrimThenReweight;
    } else if (order == "reweight_then_trim") {
      c.order = StageOrder::kReweightThenTrim;
    } else {
      throw Error(ErrorCode::kSchema,
                  "config 'order' must be 'trim_then_reweight' or 'reweight_then_trim'");
    }
  }

  const auto& fit = section(doc, "fit", {"method", "covariate", "terms", "variance_terms",
                                         "response", "rounds", "first_stage"});
  std::string method = "gls";
  std::string fcov = "FA";
  std::string fterms = "1,x,x2";
  read(fit, "method", method);
  read(fit, "covariate", fcov);
  read(fit, "terms", fterms);
  c.fit.method = parse_fit_method(method);
  c.fit.mean_basis = BasisSpec(parse_variable(fcov), parse_terms(fterms));
  c.fit.response = default_response(c.fit.mean_basis.covariate());
  if (fit.contains("variance_terms")) {
    std::string vterms;
    read(fit, "variance_terms", vterms);
    c.fit.variance_basis = BasisSpec(c.fit.mean_basis.covariate(), parse_terms(vterms));
  }
  if (fit.contains("response")) {
    std::string resp;
    read(fit, "response", resp);
    c.fit.response = parse_variable(resp);
  }
  read(fit, "rounds", c.fit.gls.max_rounds);
  if (c.fit.gls.max_rounds < 1) throw Error(ErrorCode::kSchema, "config fit.rounds must be >= 1");
  if (fit.contains("first_stage")) {
    std::string fs;
    read(fit, "first_stage", fs);
    if (fs == "ols") {
      c.fit.gls.first_stage = FirstStage::kOrdinary;
    } else if (fs == "robust") {
      c.fit.gls.first_stage = FirstStage::kRobust;
    } else {
      throw Error(ErrorCode::kSchema, "config fit.first_stage must be 'ols' or 'robust'");
    }
  }

  const auto& kappa = section(doc, "kappa", {"mode", "value", "coverage"});
  if (kappa.contains("mode")) {
    std::string mode;
    read(kappa, "mode", mode);
    if (mode == "fixed") {
      c.kappa.mode = KappaPolicy::Mode::kFixed;
    } else if (mode == "calibrate") {
      c.kappa.mode = KappaPolicy::Mode::kCalibrate;
    } else {
      throw Error(ErrorCode::kSchema, "config kappa.mode must be 'fixed' or 'calibrate'");
    }
  }
  read(kappa, "value", c.kappa.value);
  read(kappa, "coverage", c.kappa.coverage);
  if (!(c.kappa.value > 0.0)) throw Error(ErrorCode::kSchema, "config kappa.value must be positive");
  if (!(c.kappa.coverage > 0.0 && c.kappa.coverage < 1.0)) {
    throw Error(ErrorCode::kSchema, "config kappa.coverage must lie in (0, 1)");
  }
  read(doc, "chart_name", c.chart_name);
  return c;
}

Cohort clean_cohort(const Cohort& cohort, const PipelineConfig& config,
                    std::optional<TrimReport>* trim, std::optional<Reweighted>* reweight,
                    std::vector<std::string>* warnings) {
  Cohort c = cohort;
  if (config.dedup) c = dedup_first_exam(c);
  if (config.select) c = select_eligible(c, config.max_crl, config.require_regular_cycles);
  auto do_trim = [&] {
    if (!config.trim) return;
    auto report = trim_outliers(c, config.trim_basis, config.trim_lower, config.trim_upper);
    c = report.kept;
    if (trim) *trim = std::move(report);
  };
  auto do_reweight = [&] {
    if (!config.reweight) return;
    auto r = reweight_split(c, config.reweight_threshold);
    c = r.cohort;
    if (warnings) warnings->insert(warnings->end(), r.warnings.begin(), r.warnings.end());
    if (reweight) *reweight = std::move(r);
  };
  if (config.order == StageOrder::kTrimThenReweight) {
    do_trim();
    do_reweight();
  } else {
    do_reweight();
    do_trim();
  }
  return c;
}

GrowthChart chart_from_fit(const FitReport& fit, const Cohort& cohort, std::string name,
                           double kappa, std::vector<std::string>* warnings) {
  const Predicts predicts =
      fit.response == Variable::kCRL ? Predicts::kCrlFromFa : Predicts::kFaFromCrl;
  const auto xs = covariate_values(cohort, query_variable(predicts));
  if (xs.empty()) throw Error(ErrorCode::kInsufficientData, "cannot build a chart from an empty cohort");
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  GrowthChart chart{.name = std::move(name),
                    .mean = fit.mean,
                    .variance = fit.variance,
                    .kappa = kappa,
                    .domain = {*lo, *hi},
                    .predicts = predicts,
                    .response = fit.response,
                    .correction = std::nullopt,
                    .citation = "fitted (" + std::string(to_string(fit.method)) + ") on " +
                                std::to_string(cohort.size()) + " observations"};
  if (!chart.variance) {
    chart.variance = VarianceModel(BasisSpec(fit.mean.basis.covariate(), {Term::kOne}),
                                   {fit.scale * fit.scale});
  }
  bool degenerate = false;
  for (int i = 0; i <= 1000 && !degenerate; ++i) {
    const double x = chart.domain.lo + chart.domain.width() * i / 1000.0;
    degenerate = chart.variance->degenerate_at(to_basis_units(chart.variance->basis.covariate(), x));
  }
  if (degenerate) {
    chart.variance.reset();
    if (warnings) {
      warnings->push_back("fitted variance reaches the floor inside the domain; chart saved without a variance model");
    }
  }
  validate(chart);
  return chart;
}

PipelineResult run_pipeline(const Cohort& cohort, const PipelineConfig& config) {
  std::optional<TrimReport> trim;
  std::optional<Reweighted> reweight;
  std::vector<std::string> warnings;
  Cohort cleaned = clean_cohort(cohort, config, &trim, &reweight, &warnings);
  if (cleaned.empty()) throw Error(ErrorCode::kInsufficientData, "no observations left after cleaning");

  FitReport report = fit(cleaned, config.fit);
  warnings.insert(warnings.end(), report.warnings.begin(), report.warnings.end());
  GrowthChart chart = chart_from_fit(report, cleaned, config.chart_name, config.kappa.value, &warnings);
  if (config.kappa.mode == KappaPolicy::Mode::kCalibrate) {
    if (chart.variance) {
      chart.kappa = calibrate_kappa(chart, cleaned, config.kappa.coverage);
    } else {
      warnings.push_back("kappa not calibrated: chart has no variance model");
    }
  }
  std::optional<FTestResult> ftest;
  if (report.mean.basis.size() >= 2) {
    try {
      ftest = highest_degree_test(report, cleaned);
    } catch (const Error& e) {
      warnings.push_back(std::string("highest-degree test skipped: ") + e.what());
    }
  }
  return PipelineResult{std::move(cleaned), std::move(trim), std::move(reweight),
                        std::move(report), std::move(chart), ftest, std::move(warnings)};
}

nlohmann::json fit_diagnostics_json(const PipelineResult& r) {
  json cov = json::array();
  for (Eigen::Index i = 0; i < r.fit.coefficient_covariance.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.fit.coefficient_covariance.cols(); ++j) {
      row.push_back(r.fit.coefficient_covariance(i, j));
    }
    cov.push_back(std::move(row));
  }
  json terms = json::array();
  for (auto t : r.fit.mean.basis.terms()) terms.push_back(std::string(to_string(t)));
  json out{{"method", std::string(to_string(r.fit.method))},
           {"n", r.cohort.size()},
           {"terms", std::move(terms)},
           {"coefficients", r.fit.mean.coefficients},
           {"coefficient_covariance", std::move(cov)},
           {"r_squared", r.fit.r_squared},
           {"scale", r.fit.scale},
           {"iterations", r.fit.iterations},
           {"converged", r.fit.converged},
           {"kappa", r.chart.kappa},
           {"warnings", r.warnings}};
  out["variance_coefficients"] =
      r.fit.variance ? json(r.fit.variance->coefficients) : json(nullptr);
  if (r.highest_degree) {
    out["highest_degree_test"] = {{"f", r.highest_degree->f},
                                  {"p_value", r.highest_degree->p_value},
                                  {"df1", r.highest_degree->df1},
                                  {"df2", r.highest_degree->df2}};
  }
  if (r.trim) out["trim"] = trim_report_to_json(*r.trim);
  if (r.reweight) {
    out["reweight"] = {{"n_low", r.reweight->n_low},
                       {"n_high", r.reweight->n_high},
                       {"low_weight", r.reweight->low_weight},
                       {"high_weight", r.reweight->high_weight}};
  }
  return out;
}

}  // namespace gestalt
