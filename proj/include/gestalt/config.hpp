#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gestalt/cohort.hpp"
#include "gestalt/model.hpp"
#include "gestalt/pipeline.hpp"
#include "gestalt/regression.hpp"

namespace gestalt {

enum class StageOrder { kTrimThenReweight, kReweightThenTrim };

struct KappaPolicy {
  enum class Mode { kFixed, kCalibrate } mode = Mode::kFixed;
  double value = 1.96;
  double coverage = 0.95;
};

/// Cleaning and fitting settings. Every key is optional; unknown keys are
/// rejected.
///
///   {"dedup": {"enabled": true},
///    "select": {"enabled": true, "max_crl": 85, "require_regular_cycles": false},
///    "trim": {"enabled": true, "lower": 0.045, "upper": 0.039,
///             "covariate": "FA", "terms": "1,x,x2"},
///    "reweight": {"enabled": false, "threshold_crl": 45},
///    "order": "trim_then_reweight",
///    "fit": {"method": "gls", "covariate": "FA", "terms": "1,x,x2",
///            "variance_terms": "1,x,x2", "response": "CRL", "rounds": 2},
///    "kappa": {"mode": "fixed", "value": 1.96} | {"mode": "calibrate", "coverage": 0.95},
///    "chart_name": "fitted"}
struct PipelineConfig {
  bool dedup = true;
  bool select = true;
  double max_crl = 85.0;
  bool require_regular_cycles = false;
  bool trim = true;
  double trim_lower = 0.045;
  double trim_upper = 0.039;
  BasisSpec trim_basis = BasisSpec::quadratic(Variable::kFA);
  bool reweight = false;
  double reweight_threshold = 45.0;
  StageOrder order = StageOrder::kTrimThenReweight;
  FitSpec fit{.method = FitMethod::kHeteroskedastic};
  KappaPolicy kappa;
  std::string chart_name = "fitted";
};

PipelineConfig pipeline_config_from_json(const nlohmann::json& doc);

struct PipelineResult {
  Cohort cohort;
  std::optional<TrimReport> trim;
  std::optional<Reweighted> reweight;
  FitReport fit;
  GrowthChart chart;
  std::optional<FTestResult> highest_degree;
  std::vector<std::string> warnings;
};

/// Cleans the cohort (dedup, select, trim and reweight in the configured order)
/// and fits the configured model.
Cohort clean_cohort(const Cohort& cohort, const PipelineConfig& config,
                    std::optional<TrimReport>* trim = nullptr,
                    std::optional<Reweighted>* reweight = nullptr,
                    std::vector<std::string>* warnings = nullptr);
PipelineResult run_pipeline(const Cohort& cohort, const PipelineConfig& config);

/// Chart from a fit, with the observed covariate range as domain. Fits without
/// a variance model get a constant one from the residual scale; a variance
/// model that is degenerate over the range is dropped with a warning.
GrowthChart chart_from_fit(const FitReport& fit, const Cohort& cohort, std::string name,
                           double kappa, std::vector<std::string>* warnings = nullptr);

nlohmann::json fit_diagnostics_json(const PipelineResult& result);

}  // namespace gestalt
