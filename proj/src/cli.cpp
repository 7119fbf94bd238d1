#include "gestalt/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "gestalt/chart_io.hpp"
#include "gestalt/config.hpp"
#include "gestalt/error.hpp"
#include "gestalt/mixture.hpp"
#include "gestalt/pipeline.hpp"
#include "gestalt/prediction.hpp"
#include "gestalt/registry.hpp"
#include "gestalt/simulate.hpp"
#include "gestalt/validation.hpp"

namespace gestalt {

namespace {

using nlohmann::json;

GrowthChart resolve_chart(const std::string& ref) {
  const auto& reg = ReferenceRegistry::builtin();
  if (reg.contains(ref)) return reg.lookup(ref);
  if (std::filesystem::is_regular_file(ref)) return load_chart(ref);
  return reg.lookup(ref);
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file(path, text);
  }
}

Cohort load_input(const std::string& path, bool lenient, std::ostream& err) {
  auto result = load_cohort(path, LoadOptions{.strict = !lenient});
  for (const auto& w : result.warnings) err << "warning: " << w << "\n";
  return result.cohort;
}

PipelineConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  const auto text = read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
  return pipeline_config_from_json(doc);
}

json prediction_json(const GrowthChart& chart, const Prediction& p) {
  return {{"chart", chart.name}, {"x", p.x},         {"mean", p.mean},
          {"sd", p.sd},          {"lower", p.lower}, {"upper", p.upper},
          {"kappa", p.kappa_used}};
}

// "eq1_ivf_crl", "file:chart.json" or "refit:NAME:METHOD:COVARIATE:TERMS[:VARIANCE_TERMS]".
ModelUnderTest parse_model(const std::string& text, std::optional<Predicts>& target) {
  if (text.rfind("refit:", 0) == 0) {
    std::vector<std::string> parts;
    std::stringstream ss(text.substr(6));
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() < 4 || parts.size() > 5) {
      throw Error(ErrorCode::kInvalidArgument,
                  "refit model must be refit:NAME:METHOD:COVARIATE:TERMS[:VARIANCE_TERMS], got '" +
                      text + "'");
    }
    FitSpec spec;
    spec.method = parse_fit_method(parts[1]);
    spec.mean_basis = BasisSpec(parse_variable(parts[2]), parse_terms(parts[3]));
    if (parts.size() == 5) spec.variance_basis = BasisSpec(spec.mean_basis.covariate(), parse_terms(parts[4]));
    spec.response = default_response(spec.mean_basis.covariate());
    const Predicts p = spec.response == Variable::kCRL ? Predicts::kCrlFromFa : Predicts::kFaFromCrl;
    if (!target) target = p;
    return ModelUnderTest::refit(parts[0], spec);
  }
  const std::string ref = text.rfind("file:", 0) == 0 ? text.substr(5) : text;
  GrowthChart chart = text.rfind("file:", 0) == 0 ? load_chart(ref) : resolve_chart(ref);
  if (!target) target = chart.predicts;
  std::string name = chart.name;
  return ModelUnderTest::fixed(std::move(name), std::move(chart));
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Growth-chart fitting, validation and prediction", "gestalt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "gestalt 1.0");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Clean a cohort CSV and fit a chart (JSON)");
  std::string fit_input, fit_output, fit_diag, fit_config, fit_method, fit_cov, fit_terms,
      fit_vterms, fit_name;
  bool fit_no_trim = false, fit_lenient = false;
  std::optional<double> fit_kappa;
  fit_cmd->add_option("-i,--input", fit_input, "Cohort CSV")->required();
  fit_cmd->add_option("-o,--output", fit_output, "Chart JSON (default: stdout)");
  fit_cmd->add_option("--diagnostics", fit_diag, "Diagnostics JSON file");
  fit_cmd->add_option("--config", fit_config, "Pipeline config JSON");
  fit_cmd->add_option("--method", fit_method, "ols, gls or robust");
  fit_cmd->add_option("--covariate", fit_cov, "FA, GA or CRL");
  fit_cmd->add_option("--terms", fit_terms, "Mean basis, e.g. 1,x,x2");
  fit_cmd->add_option("--variance-terms", fit_vterms, "Variance basis");
  fit_cmd->add_option("--name", fit_name, "Chart name");
  fit_cmd->add_option("--kappa", fit_kappa, "Fixed band multiplier");
  fit_cmd->add_flag("--no-trim", fit_no_trim, "Skip outlier trimming");
  fit_cmd->add_flag("--lenient", fit_lenient, "Skip invalid CSV rows instead of failing");

  // clean
  auto* clean_cmd = app.add_subcommand("clean", "Dedup, select, trim and reweight a cohort CSV");
  std::string clean_input, clean_output, clean_report, clean_config;
  bool clean_lenient = false;
  clean_cmd->add_option("-i,--input", clean_input, "Cohort CSV")->required();
  clean_cmd->add_option("-o,--output", clean_output, "Cleaned CSV (default: stdout)");
  clean_cmd->add_option("--report", clean_report, "Trim report JSON file");
  clean_cmd->add_option("--config", clean_config, "Pipeline config JSON");
  clean_cmd->add_flag("--lenient", clean_lenient, "Skip invalid CSV rows instead of failing");

  // predict / date / zscore
  auto* predict_cmd = app.add_subcommand("predict", "Mean and band of a chart at one value");
  std::string pred_chart;
  double pred_x = 0.0;
  std::optional<double> pred_kappa;
  bool pred_correct = false;
  predict_cmd->add_option("-c,--chart", pred_chart, "Registry name or chart file")->required();
  predict_cmd->add_option("-x,--x", pred_x, "Query value (FA days or CRL mm)")->required();
  predict_cmd->add_option("--kappa", pred_kappa, "Band multiplier override");
  predict_cmd->add_flag("--correct", pred_correct, "Apply the chart's corrective factor");

  auto* date_cmd = app.add_subcommand("date", "Foetal age from a CRL measurement");
  std::string date_chart = "eq4_ivf_fa";
  double date_crl = 0.0;
  std::optional<double> date_kappa;
  date_cmd->add_option("-c,--chart", date_chart, "Dating chart (default eq4_ivf_fa)");
  date_cmd->add_option("--crl", date_crl, "CRL in mm")->required();
  date_cmd->add_option("--kappa", date_kappa, "Band multiplier override");

  auto* z_cmd = app.add_subcommand("zscore", "Z-score of an observation");
  std::string z_chart;
  double z_x = 0.0, z_obs = 0.0;
  z_cmd->add_option("-c,--chart", z_chart, "Registry name or chart file")->required();
  z_cmd->add_option("-x,--x", z_x, "Query value")->required();
  z_cmd->add_option("--observed", z_obs, "Observed response")->required();

  // tabulate
  auto* tab_cmd = app.add_subcommand("tabulate", "Chart table over a grid");
  std::string tab_chart, tab_format = "csv", tab_output;
  double tab_from = 0.0, tab_to = 0.0, tab_step = 1.0;
  int tab_digits = 6;
  bool tab_band = false;
  std::optional<double> tab_kappa;
  tab_cmd->add_option("-c,--chart", tab_chart, "Registry name or chart file")->required();
  tab_cmd->add_option("--from", tab_from, "First grid value")->required();
  tab_cmd->add_option("--to", tab_to, "Last grid value")->required();
  tab_cmd->add_option("--step", tab_step, "Grid step (default 1)");
  tab_cmd->add_option("--format", tab_format, "csv or text")->check(CLI::IsMember({"csv", "text"}));
  tab_cmd->add_option("--digits", tab_digits, "Significant digits (default 6)");
  tab_cmd->add_flag("--with-band", tab_band, "Add lower/upper band columns");
  tab_cmd->add_option("--kappa", tab_kappa, "Band multiplier override");
  tab_cmd->add_option("-o,--output", tab_output, "Output file (default: stdout)");

  // crossval
  auto* cv_cmd = app.add_subcommand("crossval", "Leave-one-out comparison of models");
  std::string cv_input, cv_target, cv_format = "text", cv_output;
  std::vector<std::string> cv_models;
  bool cv_lenient = false;
  cv_cmd->add_option("-i,--input", cv_input, "Cohort CSV")->required();
  cv_cmd->add_option("-m,--model", cv_models,
                     "Registry name, file:PATH, or refit:NAME:METHOD:COVARIATE:TERMS[:VARIANCE_TERMS]")
      ->required();
  cv_cmd->add_option("--target", cv_target, "CRL_from_FA or FA_from_CRL");
  cv_cmd->add_option("--format", cv_format, "text or json")->check(CLI::IsMember({"text", "json"}));
  cv_cmd->add_option("-o,--output", cv_output, "Output file (default: stdout)");
  cv_cmd->add_flag("--lenient", cv_lenient, "Skip invalid CSV rows instead of failing");

  // breakpoint
  auto* bp_cmd = app.add_subcommand("breakpoint", "Two-regime mixture fit and breakpoint");
  std::string bp_input, bp_cov = "FA", bp_terms = "1,x,x2", bp_output;
  std::uint64_t bp_seed = 0;
  int bp_restarts = 10;
  std::vector<double> bp_range;
  bool bp_lenient = false;
  bp_cmd->add_option("-i,--input", bp_input, "Cohort CSV")->required();
  bp_cmd->add_option("--seed", bp_seed, "Random seed")->required();
  bp_cmd->add_option("--covariate", bp_cov, "FA, GA or CRL");
  bp_cmd->add_option("--terms", bp_terms, "Component basis");
  bp_cmd->add_option("--restarts", bp_restarts, "EM restarts (default 10)");
  bp_cmd->add_option("--range", bp_range, "Search range LO HI (default: observed)")->expected(2);
  bp_cmd->add_option("-o,--output", bp_output, "Output file (default: stdout)");
  bp_cmd->add_flag("--lenient", bp_lenient, "Skip invalid CSV rows instead of failing");

  // calibrate-kappa
  auto* cal_cmd = app.add_subcommand("calibrate-kappa", "Smallest kappa reaching a coverage");
  std::string cal_chart, cal_input;
  double cal_coverage = 0.95;
  bool cal_lenient = false;
  cal_cmd->add_option("-c,--chart", cal_chart, "Registry name or chart file")->required();
  cal_cmd->add_option("-i,--input", cal_input, "Cohort CSV")->required();
  cal_cmd->add_option("--coverage", cal_coverage, "Target coverage (default 0.95)");
  cal_cmd->add_flag("--lenient", cal_lenient, "Skip invalid CSV rows instead of failing");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Synthetic cohort CSV from a simulation spec");
  std::string sim_spec, sim_output;
  std::optional<std::uint64_t> sim_seed;
  sim_cmd->add_option("--spec", sim_spec, "Simulation spec JSON")->required();
  sim_cmd->add_option("--seed", sim_seed, "Random seed (overrides the spec)");
  sim_cmd->add_option("-o,--output", sim_output, "Output CSV (default: stdout)");

  // registry
  auto* reg_cmd = app.add_subcommand("registry", "Built-in reference charts");
  reg_cmd->require_subcommand(1);
  auto* reg_list = reg_cmd->add_subcommand("list", "List chart names");
  auto* reg_show = reg_cmd->add_subcommand("show", "Print a chart as JSON");
  std::string reg_name;
  reg_show->add_option("name", reg_name, "Chart name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit_cmd->parsed()) {
      PipelineConfig cfg = load_config(fit_config);
      if (!fit_method.empty()) cfg.fit.method = parse_fit_method(fit_method);
      if (!fit_cov.empty() || !fit_terms.empty()) {
        const Variable cov = fit_cov.empty() ? cfg.fit.mean_basis.covariate() : parse_variable(fit_cov);
        cfg.fit.mean_basis = BasisSpec(cov, fit_terms.empty() ? cfg.fit.mean_basis.terms()
                                                             : parse_terms(fit_terms));
        cfg.fit.response = default_response(cov);
        if (cfg.fit.variance_basis) {
          cfg.fit.variance_basis = BasisSpec(cov, cfg.fit.variance_basis->terms());
        }
      }
      if (!fit_vterms.empty()) {
        cfg.fit.variance_basis = BasisSpec(cfg.fit.mean_basis.covariate(), parse_terms(fit_vterms));
      }
      if (!fit_name.empty()) cfg.chart_name = fit_name;
      if (fit_kappa) {
        cfg.kappa.mode = KappaPolicy::Mode::kFixed;
        cfg.kappa.value = *fit_kappa;
      }
      if (fit_no_trim) cfg.trim = false;
      const auto result = run_pipeline(load_input(fit_input, fit_lenient, err), cfg);
      for (const auto& w : result.warnings) err << "warning: " << w << "\n";
      emit(chart_to_json(result.chart).dump(2) + "\n", fit_output, out);
      const auto diag = fit_diagnostics_json(result);
      if (!fit_diag.empty()) {
        write_file(fit_diag, diag.dump(2) + "\n");
      } else {
        err << "fitted " << to_string(result.fit.method) << " on " << result.cohort.size()
            << " observations, R^2 = " << result.fit.r_squared << "\n";
      }
    } else if (clean_cmd->parsed()) {
      const PipelineConfig cfg = load_config(clean_config);
      std::optional<TrimReport> trim;
      std::optional<Reweighted> rw;
      std::vector<std::string> warnings;
      const Cohort cleaned =
          clean_cohort(load_input(clean_input, clean_lenient, err), cfg, &trim, &rw, &warnings);
      for (const auto& w : warnings) err << "warning: " << w << "\n";
      emit(cohort_to_csv(cleaned), clean_output, out);
      if (!clean_report.empty()) {
        json report = trim ? trim_report_to_json(*trim) : json::object();
        write_file(clean_report, report.dump(2) + "\n");
      }
      err << "kept " << cleaned.size() << " observations\n";
    } else if (predict_cmd->parsed()) {
      const auto chart = resolve_chart(pred_chart);
      const auto p = predict_with_ci(chart, pred_x, pred_kappa, EvalOptions{pred_correct});
      out << prediction_json(chart, p).dump(2) << "\n";
    } else if (date_cmd->parsed()) {
      const auto chart = resolve_chart(date_chart);
      if (chart.predicts != Predicts::kFaFromCrl) {
        throw Error(ErrorCode::kInvalidArgument, "chart '" + chart.name + "' does not predict FA from CRL");
      }
      json doc{{"chart", chart.name}, {"crl", date_crl}};
      if (chart.variance) {
        const auto p = predict_with_ci(chart, date_crl, date_kappa);
        doc.update({{"fa", p.mean}, {"sd", p.sd}, {"lower", p.lower}, {"upper", p.upper},
                    {"kappa", p.kappa_used}});
      } else {
        doc["fa"] = evaluate_mean(chart, date_crl);
      }
      const double fa = doc["fa"].get<double>();
      doc["weeks_days"] = fa >= 0 ? to_string(fa_to_weeks_days(static_cast<int>(round_half_away(fa)))) : "";
      out << doc.dump(2) << "\n";
    } else if (z_cmd->parsed()) {
      const auto chart = resolve_chart(z_chart);
      out << json{{"chart", chart.name}, {"x", z_x}, {"observed", z_obs},
                  {"z", zscore(chart, z_x, z_obs)}}.dump(2)
          << "\n";
    } else if (tab_cmd->parsed()) {
      const auto chart = resolve_chart(tab_chart);
      const auto rows = tabulate(chart, tab_from, tab_to, tab_step);
      const TableFormat fmt{tab_digits, tab_band, tab_kappa};
      emit(tab_format == "csv" ? table_to_csv(chart, rows, fmt) : table_to_text(chart, rows, fmt),
           tab_output, out);
    } else if (cv_cmd->parsed()) {
      std::optional<Predicts> target;
      if (!cv_target.empty()) target = parse_predicts(cv_target);
      std::vector<ModelUnderTest> models;
      for (const auto& m : cv_models) models.push_back(parse_model(m, target));
      const auto report = loocv_compare(load_input(cv_input, cv_lenient, err), models, *target);
      emit(cv_format == "json" ? report_to_json(report).dump(2) + "\n" : render_text(report),
           cv_output, out);
    } else if (bp_cmd->parsed()) {
      const BasisSpec basis(parse_variable(bp_cov), parse_terms(bp_terms));
      MixtureOptions opts;
      opts.restarts = bp_restarts;
      const auto fit = fit_mixture(load_input(bp_input, bp_lenient, err), basis, bp_seed, opts);
      for (const auto& w : fit.warnings) err << "warning: " << w << "\n";
      const auto bp = bp_range.empty() ? find_breakpoint(fit)
                                       : find_breakpoint(fit, Interval{bp_range[0], bp_range[1]});
      if (!bp.value) err << "no breakpoint: " << bp.diagnostic << "\n";
      emit(mixture_to_json(fit, bp).dump(2) + "\n", bp_output, out);
    } else if (cal_cmd->parsed()) {
      const auto chart = resolve_chart(cal_chart);
      const Cohort cohort = load_input(cal_input, cal_lenient, err);
      const double kappa = calibrate_kappa(chart, cohort, cal_coverage);
      out << json{{"chart", chart.name},
                  {"n", cohort.size()},
                  {"target_coverage", cal_coverage},
                  {"kappa", kappa},
                  {"coverage", band_coverage(chart, cohort, kappa)}}
                 .dump(2)
          << "\n";
    } else if (sim_cmd->parsed()) {
      json doc;
      try {
        doc = json::parse(read_file(sim_spec));
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::kParse, sim_spec + ": " + e.what());
      }
      SimSpec spec = sim_spec_from_json(doc);
      if (sim_seed) spec.seed = sim_seed;
      if (!spec.seed) {
        err << "error: simulate needs --seed or a seed in the spec\n";
        return 2;
      }
      const auto sim = simulate_cohort(spec);
      emit(cohort_to_csv(sim.cohort), sim_output, out);
      err << "simulated " << sim.cohort.size() << " rows, " << sim.contaminated.size()
          << " contaminated\n";
    } else if (reg_list->parsed()) {
      const auto& reg = ReferenceRegistry::builtin();
      for (const auto& name : reg.names()) {
        const auto& c = reg.lookup(name);
        out << name << "\t" << to_string(c.predicts) << "\t[" << c.domain.lo << ", "
            << c.domain.hi << "]\t" << (c.variance ? "mean+sd" : "mean") << "\n";
      }
    } else if (reg_show->parsed()) {
      out << chart_to_json(ReferenceRegistry::builtin().lookup(reg_name)).dump(2) << "\n";
    }
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return e.code() == ErrorCode::kNotFound ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace gestalt
