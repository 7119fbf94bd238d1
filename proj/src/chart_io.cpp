#include "gestalt/chart_io.hpp"

#include <fstream>
#include <sstream>

#include "gestalt/error.hpp"

namespace gestalt {

using nlohmann::json;

namespace {

json terms_to_json(const BasisSpec& basis) {
  json out = json::array();
  for (auto t : basis.terms()) out.push_back(std::string(to_string(t)));
  return out;
}

std::vector<Term> terms_from_json(const json& j) {
  std::vector<Term> out;
  for (const auto& t : j) out.push_back(parse_term(t.get<std::string>()));
  return out;
}

const json& field(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end()) {
    throw Error(ErrorCode::kSchema, std::string("chart document lacks field '") + key + "'");
  }
  return *it;
}

}  // namespace

json chart_to_json(const GrowthChart& chart) {
  json doc;
  doc["schema_version"] = kChartSchemaVersion;
  doc["name"] = chart.name;
  doc["predicts"] = std::string(to_string(chart.predicts));
  doc["covariate"] = std::string(to_string(chart.mean.basis.covariate()));
  doc["response"] = std::string(to_string(chart.response));
  doc["terms"] = terms_to_json(chart.mean.basis);
  doc["response_transform"] = std::string(to_string(chart.mean.transform));
  doc["mean_coefficients"] = chart.mean.coefficients;
  if (chart.variance) {
    doc["variance_coefficients"] = chart.variance->coefficients;
    doc["variance_floor"] = chart.variance->floor;
    if (!(chart.variance->basis == chart.mean.basis)) {
      doc["variance_covariate"] = std::string(to_string(chart.variance->basis.covariate()));
      doc["variance_terms"] = terms_to_json(chart.variance->basis);
    }
  } else {
    doc["variance_coefficients"] = nullptr;
    doc["variance_floor"] = kDefaultVarianceFloor;
  }
  doc["kappa"] = chart.kappa;
  doc["domain"] = {chart.domain.lo, chart.domain.hi};
  if (chart.correction) {
    doc["corrective_factor"] = {{"absolute", chart.correction->absolute},
                                {"relative", chart.correction->relative}};
  } else {
    doc["corrective_factor"] = nullptr;
  }
  doc["citation"] = chart.citation;
  return doc;
}

GrowthChart chart_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kSchema, "chart document must be an object");
  try {
    const int version = field(doc, "schema_version").get<int>();
    if (version != kChartSchemaVersion) {
      throw Error(ErrorCode::kSchema, "chart schema version " + std::to_string(version) +
                                          " is not supported (expected " +
                                          std::to_string(kChartSchemaVersion) + ")");
    }
    const auto covariate = parse_variable(field(doc, "covariate").get<std::string>());
    BasisSpec basis(covariate, terms_from_json(field(doc, "terms")));
    MeanModel mean(basis, field(doc, "mean_coefficients").get<std::vector<double>>(),
                   parse_transform(doc.value("response_transform", std::string("identity"))));

    std::optional<VarianceModel> variance;
    auto vc = doc.find("variance_coefficients");
    if (vc != doc.end() && !vc->is_null()) {
      BasisSpec vbasis = basis;
      if (doc.contains("variance_terms")) {
        const auto vcov = doc.contains("variance_covariate")
                              ? parse_variable(doc["variance_covariate"].get<std::string>())
                              : covariate;
        vbasis = BasisSpec(vcov, terms_from_json(doc["variance_terms"]));
      }
      variance.emplace(std::move(vbasis), vc->get<std::vector<double>>(),
                       doc.value("variance_floor", kDefaultVarianceFloor));
    }

    const auto& dom = field(doc, "domain");
    if (!dom.is_array() || dom.size() != 2) {
      throw Error(ErrorCode::kSchema, "domain must be a two-element array");
    }
    const auto predicts = parse_predicts(field(doc, "predicts").get<std::string>());
    GrowthChart chart{
        .name = field(doc, "name").get<std::string>(),
        .mean = std::move(mean),
        .variance = std::move(variance),
        .kappa = doc.value("kappa", 1.96),
        .domain = Interval{dom[0].get<double>(), dom[1].get<double>()},
        .predicts = predicts,
        .response = doc.contains("response")
                        ? parse_variable(doc["response"].get<std::string>())
                        : reported_variable(predicts),
        .citation = doc.value("citation", std::string{}),
    };
    auto cf = doc.find("corrective_factor");
    if (cf != doc.end() && !cf->is_null()) {
      chart.correction =
          CorrectiveFactor{cf->at("absolute").get<double>(), cf->at("relative").get<double>()};
    }
    validate(chart);
    return chart;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("malformed chart document: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kSchema) throw;
    throw Error(ErrorCode::kSchema, std::string("invalid chart document: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kLoad, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kLoad, "cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw Error(ErrorCode::kLoad, "write failed for '" + path.string() + "'");
}

void save_chart(const GrowthChart& chart, const std::filesystem::path& path) {
  write_file(path, chart_to_json(chart).dump(2) + "\n");
}

GrowthChart load_chart(const std::filesystem::path& path) {
  const auto text = read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, "'" + path.string() + "' at byte " +
                                       std::to_string(e.byte) + ": " + e.what());
  }
  return chart_from_json(doc);
}

}  // namespace gestalt
