#include "gestalt/simulate.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "gestalt/chart_io.hpp"
#include "gestalt/error.hpp"
#include "gestalt/pipeline.hpp"

namespace gestalt {

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void check_spec(const SimSpec& spec) {
  validate(spec.chart);
  if (spec.n == 0) throw Error(ErrorCode::kInvalidArgument, "simulation needs n > 0");
  if (!(spec.contamination.fraction >= 0.0 && spec.contamination.fraction < 0.5)) {
    throw Error(ErrorCode::kInvalidArgument, "contamination fraction must lie in [0, 0.5)");
  }
  if (!std::isfinite(spec.contamination.offset)) {
    throw Error(ErrorCode::kInvalidArgument, "contamination offset must be finite");
  }
  const auto& dom = spec.chart.domain;
  if (const auto* u = std::get_if<UniformCovariate>(&spec.covariate)) {
    if (!(u->lo <= u->hi) || !dom.contains(u->lo) || !dom.contains(u->hi)) {
      throw Error(ErrorCode::kDomain, "covariate bounds must be ordered and inside the chart domain");
    }
  } else {
    const auto& values = std::get<EmpiricalCovariate>(spec.covariate).values;
    if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "empirical covariate list is empty");
    for (double v : values) {
      if (!dom.contains(v)) {
        throw Error(ErrorCode::kDomain, "empirical covariate value " + std::to_string(v) +
                                            " is outside the chart domain");
      }
    }
  }
  if (spec.noise.sd && !(*spec.noise.sd >= 0.0 && std::isfinite(*spec.noise.sd))) {
    throw Error(ErrorCode::kInvalidArgument, "noise sd must be finite and non-negative");
  }
  if (spec.noise.kind == NoiseKind::kConstantSd && !spec.noise.sd) {
    throw Error(ErrorCode::kInvalidArgument, "constant_sd noise needs an sd");
  }
  if (spec.noise.kind != NoiseKind::kConstantSd && !spec.noise.sd && !spec.chart.variance) {
    throw Error(ErrorCode::kUnsupported,
                "chart '" + spec.chart.name + "' has no variance model to draw noise from");
  }
  if (!spec.seed) throw Error(ErrorCode::kInvalidArgument, "simulation needs an explicit seed");
}

}  // namespace

Simulation simulate_cohort(const SimSpec& spec) {
  check_spec(spec);
  std::mt19937_64 rng(*spec.seed);
  const bool growth = spec.chart.predicts == Predicts::kCrlFromFa;
  const std::chrono::sys_days start{std::chrono::year{2020} / 1 / 1};

  std::vector<double> xs(spec.n), ys(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    double x;
    if (const auto* u = std::get_if<UniformCovariate>(&spec.covariate)) {
      x = u->lo + (u->hi - u->lo) * uniform01(rng);
    } else {
      const auto& values = std::get<EmpiricalCovariate>(spec.covariate).values;
      x = values[i % values.size()];
    }
    const auto ev = evaluate(spec.chart, x);
    const double sd = spec.noise.sd ? *spec.noise.sd : ev.sd.value_or(0.0);
    double y = 0.0;
    int tries = 0;
    do {
      if (++tries > 10000) {
        throw Error(ErrorCode::kDomain, "could not draw a positive response at " +
                                            std::to_string(x));
      }
      const double e = spec.noise.kind == NoiseKind::kUniform
                           ? std::sqrt(3.0) * sd * (2.0 * uniform01(rng) - 1.0)
                           : sd * standard_normal(rng);
      y = ev.mean + e;
    } while (!(y > 0.0));
    xs[i] = x;
    ys[i] = y;
  }

  std::vector<std::size_t> perm(spec.n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = spec.n - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng() % (i + 1)]);
  }
  const auto n_bad = static_cast<std::size_t>(
      round_half_away(spec.contamination.fraction * static_cast<double>(spec.n)));
  Simulation out;
  out.contaminated.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_bad));
  std::sort(out.contaminated.begin(), out.contaminated.end());
  for (std::size_t i : out.contaminated) {
    ys[i] += spec.contamination.offset;
    if (!(ys[i] > 0.0)) {
      throw Error(ErrorCode::kDomain, "contamination offset makes a response non-positive");
    }
  }

  std::vector<Measurement> rows;
  rows.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "sim-%06zu", i + 1);
    Measurement m;
    m.pregnancy_id = id;
    m.exam_date = Date{start + std::chrono::days{static_cast<long>(i)}};
    m.fa = growth ? xs[i] : ys[i];
    m.crl = growth ? ys[i] : xs[i];
    m.source = spec.source;
    rows.push_back(std::move(m));
  }
  out.cohort = Cohort(std::move(rows), "simulated from '" + spec.chart.name + "', seed " +
                                           std::to_string(*spec.seed));
  return out;
}

namespace {

void reject_unknown(const nlohmann::json& obj, std::set<std::string> allowed,
                    const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::kSchema, where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw Error(ErrorCode::kSchema, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_as(const nlohmann::json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kSchema, where + ": missing or invalid '" + key + "'");
  }
}

}  // namespace

SimSpec sim_spec_from_json(const nlohmann::json& doc, const ReferenceRegistry& registry) {
  reject_unknown(doc, {"chart", "n", "covariate", "noise", "contamination", "source", "seed"},
                 "simulation spec");
  if (!doc.contains("chart")) throw Error(ErrorCode::kSchema, "simulation spec: missing 'chart'");
  const auto& c = doc["chart"];
  GrowthChart chart = c.is_string() ? registry.lookup(c.get<std::string>()) : chart_from_json(c);

  const auto n = get_as<long long>(doc, "n", "simulation spec");
  if (n <= 0) throw Error(ErrorCode::kInvalidArgument, "simulation needs n > 0");

  SimSpec spec{.chart = chart,
               .n = static_cast<std::size_t>(n),
               .covariate = UniformCovariate{chart.domain.lo, chart.domain.hi}};
  if (doc.contains("covariate")) {
    const auto& cov = doc["covariate"];
    const auto kind = get_as<std::string>(cov, "kind", "covariate");
    if (kind == "uniform") {
      reject_unknown(cov, {"kind", "lo", "hi"}, "covariate");
      spec.covariate = UniformCovariate{cov.value("lo", chart.domain.lo), cov.value("hi", chart.domain.hi)};
    } else if (kind == "empirical") {
      reject_unknown(cov, {"kind", "values"}, "covariate");
      spec.covariate = EmpiricalCovariate{get_as<std::vector<double>>(cov, "values", "covariate")};
    } else {
      throw Error(ErrorCode::kSchema, "covariate kind must be 'uniform' or 'empirical'");
    }
  }
  if (doc.contains("noise")) {
    const auto& noise = doc["noise"];
    reject_unknown(noise, {"kind", "sd"}, "noise");
    const auto kind = get_as<std::string>(noise, "kind", "noise");
    if (kind == "chart_variance") {
      spec.noise.kind = NoiseKind::kChartVariance;
      if (noise.contains("sd")) throw Error(ErrorCode::kSchema, "chart_variance noise takes no sd");
    } else if (kind == "constant_sd") {
      spec.noise.kind = NoiseKind::kConstantSd;
    } else if (kind == "uniform") {
      spec.noise.kind = NoiseKind::kUniform;
    } else {
      throw Error(ErrorCode::kSchema,
                  "noise kind must be 'chart_variance', 'constant_sd' or 'uniform'");
    }
    if (noise.contains("sd")) spec.noise.sd = get_as<double>(noise, "sd", "noise");
  }
  if (doc.contains("contamination")) {
    const auto& cont = doc["contamination"];
    reject_unknown(cont, {"fraction", "offset"}, "contamination");
    spec.contamination.fraction = get_as<double>(cont, "fraction", "contamination");
    spec.contamination.offset = get_as<double>(cont, "offset", "contamination");
  }
  if (doc.contains("source")) spec.source = parse_source(get_as<std::string>(doc, "source", "simulation spec"));
  if (doc.contains("seed")) spec.seed = get_as<std::uint64_t>(doc, "seed", "simulation spec");
  return spec;
}

}  // namespace gestalt
