#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gestalt/cohort.hpp"
#include "gestalt/model.hpp"
#include "gestalt/registry.hpp"

namespace gestalt {

struct UniformCovariate {
  double lo = 0.0;
  double hi = 0.0;
};

struct EmpiricalCovariate {
  std::vector<double> values;
};

enum class NoiseKind { kChartVariance, kConstantSd, kUniform };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kChartVariance;
  /// Constant SD for kConstantSd; for kUniform an override of the chart SD.
  std::optional<double> sd;
};

struct Contamination {
  double fraction = 0.0;
  double offset = 0.0;
};

struct SimSpec {
  GrowthChart chart;
  std::size_t n = 0;
  std::variant<UniformCovariate, EmpiricalCovariate> covariate;
  NoiseSpec noise;
  Contamination contamination;
  Source source = Source::kSpontaneous;
  std::optional<std::uint64_t> seed;
};

struct Simulation {
  Cohort cohort;
  /// Row indices that received the contamination offset, ascending.
  std::vector<std::size_t> contaminated;
};

/// Generator, fixed so that a seed always yields the same cohort:
///   one std::mt19937_64 seeded with `seed`; uniforms are (draw >> 11) * 2^-53;
///   for each row i in order: covariate (uniform lo + (hi - lo) u, or
///   values[i mod size]); noise from Box-Muller cos branch on (1 - u1, u2), or
///   sqrt(3) sd (2u - 1) for uniform noise; a draw leaving a non-positive
///   response is redrawn.
///   Then a Fisher-Yates shuffle of 0..n-1 (j = draw mod (i + 1), i descending)
///   and the first round(fraction * n) shuffled rows get +offset.
/// Rows are "sim-000001", ... with exam dates one day apart from 2020-01-01.
Simulation simulate_cohort(const SimSpec& spec);

/// Strict reader; unknown keys are rejected with kSchema. `chart` is a
/// registry name or an inline chart document.
SimSpec sim_spec_from_json(const nlohmann::json& doc,
                           const ReferenceRegistry& registry = ReferenceRegistry::builtin());

}  // namespace gestalt
