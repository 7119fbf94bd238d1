#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gestalt/cohort.hpp"
#include "gestalt/model.hpp"

namespace gestalt {

struct MixtureComponent {
  MeanModel mean;
  double noise_sd = 0.0;
  double mixing_weight = 0.0;
  double r_squared = 0.0;
};

struct MixtureOptions {
  int restarts = 10;
  int max_iterations = 500;
  double tolerance = 1e-8;
  double min_weight = 0.05;
  double min_sd = 1e-6;
};

/// Two-component Gaussian mixture of regressions. Rows of `responsibilities`
/// and `assignments` follow the input order; components are ordered by the
/// mean covariate of their hard-assigned points.
struct MixtureFit {
  std::array<MixtureComponent, 2> components;
  Eigen::MatrixXd responsibilities;
  double log_likelihood = 0.0;
  /// 0 or 1 by maximum responsibility, ties to 0.
  std::vector<int> assignments;
  std::uint64_t seed = 0;
  int restart = 0;
  int iterations = 0;
  bool converged = true;
  bool components_identical = false;
  Variable response = Variable::kCRL;
  Interval observed_range;
  std::vector<std::string> warnings;

  std::array<std::size_t, 2> sizes() const;
};

/// EM from `opts.restarts` seeded starts (covariate cuts, random assignments
/// and random-subset curves in rotation). Throws
/// kInsufficientData when n < 4(k+1) and kCollapse when every restart
/// collapses.
MixtureFit fit_mixture(std::span<const double> x, std::span<const double> y,
                       const BasisSpec& basis, std::uint64_t seed,
                       const MixtureOptions& opts = {});
MixtureFit fit_mixture(const Cohort& cohort, const BasisSpec& basis, std::uint64_t seed,
                       const MixtureOptions& opts = {});

struct Breakpoint {
  std::optional<double> value;
  std::string diagnostic;
};

/// Crossing of the two component means over `range`.
Breakpoint find_breakpoint(const MixtureFit& fit, Interval range);
Breakpoint find_breakpoint(const MixtureFit& fit);

/// Two chart blocks plus mixing weights, log-likelihood, breakpoint and seed.
nlohmann::json mixture_to_json(const MixtureFit& fit, const Breakpoint& breakpoint);

}  // namespace gestalt
