#include "gestalt/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "gestalt/chart_io.hpp"
#include "gestalt/error.hpp"
#include "gestalt/parallel.hpp"
#include "gestalt/regression.hpp"

namespace gestalt {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::array<std::size_t, 2> MixtureFit::sizes() const {
  std::array<std::size_t, 2> s{0, 0};
  for (int a : assignments) ++s[static_cast<std::size_t>(a)];
  return s;
}

namespace {

struct Component {
  VectorXd beta;
  double sd = 0.0;
  double weight = 0.0;
};

struct RestartResult {
  bool collapsed = true;
  std::string reason;
  std::array<Component, 2> comp;
  MatrixXd resp;
  double loglik = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

// Responsibility-weighted least squares; false when the weighted design is
// rank deficient.
bool weighted_solve(const MatrixXd& X, const VectorXd& y, const VectorXd& w, VectorXd& beta) {
  const VectorXd sw = w.array().sqrt();
  MatrixXd Xw = sw.asDiagonal() * X;
  VectorXd scale = Xw.colwise().norm().transpose();
  for (Index j = 0; j < scale.size(); ++j) {
    if (scale(j) == 0.0) return false;
  }
  Xw = Xw * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<MatrixXd> qr(Xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) return false;
  beta = qr.solve(sw.cwiseProduct(y)).cwiseQuotient(scale);
  return true;
}

double log_normal_pdf(double r, double sd) {
  static const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double z = r / sd;
  return -half_log_2pi - std::log(sd) - 0.5 * z * z;
}

// Hard starting partition. Kind 0 cuts the covariate order at a random index,
// kind 1 assigns rows at random, kind 2 fits each component to a random subset
// of 2k rows and assigns every row to the nearer curve.
MatrixXd initial_responsibilities(const MatrixXd& X, const VectorXd& y, std::size_t kind,
                                  std::mt19937_64& rng) {
  const Index n = X.rows();
  const auto k = static_cast<std::size_t>(X.cols());
  const auto un = static_cast<std::size_t>(n);
  MatrixXd resp = MatrixXd::Zero(n, 2);
  if (kind == 2) {
    std::array<VectorXd, 2> beta;
    bool ok = true;
    for (auto& b : beta) {
      std::vector<Index> rows(un);
      std::iota(rows.begin(), rows.end(), Index{0});
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(std::min(un, 2 * k));
      VectorXd w = VectorXd::Zero(n);
      for (Index i : rows) w(i) = 1.0;
      ok = ok && weighted_solve(X, y, w, b);
    }
    if (ok) {
      const VectorXd d0 = (y - X * beta[0]).cwiseAbs();
      const VectorXd d1 = (y - X * beta[1]).cwiseAbs();
      for (Index i = 0; i < n; ++i) resp(i, d1(i) < d0(i) ? 1 : 0) = 1.0;
      return resp;
    }
    kind = 1;
  }
  if (kind == 1) {
    for (Index i = 0; i < n; ++i) resp(i, static_cast<Index>(rng() & 1U)) = 1.0;
    return resp;
  }
  const std::size_t lo = k + 1;
  const std::size_t hi = un - (k + 1);
  const std::size_t cut = lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  for (std::size_t i = 0; i < un; ++i) resp(static_cast<Index>(i), i < cut ? 0 : 1) = 1.0;
  return resp;
}

// One EM run. Rows are in canonical (x, y) order.
RestartResult run_em(const MatrixXd& X, const VectorXd& y, MatrixXd resp,
                     const MixtureOptions& opts) {
  const Index n = X.rows();
  RestartResult out;

  auto m_step = [&]() -> bool {
    for (int j = 0; j < 2; ++j) {
      const VectorXd w = resp.col(j);
      const double total = w.sum();
      auto& c = out.comp[static_cast<std::size_t>(j)];
      c.weight = total / static_cast<double>(n);
      if (c.weight < opts.min_weight) {
        out.reason = "mixing weight below " + std::to_string(opts.min_weight);
        return false;
      }
      if (!weighted_solve(X, y, w, c.beta)) {
        out.reason = "component design is rank deficient";
        return false;
      }
      const VectorXd r = y - X * c.beta;
      c.sd = std::sqrt(w.dot(r.cwiseAbs2()) / total);
      if (!(c.sd >= opts.min_sd)) {
        out.reason = "noise sd below " + std::to_string(opts.min_sd);
        return false;
      }
    }
    return true;
  };

  auto e_step = [&]() {
    double ll = 0.0;
    std::array<VectorXd, 2> res{y - X * out.comp[0].beta, y - X * out.comp[1].beta};
    for (Index i = 0; i < n; ++i) {
      const double l0 = std::log(out.comp[0].weight) + log_normal_pdf(res[0](i), out.comp[0].sd);
      const double l1 = std::log(out.comp[1].weight) + log_normal_pdf(res[1](i), out.comp[1].sd);
      const double m = std::max(l0, l1);
      const double lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
      resp(i, 0) = std::exp(l0 - lse);
      resp(i, 1) = std::exp(l1 - lse);
      ll += lse;
    }
    return ll;
  };

  if (!m_step()) return out;
  double ll = e_step();
  for (int it = 1; it <= opts.max_iterations; ++it) {
    if (!m_step()) return out;
    const double next = e_step();
    out.iterations = it;
    if (next < ll - 1e-9 * std::max(1.0, std::abs(ll))) {
      throw std::logic_error("EM log-likelihood decreased from " + std::to_string(ll) + " to " +
                             std::to_string(next));
    }
    const double gain = next - ll;
    ll = next;
    if (gain < opts.tolerance) {
      out.converged = true;
      break;
    }
  }
  out.collapsed = false;
  out.resp = std::move(resp);
  out.loglik = ll;
  return out;
}

std::vector<int> hard_labels(const MatrixXd& resp) {
  std::vector<int> labels(static_cast<std::size_t>(resp.rows()));
  for (Index i = 0; i < resp.rows(); ++i) labels[static_cast<std::size_t>(i)] = resp(i, 1) > resp(i, 0);
  return labels;
}

}  // namespace

MixtureFit fit_mixture(std::span<const double> x, std::span<const double> y,
                       const BasisSpec& basis, std::uint64_t seed, const MixtureOptions& opts) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::kInvalidArgument, "covariate/response length mismatch");
  }
  const std::size_t n = x.size();
  const std::size_t k = basis.size();
  if (n < 4 * (k + 1)) {
    throw Error(ErrorCode::kInsufficientData,
                "mixture fit needs at least " + std::to_string(4 * (k + 1)) +
                    " observations, got " + std::to_string(n));
  }
  if (opts.restarts < 1 || opts.max_iterations < 1) {
    throw Error(ErrorCode::kInvalidArgument, "restarts and max_iterations must be positive");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
  });
  std::vector<double> xs(n);
  VectorXd ys(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x[order[i]];
    ys(static_cast<Index>(i)) = y[order[i]];
  }
  const MatrixXd X = basis.design(xs);

  const auto restarts = static_cast<std::size_t>(opts.restarts);
  std::vector<RestartResult> results(restarts);
  parallel_for(restarts, [&](std::size_t r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    results[r] = run_em(X, ys, initial_responsibilities(X, ys, r % 3, rng), opts);
  });

  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < restarts; ++r) {
    if (results[r].collapsed) continue;
    if (!best || results[r].loglik > results[*best].loglik) best = r;
  }
  if (!best) {
    throw Error(ErrorCode::kCollapse, "every EM restart collapsed (last: " +
                                          results.back().reason + ")");
  }
  const auto& win = results[*best];

  // Order components by the mean covariate of their hard-assigned points.
  auto labels = hard_labels(win.resp);
  std::array<double, 2> sum{0, 0}, cnt{0, 0}, wsum{0, 0}, wx{0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    sum[static_cast<std::size_t>(labels[i])] += xs[i];
    cnt[static_cast<std::size_t>(labels[i])] += 1.0;
    for (int j = 0; j < 2; ++j) {
      wsum[static_cast<std::size_t>(j)] += win.resp(static_cast<Index>(i), j);
      wx[static_cast<std::size_t>(j)] += win.resp(static_cast<Index>(i), j) * xs[i];
    }
  }
  std::array<double, 2> centre{};
  for (std::size_t j = 0; j < 2; ++j) centre[j] = cnt[j] > 0 ? sum[j] / cnt[j] : wx[j] / wsum[j];
  const bool swap = centre[1] < centre[0];

  MixtureFit fit{.components = {MixtureComponent{MeanModel(basis, std::vector<double>(basis.size(), 0.0)), 0, 0, 0},
                                MixtureComponent{MeanModel(basis, std::vector<double>(basis.size(), 0.0)), 0, 0, 0}},
                 .seed = seed};
  fit.restart = static_cast<int>(*best);
  fit.iterations = win.iterations;
  fit.converged = win.converged;
  fit.log_likelihood = win.loglik;
  fit.response = default_response(basis.covariate());
  fit.observed_range = {xs.front(), xs.back()};
  if (!win.converged) {
    fit.warnings.push_back("EM stopped at the iteration limit before converging");
  }

  MatrixXd resp_sorted = win.resp;
  if (swap) resp_sorted.col(0).swap(resp_sorted.col(1));
  for (std::size_t j = 0; j < 2; ++j) {
    const auto& c = win.comp[swap ? 1 - j : j];
    const VectorXd w = resp_sorted.col(static_cast<Index>(j));
    const VectorXd r = ys - X * c.beta;
    const double sw = w.sum();
    const double ybar = w.dot(ys) / sw;
    const double sst = w.dot((ys.array() - ybar).square().matrix());
    const double ssr = w.dot(r.cwiseAbs2());
    fit.components[j] = MixtureComponent{
        MeanModel(basis, std::vector<double>(c.beta.data(), c.beta.data() + c.beta.size())),
        c.sd, c.weight, sst > 0 ? std::clamp(1.0 - ssr / sst, 0.0, 1.0) : 1.0};
  }

  fit.responsibilities.resize(static_cast<Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    fit.responsibilities.row(static_cast<Index>(order[i])) = resp_sorted.row(static_cast<Index>(i));
  }
  fit.assignments = hard_labels(fit.responsibilities);

  const auto& a = fit.components[0].mean.coefficients;
  const auto& b = fit.components[1].mean.coefficients;
  double scale = 1.0, diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  fit.components_identical = diff <= 1e-6 * scale;
  if (fit.components_identical) {
    fit.warnings.push_back("the two components have identical mean curves");
  }
  return fit;
}

MixtureFit fit_mixture(const Cohort& cohort, const BasisSpec& basis, std::uint64_t seed,
                       const MixtureOptions& opts) {
  const auto x = covariate_values(cohort, basis.covariate());
  const auto y = response_values(cohort, default_response(basis.covariate()));
  return fit_mixture(x, y, basis, seed, opts);
}

Breakpoint find_breakpoint(const MixtureFit& fit, Interval range) {
  Breakpoint out;
  if (fit.components_identical) {
    out.diagnostic = "components are identical; no breakpoint";
    return out;
  }
  out.value = curve_intersection(fit.components[0].mean, fit.components[1].mean, range);
  if (!out.value) {
    std::ostringstream msg;
    msg << "component means do not cross in [" << range.lo << ", " << range.hi << "]";
    out.diagnostic = msg.str();
  }
  return out;
}

Breakpoint find_breakpoint(const MixtureFit& fit) {
  return find_breakpoint(fit, fit.observed_range);
}

nlohmann::json mixture_to_json(const MixtureFit& fit, const Breakpoint& breakpoint) {
  using nlohmann::json;
  const auto covariate = fit.components[0].mean.basis.covariate();
  const Predicts predicts =
      covariate == Variable::kCRL ? Predicts::kFaFromCrl : Predicts::kCrlFromFa;
  json charts = json::array();
  for (std::size_t j = 0; j < 2; ++j) {
    const auto& c = fit.components[j];
    GrowthChart chart{
        .name = "mixture_component_" + std::to_string(j + 1),
        .mean = c.mean,
        .variance = VarianceModel(BasisSpec(covariate, {Term::kOne}), {c.noise_sd * c.noise_sd}),
        .domain = fit.observed_range,
        .predicts = predicts,
        .response = fit.response,
    };
    auto block = chart_to_json(chart);
    block["noise_sd"] = c.noise_sd;
    block["r_squared"] = c.r_squared;
    block["size"] = fit.sizes()[j];
    charts.push_back(std::move(block));
  }
  return {{"components", std::move(charts)},
          {"mixing_weights",
           {fit.components[0].mixing_weight, fit.components[1].mixing_weight}},
          {"loglik", fit.log_likelihood},
          {"breakpoint", breakpoint.value ? json(*breakpoint.value) : json(nullptr)},
          {"breakpoint_diagnostic", breakpoint.diagnostic},
          {"components_identical", fit.components_identical},
          {"iterations", fit.iterations},
          {"converged", fit.converged},
          {"restart", fit.restart},
          {"seed", fit.seed}};
}

}  // namespace gestalt
