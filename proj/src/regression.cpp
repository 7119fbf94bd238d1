#include "gestalt/regression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/fisher_f.hpp>

#include "gestalt/error.hpp"
#include "gestalt/order_stats.hpp"

namespace gestalt {

std::string_view to_string(FitMethod m) {
  switch (m) {
    case FitMethod::kLeastSquares: return "ols";
    case FitMethod::kHeteroskedastic: return "gls";
    case FitMethod::kRobust: return "robust";
  }
  return "?";
}

FitMethod parse_fit_method(std::string_view text) {
  if (text == "ols" || text == "least_squares") return FitMethod::kLeastSquares;
  if (text == "gls" || text == "heteroskedastic") return FitMethod::kHeteroskedastic;
  if (text == "robust") return FitMethod::kRobust;
  throw Error(ErrorCode::kParse, "unknown fit method '" + std::string(text) +
                                     "' (expected ols, gls or robust)");
}

std::vector<double> covariate_values(const Cohort& cohort, Variable covariate) {
  std::vector<double> out;
  out.reserve(cohort.size());
  for (const auto& m : cohort) {
    switch (covariate) {
      case Variable::kFA: out.push_back(m.fa); break;
      case Variable::kGA: out.push_back(m.fa + kGestationalOffsetDays); break;
      case Variable::kCRL: out.push_back(m.crl); break;
    }
  }
  return out;
}

std::vector<double> response_values(const Cohort& cohort, Variable response) {
  if (response == Variable::kGA) {
    throw Error(ErrorCode::kUnsupported, "GA is not a fitting response; use FA");
  }
  return covariate_values(cohort, response);
}

Variable default_response(Variable covariate) {
  return covariate == Variable::kCRL ? Variable::kFA : Variable::kCRL;
}

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd to_eigen(std::span<const double> v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

struct WlsSolution {
  VectorXd beta;
  MatrixXd xtwx_inv;  // (X' W X)^-1
  VectorXd residuals;
  double ssr = 0.0;   // sum w r^2
  double r_squared = 0.0;
};

void check_sizes(std::size_t n, std::size_t k, std::size_t ny, std::size_t nw) {
  if (ny != n) throw Error(ErrorCode::kInvalidArgument, "covariate/response length mismatch");
  if (nw != 0 && nw != n) throw Error(ErrorCode::kInvalidArgument, "weight length mismatch");
  if (n < k + 1) {
    throw Error(ErrorCode::kInsufficientData,
                "need at least " + std::to_string(k + 1) + " observations for " +
                    std::to_string(k) + " basis terms, got " + std::to_string(n));
  }
}

double weighted_r_squared(const VectorXd& y, const VectorXd& w, double ssr) {
  const double sw = w.sum();
  const double ybar = w.dot(y) / sw;
  const double sst = (w.array() * (y.array() - ybar).square()).sum();
  const double tiny = 1e-20 * std::max(1.0, (w.array() * y.array().square()).sum());
  if (sst <= tiny) return ssr <= tiny ? 1.0 : 0.0;
  return std::clamp(1.0 - ssr / sst, 0.0, 1.0);
}

WlsSolution solve_wls(const MatrixXd& X, const VectorXd& y, const VectorXd& w,
                      const BasisSpec& basis) {
  const Index n = X.rows();
  const Index k = X.cols();
  for (Index i = 0; i < n; ++i) {
    if (!std::isfinite(w(i)) || w(i) < 0.0) {
      throw Error(ErrorCode::kDegenerateVariance, "non-finite or negative regression weight");
    }
  }
  const VectorXd sw = w.array().sqrt();
  MatrixXd Xw = sw.asDiagonal() * X;
  VectorXd col_scale = Xw.colwise().norm().transpose();
  for (Index j = 0; j < k; ++j) {
    if (col_scale(j) == 0.0) col_scale(j) = 1.0;
  }
  Xw = Xw * col_scale.cwiseInverse().asDiagonal();

  Eigen::ColPivHouseholderQR<MatrixXd> qr(Xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    const auto& perm = qr.colsPermutation().indices();
    std::ostringstream msg;
    msg << "design matrix is rank deficient (rank " << qr.rank() << " of " << k
        << "); collinear term(s):";
    for (Index j = qr.rank(); j < k; ++j) msg << " " << to_string(basis.terms()[perm(j)]);
    throw Error(ErrorCode::kSingular, msg.str());
  }
  const VectorXd yw = sw.cwiseProduct(y);
  const VectorXd beta_s = qr.solve(yw);

  const MatrixXd R = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  const MatrixXd R_inv =
      R.triangularView<Eigen::Upper>().solve(MatrixXd::Identity(k, k));
  const MatrixXd P = qr.colsPermutation();
  const MatrixXd inv_s = P * (R_inv * R_inv.transpose()) * P.transpose();

  WlsSolution out;
  out.beta = beta_s.cwiseQuotient(col_scale);
  out.xtwx_inv = col_scale.cwiseInverse().asDiagonal() * inv_s *
                 col_scale.cwiseInverse().asDiagonal();
  out.residuals = y - X * out.beta;
  out.ssr = (w.array() * out.residuals.array().square()).sum();
  out.r_squared = weighted_r_squared(y, w, out.ssr);
  return out;
}

VectorXd weights_or_ones(std::span<const double> w, std::size_t n) {
  return w.empty() ? VectorXd::Ones(static_cast<Index>(n)) : to_eigen(w);
}

MatrixXd ols_covariance(const WlsSolution& s, Index n, Index k) {
  const double sigma2 = n > k ? s.ssr / static_cast<double>(n - k) : 0.0;
  return sigma2 * s.xtwx_inv;
}

double bisquare(double u) {
  if (std::abs(u) >= 1.0) return 0.0;
  const double t = 1.0 - u * u;
  return t * t;
}

}  // namespace

FitReport fit_least_squares(std::span<const double> x, std::span<const double> y,
                            const BasisSpec& basis, std::span<const double> weights) {
  check_sizes(x.size(), basis.size(), y.size(), weights.size());
  const MatrixXd X = basis.design(x);
  const VectorXd w = weights_or_ones(weights, x.size());
  const auto sol = solve_wls(X, to_eigen(y), w, basis);

  FitReport r{.method = FitMethod::kLeastSquares,
              .mean = MeanModel(basis, to_std(sol.beta)),
              .residuals = to_std(sol.residuals),
              .robust_weights = std::vector<double>(x.size(), 1.0),
              .working_weights = to_std(w),
              .r_squared = sol.r_squared,
              .coefficient_covariance = ols_covariance(sol, X.rows(), X.cols())};
  r.scale = std::sqrt(sol.ssr / static_cast<double>(X.rows() - X.cols()));
  return r;
}

FitReport fit_least_squares(const Cohort& cohort, const BasisSpec& basis, Variable response,
                            std::optional<std::span<const double>> weights) {
  const auto x = covariate_values(cohort, basis.covariate());
  const auto y = response_values(cohort, response);
  const auto w = cohort.weights();
  auto r = fit_least_squares(x, y, basis, weights ? *weights : std::span<const double>(w));
  r.response = response;
  return r;
}

VarianceFit fit_variance_model(std::span<const double> residuals,
                               std::span<const double> covariate_values,
                               const BasisSpec& basis) {
  check_sizes(covariate_values.size(), basis.size(), residuals.size(), 0);
  std::vector<double> sq(residuals.size());
  std::transform(residuals.begin(), residuals.end(), sq.begin(),
                 [](double r) { return r * r; });
  const MatrixXd X = basis.design(covariate_values);
  const auto sol = solve_wls(X, to_eigen(sq), VectorXd::Ones(X.rows()), basis);

  VarianceFit out{.model = VarianceModel(basis, to_std(sol.beta))};
  const auto [lo_it, hi_it] =
      std::minmax_element(covariate_values.begin(), covariate_values.end());
  constexpr int kGrid = 1000;
  int bad = 0;
  for (int i = 0; i <= kGrid; ++i) {
    const double x = *lo_it + (*hi_it - *lo_it) * i / kGrid;
    if (out.model.degenerate_at(x)) ++bad;
  }
  if (bad > (kGrid + 1) / 10) {
    out.degenerate = true;
    std::ostringstream msg;
    msg << "fitted variance is at or below the floor over " << (100.0 * bad / (kGrid + 1))
        << "% of the covariate range [" << *lo_it << ", " << *hi_it << "]";
    out.warnings.push_back(msg.str());
  }
  return out;
}

FitReport fit_robust(std::span<const double> x, std::span<const double> y,
                     const BasisSpec& basis, std::span<const double> weights,
                     const RobustOptions& opts) {
  const std::size_t k = basis.size();
  check_sizes(x.size(), k, y.size(), weights.size());
  if (x.size() < 2 * (k + 1)) {
    throw Error(ErrorCode::kInsufficientData,
                "robust fit needs at least " + std::to_string(2 * (k + 1)) + " observations");
  }
  if (!(opts.tuning > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tuning must be positive");

  const Index n = static_cast<Index>(x.size());
  const MatrixXd X = basis.design(x);
  const VectorXd yv = to_eigen(y);
  const VectorXd base_w = weights_or_ones(weights, x.size());

  // Start from least squares on the observations between the 10th and 90th
  // percentiles of the plain least-squares residuals.
  const auto plain = solve_wls(X, yv, base_w, basis);
  const std::vector<double> r0 = to_std(plain.residuals);
  const double q10 = quantile(r0, 0.10);
  const double q90 = quantile(r0, 0.90);
  VectorXd init_w = base_w;
  Index inside = 0;
  for (Index i = 0; i < n; ++i) {
    if (r0[i] < q10 || r0[i] > q90) {
      init_w(i) = 0.0;
    } else {
      ++inside;
    }
  }
  VectorXd beta = inside >= static_cast<Index>(k + 1) ? solve_wls(X, yv, init_w, basis).beta
                                                      : plain.beta;

  const double zero_scale = 1e-9 * std::max(1.0, yv.cwiseAbs().maxCoeff());
  VectorXd rw = VectorXd::Ones(n);
  VectorXd resid = yv - X * beta;
  double scale = 0.0;
  int iterations = 0;
  bool converged = false;
  WlsSolution sol;
  bool have_solution = false;

  for (; iterations < opts.max_iterations;) {
    const std::vector<double> abs_r = to_std(resid.cwiseAbs());
    scale = 1.4826 * median(abs_r);
    if (scale <= zero_scale) {
      if (resid.cwiseAbs().maxCoeff() <= zero_scale) {
        // Exact fit.
        rw.setOnes();
        converged = true;
        break;
      }
      for (Index i = 0; i < n; ++i) rw(i) = std::abs(resid(i)) <= zero_scale ? 1.0 : 0.0;
    } else {
      for (Index i = 0; i < n; ++i) rw(i) = bisquare(resid(i) / (opts.tuning * scale));
    }
    sol = solve_wls(X, yv, base_w.cwiseProduct(rw), basis);
    have_solution = true;
    ++iterations;
    const double change = (sol.beta - beta).cwiseAbs().maxCoeff();
    beta = sol.beta;
    resid = yv - X * beta;
    if (change < opts.tolerance) {
      converged = true;
      break;
    }
  }
  if (!have_solution || (converged && iterations == 0)) {
    sol = solve_wls(X, yv, base_w.cwiseProduct(rw), basis);
    beta = sol.beta;
    resid = sol.residuals;
  }
  scale = 1.4826 * median(to_std(resid.cwiseAbs()));

  const VectorXd w = base_w.cwiseProduct(rw);
  FitReport r{.method = FitMethod::kRobust,
              .mean = MeanModel(basis, to_std(beta)),
              .residuals = to_std(resid),
              .robust_weights = to_std(rw),
              .working_weights = to_std(w),
              .r_squared = sol.r_squared,
              .scale = scale,
              .iterations = iterations,
              .converged = converged};
  if (!converged) {
    r.warnings.push_back("robust fit did not converge in " +
                         std::to_string(opts.max_iterations) + " iterations");
  }

  // Sandwich covariance for the M-estimate:
  //   V = s^2 * c * (X'WX)^-1 (X'W^2 X) (X'WX)^-1
  //   c = [sum psi(u)^2 / (n - k)] / [mean psi'(u)]^2 * [mean w]^2 / [mean w^2]
  // with u = r / s and psi(u) = u * w(u / tuning).
  if (scale > zero_scale) {
    const double c = opts.tuning;
    double psi2 = 0.0;
    double dpsi = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double u = resid(i) / scale;
      const double t = u / c;
      if (std::abs(t) < 1.0) {
        const double one_m = 1.0 - t * t;
        psi2 += u * u * one_m * one_m * one_m * one_m;
        dpsi += one_m * (1.0 - 5.0 * t * t);
      }
    }
    dpsi /= static_cast<double>(n);
    const double mean_w = rw.mean();
    const double mean_w2 = rw.squaredNorm() / static_cast<double>(n);
    if (dpsi > 0.0 && mean_w2 > 0.0) {
      const double corr = psi2 / static_cast<double>(n - static_cast<Index>(k)) /
                          (dpsi * dpsi) * (mean_w * mean_w) / mean_w2;
      const MatrixXd meat = X.transpose() * w.cwiseProduct(w).asDiagonal() * X;
      r.coefficient_covariance = scale * scale * corr * sol.xtwx_inv * meat * sol.xtwx_inv;
    }
  }
  if (r.coefficient_covariance.size() == 0) {
    r.coefficient_covariance = MatrixXd::Zero(static_cast<Index>(k), static_cast<Index>(k));
  }
  return r;
}

FitReport fit_robust(const Cohort& cohort, const BasisSpec& basis, Variable response,
                     const RobustOptions& opts) {
  const auto x = covariate_values(cohort, basis.covariate());
  const auto y = response_values(cohort, response);
  const auto w = cohort.weights();
  auto r = fit_robust(x, y, basis, w, opts);
  r.response = response;
  return r;
}

FitReport fit_heteroskedastic(std::span<const double> mean_x, std::span<const double> var_x,
                              std::span<const double> y, const BasisSpec& mean_basis,
                              const BasisSpec& variance_basis,
                              std::span<const double> weights,
                              const HeteroskedasticOptions& opts) {
  check_sizes(mean_x.size(), mean_basis.size(), y.size(), weights.size());
  check_sizes(var_x.size(), variance_basis.size(), y.size(), 0);
  if (opts.max_rounds < 0) throw Error(ErrorCode::kInvalidArgument, "max_rounds must be >= 0");
  if (!(opts.min_variance_fraction >= 0.0 && opts.min_variance_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "min_variance_fraction must lie in [0, 1)");
  }

  const Index n = static_cast<Index>(y.size());
  const Index k = static_cast<Index>(mean_basis.size());
  const MatrixXd X = mean_basis.design(mean_x);
  const VectorXd yv = to_eigen(y);
  const VectorXd base_w = weights_or_ones(weights, y.size());

  std::vector<std::string> warnings;
  VectorXd beta;
  if (opts.first_stage == FirstStage::kRobust) {
    beta = to_eigen(fit_robust(mean_x, y, mean_basis, weights, opts.robust).mean.coefficients);
  } else {
    beta = solve_wls(X, yv, base_w, mean_basis).beta;
  }

  VectorXd w = base_w;
  WlsSolution sol;
  bool solved = false;
  for (int round = 0; round < opts.max_rounds; ++round) {
    const std::vector<double> resid = to_std(yv - X * beta);
    const auto var = fit_variance_model(resid, var_x, variance_basis);
    double ms = 0.0;
    for (double r : resid) ms += r * r;
    const double lower =
        std::max(var.model.floor, opts.min_variance_fraction * ms / static_cast<double>(n));
    for (Index i = 0; i < n; ++i) {
      const double v = std::max(var.model.variance(var_x[static_cast<std::size_t>(i)]), lower);
      w(i) = base_w(i) / v;
      if (!std::isfinite(w(i))) {
        throw Error(ErrorCode::kDegenerateVariance,
                    "non-finite GLS weight at observation " + std::to_string(i));
      }
    }
    sol = solve_wls(X, yv, w, mean_basis);
    solved = true;
    beta = sol.beta;
  }
  if (!solved) sol = solve_wls(X, yv, w, mean_basis);

  const std::vector<double> resid = to_std(sol.residuals);
  auto var = fit_variance_model(resid, var_x, variance_basis);
  warnings.insert(warnings.end(), var.warnings.begin(), var.warnings.end());

  // HC1 sandwich: (X'WX)^-1 X' W diag(r^2) W X (X'WX)^-1 * n / (n - k).
  const VectorXd wr = w.cwiseProduct(sol.residuals);
  const MatrixXd meat = X.transpose() * wr.cwiseProduct(wr).asDiagonal() * X;
  const double hc1 = static_cast<double>(n) / static_cast<double>(n - k);

  FitReport r{.method = FitMethod::kHeteroskedastic,
              .mean = MeanModel(mean_basis, to_std(sol.beta)),
              .variance = var.model,
              .residuals = resid,
              .robust_weights = std::vector<double>(y.size(), 1.0),
              .working_weights = to_std(w),
              .r_squared = sol.r_squared,
              .coefficient_covariance = hc1 * sol.xtwx_inv * meat * sol.xtwx_inv,
              .scale = std::sqrt(sol.ssr / static_cast<double>(n - k)),
              .iterations = opts.max_rounds,
              .converged = true,
              .warnings = std::move(warnings)};
  return r;
}

FitReport fit_heteroskedastic(const Cohort& cohort, const BasisSpec& mean_basis,
                              const BasisSpec& variance_basis, Variable response,
                              const HeteroskedasticOptions& opts) {
  const auto mx = covariate_values(cohort, mean_basis.covariate());
  const auto vx = covariate_values(cohort, variance_basis.covariate());
  const auto y = response_values(cohort, response);
  const auto w = cohort.weights();
  auto r = fit_heteroskedastic(mx, vx, y, mean_basis, variance_basis, w, opts);
  r.response = response;
  return r;
}

FitReport fit(const Cohort& cohort, const FitSpec& spec) {
  switch (spec.method) {
    case FitMethod::kLeastSquares:
      return fit_least_squares(cohort, spec.mean_basis, spec.response);
    case FitMethod::kRobust:
      return fit_robust(cohort, spec.mean_basis, spec.response, spec.robust);
    case FitMethod::kHeteroskedastic:
      return fit_heteroskedastic(cohort, spec.mean_basis,
                                 spec.variance_basis.value_or(spec.mean_basis), spec.response,
                                 spec.gls);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown fit method");
}

double f_upper_tail(double f, double df1, double df2) {
  if (std::isnan(f)) return 1.0;
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  boost::math::fisher_f dist(df1, df2);
  return boost::math::cdf(boost::math::complement(dist, f));
}

FTestResult highest_degree_test(const FitReport& fit, const Cohort& cohort) {
  const auto& basis = fit.mean.basis;
  if (basis.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "highest-degree test needs at least 2 terms");
  }
  const auto x = covariate_values(cohort, basis.covariate());
  const auto y = response_values(cohort, fit.response);
  if (fit.working_weights.size() != x.size()) {
    throw Error(ErrorCode::kInvalidArgument, "fit and cohort sizes differ");
  }
  const VectorXd w = to_eigen(fit.working_weights);
  const VectorXd yv = to_eigen(y);
  const VectorXd r_full = yv - basis.design(x) * to_eigen(fit.mean.coefficients);
  const double ssr_full = (w.array() * r_full.array().square()).sum();

  const auto reduced = basis.without_last();
  const auto sol = solve_wls(reduced.design(x), yv, w, reduced);

  const double n = static_cast<double>(x.size());
  const double k = static_cast<double>(basis.size());
  FTestResult out{.df1 = 1.0, .df2 = n - k};
  const double num = std::max(sol.ssr - ssr_full, 0.0);
  if (ssr_full <= 0.0) {
    out.f = num > 0.0 ? std::numeric_limits<double>::infinity()
                      : std::numeric_limits<double>::quiet_NaN();
  } else {
    out.f = num / (ssr_full / out.df2);
  }
  out.p_value = f_upper_tail(out.f, out.df1, out.df2);
  return out;
}

}  // namespace gestalt
