#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "moa/metrics.hpp"

namespace moa {

template <typename Scalar>
struct Standardized {
  VectorX<Scalar> values;
  Scalar mean = 0;
  Scalar stddev = 0;
};

// z-scores with the population (divisor n) standard deviation.
template <typename Derived>
Standardized<typename Derived::Scalar> standardize(const Eigen::DenseBase<Derived>& input) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = input.size();
  if (n < 2) throw Error(Errc::InsufficientData, "standardize needs at least 2 values");
  const auto& x = input.derived().array();
  if (!x.isFinite().all()) throw Error(Errc::InvalidArgument, "non-finite value");
  if (x.maxCoeff() == x.minCoeff()) throw Error(Errc::DegenerateInput, "constant input (std = 0)");
  Standardized<Scalar> out;
  out.mean = x.mean();
  out.stddev = std::sqrt((x - out.mean).square().mean());
  if (!(out.stddev > Scalar(0))) throw Error(Errc::DegenerateInput, "std = 0");
  out.values = ((x - out.mean) / out.stddev).matrix();
  return out;
}

inline Standardized<double> standardize(std::span<const double> values) {
  return standardize(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
}

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
template <typename Scalar>
Scalar regularized_incomplete_beta(Scalar a, Scalar b, Scalar x) {
  if (!(a > 0 && b > 0)) throw Error(Errc::InvalidArgument, "incomplete beta needs a, b > 0");
  if (x <= Scalar(0)) return Scalar(0);
  if (x >= Scalar(1)) return Scalar(1);
  if (x > (a + 1) / (a + b + 2)) return Scalar(1) - regularized_incomplete_beta(b, a, Scalar(1) - x);

  constexpr Scalar kTiny = std::numeric_limits<Scalar>::min() / std::numeric_limits<Scalar>::epsilon();
  constexpr Scalar kEps = std::numeric_limits<Scalar>::epsilon();
  const Scalar log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);

  Scalar c = 1;
  Scalar d = 1 - (a + b) * x / (a + 1);
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1 / d;
  Scalar h = d;
  for (int m = 1; m <= 1000; ++m) {
    const Scalar mm = static_cast<Scalar>(m);
    // even step
    Scalar num = mm * (b - mm) * x / ((a + 2 * mm - 1) * (a + 2 * mm));
    d = 1 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1 / d;
    h *= d * c;
    // odd step
    num = -(a + mm) * (a + b + mm) * x / ((a + 2 * mm) * (a + 2 * mm + 1));
    d = 1 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1 / d;
    const Scalar delta = d * c;
    h *= delta;
    if (std::abs(delta - 1) < kEps) return std::exp(log_front) * h / a;
  }
  throw Error(Errc::EigenFailure, "incomplete beta continued fraction did not converge");
}

// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
template <typename Scalar>
Scalar student_t_two_sided_p(Scalar t, Scalar dof) {
  if (std::isinf(t)) return Scalar(0);
  if (std::isnan(t)) return Scalar(1);
  return regularized_incomplete_beta(dof / 2, Scalar(0.5), dof / (dof + t * t));
}

template <typename Scalar>
struct RegressionFitT {
  Scalar alpha = 0, beta = 0, gamma = 0;
  Scalar alpha_se = 0, beta_se = 0, gamma_se = 0;
  Scalar alpha_p = 1, beta_p = 1, gamma_p = 1;
  Scalar r_square = 0;
  Scalar rss = 0;
  int n_points = 0;
  // Standardization parameters applied to the raw inputs.
  Scalar quality_mean = 0, quality_std = 0;
  Scalar diversity_mean = 0, diversity_std = 0;
};

using RegressionFit = RegressionFitT<double>;

inline constexpr double kCollinearityTolerance = 1e-10;

// Fits t = alpha * q' + beta * d' + gamma where q', d' are the z-scored
// inputs. Normal equations on [q', d', 1]; SEs from s^2 (X^T X)^-1 with
// s^2 = RSS / (n - 3); two-sided p-values with n - 3 degrees of freedom.
template <typename DerivedQ, typename DerivedD, typename DerivedT>
RegressionFitT<typename DerivedQ::Scalar> ols_fit(const Eigen::MatrixBase<DerivedQ>& quality,
                                                  const Eigen::MatrixBase<DerivedD>& diversity,
                                                  const Eigen::MatrixBase<DerivedT>& performance) {
  using Scalar = typename DerivedQ::Scalar;
  const Eigen::Index n = quality.size();
  if (diversity.size() != n || performance.size() != n)
    throw Error(Errc::InvalidArgument, "regression inputs differ in length");
  if (n < 4) throw Error(Errc::InsufficientData, "regression needs >= 4 points (n - 3 >= 1 dof)");
  if (!performance.derived().array().isFinite().all())
    throw Error(Errc::InvalidArgument, "non-finite performance");

  const auto zq = standardize(quality);
  const auto zd = standardize(diversity);
  const Scalar correlation = zq.values.dot(zd.values) / static_cast<Scalar>(n);
  if (Scalar(1) - std::abs(correlation) < Scalar(kCollinearityTolerance))
    throw Error(Errc::SingularDesign, "standardized quality and diversity are collinear");

  MatrixX<Scalar> x(n, 3);
  x.col(0) = zq.values;
  x.col(1) = zd.values;
  x.col(2).setOnes();
  const VectorX<Scalar> t = performance;
  const Eigen::Matrix<Scalar, 3, 3> xtx = x.transpose() * x;
  const Eigen::Matrix<Scalar, 3, 3> xtx_inv = xtx.inverse();
  const Eigen::Matrix<Scalar, 3, 1> coef = xtx_inv * (x.transpose() * t);

  const VectorX<Scalar> residual = t - x * coef;
  const Scalar rss = residual.squaredNorm();
  const Scalar tss = (t.array() - t.mean()).square().sum();
  if (!(tss > Scalar(0))) throw Error(Errc::DegenerateInput, "performance is constant");

  const Scalar dof = static_cast<Scalar>(n - 3);
  const Scalar s2 = rss / dof;

  RegressionFitT<Scalar> fit;
  fit.n_points = static_cast<int>(n);
  fit.alpha = coef(0);
  fit.beta = coef(1);
  fit.gamma = coef(2);
  fit.alpha_se = std::sqrt(s2 * xtx_inv(0, 0));
  fit.beta_se = std::sqrt(s2 * xtx_inv(1, 1));
  fit.gamma_se = std::sqrt(s2 * xtx_inv(2, 2));
  auto p_value = [&](Scalar c, Scalar se) {
    if (se == Scalar(0)) return c == Scalar(0) ? Scalar(1) : Scalar(0);
    return student_t_two_sided_p(c / se, dof);
  };
  fit.alpha_p = p_value(fit.alpha, fit.alpha_se);
  fit.beta_p = p_value(fit.beta, fit.beta_se);
  fit.gamma_p = p_value(fit.gamma, fit.gamma_se);
  fit.rss = rss;
  fit.r_square = Scalar(1) - rss / tss;
  fit.quality_mean = zq.mean;
  fit.quality_std = zq.stddev;
  fit.diversity_mean = zd.mean;
  fit.diversity_std = zd.stddev;
  return fit;
}

struct SweepPoint {
  std::string config_code;
  double quality = 0.0;
  double diversity = 0.0;
  double performance = 0.0;
  double temperature = 0.0;
  // Per-slot accuracies q_1..q_n; needed to recompute quality under
  // non-average specs.
  std::vector<double> per_model;
};

RegressionFit ols_fit(std::span<const SweepPoint> points);

enum class RSquareBand { VeryWeak, Weak, Median, Strong, VeryStrong };

std::string_view to_string(RSquareBand band) noexcept;

// [0,0.2) Very weak, [0.2,0.4) Weak, [0.4,0.6) Median, [0.6,0.8) Strong,
// [0.8,1] Very Strong. Negative values map to Very weak with a warning.
RSquareBand classify_r_square(double r2);

struct SweepRow {
  QualitySpec spec;
  std::optional<RegressionFit> fit;
  std::string error;

  std::optional<RSquareBand> band() const;
};

// One fit per spec with quality recomputed from per_model; rows sorted by
// (method, order).
std::vector<SweepRow> sweep_report(std::span<const SweepPoint> points, std::span<const QualitySpec> specs);

// Sweep CSV: config,quality,diversity,performance,temperature[,per_model]
// with per_model as ';'-separated accuracies.
std::vector<SweepPoint> parse_sweep_csv(std::string_view text);
std::string format_sweep_csv(std::span<const SweepPoint> points);

std::string format_real(double value);

nlohmann::json fit_to_json(const RegressionFit& fit);
nlohmann::json sweep_report_json(std::span<const SweepRow> rows);
std::string sweep_table_csv(std::span<const SweepRow> rows);
std::string plot_csv(std::span<const SweepPoint> points);

}  // namespace moa
