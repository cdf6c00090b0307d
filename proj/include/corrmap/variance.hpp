#pragma once

// Observation-variance schemes for correction regression: a single pooled
// variance, per-point empirical variances, and a nested GP over log-variance.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <variant>

#include "corrmap/error.hpp"
#include "corrmap/gp.hpp"

namespace corrmap {

inline constexpr double kVarianceFloor = 1e-12;

/// Fixed homoscedastic variance given by the user.
struct FixedVariance {
  double variance = 0.2;
};
/// Homoscedastic variance fitted by type-II likelihood together with the kernel.
struct LearnedVariance {};
/// One variance estimated from all replicates after removing row means.
struct EmpiricalPooled {};
/// Per-point sample variance of each replicate row.
struct PointWise {};
/// Inner GP regression of log per-point variance. inner_noise < 0 means the
/// inner noise level is chosen by type-II likelihood.
struct Nested {
  double inner_noise = -1.0;
};

using VarianceScheme = std::variant<FixedVariance, LearnedVariance, EmpiricalPooled, PointWise, Nested>;

inline std::string scheme_name(const VarianceScheme& s) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, FixedVariance>) return "fixed";
        else if constexpr (std::is_same_v<T, LearnedVariance>) return "learned";
        else if constexpr (std::is_same_v<T, EmpiricalPooled>) return "pooled";
        else if constexpr (std::is_same_v<T, PointWise>) return "pointwise";
        else return "nested";
      },
      s);
}

/// True when the scheme reads per-row spread and therefore needs k >= 2.
inline bool needs_replicates(const VarianceScheme& s) {
  return std::holds_alternative<EmpiricalPooled>(s) || std::holds_alternative<PointWise>(s) ||
         std::holds_alternative<Nested>(s);
}

/// Variance model over parameter space: per-training-point values, or a
/// smooth log-variance GP when produced by the nested scheme.
class VarianceField {
 public:
  explicit VarianceField(Eigen::VectorXd values) : values_(std::move(values)) {}
  VarianceField(Eigen::VectorXd values, std::shared_ptr<const GpPosterior> log_variance)
      : values_(std::move(values)), log_variance_(std::move(log_variance)) {}

  /// Variances at the training inputs (floored).
  const Eigen::VectorXd& at_training() const { return values_; }

  bool is_smooth() const { return static_cast<bool>(log_variance_); }

  /// Variance at an arbitrary point; only defined for the nested field.
  double evaluate(const ParamPoint& x) const {
    if (!log_variance_) throw InputError("per-point variance field has no value off the training inputs");
    return std::max(kVarianceFloor, std::exp(log_variance_->predict(x).mean));
  }

  const GpPosterior* inner() const { return log_variance_.get(); }

 private:
  Eigen::VectorXd values_;
  std::shared_ptr<const GpPosterior> log_variance_;
};

namespace detail {

inline double row_variance(const Eigen::MatrixXd& Y, Eigen::Index i) {
  const Eigen::Index k = Y.cols();
  const double mean = Y.row(i).mean();
  return (Y.row(i).array() - mean).square().sum() / static_cast<double>(k - 1);
}

inline void require_replicates(const Eigen::MatrixXd& Y) {
  if (Y.cols() < 2)
    throw InputError("replicate row 0 has " + std::to_string(Y.cols()) +
                     " value(s); per-point variance needs k >= 2");
  if (!Y.allFinite()) throw InputError("replicate matrix contains non-finite values");
}

}  // namespace detail

/// Unbiased within-point variance pooled over all rows:
/// sum_ij (y_ij - mean_i)^2 / (N - rows).
inline double pooled_variance(const Eigen::MatrixXd& Y) {
  if (Y.size() < 2) throw InputError("pooled variance needs at least 2 replicate values");
  const double dof = static_cast<double>(Y.size() - Y.rows());
  if (dof < 1) throw InputError("pooled variance needs at least one row with 2 or more replicates");
  const Eigen::VectorXd means = Y.rowwise().mean();
  return (Y.colwise() - means).array().square().sum() / dof;
}

inline VarianceField pointwise_variance(const Eigen::MatrixXd& Y) {
  detail::require_replicates(Y);
  Eigen::VectorXd v(Y.rows());
  for (Eigen::Index i = 0; i < Y.rows(); ++i) v[i] = std::max(kVarianceFloor, detail::row_variance(Y, i));
  return VarianceField(std::move(v));
}

struct NestedOptions {
  double inner_noise = -1.0;  // < 0: type-II likelihood
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Fits a GP to w_i = log(per-row variance) and returns exp of its posterior
/// mean as a strictly positive variance model over parameter space.
inline VarianceField nested_variance(const std::vector<ParamPoint>& inputs, const Eigen::MatrixXd& Y,
                                     const NestedOptions& opt = {}) {
  detail::require_replicates(Y);
  if (static_cast<Eigen::Index>(inputs.size()) != Y.rows())
    throw InputError("nested variance: one input per replicate row required");
  TrainingSet inner;
  inner.inputs = inputs;
  inner.targets.resize(Y.rows());
  for (Eigen::Index i = 0; i < Y.rows(); ++i)
    inner.targets[i] = std::log(std::max(kVarianceFloor, detail::row_variance(Y, i)));
  const double center = inner.targets.mean();

  const bool learn = opt.inner_noise < 0;
  NoiseModel noise = Homoscedastic{learn ? 0.1 : opt.inner_noise};
  KernelParams params = KernelParams::isotropic(1.0, 1.0, inner.dim());
  if (inner.size() >= 2) {
    double lo = inputs[0][0], hi = lo;
    for (const auto& x : inputs) lo = std::min(lo, x[0]), hi = std::max(hi, x[0]);
    const double span = hi > lo ? hi - lo : 1.0;
    const double spread = std::max((inner.targets.array() - center).square().mean(), 1e-6);
    const auto fit = optimize_hyperparams(
        inner, noise, KernelParams::isotropic(spread, 0.3 * span, inner.dim()),
        {.seed = opt.seed, .learn_noise = learn, .prior_mean = center, .threads = opt.threads});
    params = fit.params;
    noise = fit.noise;
  }
  auto gp = std::make_shared<const GpPosterior>(gp_fit(inner, params, noise, center));
  Eigen::VectorXd at(Y.rows());
  for (Eigen::Index i = 0; i < Y.rows(); ++i)
    at[i] = std::max(kVarianceFloor, std::exp(gp->predict(inputs[i]).mean));
  return VarianceField(std::move(at), std::move(gp));
}

/// Noise configuration produced by a scheme for the outer regression.
struct NoiseSetup {
  NoiseModel noise;
  bool learn_noise = false;
  std::optional<VarianceField> field;
};

inline NoiseSetup make_noise(const VarianceScheme& scheme, const TrainingSet& ts,
                             const NestedOptions& nested_opt = {}) {
  return std::visit(
      [&](const auto& s) -> NoiseSetup {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, FixedVariance>) {
          if (!(s.variance >= 0)) throw InputError("fixed variance must be nonnegative");
          return {Homoscedastic{std::max(kVarianceFloor, s.variance)}, false, std::nullopt};
        } else if constexpr (std::is_same_v<T, LearnedVariance>) {
          const double scale = std::max(ts.targets.size() > 1 ? (ts.targets.array() - ts.targets.mean()).square().mean() : 1.0, 1e-12);
          return {Homoscedastic{0.01 * scale}, true, std::nullopt};
        } else {
          if (!ts.replicates) throw InputError(scheme_name(scheme) + " scheme needs a replicate matrix");
          const Eigen::MatrixXd& Y = *ts.replicates;
          if constexpr (std::is_same_v<T, EmpiricalPooled>) {
            return {Homoscedastic{std::max(kVarianceFloor, pooled_variance(Y))}, false, std::nullopt};
          } else if constexpr (std::is_same_v<T, PointWise>) {
            auto field = pointwise_variance(Y);
            return {Heteroscedastic{field.at_training()}, false, std::move(field)};
          } else {
            NestedOptions o = nested_opt;
            o.inner_noise = s.inner_noise;
            auto field = nested_variance(ts.inputs, Y, o);
            return {Heteroscedastic{field.at_training()}, false, std::move(field)};
          }
        }
      },
      scheme);
}

}  // namespace corrmap
