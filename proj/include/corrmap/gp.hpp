#pragma once

// Exact Gaussian-process regression with the squared-exponential kernel,
// homoscedastic or per-point observation noise, and type-II maximum
// likelihood for the kernel hyperparameters.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <variant>
#include <vector>

#include "corrmap/error.hpp"
#include "corrmap/optimize.hpp"
#include "corrmap/parallel.hpp"
#include "corrmap/random.hpp"

namespace corrmap {

/// A point in parameter space.
using ParamPoint = Eigen::VectorXd;

inline ParamPoint point(std::initializer_list<double> v) {
  ParamPoint p(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) p[i++] = x;
  return p;
}

struct KernelParams {
  double signal_variance = 1.0;
  Eigen::VectorXd lengthscale = Eigen::VectorXd::Ones(1);

  static KernelParams isotropic(double signal_variance, double lengthscale, Eigen::Index dim = 1) {
    return {signal_variance, Eigen::VectorXd::Constant(dim, lengthscale)};
  }

  void validate(Eigen::Index dim) const {
    if (!(signal_variance > 0) || !std::isfinite(signal_variance))
      throw InputError("kernel signal variance must be positive and finite");
    if (lengthscale.size() != dim)
      throw InputError("kernel lengthscale vector does not match input dimension");
    if (!(lengthscale.array() > 0).all())
      throw InputError("kernel lengthscales must be positive");
  }
};

/// k(x1, x2) = s^2 exp(-1/2 sum_d ((x1_d - x2_d) / l_d)^2)
inline double kernel_eval(const ParamPoint& x1, const ParamPoint& x2, const KernelParams& p) {
  if (x1.size() != x2.size() || x1.size() != p.lengthscale.size())
    throw InputError("kernel_eval: dimension mismatch");
  const double r2 = ((x1 - x2).array() / p.lengthscale.array()).square().sum();
  return p.signal_variance * std::exp(-0.5 * r2);
}

inline Eigen::MatrixXd kernel_matrix(const std::vector<ParamPoint>& xs, const KernelParams& p) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = p.signal_variance;
    for (Eigen::Index j = 0; j < i; ++j) K(i, j) = K(j, i) = kernel_eval(xs[i], xs[j], p);
  }
  return K;
}

struct Homoscedastic {
  double variance = 0.0;
};

struct Heteroscedastic {
  Eigen::VectorXd variances;
};

using NoiseModel = std::variant<Homoscedastic, Heteroscedastic>;

inline Eigen::VectorXd noise_diagonal(const NoiseModel& noise, Eigen::Index n) {
  return std::visit(
      [n](const auto& m) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Homoscedastic>) {
          if (!(m.variance >= 0)) throw InputError("noise variance must be nonnegative");
          return Eigen::VectorXd::Constant(n, m.variance);
        } else {
          if (m.variances.size() != n)
            throw InputError("heteroscedastic noise vector does not match training-set size");
          if (!(m.variances.array() >= 0).all())
            throw InputError("noise variances must be nonnegative");
          return m.variances;
        }
      },
      noise);
}

/// Inputs with scalar targets, optionally keeping the raw replicate matrix
/// (one row per input, one column per free-parameter sample).
struct TrainingSet {
  std::vector<ParamPoint> inputs;
  Eigen::VectorXd targets;
  std::optional<Eigen::MatrixXd> replicates;

  Eigen::Index size() const { return static_cast<Eigen::Index>(inputs.size()); }
  Eigen::Index dim() const { return inputs.empty() ? 0 : inputs.front().size(); }

  void validate() const {
    if (inputs.empty()) throw InputError("training set is empty");
    if (targets.size() != size()) throw InputError("inputs and targets differ in length");
    for (const auto& x : inputs)
      if (x.size() != dim()) throw InputError("training inputs have inconsistent dimension");
    if (!targets.allFinite()) throw InputError("training targets must be finite");
    if (replicates && replicates->rows() != size())
      throw InputError("replicate matrix must have one row per input");
  }
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;  // latent function; add the noise level for observations
};

namespace detail {

inline constexpr double kJitterLadder[] = {1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4};

struct Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

/// Cholesky of A, retrying with diagonal jitter (relative to the mean
/// diagonal) only when the plain factorization fails.
inline Factorization factorize(const Eigen::MatrixXd& A) {
  Factorization f;
  f.llt.compute(A);
  if (f.llt.info() == Eigen::Success) return f;
  const double scale = std::max(A.diagonal().mean(), std::numeric_limits<double>::min());
  std::vector<double> tried;
  for (double level : kJitterLadder) {
    const double jitter = level * scale;
    tried.push_back(jitter);
    Eigen::MatrixXd B = A;
    B.diagonal().array() += jitter;
    f.llt.compute(B);
    if (f.llt.info() == Eigen::Success) {
      f.jitter = jitter;
      return f;
    }
  }
  throw NumericalError("covariance matrix is not positive definite after maximal jitter",
                       std::move(tried));
}

}  // namespace detail

/// Fitted GP posterior. Immutable after construction.
class GpPosterior {
 public:
  GpPosterior(std::vector<ParamPoint> inputs, Eigen::VectorXd targets, KernelParams params,
              Eigen::VectorXd noise, double prior_mean = 0.0)
      : inputs_(std::move(inputs)),
        targets_(std::move(targets)),
        params_(std::move(params)),
        noise_(std::move(noise)),
        prior_mean_(prior_mean) {
    if (inputs_.empty()) throw InputError("gp_fit needs at least one training point");
    params_.validate(inputs_.front().size());
    Eigen::MatrixXd A = kernel_matrix(inputs_, params_);
    A.diagonal() += noise_;
    auto f = detail::factorize(A);
    jitter_ = f.jitter;
    L_ = f.llt.matrixL();
    weights_ = f.llt.solve((targets_.array() - prior_mean_).matrix());
  }

  Prediction predict(const ParamPoint& x) const {
    if (x.size() != dim()) throw InputError("gp_predict: dimension mismatch");
    const auto n = static_cast<Eigen::Index>(inputs_.size());
    Eigen::VectorXd k(n);
    for (Eigen::Index i = 0; i < n; ++i) k[i] = kernel_eval(inputs_[i], x, params_);
    const Eigen::VectorXd v = L_.triangularView<Eigen::Lower>().solve(k);
    return {prior_mean_ + k.dot(weights_), std::max(0.0, params_.signal_variance - v.squaredNorm())};
  }

  const std::vector<ParamPoint>& inputs() const { return inputs_; }
  const Eigen::VectorXd& targets() const { return targets_; }
  const KernelParams& params() const { return params_; }
  const Eigen::VectorXd& noise() const { return noise_; }
  double prior_mean() const { return prior_mean_; }
  double jitter() const { return jitter_; }
  Eigen::Index dim() const { return inputs_.front().size(); }

 private:
  std::vector<ParamPoint> inputs_;
  Eigen::VectorXd targets_;
  KernelParams params_;
  Eigen::VectorXd noise_;
  double prior_mean_;
  double jitter_ = 0.0;
  Eigen::MatrixXd L_;
  Eigen::VectorXd weights_;
};

inline GpPosterior gp_fit(const TrainingSet& ts, const KernelParams& p, const NoiseModel& n,
                          double prior_mean = 0.0) {
  ts.validate();
  return GpPosterior(ts.inputs, ts.targets, p, noise_diagonal(n, ts.size()), prior_mean);
}

inline Prediction gp_predict(const GpPosterior& g, const ParamPoint& x) { return g.predict(x); }

/// Log marginal likelihood together with its gradient in log-hyperparameter
/// coordinates [log s^2, log l_1..log l_d, (log sigma^2 if with_noise)].
struct LmlEvaluation {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

inline LmlEvaluation log_marginal_likelihood_with_gradient(const TrainingSet& ts,
                                                           const KernelParams& p,
                                                           const NoiseModel& n,
                                                           bool with_noise = false,
                                                           double prior_mean = 0.0) {
  ts.validate();
  p.validate(ts.dim());
  const Eigen::Index N = ts.size(), D = ts.dim();
  const Eigen::MatrixXd Kf = kernel_matrix(ts.inputs, p);
  const Eigen::VectorXd noise = noise_diagonal(n, N);
  Eigen::MatrixXd A = Kf;
  A.diagonal() += noise;
  const auto f = detail::factorize(A);
  const Eigen::VectorXd y = (ts.targets.array() - prior_mean).matrix();
  const Eigen::VectorXd alpha = f.llt.solve(y);
  const Eigen::MatrixXd L = f.llt.matrixL();

  LmlEvaluation out;
  out.value = -0.5 * y.dot(alpha) - L.diagonal().array().log().sum() -
              0.5 * static_cast<double>(N) * std::log(2.0 * std::numbers::pi);

  // dL/dtheta = 1/2 tr((alpha alpha^T - A^-1) dA/dtheta)
  const Eigen::MatrixXd W =
      alpha * alpha.transpose() - f.llt.solve(Eigen::MatrixXd::Identity(N, N));
  out.gradient.resize(1 + D + (with_noise ? 1 : 0));
  out.gradient[0] = 0.5 * W.cwiseProduct(Kf).sum();
  for (Eigen::Index d = 0; d < D; ++d) {
    double acc = 0.0;
    const double l2 = p.lengthscale[d] * p.lengthscale[d];
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < i; ++j) {
        const double diff = ts.inputs[i][d] - ts.inputs[j][d];
        acc += W(i, j) * Kf(i, j) * diff * diff / l2;
      }
    out.gradient[1 + d] = acc;  // symmetric pairs counted once, times 2, times 1/2
  }
  if (with_noise) {
    if (!std::holds_alternative<Homoscedastic>(n))
      throw InputError("noise gradient requires a homoscedastic noise model");
    out.gradient[1 + D] = 0.5 * std::get<Homoscedastic>(n).variance * W.trace();
  }
  return out;
}

inline double log_marginal_likelihood(const TrainingSet& ts, const KernelParams& p,
                                      const NoiseModel& n, double prior_mean = 0.0) {
  ts.validate();
  p.validate(ts.dim());
  Eigen::MatrixXd A = kernel_matrix(ts.inputs, p);
  A.diagonal() += noise_diagonal(n, ts.size());
  const auto f = detail::factorize(A);
  const Eigen::VectorXd y = (ts.targets.array() - prior_mean).matrix();
  const Eigen::MatrixXd L = f.llt.matrixL();
  return -0.5 * y.dot(f.llt.solve(y)) - L.diagonal().array().log().sum() -
         0.5 * static_cast<double>(ts.size()) * std::log(2.0 * std::numbers::pi);
}

struct HyperparameterOptions {
  int restarts = 5;
  std::uint64_t seed = 0;
  /// Also fit a homoscedastic noise variance by type-II likelihood.
  bool learn_noise = false;
  /// Independent lengthscale per input dimension; otherwise one shared value.
  bool ard = false;
  double prior_mean = 0.0;
  double signal_variance_min = 1e-10;
  double signal_variance_max = 1e10;
  double noise_min = 1e-10;
  double noise_max = 1e10;
  /// Lengthscale bounds as multiples of each input dimension's span.
  double lengthscale_min_factor = 1e-2;
  double lengthscale_max_factor = 1e2;
  unsigned threads = 1;
};

struct HyperparameterFit {
  KernelParams params;
  NoiseModel noise;
  double log_likelihood = -std::numeric_limits<double>::infinity();
};

/// Type-II maximum likelihood: projected BFGS in log-hyperparameter space
/// started from `init` and from `restarts` seeded random points.
inline HyperparameterFit optimize_hyperparams(const TrainingSet& ts, const NoiseModel& noise,
                                              const KernelParams& init,
                                              const HyperparameterOptions& opt = {}) {
  ts.validate();
  if (ts.size() < 2) throw InputError("hyperparameter optimization needs at least 2 points");
  const Eigen::Index D = ts.dim();
  init.validate(D);
  if (opt.learn_noise && !std::holds_alternative<Homoscedastic>(noise))
    throw InputError("learn_noise requires a homoscedastic noise model");

  const Eigen::Index n_len = opt.ard ? D : 1;
  const Eigen::Index n_par = 1 + n_len + (opt.learn_noise ? 1 : 0);

  Eigen::VectorXd span(D);
  for (Eigen::Index d = 0; d < D; ++d) {
    double lo = ts.inputs[0][d], hi = lo;
    for (const auto& x : ts.inputs) lo = std::min(lo, x[d]), hi = std::max(hi, x[d]);
    span[d] = hi > lo ? hi - lo : 1.0;
  }
  const double span_ref = opt.ard ? 1.0 : std::exp(span.array().log().mean());

  Eigen::VectorXd lower(n_par), upper(n_par);
  lower[0] = std::log(opt.signal_variance_min);
  upper[0] = std::log(opt.signal_variance_max);
  for (Eigen::Index d = 0; d < n_len; ++d) {
    const double s = opt.ard ? span[d] : span_ref;
    lower[1 + d] = std::log(opt.lengthscale_min_factor * s);
    upper[1 + d] = std::log(opt.lengthscale_max_factor * s);
  }
  if (opt.learn_noise) {
    lower[n_par - 1] = std::log(opt.noise_min);
    upper[n_par - 1] = std::log(opt.noise_max);
  }

  auto unpack = [&](const Eigen::VectorXd& x, KernelParams& kp, NoiseModel& nm) {
    kp.signal_variance = std::exp(x[0]);
    kp.lengthscale.resize(D);
    for (Eigen::Index d = 0; d < D; ++d) kp.lengthscale[d] = std::exp(x[1 + (opt.ard ? d : 0)]);
    nm = opt.learn_noise ? NoiseModel(Homoscedastic{std::exp(x[n_par - 1])}) : noise;
  };

  const Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    KernelParams kp;
    NoiseModel nm;
    unpack(x, kp, nm);
    grad.setZero(n_par);
    try {
      const auto e = log_marginal_likelihood_with_gradient(ts, kp, nm, opt.learn_noise, opt.prior_mean);
      grad[0] = -e.gradient[0];
      for (Eigen::Index d = 0; d < D; ++d) grad[1 + (opt.ard ? d : 0)] -= e.gradient[1 + d];
      if (opt.learn_noise) grad[n_par - 1] = -e.gradient[1 + D];
      return -e.value;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  // Starting points: the caller's initialization first, then seeded draws
  // around the data scale.
  const double y_scale = std::max(
      (ts.targets.array() - opt.prior_mean).square().mean(), opt.signal_variance_min * 10);
  std::vector<Eigen::VectorXd> starts;
  {
    Eigen::VectorXd x(n_par);
    x[0] = std::log(init.signal_variance);
    for (Eigen::Index d = 0; d < n_len; ++d)
      x[1 + d] = opt.ard ? std::log(init.lengthscale[d]) : init.lengthscale.array().log().mean();
    if (opt.learn_noise) x[n_par - 1] = std::log(std::max(std::get<Homoscedastic>(noise).variance, opt.noise_min));
    starts.push_back(x.cwiseMax(lower).cwiseMin(upper));
  }
  for (int r = 0; r < opt.restarts; ++r) {
    Rng rng(derive_seed(opt.seed, {0x68797065ULL, static_cast<std::uint64_t>(r)}));
    Eigen::VectorXd x(n_par);
    x[0] = std::log(y_scale) + rng.uniform(-std::log(10.0), std::log(10.0));
    for (Eigen::Index d = 0; d < n_len; ++d) {
      const double s = opt.ard ? span[d] : span_ref;
      x[1 + d] = std::log(s) + rng.uniform(std::log(0.05), std::log(2.0));
    }
    if (opt.learn_noise) x[n_par - 1] = std::log(y_scale) + rng.uniform(std::log(1e-6), std::log(0.5));
    starts.push_back(x.cwiseMax(lower).cwiseMin(upper));
  }

  std::vector<MinimizeResult> results(starts.size());
  parallel_for(starts.size(), opt.threads, [&](std::size_t i) {
    results[i] = minimize_box_bfgs(objective, starts[i], lower, upper);
  });

  std::size_t best = results.size();
  for (std::size_t i = 0; i < results.size(); ++i)
    if (std::isfinite(results[i].value) && (best == results.size() || results[i].value < results[best].value))
      best = i;
  if (best == results.size())
    throw NumericalError("type-II likelihood optimization failed on every restart");

  HyperparameterFit out;
  unpack(results[best].x, out.params, out.noise);
  out.log_likelihood = -results[best].value;
  return out;
}

// JSON persistence of a fitted posterior. Loading refits from the stored
// data, so the factorization is reproduced exactly.

inline nlohmann::json to_json(const GpPosterior& g) {
  nlohmann::json j;
  auto& xs = j["inputs"] = nlohmann::json::array();
  for (const auto& x : g.inputs()) xs.push_back(std::vector<double>(x.data(), x.data() + x.size()));
  j["targets"] = std::vector<double>(g.targets().data(), g.targets().data() + g.targets().size());
  j["signal_variance"] = g.params().signal_variance;
  j["lengthscale"] = std::vector<double>(g.params().lengthscale.data(),
                                         g.params().lengthscale.data() + g.params().lengthscale.size());
  j["noise"] = std::vector<double>(g.noise().data(), g.noise().data() + g.noise().size());
  j["prior_mean"] = g.prior_mean();
  j["jitter"] = g.jitter();
  return j;
}

inline GpPosterior gp_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  std::vector<ParamPoint> inputs;
  for (const auto& x : j.at("inputs")) inputs.push_back(vec(x));
  KernelParams p{j.at("signal_variance").get<double>(), vec(j.at("lengthscale"))};
  return GpPosterior(std::move(inputs), vec(j.at("targets")), std::move(p), vec(j.at("noise")),
                     j.value("prior_mean", 0.0));
}

}  // namespace corrmap
