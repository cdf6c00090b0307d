#pragma once

// Correction maps: sample the shared parameters, evaluate the statistic on
// the detailed and the reduced model, regress the difference with a GP and
// use it to correct reduced-model predictions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "corrmap/gp.hpp"
#include "corrmap/model.hpp"
#include "corrmap/statistics.hpp"
#include "corrmap/variance.hpp"

namespace corrmap {

/// Uniform prior on a box edge [lo, hi] (either end may be open), or a
/// point mass when lo == hi.
struct ParameterPrior {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  bool open_lo = false;
  bool open_hi = false;

  static ParameterPrior delta(std::string name, double value) { return {std::move(name), value, value}; }
  bool is_delta() const { return lo == hi; }

  void validate() const {
    if (name.empty()) throw InputError("parameter prior needs a name");
    if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo)
      throw InputError("prior of '" + name + "' has an empty or non-finite range");
    if (is_delta() && (open_lo || open_hi)) throw InputError("prior of '" + name + "' is an empty open interval");
  }

  double sample(Rng& rng) const {
    if (is_delta()) return lo;
    for (;;) {
      const double v = open_lo ? lo + (hi - lo) * rng.uniform_open0() : rng.uniform(lo, hi);
      if (!(open_hi && v >= hi) && !(open_lo && v <= lo)) return v;
    }
  }

  bool contains(double v) const { return v >= lo && v <= hi; }
};

enum class Sampling { Grid, UniformRandom };

struct SamplingDesign {
  std::vector<ParameterPrior> shared;  // theta_m
  std::vector<ParameterPrior> free;    // theta_f, detailed model only
  std::size_t points = 40;
  std::size_t replicates = 1;  // k, ignored when every free prior is a point mass
  Sampling sampling = Sampling::Grid;
  std::uint64_t seed = 0;
  std::size_t runs = 100;  // simulations per stochastic statistic evaluation

  /// Free samples per design point actually drawn.
  std::size_t effective_replicates() const {
    const bool all_delta = std::all_of(free.begin(), free.end(), [](const auto& p) { return p.is_delta(); });
    return all_delta ? 1 : replicates;
  }

  void validate() const {
    if (shared.empty()) throw InputError("design needs at least one shared parameter");
    for (const auto& p : shared) p.validate();
    for (const auto& p : free) p.validate();
    if (points < 2) throw InputError("design needs at least 2 points");
    if (replicates < 1) throw InputError("design needs at least 1 replicate");
    if (sampling == Sampling::Grid && shared.size() > 1)
      throw InputError("grid sampling is only available for one shared parameter");
  }
};

namespace detail {
// Stream tags for derive_seed.
inline constexpr std::uint64_t kDesignStream = 0x64657369;
inline constexpr std::uint64_t kFreeStream = 0x66726565;
inline constexpr std::uint64_t kDetailedStream = 0x66756c6c;
inline constexpr std::uint64_t kReducedStream = 0x72656475;
inline constexpr std::uint64_t kDomainStream = 0x646f6d61;
}  // namespace detail

/// Design inputs. A 1-D grid is evenly spaced and skips open ends, e.g.
/// (0, 100] with 40 points gives 2.5, 5, ..., 100.
inline std::vector<ParamPoint> design_points(const SamplingDesign& d) {
  d.validate();
  std::vector<ParamPoint> out;
  out.reserve(d.points);
  if (d.sampling == Sampling::Grid) {
    const auto& p = d.shared.front();
    const double n = static_cast<double>(d.points);
    for (std::size_t i = 0; i < d.points; ++i) {
      const double u = static_cast<double>(i);
      double f = 0;
      if (p.open_lo && p.open_hi) f = (u + 1) / (n + 1);
      else if (p.open_lo) f = (u + 1) / n;
      else if (p.open_hi) f = u / n;
      else f = u / (n - 1);
      out.push_back(point({p.lo + (p.hi - p.lo) * f}));
    }
    return out;
  }
  for (std::size_t i = 0; i < d.points; ++i) {
    Rng rng(derive_seed(d.seed, {detail::kDesignStream, i}));
    ParamPoint x(static_cast<Eigen::Index>(d.shared.size()));
    for (std::size_t s = 0; s < d.shared.size(); ++s) x[static_cast<Eigen::Index>(s)] = d.shared[s].sample(rng);
    out.push_back(std::move(x));
  }
  return out;
}

/// Free-parameter values for replicate j of design point i.
inline std::vector<double> free_sample(const SamplingDesign& d, std::size_t i, std::size_t j) {
  Rng rng(derive_seed(d.seed, {detail::kFreeStream, i, j}));
  std::vector<double> v;
  for (const auto& p : d.free) v.push_back(p.sample(rng));
  return v;
}

struct EvalOptions {
  StatisticOptions statistic{};
  unsigned threads = 1;  // concurrent design-point evaluations
};

/// Training data together with its provenance.
struct CorrectionData {
  TrainingSet training;              // targets are row means of `training.replicates`
  std::vector<double> reduced;       // m_S at each design point
  std::vector<std::vector<double>> free_values;  // row i * k + j
  std::vector<StatEstimate> reduced_estimates;   // per design point
  std::vector<StatEstimate> detailed_estimates;  // row i * k + j
  SamplingDesign design;
  StatisticSpec statistic;
};

/// Evaluates y(i, j) = M_S(theta_m_i; theta_f_ij) - m_S(theta_m_i) on the
/// whole design. Failures are reported with their (i, j) coordinates.
inline CorrectionData build_training_set(const Model& detailed, const Model& reduced, const StatisticSpec& spec,
                                         const SamplingDesign& design, const EvalOptions& opt = {}) {
  design.validate();
  validate(spec);
  observable_index(detailed, observable_of(spec));
  observable_index(reduced, observable_of(spec));
  for (const auto& p : design.shared) {
    if (!has_parameter(detailed, p.name) || !has_parameter(reduced, p.name))
      throw InputError("shared parameter '" + p.name + "' must exist in both models");
  }
  for (const auto& p : design.free)
    if (!has_parameter(detailed, p.name)) throw InputError("free parameter '" + p.name + "' is not in the detailed model");

  const auto xs = design_points(design);
  const std::size_t n = xs.size(), k = design.effective_replicates();
  CorrectionData out{{xs, Eigen::VectorXd(static_cast<Eigen::Index>(n)), Eigen::MatrixXd(n, k)},
                     std::vector<double>(n), std::vector<std::vector<double>>(n * k),
                     std::vector<StatEstimate>(n), std::vector<StatEstimate>(n * k), design, spec};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out.free_values[i * k + j] = free_sample(design, i, j);

  parallel_for(n + n * k, opt.threads, [&](std::size_t task) {
    const bool is_reduced = task < n;
    const std::size_t i = is_reduced ? task : (task - n) / k, j = is_reduced ? 0 : (task - n) % k;
    try {
      Model m = is_reduced ? reduced : detailed;
      for (std::size_t s = 0; s < design.shared.size(); ++s)
        set_parameter(m, design.shared[s].name, xs[i][static_cast<Eigen::Index>(s)]);
      if (is_reduced) {
        out.reduced_estimates[i] = eval_statistic(
            m, spec, design.runs, derive_seed(design.seed, {detail::kReducedStream, i}), opt.statistic);
      } else {
        const auto& f = out.free_values[i * k + j];
        for (std::size_t s = 0; s < design.free.size(); ++s) set_parameter(m, design.free[s].name, f[s]);
        out.detailed_estimates[i * k + j] = eval_statistic(
            m, spec, design.runs, derive_seed(design.seed, {detail::kDetailedStream, i, j}), opt.statistic);
      }
    } catch (const std::exception& e) {
      throw SimulationError(std::string(is_reduced ? "reduced" : "detailed") + " model: " + e.what(), i, j);
    }
  });

  auto& Y = *out.training.replicates;
  for (std::size_t i = 0; i < n; ++i) {
    out.reduced[i] = out.reduced_estimates[i].value;
    for (std::size_t j = 0; j < k; ++j)
      Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = out.detailed_estimates[i * k + j].value - out.reduced[i];
    out.training.targets[static_cast<Eigen::Index>(i)] = Y.row(static_cast<Eigen::Index>(i)).mean();
  }
  return out;
}

/// Central quantile of the standard normal, z with P(|Z| <= z) = alpha.
inline double normal_central_quantile(double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw InputError("confidence level must lie in (0, 1)");
  // Bisection on erfc is plenty for a handful of calls per prediction batch.
  const double tail = 1 - alpha;
  double lo = 0, hi = 40;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid / std::sqrt(2.0)) > tail ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Optional log transform of correction values. With kind == ShiftedLog,
/// y -> log(y - offset) where offset = min - 1e-6 * range.
struct Transform {
  enum class Kind { Identity, Log, ShiftedLog };
  Kind kind = Kind::Identity;
  double offset = 0.0;

  double forward(double y) const { return kind == Kind::Identity ? y : std::log(y - offset); }
  double inverse(double u) const { return kind == Kind::Identity ? u : std::exp(u) + offset; }
  bool is_log() const { return kind != Kind::Identity; }

  std::string name() const {
    switch (kind) {
      case Kind::Identity: return "none";
      case Kind::Log: return "log";
      default: return "shifted-log(offset=" + format_number(offset) + ")";
    }
  }
};

inline Transform choose_transform(const Eigen::MatrixXd& values, bool log_transform) {
  if (!log_transform) return {};
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  if (lo > 0) return {Transform::Kind::Log, 0.0};
  const double range = hi - lo;
  const double delta = 1e-6 * (range > 0 ? range : std::max(1.0, std::abs(lo)));
  return {Transform::Kind::ShiftedLog, lo - delta};
}

struct FitOptions {
  bool log_transform = false;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  int restarts = 5;
  /// Lower bound of a learned noise variance, relative to the target variance.
  double noise_floor = 1e-8;
};

/// Correction value with its central band on the output scale.
struct CorrectionPrediction {
  double mean = 0.0;
  double sd = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool extrapolated = false;
};

struct CorrectedPrediction {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool extrapolated = false;
};

/// Fitted correction map. Immutable.
class CorrectionMap {
 public:
  CorrectionMap(GpPosterior gp, VarianceScheme scheme, Transform transform, std::vector<ParameterPrior> domain,
                std::optional<VarianceField> field, double log_likelihood)
      : gp_(std::move(gp)),
        scheme_(std::move(scheme)),
        transform_(transform),
        domain_(std::move(domain)),
        field_(std::move(field)),
        log_likelihood_(log_likelihood) {}

  /// Posterior of the correction at x. The band is the central alpha-mass
  /// interval of the latent function; log-normal when log-transformed.
  CorrectionPrediction predict(const ParamPoint& x, double alpha = 0.95) const {
    const auto p = gp_.predict(x);
    const double z = normal_central_quantile(alpha), s = std::sqrt(p.variance);
    CorrectionPrediction out;
    out.extrapolated = !in_domain(x);
    if (!transform_.is_log()) {
      out.mean = p.mean;
      out.sd = s;
      out.lo = p.mean - z * s;
      out.hi = p.mean + z * s;
      return out;
    }
    out.mean = std::exp(p.mean + 0.5 * p.variance) + transform_.offset;
    out.sd = std::sqrt(std::expm1(p.variance)) * std::exp(p.mean + 0.5 * p.variance);
    out.lo = transform_.inverse(p.mean - z * s);
    out.hi = transform_.inverse(p.mean + z * s);
    return out;
  }

  bool in_domain(const ParamPoint& x) const {
    if (x.size() != static_cast<Eigen::Index>(domain_.size())) throw InputError("parameter point has wrong dimension");
    for (std::size_t d = 0; d < domain_.size(); ++d)
      if (!domain_[d].contains(x[static_cast<Eigen::Index>(d)])) return false;
    return true;
  }

  const GpPosterior& posterior() const { return gp_; }
  const VarianceScheme& scheme() const { return scheme_; }
  const Transform& transform() const { return transform_; }
  const std::vector<ParameterPrior>& domain() const { return domain_; }
  const std::optional<VarianceField>& variance_field() const { return field_; }
  double log_likelihood() const { return log_likelihood_; }

 private:
  GpPosterior gp_;
  VarianceScheme scheme_;
  Transform transform_;
  std::vector<ParameterPrior> domain_;
  std::optional<VarianceField> field_;
  double log_likelihood_;
};

/// Fits the correction GP under a variance scheme. With a log transform the
/// replicates are transformed first and the row means recomputed.
inline CorrectionMap fit_correction(const CorrectionData& data, const VarianceScheme& scheme,
                                    const FitOptions& opt = {}) {
  TrainingSet ts = data.training;
  ts.validate();
  if (!ts.replicates) ts.replicates = Eigen::MatrixXd(ts.targets);
  if (needs_replicates(scheme) && ts.replicates->cols() < 2)
    throw InputError(scheme_name(scheme) + " scheme needs k >= 2 replicates per design point");
  const Transform tr = choose_transform(*ts.replicates, opt.log_transform);
  if (tr.is_log()) {
    ts.replicates = ts.replicates->unaryExpr([&](double y) { return tr.forward(y); });
    ts.targets = ts.replicates->rowwise().mean();
  }
  if (!ts.targets.allFinite()) throw InputError("transformed correction values are not finite");

  const auto setup = make_noise(scheme, ts, {.seed = opt.seed, .threads = opt.threads});
  const double center = ts.targets.mean();
  const double spread = (ts.targets.array() - center).square().mean();
  const double scale = spread > 0 ? spread : 1.0;

  double span = 1.0;
  {
    Eigen::VectorXd lo = ts.inputs[0], hi = ts.inputs[0];
    for (const auto& x : ts.inputs) lo = lo.cwiseMin(x), hi = hi.cwiseMax(x);
    const Eigen::ArrayXd w = (hi - lo).array();
    span = (w > 0).all() ? std::exp(w.log().mean()) : 1.0;
  }
  HyperparameterOptions ho{.restarts = opt.restarts, .seed = opt.seed, .learn_noise = setup.learn_noise,
                           .prior_mean = center, .threads = opt.threads};
  ho.noise_min = std::max(opt.noise_floor * scale, 1e-300);
  ho.signal_variance_min = 1e-10 * scale;
  const auto fit = optimize_hyperparams(ts, setup.noise, KernelParams::isotropic(scale, 0.3 * span, ts.dim()), ho);

  std::vector<ParameterPrior> domain = data.design.shared;
  return CorrectionMap(gp_fit(ts, fit.params, fit.noise, center), scheme, tr, std::move(domain), setup.field,
                       fit.log_likelihood);
}

/// M^(theta) = m_S(theta) + M_S(theta), with the correction band shifted by m.
inline CorrectedPrediction corrected_predict(const CorrectionMap& cm, double m_value, const ParamPoint& x,
                                             double alpha = 0.95) {
  const auto c = cm.predict(x, alpha);
  return {m_value + c.mean, m_value + c.lo, m_value + c.hi, c.extrapolated};
}

/// Points drawn from the uniform prior on the map's domain.
inline std::vector<ParamPoint> sample_domain(const std::vector<ParameterPrior>& domain, std::size_t n,
                                             std::uint64_t seed) {
  std::vector<ParamPoint> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {detail::kDomainStream, i}));
    ParamPoint x(static_cast<Eigen::Index>(domain.size()));
    for (std::size_t d = 0; d < domain.size(); ++d) x[static_cast<Eigen::Index>(d)] = domain[d].sample(rng);
    out.push_back(std::move(x));
  }
  return out;
}

struct EpsilonEstimate {
  double epsilon = 0.0;
  double alpha = 0.95;
  std::size_t n_points = 0;
  /// Mean |M^ - oracle| over the same points, when an oracle is given.
  std::optional<double> oracle_error;
};

/// Oracle for the expected correction E_theta_f[M_S] - m_S at a point.
using CorrectionOracle = std::function<double(const ParamPoint&)>;

/// Monte-Carlo mean over the domain of the half-width of the alpha band.
inline EpsilonEstimate estimate_epsilon(const CorrectionMap& cm, double alpha, std::size_t n_points,
                                        std::uint64_t seed, const CorrectionOracle& oracle = {}) {
  if (n_points < 10) throw InputError("epsilon estimate needs at least 10 points");
  const auto xs = sample_domain(cm.domain(), n_points, seed);
  std::vector<double> half(n_points), err(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const auto c = cm.predict(xs[i], alpha);
    half[i] = 0.5 * (c.hi - c.lo);
    if (oracle) err[i] = std::abs(c.mean - oracle(xs[i]));
  }
  EpsilonEstimate out{pairwise_sum(half) / static_cast<double>(n_points), alpha, n_points, std::nullopt};
  if (oracle) out.oracle_error = pairwise_sum(err) / static_cast<double>(n_points);
  return out;
}

/// Monte-Carlo estimate of the integral of |mean correction| over the domain.
inline double mean_abs_correction(const CorrectionMap& cm, std::size_t n_points, std::uint64_t seed) {
  const auto xs = sample_domain(cm.domain(), n_points, seed);
  std::vector<double> v(n_points);
  for (std::size_t i = 0; i < n_points; ++i) v[i] = std::abs(cm.predict(xs[i]).mean);
  return pairwise_sum(v) / static_cast<double>(n_points);
}

struct Candidate {
  Model model;
  SamplingDesign design;
};

struct CandidateReport {
  std::string name;
  bool fitted = false;
  std::string error;
  double integral = std::numeric_limits<double>::infinity();
  double epsilon = std::numeric_limits<double>::infinity();
};

struct Selection {
  std::size_t index = 0;
  std::vector<CandidateReport> reports;
};

struct SelectionOptions {
  VarianceScheme scheme = LearnedVariance{};
  FitOptions fit{};
  EvalOptions eval{};
  double alpha = 0.95;
  std::size_t n_points = 200;
  std::uint64_t seed = 0;  // integration points, shared by all candidates
};

/// Smallest-correction reduced model. Candidates whose data or fit fails are
/// excluded and reported; ties in the integral go to the smaller epsilon.
inline Selection select_model(const Model& detailed, const std::vector<Candidate>& candidates,
                              const StatisticSpec& spec, const SelectionOptions& opt = {}) {
  if (candidates.empty()) throw InputError("model selection needs at least one candidate");
  Selection out;
  for (const auto& c : candidates) {
    CandidateReport r{model_name(c.model)};
    try {
      const auto data = build_training_set(detailed, c.model, spec, c.design, opt.eval);
      const auto cm = fit_correction(data, opt.scheme, opt.fit);
      r.integral = mean_abs_correction(cm, opt.n_points, opt.seed);
      r.epsilon = estimate_epsilon(cm, opt.alpha, opt.n_points, opt.seed).epsilon;
      r.fitted = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    out.reports.push_back(std::move(r));
  }
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < out.reports.size(); ++i) {
    const auto& r = out.reports[i];
    if (!r.fitted) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = out.reports[*best];
    const double tol = 1e-12 * std::max({1.0, std::abs(r.integral), std::abs(b.integral)});
    if (r.integral < b.integral - tol || (std::abs(r.integral - b.integral) <= tol && r.epsilon < b.epsilon))
      best = i;
  }
  if (!best) throw InputError("no candidate model could be fitted: " + out.reports.front().error);
  out.index = *best;
  return out;
}

/// Largest |mean_1 - mean_2| over sampled domain points.
inline double max_mean_difference(const CorrectionMap& a, const CorrectionMap& b, std::size_t n_points,
                                  std::uint64_t seed) {
  const auto& da = a.domain();
  const auto& db = b.domain();
  bool same = da.size() == db.size();
  for (std::size_t d = 0; same && d < da.size(); ++d)
    same = da[d].name == db[d].name && da[d].lo == db[d].lo && da[d].hi == db[d].hi;
  if (!same) throw InputError("correction maps are defined on different parameter domains");
  if (n_points == 0) throw InputError("equivalence check needs at least one point");
  double worst = 0;
  for (const auto& x : sample_domain(da, n_points, seed))
    worst = std::max(worst, std::abs(a.predict(x).mean - b.predict(x).mean));
  return worst;
}

/// Sampled form of |M_1(theta) - M_2(theta)| <= eps for all theta.
inline bool check_equivalence(const CorrectionMap& a, const CorrectionMap& b, double eps, std::size_t n_points,
                              std::uint64_t seed = 0) {
  return max_mean_difference(a, b, n_points, seed) <= eps;
}

}  // namespace corrmap
