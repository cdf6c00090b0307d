#pragma once

// Scalar statistics of a model: the mean of an observable at a time point,
// its long-run time average, and the probability that it exceeds a
// threshold at some point of a time window.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "corrmap/model.hpp"
#include "corrmap/parallel.hpp"
#include "corrmap/random.hpp"

namespace corrmap {

struct MeanAt {
  std::string observable;
  double time = 0.0;
};

struct LongRunMean {
  std::string observable;
  double burn_in = 1000.0;
  double horizon = 10000.0;
};

/// Bounded eventually: observable > threshold somewhere in [t_lo, t_hi].
struct EventuallyAbove {
  std::string observable;
  double threshold = 0.0;
  double t_lo = 0.0;
  double t_hi = 100.0;
};

using StatisticSpec = std::variant<MeanAt, LongRunMean, EventuallyAbove>;

struct StatEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t n_samples = 0;
};

inline const std::string& observable_of(const StatisticSpec& s) {
  return std::visit([](const auto& x) -> const std::string& { return x.observable; }, s);
}

inline void validate(const StatisticSpec& spec) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if (s.observable.empty()) throw InputError("statistic needs an observable");
        if constexpr (std::is_same_v<T, MeanAt>) {
          if (!(s.time >= 0)) throw InputError("MeanAt time must be nonnegative");
        } else if constexpr (std::is_same_v<T, LongRunMean>) {
          if (!(s.burn_in >= 0) || !(s.horizon > s.burn_in))
            throw InputError("LongRunMean needs 0 <= burn_in < horizon");
        } else {
          if (!(s.t_lo >= 0) || !(s.t_hi > s.t_lo)) throw InputError("EventuallyAbove needs 0 <= t_lo < t_hi");
          if (!(s.threshold >= 0)) throw InputError("EventuallyAbove threshold must be nonnegative");
        }
      },
      spec);
}

/// Human-readable form, used in output headers and JSON records.
inline std::string describe(const StatisticSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, MeanAt>)
          return "mean_at(" + s.observable + ", t=" + format_number(s.time) + ")";
        else if constexpr (std::is_same_v<T, LongRunMean>)
          return "long_run_mean(" + s.observable + ", burn_in=" + format_number(s.burn_in) +
                 ", horizon=" + format_number(s.horizon) + ")";
        else
          return "eventually_above(" + s.observable + " > " + format_number(s.threshold) + ", [" +
                 format_number(s.t_lo) + ", " + format_number(s.t_hi) + "])";
      },
      spec);
}

/// Pairwise summation; the result depends only on the order of `v`.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0;
    for (double x : v) s += x;
    return s;
  }
  const auto h = v.size() / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

/// Sample mean with standard error sd / sqrt(n).
inline StatEstimate sample_mean(std::span<const double> v) {
  if (v.empty()) throw InputError("no samples");
  const double n = static_cast<double>(v.size());
  const double m = pairwise_sum(v) / n;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
  const double var = v.size() > 1 ? pairwise_sum(sq) / (n - 1) : 0.0;
  return {m, std::sqrt(var / n), v.size()};
}

/// Whether the observable exceeds `threshold` while some state holds during
/// [t_lo, t_hi]. Record i holds on [t_i, t_{i+1}); the last record is a
/// single point. The record must cover the window.
inline bool eventually_above(const Trajectory& tr, std::size_t observable, double threshold, double t_lo,
                             double t_hi) {
  if (tr.empty() || observable >= tr.width()) throw InputError("eventually_above: bad trajectory or observable");
  if (!(t_hi >= t_lo)) throw InputError("eventually_above: empty window");
  const auto& t = tr.times();
  if (t.front() > t_lo || t.back() < t_hi) throw InputError("trajectory does not cover the formula window");
  for (std::size_t i = 0; i < tr.size(); ++i) {
    if (t[i] > t_hi) break;
    const bool last = i + 1 == tr.size();
    const bool holds = last ? t[i] >= t_lo : t[i + 1] > t_lo;
    if (holds && tr.value(i, observable) > threshold) return true;
  }
  return false;
}

inline bool eventually_above(const Trajectory& tr, const EventuallyAbove& spec) {
  return eventually_above(tr, tr.species_index(spec.observable), spec.threshold, spec.t_lo, spec.t_hi);
}

struct StatisticOptions {
  OdeTolerances tolerances{};
  unsigned threads = 1;
  int batches = 20;  // batch means for the long-run standard error
  std::uint64_t max_events = std::numeric_limits<std::uint64_t>::max();  // per stochastic run
};

namespace detail {

inline StatEstimate ode_statistic(const OdeSystem& sys, const StatisticSpec& spec, std::size_t obs,
                                  const OdeTolerances& tol) {
  std::vector<double> buf(sys.dim());
  if (const auto* s = std::get_if<MeanAt>(&spec)) {
    if (s->time == 0) return {sys.initial[obs], 0.0, 1};
    const double ts[] = {s->time};
    return {integrate(sys, s->time, tol, ts).value(0, obs), 0.0, 1};
  }
  if (const auto* s = std::get_if<LongRunMean>(&spec)) {
    // 3-point Gauss-Legendre per step is exact for the quartic dense output.
    static constexpr double node[] = {-0.7745966692414834, 0.0, 0.7745966692414834};
    static constexpr double weight[] = {5.0 / 9, 8.0 / 9, 5.0 / 9};
    double integral = 0;
    integrate_steps(sys, s->horizon, tol, [&](const DenseStep& step) {
      const double a = std::max(step.t0, s->burn_in), b = std::min(step.t1, s->horizon);
      if (!(b > a)) return;
      for (int q = 0; q < 3; ++q) {
        step.eval(0.5 * (a + b) + 0.5 * (b - a) * node[q], buf);
        integral += 0.5 * (b - a) * weight[q] * buf[obs];
      }
    });
    return {integral / (s->horizon - s->burn_in), 0.0, 1};
  }
  // The continuous trace is probed at the step ends and 8 interior points.
  const auto& s = std::get<EventuallyAbove>(spec);
  bool hit = s.t_lo == 0 && sys.initial[obs] > s.threshold;
  if (!hit) {
    integrate_steps(sys, s.t_hi, tol, [&](const DenseStep& step) {
      if (hit) return;
      const double a = std::max(step.t0, s.t_lo), b = std::min(step.t1, s.t_hi);
      if (b < a) return;
      for (int q = 0; q <= 9 && !hit; ++q) {
        step.eval(a + (b - a) * q / 9.0, buf);
        hit = buf[obs] > s.threshold;
      }
    });
  }
  return {hit ? 1.0 : 0.0, 0.0, 1};
}

inline double ssa_value_at(const ReactionNetwork& net, std::size_t obs, double time, std::uint64_t seed,
                           std::uint64_t max_events) {
  Rng rng(seed);
  Count held = net.initial[obs];
  if (time > 0)
    simulate(
        net, time, rng,
        [&](double, std::span<const Count> x) {
          held = x[obs];
          return true;
        },
        max_events);
  return static_cast<double>(held);
}

inline bool ssa_eventually_above(const ReactionNetwork& net, std::size_t obs, const EventuallyAbove& s,
                                 std::uint64_t seed, std::uint64_t max_events) {
  Rng rng(seed);
  bool hit = false;
  Count prev = 0;
  simulate(net, s.t_hi, rng, [&](double t, std::span<const Count> x) {
    // The previous state held on [t_prev, t) and t_prev <= t_hi always.
    if (t > s.t_lo && static_cast<double>(prev) > s.threshold && t > 0) hit = true;
    if (t >= s.t_lo && static_cast<double>(x[obs]) > s.threshold) hit = true;
    prev = x[obs];
    return !hit;
  }, max_events);
  // The final state holds up to t_hi >= t_lo.
  if (!hit && static_cast<double>(prev) > s.threshold) hit = true;
  return hit;
}

inline StatEstimate ssa_long_run(const ReactionNetwork& net, std::size_t obs, const LongRunMean& s,
                                 std::uint64_t seed, int batches, std::uint64_t max_events) {
  if (batches < 2) throw InputError("long-run estimate needs at least 2 batches");
  const double len = (s.horizon - s.burn_in) / batches;
  std::vector<double> acc(static_cast<std::size_t>(batches), 0.0);
  auto add = [&](double a, double b, double v) {
    a = std::max(a, s.burn_in);
    b = std::min(b, s.horizon);
    if (!(b > a)) return;
    auto k = static_cast<std::size_t>(std::min<double>((a - s.burn_in) / len, batches - 1));
    while (a < b && k < acc.size()) {
      const double end = k + 1 == acc.size() ? b : std::min(b, s.burn_in + (k + 1) * len);
      acc[k] += (end - a) * v;
      a = end;
      ++k;
    }
  };
  Rng rng(seed);
  double t_prev = 0;
  double v_prev = 0;
  simulate(net, s.horizon, rng, [&](double t, std::span<const Count> x) {
    add(t_prev, t, v_prev);
    t_prev = t;
    v_prev = static_cast<double>(x[obs]);
    return true;
  }, max_events);
  add(t_prev, s.horizon, v_prev);
  for (auto& a : acc) a /= len;
  auto est = sample_mean(acc);
  est.n_samples = 1;
  return est;
}

}  // namespace detail

/// Estimates a statistic. ODE models are evaluated once; stochastic models
/// use n_runs independent runs seeded by derive_seed(seed, {run}), except
/// LongRunMean which uses one long run with a batch-means standard error.
inline StatEstimate eval_statistic(const Model& model, const StatisticSpec& spec, std::size_t n_runs,
                                   std::uint64_t seed, const StatisticOptions& opt = {}) {
  validate(spec);
  const std::size_t obs = observable_index(model, observable_of(spec));
  if (const auto* sys = std::get_if<OdeSystem>(&model)) return detail::ode_statistic(*sys, spec, obs, opt.tolerances);
  const auto& net = std::get<ReactionNetwork>(model);
  net.validate();
  if (const auto* s = std::get_if<LongRunMean>(&spec))
    return detail::ssa_long_run(net, obs, *s, seed, opt.batches, opt.max_events);
  if (n_runs == 0) throw InputError("stochastic statistic needs at least one run");
  std::vector<double> samples(n_runs);
  parallel_for(n_runs, opt.threads, [&](std::size_t r) {
    const auto run_seed = derive_seed(seed, {r});
    if (const auto* s = std::get_if<MeanAt>(&spec))
      samples[r] = detail::ssa_value_at(net, obs, s->time, run_seed, opt.max_events);
    else
      samples[r] =
          detail::ssa_eventually_above(net, obs, std::get<EventuallyAbove>(spec), run_seed, opt.max_events) ? 1.0 : 0.0;
  });
  auto est = sample_mean(samples);
  if (std::holds_alternative<EventuallyAbove>(spec)) {
    const double p = est.value, n = static_cast<double>(n_runs);
    est.standard_error = std::sqrt(p * (1 - p) / n);
  }
  return est;
}

}  // namespace corrmap
