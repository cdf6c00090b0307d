#pragma once

// Deterministic back-end: named ODE systems integrated with the
// Dormand-Prince 5(4) embedded pair and its 4th-order dense output, plus the
// mass-action and quasi-steady-state Michaelis-Menten systems.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "corrmap/error.hpp"
#include "corrmap/trajectory.hpp"

namespace corrmap {

struct OdeSystem {
  using Rhs = std::function<void(std::span<const double> x, std::span<const double> rates,
                                 std::span<double> dxdt)>;

  std::string name;
  std::vector<std::string> species;
  std::vector<std::string> rate_names;
  std::vector<double> rates;
  std::vector<double> initial;
  Rhs rhs;

  std::size_t dim() const { return species.size(); }

  /// Parameters are rate constants by name, or initial amounts as
  /// "<species>0" (e.g. "E0").
  bool has_parameter(const std::string& p) const {
    return find(rate_names, p) < rate_names.size() || initial_index(p) < species.size();
  }

  void set_parameter(const std::string& p, double value) {
    if (auto r = find(rate_names, p); r < rate_names.size()) {
      if (!(value > 0)) throw InputError("rate constant '" + p + "' must be positive");
      rates[r] = value;
      return;
    }
    if (auto s = initial_index(p); s < species.size()) {
      if (!(value >= 0)) throw InputError("initial amount '" + p + "' must be nonnegative");
      initial[s] = value;
      return;
    }
    throw InputError("model '" + name + "' has no parameter '" + p + "'");
  }

  double parameter(const std::string& p) const {
    if (auto r = find(rate_names, p); r < rate_names.size()) return rates[r];
    if (auto s = initial_index(p); s < species.size()) return initial[s];
    throw InputError("model '" + name + "' has no parameter '" + p + "'");
  }

  void validate() const {
    if (species.empty() || initial.size() != species.size() || rates.size() != rate_names.size() || !rhs)
      throw InputError("malformed ODE system '" + name + "'");
    for (double k : rates)
      if (!(k > 0)) throw InputError("ODE rate constants must be positive");
    for (double x : initial)
      if (!(x >= 0)) throw InputError("ODE initial amounts must be nonnegative");
  }

 private:
  static std::size_t find(const std::vector<std::string>& v, const std::string& s) {
    return static_cast<std::size_t>(std::find(v.begin(), v.end(), s) - v.begin());
  }
  std::size_t initial_index(const std::string& p) const {
    if (p.size() < 2 || p.back() != '0') return species.size();
    return find(species, p.substr(0, p.size() - 1));
  }
};

struct OdeTolerances {
  double rel = 1e-6;
  double abs = 1e-6;
  double initial_step = 0.0;  // 0: chosen automatically
  double max_step = std::numeric_limits<double>::infinity();

  /// Coarse settings with initial step, maximal step and both tolerances at 0.01.
  static OdeTolerances coarse() { return {0.01, 0.01, 0.01, 0.01}; }
};

/// One accepted step with its continuous extension.
class DenseStep {
 public:
  double t0 = 0, t1 = 0;

  void eval(double t, std::span<double> out) const {
    const double h = t1 - t0;
    const double th = h > 0 ? (t - t0) / h : 1.0;
    const double th1 = 1.0 - th;
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = r_[0][i] + th * (r_[1][i] + th1 * (r_[2][i] + th * (r_[3][i] + th1 * r_[4][i])));
  }

 private:
  template <typename F>
  friend void integrate_steps(const OdeSystem&, double, const OdeTolerances&, F&&);
  std::array<std::vector<double>, 5> r_;
};

namespace detail::dp5 {
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                        a75 = -2187.0 / 6784, a76 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
}  // namespace detail::dp5

/// Integrates from t = 0 to t_end, calling on_step(const DenseStep&) after
/// every accepted step.
template <typename F>
void integrate_steps(const OdeSystem& sys, double t_end, const OdeTolerances& tol, F&& on_step) {
  using namespace detail::dp5;
  sys.validate();
  if (!(t_end > 0)) throw InputError("integration end time must be positive");
  const std::size_t n = sys.dim();
  const std::span<const double> k(sys.rates);
  std::vector<double> y = sys.initial, y1(n), tmp(n), err(n);
  std::array<std::vector<double>, 7> K;
  for (auto& v : K) v.assign(n, 0.0);
  auto f = [&](const std::vector<double>& x, std::vector<double>& out) { sys.rhs(x, k, out); };

  auto scaled_norm = [&](const std::vector<double>& e, const std::vector<double>& a,
                         const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sc = tol.abs + tol.rel * std::max(std::abs(a[i]), std::abs(b[i]));
      s += (e[i] / sc) * (e[i] / sc);
    }
    return std::sqrt(s / static_cast<double>(n));
  };

  f(y, K[0]);
  double h = tol.initial_step;
  if (!(h > 0)) {
    // Starting step from the scaled magnitudes of y and y'.
    const double d0 = scaled_norm(y, y, y), d1n = scaled_norm(K[0], y, y);
    double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
    h0 = std::min(h0, t_end);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h0 * K[0][i];
    f(tmp, K[1]);
    for (std::size_t i = 0; i < n; ++i) err[i] = (K[1][i] - K[0][i]) / h0;
    const double d2 = scaled_norm(err, y, y);
    const double h1 = std::max(d1n, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                  : std::pow(0.01 / std::max(d1n, d2), 0.2);
    h = std::min(100 * h0, h1);
  }
  h = std::min({h, tol.max_step, t_end});

  DenseStep step;
  for (auto& r : step.r_) r.assign(n, 0.0);
  double t = 0.0;
  double fac_max = 10.0;
  while (t < t_end) {
    if (t + h > t_end || t + 1.01 * h >= t_end) h = t_end - t;
    if (h < 16 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)))
      throw StiffnessError("step size underflow at t = " + format_number(t), t);

    auto stage = [&](std::vector<double>& out, auto... terms) {
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0;
        ((acc += terms.first * K[terms.second][i]), ...);
        tmp[i] = y[i] + h * acc;
      }
      f(tmp, out);
    };
    using P = std::pair<double, int>;
    stage(K[1], P{a21, 0});
    stage(K[2], P{a31, 0}, P{a32, 1});
    stage(K[3], P{a41, 0}, P{a42, 1}, P{a43, 2});
    stage(K[4], P{a51, 0}, P{a52, 1}, P{a53, 2}, P{a54, 3});
    stage(K[5], P{a61, 0}, P{a62, 1}, P{a63, 2}, P{a64, 3}, P{a65, 4});
    for (std::size_t i = 0; i < n; ++i)
      y1[i] = y[i] + h * (a71 * K[0][i] + a73 * K[2][i] + a74 * K[3][i] + a75 * K[4][i] + a76 * K[5][i]);
    f(y1, K[6]);
    for (std::size_t i = 0; i < n; ++i)
      err[i] = h * (e1 * K[0][i] + e3 * K[2][i] + e4 * K[3][i] + e5 * K[4][i] + e6 * K[5][i] + e7 * K[6][i]);
    const double e = scaled_norm(err, y, y1);
    if (!std::isfinite(e)) {
      h *= 0.2;
      continue;
    }
    if (e <= 1.0) {
      for (std::size_t i = 0; i < n; ++i) {
        const double dy = y1[i] - y[i];
        const double bspl = h * K[0][i] - dy;
        step.r_[0][i] = y[i];
        step.r_[1][i] = dy;
        step.r_[2][i] = bspl;
        step.r_[3][i] = dy - h * K[6][i] - bspl;
        step.r_[4][i] = h * (d1 * K[0][i] + d3 * K[2][i] + d4 * K[3][i] + d5 * K[4][i] + d6 * K[5][i] + d7 * K[6][i]);
      }
      step.t0 = t;
      step.t1 = (t + h >= t_end) ? t_end : t + h;
      t = step.t1;
      y.swap(y1);
      K[0].swap(K[6]);
      on_step(static_cast<const DenseStep&>(step));
      const double fac = e == 0 ? fac_max : std::min(fac_max, std::max(0.2, 0.9 * std::pow(e, -0.2)));
      h = std::min(h * fac, tol.max_step);
      fac_max = 10.0;
    } else {
      h *= std::max(0.2, 0.9 * std::pow(e, -0.2));
      fac_max = 1.0;
    }
  }
}

/// Integrates to t_end. With no output times the trajectory holds the
/// initial state and every accepted step; otherwise it holds the dense-output
/// state at each requested time (sorted, within [0, t_end]).
inline Trajectory integrate(const OdeSystem& sys, double t_end, const OdeTolerances& tol = {},
                            std::span<const double> output_times = {}) {
  Trajectory tr(sys.species);
  std::vector<double> buf(sys.dim());
  if (output_times.empty()) {
    tr.push(0.0, sys.initial);
    integrate_steps(sys, t_end, tol, [&](const DenseStep& s) {
      s.eval(s.t1, buf);
      tr.push(s.t1, buf);
    });
    return tr;
  }
  if (!std::is_sorted(output_times.begin(), output_times.end()) || output_times.front() < 0 ||
      output_times.back() > t_end)
    throw InputError("output times must be sorted and lie within [0, t_end]");
  std::size_t next = 0;
  while (next < output_times.size() && output_times[next] == 0.0) {
    if (tr.empty()) tr.push(0.0, sys.initial);
    ++next;
  }
  integrate_steps(sys, t_end, tol, [&](const DenseStep& s) {
    while (next < output_times.size() && output_times[next] <= s.t1) {
      s.eval(output_times[next], buf);
      tr.push(output_times[next], buf);
      ++next;
    }
  });
  return tr;
}

struct MmParams {
  double k1 = 2.0;
  double km1 = 1.0;
  double k2 = 1.5;
  double E0 = 1.0;
  double S0 = 60.0;
  double ES0 = 0.0;
  double P0 = 0.0;
};

struct MmConstants {
  double vmax;             // V_M = k2 (E0 + ES0)
  double michaelis;        // K_MM = (k-1 + k2) / k1
};

inline MmConstants mm_constants(const MmParams& p) {
  return {p.k2 * (p.E0 + p.ES0), (p.km1 + p.k2) / p.k1};
}

namespace detail {
inline void check_mm(const MmParams& p) {
  if (!(p.k1 > 0 && p.km1 > 0 && p.k2 > 0)) throw InputError("Michaelis-Menten rates must be positive");
  if (!(p.E0 >= 0 && p.S0 >= 0 && p.ES0 >= 0 && p.P0 >= 0))
    throw InputError("Michaelis-Menten initial amounts must be nonnegative");
}
}  // namespace detail

/// Mass-action enzyme kinetics E + S <-> ES -> E + P. State order E, S, ES, P.
inline OdeSystem mm_full(const MmParams& p = {}) {
  detail::check_mm(p);
  OdeSystem sys;
  sys.name = "mm-full";
  sys.species = {"E", "S", "ES", "P"};
  sys.rate_names = {"k1", "km1", "k2"};
  sys.rates = {p.k1, p.km1, p.k2};
  sys.initial = {p.E0, p.S0, p.ES0, p.P0};
  sys.rhs = [](std::span<const double> x, std::span<const double> k, std::span<double> dx) {
    const double bind = k[0] * x[0] * x[1], unbind = k[1] * x[2], cat = k[2] * x[2];
    dx[0] = -bind + unbind + cat;
    dx[1] = -bind + unbind;
    dx[2] = bind - unbind - cat;
    dx[3] = cat;
  };
  return sys;
}

/// Quasi-steady-state reduction: E and ES frozen, S -> P at V_M S / (K_MM + S),
/// with V_M taken from the (constant) enzyme totals in the state.
inline OdeSystem mm_reduced(const MmParams& p = {}) {
  detail::check_mm(p);
  OdeSystem sys = mm_full(p);
  sys.name = "mm-reduced";
  sys.rhs = [](std::span<const double> x, std::span<const double> k, std::span<double> dx) {
    const double vmax = k[2] * (x[0] + x[2]);
    const double kmm = (k[1] + k[2]) / k[0];
    const double s = std::max(x[1], 0.0);
    const double rate = vmax * s / (kmm + s);
    dx[0] = 0.0;
    dx[1] = -rate;
    dx[2] = 0.0;
    dx[3] = rate;
  };
  return sys;
}

}  // namespace corrmap
