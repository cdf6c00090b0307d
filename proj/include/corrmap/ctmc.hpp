#pragma once

// Stochastic back-end: mass-action reaction networks simulated exactly with
// Gillespie's direct method.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "corrmap/config.hpp"
#include "corrmap/error.hpp"
#include "corrmap/random.hpp"
#include "corrmap/trajectory.hpp"

namespace corrmap {

using Count = std::int64_t;

struct Reaction {
  std::string name;
  /// (species index, molecularity) pairs of the mass-action monomial.
  std::vector<std::pair<std::size_t, int>> reactants;
  /// Net stoichiometric change, one entry per species.
  std::vector<int> change;
  std::size_t rate = 0;
};

struct ReactionNetwork {
  std::string name;
  std::vector<std::string> species;
  std::vector<std::string> rate_names;
  std::vector<double> rates;
  std::vector<Count> initial;
  std::vector<Reaction> reactions;

  std::size_t species_index(const std::string& s) const {
    const auto it = std::find(species.begin(), species.end(), s);
    if (it == species.end()) throw InputError("network '" + name + "' has no species '" + s + "'");
    return static_cast<std::size_t>(it - species.begin());
  }

  std::size_t rate_index(const std::string& r) const {
    const auto it = std::find(rate_names.begin(), rate_names.end(), r);
    if (it == rate_names.end()) throw InputError("network '" + name + "' has no rate '" + r + "'");
    return static_cast<std::size_t>(it - rate_names.begin());
  }

  /// Adds a reaction from reactant and product multisets given by species name.
  void add_reaction(std::string rname, const std::vector<std::pair<std::string, int>>& lhs,
                    const std::vector<std::pair<std::string, int>>& rhs, const std::string& rate_name) {
    Reaction r;
    r.name = std::move(rname);
    r.change.assign(species.size(), 0);
    for (const auto& [s, n] : lhs) {
      const auto i = species_index(s);
      r.reactants.emplace_back(i, n);
      r.change[i] -= n;
    }
    for (const auto& [s, n] : rhs) r.change[species_index(s)] += n;
    r.rate = rate_index(rate_name);
    reactions.push_back(std::move(r));
  }

  double propensity(const Reaction& r, std::span<const Count> x) const {
    double a = rates[r.rate];
    for (const auto& [s, n] : r.reactants) {
      // Number of distinct reactant combinations: C(x_s, n).
      double c = 1;
      for (int m = 0; m < n; ++m) c *= static_cast<double>(x[s] - m) / (m + 1);
      a *= std::max(0.0, c);
    }
    return a;
  }

  /// Parameters are rate constants by name or initial counts as "<species>0".
  bool has_parameter(const std::string& p) const {
    if (std::find(rate_names.begin(), rate_names.end(), p) != rate_names.end()) return true;
    return p.size() > 1 && p.back() == '0' &&
           std::find(species.begin(), species.end(), p.substr(0, p.size() - 1)) != species.end();
  }

  void set_parameter(const std::string& p, double value) {
    if (auto it = std::find(rate_names.begin(), rate_names.end(), p); it != rate_names.end()) {
      if (!(value > 0)) throw InputError("rate '" + p + "' must be positive");
      rates[static_cast<std::size_t>(it - rate_names.begin())] = value;
      return;
    }
    if (p.size() > 1 && p.back() == '0') {
      const auto s = p.substr(0, p.size() - 1);
      if (auto it = std::find(species.begin(), species.end(), s); it != species.end()) {
        if (!(value >= 0) || value != std::floor(value))
          throw InputError("initial count '" + p + "' must be a nonnegative integer");
        initial[static_cast<std::size_t>(it - species.begin())] = static_cast<Count>(value);
        return;
      }
    }
    throw InputError("network '" + name + "' has no parameter '" + p + "'");
  }

  double parameter(const std::string& p) const {
    if (auto it = std::find(rate_names.begin(), rate_names.end(), p); it != rate_names.end())
      return rates[static_cast<std::size_t>(it - rate_names.begin())];
    return static_cast<double>(initial[species_index(p.substr(0, p.size() - 1))]);
  }

  /// Rates positive, initial counts nonnegative, and every consumed species
  /// appears in the reaction's monomial often enough that the propensity
  /// vanishes before the count could go negative.
  void validate() const {
    if (rates.size() != rate_names.size() || initial.size() != species.size())
      throw InputError("malformed network '" + name + "'");
    for (std::size_t i = 0; i < rates.size(); ++i)
      if (!(rates[i] > 0)) throw InputError("rate '" + rate_names[i] + "' must be positive");
    for (Count c : initial)
      if (c < 0) throw InputError("initial counts must be nonnegative");
    for (const auto& r : reactions) {
      for (std::size_t s = 0; s < species.size(); ++s) {
        if (r.change[s] >= 0) continue;
        int order = 0;
        for (const auto& [i, n] : r.reactants)
          if (i == s) order += n;
        if (order < -r.change[s])
          throw InputError("reaction '" + r.name + "' consumes '" + species[s] + "' without requiring it");
      }
    }
  }
};

/// Runs the direct method from the initial state until t_end. The observer
/// is called as observer(t, state) at t = 0 and after every fired reaction;
/// returning false stops the run early. Returns the number of events; a run
/// needing more than max_events throws NumericalError.
template <typename Observer>
std::uint64_t simulate(const ReactionNetwork& net, double t_end, Rng& rng, Observer&& observer,
                       std::uint64_t max_events = std::numeric_limits<std::uint64_t>::max()) {
  std::vector<Count> x = net.initial;
  std::vector<double> a(net.reactions.size());
  double t = 0.0;
  std::uint64_t events = 0;
  if (!observer(t, std::span<const Count>(x))) return 0;
  for (;;) {
    double total = 0;
    for (std::size_t j = 0; j < a.size(); ++j) total += (a[j] = net.propensity(net.reactions[j], x));
    if (!(total > 0)) break;  // absorbing
    t += rng.exponential(total);
    if (t > t_end) break;
    double u = rng.uniform() * total;
    std::size_t j = 0;
    for (; j + 1 < a.size(); ++j) {
      if (u < a[j]) break;
      u -= a[j];
    }
    while (a[j] == 0) --j;  // guard against rounding landing on a disabled reaction
    const auto& ch = net.reactions[j].change;
    for (std::size_t s = 0; s < x.size(); ++s) x[s] += ch[s];
    if (++events > max_events)
      throw NumericalError("network '" + net.name + "' exceeded " + std::to_string(max_events) + " events before t = " +
                           format_number(t_end) + " (stopped at t = " + format_number(t) + ")");
    if (!observer(t, std::span<const Count>(x))) break;
  }
  return events;
}

enum class RecordMode { Grid, Events };

struct SsaConfig {
  std::uint64_t seed = 0;
  double t_end = 100.0;
  RecordMode mode = RecordMode::Grid;
  double grid_dt = 1.0;
};

/// Simulates one trajectory. Grid mode samples the state on 0, dt, 2dt, ...
/// by zero-order hold; event mode records every jump plus the final state at
/// t_end. Reproducible given the seed.
inline Trajectory ssa_run(const ReactionNetwork& net, const SsaConfig& cfg) {
  net.validate();
  if (!(cfg.t_end > 0)) throw InputError("t_end must be positive");
  Trajectory tr(net.species);
  std::vector<double> row(net.species.size());
  auto push = [&](double t, std::span<const Count> x) {
    for (std::size_t s = 0; s < x.size(); ++s) row[s] = static_cast<double>(x[s]);
    tr.push(t, row);
  };
  Rng rng(cfg.seed);
  if (cfg.mode == RecordMode::Events) {
    std::vector<Count> last;
    simulate(net, cfg.t_end, rng, [&](double t, std::span<const Count> x) {
      push(t, x);
      last.assign(x.begin(), x.end());
      return true;
    });
    if (tr.times().back() < cfg.t_end) push(cfg.t_end, last);
    return tr;
  }
  if (!(cfg.grid_dt > 0)) throw InputError("grid spacing must be positive");
  const auto n_grid = static_cast<std::size_t>(std::floor(cfg.t_end / cfg.grid_dt + 1e-9)) + 1;
  std::size_t next = 0;
  std::vector<Count> held;
  simulate(net, cfg.t_end, rng, [&](double t, std::span<const Count> x) {
    while (next < n_grid && static_cast<double>(next) * cfg.grid_dt < t) {
      push(static_cast<double>(next) * cfg.grid_dt, held);
      ++next;
    }
    held.assign(x.begin(), x.end());
    return true;
  });
  while (next < n_grid) {
    push(static_cast<double>(next) * cfg.grid_dt, held);
    ++next;
  }
  return tr;
}

struct PtnParams {
  double k_on = 1e-2;
  double k_off = 1e-2;
  double alpha = 1.0;
  double beta = 100.0;
  double delta_rna = 1e-2;
  double delta_p = 1e-3;
  Count G_in0 = 0;
  Count G_act0 = 1;
  Count mRNA0 = 0;
  Count P0 = 0;
};

namespace detail {
inline void check_ptn(const PtnParams& p, bool full) {
  if (!(p.k_on > 0 && p.k_off > 0 && p.beta > 0 && p.delta_p > 0) ||
      (full && !(p.alpha > 0 && p.delta_rna > 0)))
    throw InputError("protein translation network rates must be positive");
  if (p.G_in0 < 0 || p.G_act0 < 0 || p.mRNA0 < 0 || p.P0 < 0)
    throw InputError("initial counts must be nonnegative");
}
}  // namespace detail

/// Telegraph gene with protein-mediated inactivation, transcription,
/// translation and first-order decay of mRNA and protein.
inline ReactionNetwork ptn_full(const PtnParams& p = {}) {
  detail::check_ptn(p, true);
  ReactionNetwork n;
  n.name = "ptn-full";
  n.species = {"G_in", "G_act", "mRNA", "P"};
  n.rate_names = {"k_on", "k_off", "alpha", "beta", "delta_rna", "delta_p"};
  n.rates = {p.k_on, p.k_off, p.alpha, p.beta, p.delta_rna, p.delta_p};
  n.initial = {p.G_in0, p.G_act0, p.mRNA0, p.P0};
  n.add_reaction("activation", {{"G_in", 1}}, {{"G_act", 1}}, "k_on");
  // k_off * x_P while the gene is active; the G_act factor only matters at
  // the boundary, where it keeps the gene count nonnegative.
  n.add_reaction("inactivation", {{"G_act", 1}, {"P", 1}}, {{"G_in", 1}, {"P", 1}}, "k_off");
  n.add_reaction("transcription", {{"G_act", 1}}, {{"G_act", 1}, {"mRNA", 1}}, "alpha");
  n.add_reaction("mrna_decay", {{"mRNA", 1}}, {}, "delta_rna");
  n.add_reaction("translation", {{"mRNA", 1}}, {{"mRNA", 1}, {"P", 1}}, "beta");
  n.add_reaction("protein_decay", {{"P", 1}}, {}, "delta_p");
  return n;
}

/// Transcription omitted: the active gene translates directly at rate beta.
/// The state keeps the observables shared with the full network (no mRNA).
inline ReactionNetwork ptn_reduced(const PtnParams& p = {}) {
  detail::check_ptn(p, false);
  ReactionNetwork n;
  n.name = "ptn-reduced";
  n.species = {"G_in", "G_act", "P"};
  n.rate_names = {"k_on", "k_off", "beta", "delta_p"};
  n.rates = {p.k_on, p.k_off, p.beta, p.delta_p};
  n.initial = {p.G_in0, p.G_act0, p.P0};
  n.add_reaction("activation", {{"G_in", 1}}, {{"G_act", 1}}, "k_on");
  n.add_reaction("inactivation", {{"G_act", 1}, {"P", 1}}, {{"G_in", 1}, {"P", 1}}, "k_off");
  n.add_reaction("translation", {{"G_act", 1}}, {{"G_act", 1}, {"P", 1}}, "beta");
  n.add_reaction("protein_decay", {{"P", 1}}, {}, "delta_p");
  return n;
}

namespace detail {

// "2 A + B" -> {("A", 2), ("B", 1)}; "0" or empty -> {}.
inline std::vector<std::pair<std::string, int>> parse_side(const ConfigEntry& e, std::string_view side) {
  std::vector<std::pair<std::string, int>> out;
  side = trim(side);
  if (side.empty() || side == "0") return out;
  std::size_t start = 0;
  while (start <= side.size()) {
    const auto plus = std::min(side.find('+', start), side.size());
    auto term = trim(side.substr(start, plus - start));
    const std::size_t col = e.column + static_cast<std::size_t>(term.data() - e.value.data());
    if (term.empty()) throw ConfigError("empty term in reaction", e.line, col);
    int coeff = 1;
    if (std::isdigit(static_cast<unsigned char>(term.front()))) {
      std::size_t k = 0;
      while (k < term.size() && std::isdigit(static_cast<unsigned char>(term[k]))) ++k;
      coeff = std::stoi(std::string(term.substr(0, k)));
      term = trim(term.substr(k));
      if (term.empty() || coeff <= 0) throw ConfigError("bad stoichiometric term", e.line, col);
    }
    out.emplace_back(std::string(term), coeff);
    start = plus + 1;
  }
  return out;
}

}  // namespace detail

/// Reads a network from a sectioned key-value document:
///
///   name = my-network
///   [species]      G = 1            (initial counts)
///   [rates]        k = 0.5
///   [reactions]    label = A + B -> C @ k
inline ReactionNetwork network_from_config(const ConfigDocument& doc) {
  ReactionNetwork net;
  if (const auto* top = doc.section(""); top && top->find("name")) net.name = top->find("name")->value;
  const auto* sp = doc.section("species");
  const auto* rt = doc.section("rates");
  const auto* rx = doc.section("reactions");
  if (!sp || !rt || !rx) throw ConfigError("network needs [species], [rates] and [reactions] sections", 1, 1);
  for (const auto& e : sp->entries) {
    const double v = parse_real(e);
    if (v < 0 || v != std::floor(v)) throw ConfigError("initial count must be a nonnegative integer", e.line, e.column);
    net.species.push_back(e.key);
    net.initial.push_back(static_cast<Count>(v));
  }
  for (const auto& e : rt->entries) {
    const double v = parse_real(e);
    if (!(v > 0)) throw ConfigError("rate must be positive", e.line, e.column);
    net.rate_names.push_back(e.key);
    net.rates.push_back(v);
  }
  for (const auto& e : rx->entries) {
    const std::string_view v = e.value;
    const auto arrow = v.find("->");
    const auto at = v.find('@');
    if (arrow == std::string_view::npos || at == std::string_view::npos || at < arrow)
      throw ConfigError("expected 'reactants -> products @ rate'", e.line, e.column);
    const auto lhs = detail::parse_side(e, v.substr(0, arrow));
    const auto rhs = detail::parse_side(e, v.substr(arrow + 2, at - arrow - 2));
    const auto rate = std::string(detail::trim(v.substr(at + 1)));
    try {
      net.add_reaction(e.key, lhs, rhs, rate);
    } catch (const InputError& err) {
      throw ConfigError(err.what(), e.line, e.column);
    }
  }
  try {
    net.validate();
  } catch (const InputError& err) {
    throw ConfigError(err.what(), rx->line, 1);
  }
  return net;
}

}  // namespace corrmap
