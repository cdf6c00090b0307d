#pragma once

// A model is either a deterministic ODE system or a reaction network
// simulated stochastically. Both expose species and named parameters.

#include <string>
#include <variant>
#include <vector>

#include "corrmap/ctmc.hpp"
#include "corrmap/ode.hpp"

namespace corrmap {

using Model = std::variant<OdeSystem, ReactionNetwork>;

inline const std::string& model_name(const Model& m) {
  return std::visit([](const auto& x) -> const std::string& { return x.name; }, m);
}

inline const std::vector<std::string>& model_species(const Model& m) {
  return std::visit([](const auto& x) -> const std::vector<std::string>& { return x.species; }, m);
}

inline bool is_stochastic(const Model& m) { return std::holds_alternative<ReactionNetwork>(m); }

inline bool has_parameter(const Model& m, const std::string& p) {
  return std::visit([&](const auto& x) { return x.has_parameter(p); }, m);
}

inline void set_parameter(Model& m, const std::string& p, double value) {
  std::visit([&](auto& x) { x.set_parameter(p, value); }, m);
}

inline double get_parameter(const Model& m, const std::string& p) {
  return std::visit([&](const auto& x) { return static_cast<double>(x.parameter(p)); }, m);
}

inline std::size_t observable_index(const Model& m, const std::string& observable) {
  const auto& sp = model_species(m);
  for (std::size_t s = 0; s < sp.size(); ++s)
    if (sp[s] == observable) return s;
  throw InputError("model '" + model_name(m) + "' has no observable '" + observable + "'");
}

}  // namespace corrmap
