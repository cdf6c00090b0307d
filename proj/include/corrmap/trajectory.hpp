#pragma once

#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "corrmap/error.hpp"

namespace corrmap {

/// Time-indexed record of a simulation, shared by the ODE and CTMC
/// back-ends. States are stored row-major, one row per time point.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<std::string> species) : species_(std::move(species)) {}

  void push(double t, std::span<const double> state) {
    if (state.size() != species_.size()) throw InputError("trajectory state has wrong width");
    if (!times_.empty() && !(t > times_.back()))
      throw InputError("trajectory times must be strictly increasing");
    times_.push_back(t);
    data_.insert(data_.end(), state.begin(), state.end());
  }

  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }
  std::size_t width() const { return species_.size(); }
  const std::vector<std::string>& species() const { return species_; }
  const std::vector<double>& times() const { return times_; }

  std::span<const double> state(std::size_t i) const {
    return {data_.data() + i * width(), width()};
  }
  double value(std::size_t i, std::size_t species) const { return data_[i * width() + species]; }

  std::size_t species_index(const std::string& name) const {
    for (std::size_t s = 0; s < species_.size(); ++s)
      if (species_[s] == name) return s;
    throw InputError("unknown observable '" + name + "'");
  }

  /// Column of one species over time.
  std::vector<double> series(std::size_t species) const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = value(i, species);
    return out;
  }

 private:
  std::vector<std::string> species_;
  std::vector<double> times_;
  std::vector<double> data_;
};

/// Shortest round-trip text for a double; fixed so outputs are byte-stable.
inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// CSV with columns t, then species in declaration order. Each entry of
/// `comments` becomes a leading "# ..." line.
inline void write_csv(std::ostream& os, const Trajectory& tr, const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << '\n';
  os << 't';
  for (const auto& s : tr.species()) os << ',' << s;
  os << '\n';
  for (std::size_t i = 0; i < tr.size(); ++i) {
    os << format_number(tr.times()[i]);
    for (double v : tr.state(i)) os << ',' << format_number(v);
    os << '\n';
  }
}

}  // namespace corrmap
