#pragma once

// Experiment files and their outputs.
//
//   [experiment]  name, seed, output_dir
//   [models]      detailed = mm-full | ptn-full | network:<file>, reduced = ...
//   [parameters]  fixed values, applied to every model that has the name
//   [detailed]    fixed values for the detailed model only
//   [reduced]     fixed values for the reduced model only
//   [shared]      theta_m priors, e.g. E0 = (0, 100]
//   [free]        theta_f priors, e.g. alpha = [0.1, 100] or delta_rna = 0.01
//   [design]      points, replicates, sampling = grid | random, runs,
//                 max_events (per stochastic run)
//   [statistic]   type = mean_at | long_run_mean | eventually_above, observable,
//                 time, burn_in, horizon, threshold, window = [0, 100]
//   [fit]         schemes = fixed:0.2, pointwise, log_transform, alpha,
//                 grid_points, epsilon_points

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "corrmap/config.hpp"
#include "corrmap/pipeline.hpp"

namespace corrmap {

struct BuiltinModel {
  std::string id;
  std::string description;
  std::string source;
};

inline const std::vector<BuiltinModel>& builtin_models() {
  static const std::vector<BuiltinModel> list{
      {"mm-full", "enzyme kinetics E + S <-> ES -> E + P, mass-action ODE",
       "enzyme case study, detailed model; defaults k1=2, k-1=1, k2=1.5, E0=1, S0=60"},
      {"mm-reduced", "Michaelis-Menten rate law under the quasi-steady-state assumption",
       "enzyme case study, reduced model; same constants, V_M and K_MM derived from them"},
      {"ptn-full", "telegraph gene with transcription and translation, reaction network",
       "gene expression case study, detailed network; k_on=k_off=0.01, delta_rna=0.01, delta_p=0.001"},
      {"ptn-reduced", "telegraph gene with direct translation, reaction network",
       "gene expression case study, reduced network without the mRNA species"},
  };
  return list;
}

struct BuiltinStatistic {
  std::string id;
  StatisticSpec spec;
  std::string source;
};

inline const std::vector<BuiltinStatistic>& builtin_statistics() {
  static const std::vector<BuiltinStatistic> list{
      {"mm-product", MeanAt{"P", 1.5}, "enzyme case study: product at the transient time t* = 1.5"},
      {"ptn-s1", LongRunMean{"P", 1000, 10000},
       "gene expression case study, first statistic: long-run protein mean (50 beta x 50 alpha design)"},
      {"ptn-s2", EventuallyAbove{"P", 200, 0, 100},
       "gene expression case study, second statistic: protein burst above 200 within [0, 100], run from G_in0=1"},
  };
  return list;
}

inline std::optional<Model> make_builtin(const std::string& id) {
  if (id == "mm-full") return Model(mm_full());
  if (id == "mm-reduced") return Model(mm_reduced());
  if (id == "ptn-full") return Model(ptn_full());
  if (id == "ptn-reduced") return Model(ptn_reduced());
  return std::nullopt;
}

inline std::string list_builtins() {
  std::ostringstream os;
  os << "models:\n";
  for (const auto& m : builtin_models())
    os << "  " << std::left << std::setw(12) << m.id << m.description << "\n" << std::setw(14) << "" << "source: "
       << m.source << "\n";
  os << "statistics:\n";
  for (const auto& s : builtin_statistics())
    os << "  " << std::left << std::setw(12) << s.id << describe(s.spec) << "\n" << std::setw(14) << ""
       << "source: " << s.source << "\n";
  return os.str();
}

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::string detailed_ref, reduced_ref;
  Model detailed = OdeSystem{};
  Model reduced = OdeSystem{};
  SamplingDesign design;
  std::optional<std::uint64_t> max_events;
  StatisticSpec statistic = MeanAt{};
  std::vector<VarianceScheme> schemes;
  bool log_transform = false;
  double alpha = 0.95;
  std::size_t grid_points = 200;
  std::size_t epsilon_points = 200;
  std::string hash;  // FNV-1a of the file text
};

/// 64-bit FNV-1a, hex.
inline std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

namespace detail {

inline const ConfigEntry& require(const ConfigSection* s, std::string_view section, std::string_view key) {
  if (s)
    if (const auto* e = s->find(key)) return *e;
  throw ConfigError("missing key '" + std::string(key) + "' in [" + std::string(section) + "]", s ? s->line : 0, 1);
}

inline void reject_unknown(const ConfigSection* s, std::initializer_list<std::string_view> allowed) {
  if (!s) return;
  for (const auto& e : s->entries)
    if (std::find(allowed.begin(), allowed.end(), e.key) == allowed.end())
      throw ConfigError("unknown key '" + e.key + "' in [" + s->name + "]", e.line, 1);
}

inline std::size_t parse_count(const ConfigEntry& e, std::int64_t min) {
  const auto v = parse_integer(e);
  if (v < min) throw ConfigError(e.key + " must be at least " + std::to_string(min), e.line, e.column);
  return static_cast<std::size_t>(v);
}

/// "(0, 100]", "[0.1, 100]" or a single number for a point mass.
inline ParameterPrior parse_prior(const ConfigEntry& e) {
  const std::string& v = e.value;
  if (v.empty()) throw ConfigError("missing prior for '" + e.key + "'", e.line, e.column);
  ParameterPrior p{e.key};
  if (v.front() != '(' && v.front() != '[') {
    p.lo = p.hi = parse_real(e);
    return p;
  }
  const char close = v.back();
  const auto comma = v.find(',');
  if ((close != ')' && close != ']') || comma == std::string::npos)
    throw ConfigError("expected an interval like (0, 100] or a number", e.line, e.column);
  p.open_lo = v.front() == '(';
  p.open_hi = close == ')';
  const std::string_view sv(v);
  p.lo = parse_real(e, sv.substr(1, comma - 1));
  p.hi = parse_real(e, sv.substr(comma + 1, v.size() - comma - 2));
  if (!(p.hi > p.lo)) throw ConfigError("interval upper bound must exceed the lower bound", e.line, e.column);
  return p;
}

inline VarianceScheme parse_scheme(const ConfigEntry& e, std::string_view text) {
  text = trim(text);
  const std::size_t col = e.column + static_cast<std::size_t>(text.data() - e.value.data());
  if (text == "learned") return LearnedVariance{};
  if (text == "pooled") return EmpiricalPooled{};
  if (text == "pointwise") return PointWise{};
  if (text == "nested") return Nested{};
  if (text.starts_with("nested:")) {
    const double v = parse_real(e, text.substr(7));
    if (!(v > 0)) throw ConfigError("nested inner noise must be positive", e.line, col);
    return Nested{v};
  }
  if (text.starts_with("fixed:")) {
    const double v = parse_real(e, text.substr(6));
    if (!(v > 0)) throw ConfigError("fixed variance must be positive", e.line, col);
    return FixedVariance{v};
  }
  throw ConfigError("unknown variance scheme '" + std::string(text) +
                        "' (fixed:<v>, learned, pooled, pointwise, nested)",
                    e.line, col);
}

inline Model load_model(const ConfigEntry& e, const std::filesystem::path& base) {
  if (auto m = make_builtin(e.value)) return *m;
  if (e.value.starts_with("network:")) {
    const auto path = base / e.value.substr(8);
    return network_from_config(ConfigDocument::load(path.string()));
  }
  throw ConfigError("unknown model '" + e.value + "' (built-ins: mm-full, mm-reduced, ptn-full, ptn-reduced, or network:<file>)",
                    e.line, e.column);
}

inline void apply_fixed(Model& m, const ConfigEntry& e) {
  try {
    set_parameter(m, e.key, parse_real(e));
  } catch (const InputError& err) {
    throw ConfigError(err.what(), e.line, e.column);
  }
}

inline StatisticSpec parse_statistic(const ConfigSection* s) {
  reject_unknown(s, {"type", "observable", "time", "burn_in", "horizon", "threshold", "window"});
  const auto& type = require(s, "statistic", "type");
  auto real = [&](std::string_view key, double fallback) {
    const auto* e = s->find(key);
    return e ? parse_real(*e) : fallback;
  };
  for (const auto& b : builtin_statistics())
    if (type.value == b.id) return b.spec;
  static constexpr std::string_view kTypes[] = {"mean_at", "long_run_mean", "eventually_above"};
  if (std::find(std::begin(kTypes), std::end(kTypes), type.value) == std::end(kTypes))
    throw ConfigError("unknown statistic type '" + type.value + "'", type.line, type.column);
  const std::string obs = require(s, "statistic", "observable").value;
  StatisticSpec spec;
  if (type.value == "mean_at") {
    spec = MeanAt{obs, parse_real(require(s, "statistic", "time"))};
  } else if (type.value == "long_run_mean") {
    spec = LongRunMean{obs, real("burn_in", 1000), real("horizon", 10000)};
  } else {
    const auto& w = require(s, "statistic", "window");
    const auto win = parse_prior(w);
    if (win.is_delta() || win.open_lo || win.open_hi) throw ConfigError("window must be a closed interval [lo, hi]", w.line, w.column);
    spec = EventuallyAbove{obs, parse_real(require(s, "statistic", "threshold")), win.lo, win.hi};
  }
  try {
    validate(spec);
  } catch (const InputError& err) {
    throw ConfigError(err.what(), type.line, type.column);
  }
  return spec;
}

}  // namespace detail

/// Parses an experiment. Network files are resolved relative to `base`.
inline ExperimentConfig parse_experiment(std::string_view text, const std::filesystem::path& base = ".") {
  using namespace detail;
  const auto doc = ConfigDocument::parse(text);
  for (const auto& s : doc.sections()) {
    static const std::vector<std::string> known{"",       "experiment", "models", "parameters", "detailed", "reduced",
                                                "shared", "free",       "design", "statistic",  "fit"};
    if (std::find(known.begin(), known.end(), s.name) == known.end())
      throw ConfigError("unknown section [" + s.name + "]", s.line, 1);
    if (s.name.empty() && !s.entries.empty())
      throw ConfigError("key outside of any section", s.entries.front().line, 1);
  }
  ExperimentConfig cfg;
  cfg.hash = fnv1a_hex(text);

  if (const auto* s = doc.section("experiment")) {
    reject_unknown(s, {"name", "seed", "output_dir"});
    if (const auto* e = s->find("name")) cfg.name = e->value;
    if (const auto* e = s->find("seed")) cfg.seed = parse_count(*e, 0);
    if (const auto* e = s->find("output_dir")) cfg.output_dir = e->value;
  }

  const auto* models = doc.section("models");
  reject_unknown(models, {"detailed", "reduced"});
  const auto& det = require(models, "models", "detailed");
  const auto& red = require(models, "models", "reduced");
  cfg.detailed_ref = det.value;
  cfg.reduced_ref = red.value;
  cfg.detailed = load_model(det, base);
  cfg.reduced = load_model(red, base);

  if (const auto* s = doc.section("parameters")) {
    for (const auto& e : s->entries) {
      const bool in_d = has_parameter(cfg.detailed, e.key), in_r = has_parameter(cfg.reduced, e.key);
      if (!in_d && !in_r) throw ConfigError("no model has parameter '" + e.key + "'", e.line, 1);
      if (in_d) apply_fixed(cfg.detailed, e);
      if (in_r) apply_fixed(cfg.reduced, e);
    }
  }
  if (const auto* s = doc.section("detailed"))
    for (const auto& e : s->entries) apply_fixed(cfg.detailed, e);
  if (const auto* s = doc.section("reduced"))
    for (const auto& e : s->entries) apply_fixed(cfg.reduced, e);

  const auto* shared = doc.section("shared");
  if (!shared || shared->entries.empty()) throw ConfigError("[shared] needs at least one parameter", shared ? shared->line : 0, 1);
  for (const auto& e : shared->entries) {
    if (!has_parameter(cfg.detailed, e.key) || !has_parameter(cfg.reduced, e.key))
      throw ConfigError("shared parameter '" + e.key + "' must exist in both models", e.line, 1);
    cfg.design.shared.push_back(parse_prior(e));
  }
  if (const auto* s = doc.section("free")) {
    for (const auto& e : s->entries) {
      if (!has_parameter(cfg.detailed, e.key))
        throw ConfigError("free parameter '" + e.key + "' is not in the detailed model", e.line, 1);
      cfg.design.free.push_back(parse_prior(e));
    }
  }

  if (const auto* s = doc.section("design")) {
    reject_unknown(s, {"points", "replicates", "sampling", "runs", "max_events"});
    if (const auto* e = s->find("points")) cfg.design.points = parse_count(*e, 2);
    if (const auto* e = s->find("replicates")) cfg.design.replicates = parse_count(*e, 1);
    if (const auto* e = s->find("runs")) cfg.design.runs = parse_count(*e, 1);
    if (const auto* e = s->find("max_events")) cfg.max_events = parse_count(*e, 1);
    if (const auto* e = s->find("sampling")) {
      if (e->value == "grid") cfg.design.sampling = Sampling::Grid;
      else if (e->value == "random") cfg.design.sampling = Sampling::UniformRandom;
      else throw ConfigError("sampling must be 'grid' or 'random'", e->line, e->column);
    }
  }
  if (cfg.design.shared.size() > 1 && !(doc.section("design") && doc.section("design")->find("sampling")))
    cfg.design.sampling = Sampling::UniformRandom;
  if (cfg.design.sampling == Sampling::Grid && cfg.design.shared.size() > 1)
    throw ConfigError("grid sampling needs exactly one shared parameter", doc.section("design")->find("sampling")->line,
                      doc.section("design")->find("sampling")->column);

  cfg.statistic = parse_statistic(doc.section("statistic"));
  try {
    observable_index(cfg.detailed, observable_of(cfg.statistic));
    observable_index(cfg.reduced, observable_of(cfg.statistic));
  } catch (const InputError& err) {
    const auto* st = doc.section("statistic");
    const auto* e = st->find("observable") ? st->find("observable") : st->find("type");
    throw ConfigError(err.what(), e->line, e->column);
  }

  const auto* fit = doc.section("fit");
  reject_unknown(fit, {"schemes", "log_transform", "alpha", "grid_points", "epsilon_points"});
  const auto& schemes = require(fit, "fit", "schemes");
  {
    std::string_view v = schemes.value;
    std::size_t start = 0;
    while (start <= v.size()) {
      const auto comma = std::min(v.find(',', start), v.size());
      const auto scheme = parse_scheme(schemes, v.substr(start, comma - start));
      if (needs_replicates(scheme) && cfg.design.effective_replicates() < 2)
        throw ConfigError(scheme_name(scheme) + " scheme needs replicates >= 2 and a non-degenerate [free] prior",
                          schemes.line, schemes.column);
      cfg.schemes.push_back(scheme);
      start = comma + 1;
    }
  }
  if (const auto* e = fit->find("log_transform")) cfg.log_transform = parse_bool(*e);
  if (const auto* e = fit->find("alpha")) {
    cfg.alpha = parse_real(*e);
    if (!(cfg.alpha > 0 && cfg.alpha < 1)) throw ConfigError("alpha must lie in (0, 1)", e->line, e->column);
  }
  if (const auto* e = fit->find("grid_points")) cfg.grid_points = parse_count(*e, 2);
  if (const auto* e = fit->find("epsilon_points")) cfg.epsilon_points = parse_count(*e, 10);

  try {
    cfg.design.validate();
  } catch (const InputError& err) {
    throw ConfigError(err.what(), shared->line, 1);
  }
  return cfg;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file", 0, 0, path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_experiment(ss.str(), std::filesystem::path(path).parent_path());
  } catch (const ConfigError& e) {
    throw e.file().empty() ? e.in_file(path) : e;
  }
}

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  unsigned threads = 1;
  bool coarse_tolerances = false;
};

/// Dense evaluation grid over the domain: the design rule for one shared
/// parameter, seeded uniform points otherwise.
inline std::vector<ParamPoint> prediction_grid(const std::vector<ParameterPrior>& domain, std::size_t n,
                                               std::uint64_t seed) {
  if (domain.size() == 1) return design_points({.shared = domain, .points = n});
  return sample_domain(domain, n, seed);
}

namespace detail {

inline std::string header(const ExperimentConfig& c) {
  return "config_hash=" + c.hash + " seed=" + std::to_string(c.seed);
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << content;
}

inline nlohmann::json to_json(const StatisticSpec& s) {
  return std::visit(
      [](const auto& v) -> nlohmann::json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, MeanAt>)
          return {{"type", "mean_at"}, {"observable", v.observable}, {"time", v.time}};
        else if constexpr (std::is_same_v<T, LongRunMean>)
          return {{"type", "long_run_mean"}, {"observable", v.observable}, {"burn_in", v.burn_in}, {"horizon", v.horizon}};
        else
          return {{"type", "eventually_above"}, {"observable", v.observable}, {"threshold", v.threshold},
                  {"window", {v.t_lo, v.t_hi}}};
      },
      s);
}

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct MapRow {
  bool train;
  ParamPoint x;
  std::optional<double> target;
  CorrectionPrediction c;
  double m_value;
};

/// Posterior mean with its band against the first shared parameter, plus
/// the training targets.
inline std::string render_svg(const ExperimentConfig& cfg, const std::string& scheme, const std::vector<MapRow>& rows) {
  const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  std::vector<const MapRow*> grid, train;
  for (const auto& r : rows) (r.train ? train : grid).push_back(&r);
  std::sort(grid.begin(), grid.end(), [](auto* a, auto* b) { return a->x[0] < b->x[0]; });
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& r : rows) {
    x0 = std::min(x0, r.x[0]);
    x1 = std::max(x1, r.x[0]);
    y0 = std::min({y0, r.c.lo, r.target.value_or(r.c.lo)});
    y1 = std::max({y1, r.c.hi, r.target.value_or(r.c.hi)});
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (W - L - R) * (x - x0) / (x1 - x0); };
  auto py = [&](double y) { return H - B - (H - T - B) * (y - y0) / (y1 - y0); };
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- " << header(cfg) << " -->\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<path d=\"";
  for (std::size_t i = 0; i < grid.size(); ++i)
    os << (i ? " L" : "M") << format_number(px(grid[i]->x[0])) << ',' << format_number(py(grid[i]->c.hi));
  for (std::size_t i = grid.size(); i-- > 0;)
    os << " L" << format_number(px(grid[i]->x[0])) << ',' << format_number(py(grid[i]->c.lo));
  os << " Z\" fill=\"#9ecae1\" fill-opacity=\"0.6\" stroke=\"none\"/>\n<polyline fill=\"none\" stroke=\"#08519c\" "
        "stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < grid.size(); ++i)
    os << (i ? " " : "") << format_number(px(grid[i]->x[0])) << ',' << format_number(py(grid[i]->c.mean));
  os << "\"/>\n";
  for (const auto* r : train)
    if (r->target)
      os << "<circle cx=\"" << format_number(px(r->x[0])) << "\" cy=\"" << format_number(py(*r->target))
         << "\" r=\"3\" fill=\"#d62728\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4, yv = y0 + (y1 - y0) * t / 4;
    os << "<text x=\"" << format_number(px(xv)) << "\" y=\"" << H - B + 18 << "\" font-size=\"11\" text-anchor=\"middle\">"
       << format_number(xv) << "</text>\n<text x=\"" << L - 6 << "\" y=\"" << format_number(py(yv) + 4)
       << "\" font-size=\"11\" text-anchor=\"end\">" << format_number(yv) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" font-size=\"13\" text-anchor=\"middle\">"
     << svg_escape(cfg.design.shared.front().name) << "</text>\n<text x=\"" << L << "\" y=\"24\" font-size=\"13\">"
     << svg_escape(cfg.name + ": correction of " + describe(cfg.statistic) + ", " + scheme + ", " +
                   format_number(100 * cfg.alpha) + "% band")
     << "</text>\n</svg>\n";
  return os.str();
}

}  // namespace detail

struct RunSummary {
  std::filesystem::path output_dir;
  std::vector<std::string> files;
};

/// Runs the experiment and writes training.csv, statistics.json,
/// map_<scheme>.csv, plot_<scheme>.svg and epsilon.json.
inline RunSummary run_experiment(ExperimentConfig cfg, const RunOptions& opt = {}) {
  using detail::header;
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.output_dir) cfg.output_dir = *opt.output_dir;
  cfg.design.seed = cfg.seed;
  EvalOptions eval{.statistic = {.tolerances = opt.coarse_tolerances ? OdeTolerances::coarse() : OdeTolerances{}},
                   .threads = opt.threads};
  if (cfg.max_events) eval.statistic.max_events = *cfg.max_events;

  const auto data = build_training_set(cfg.detailed, cfg.reduced, cfg.statistic, cfg.design, eval);

  // Reduced model on the prediction grid, for corrected values.
  const auto grid = prediction_grid(cfg.design.shared, cfg.grid_points, derive_seed(cfg.seed, {0x67726964}));
  std::vector<double> grid_m(grid.size());
  parallel_for(grid.size(), opt.threads, [&](std::size_t g) {
    try {
      Model m = cfg.reduced;
      for (std::size_t s = 0; s < cfg.design.shared.size(); ++s)
        set_parameter(m, cfg.design.shared[s].name, grid[g][static_cast<Eigen::Index>(s)]);
      grid_m[g] = eval_statistic(m, cfg.statistic, cfg.design.runs, derive_seed(cfg.seed, {0x67726964, g}), eval.statistic)
                      .value;
    } catch (const std::exception& e) {
      throw SimulationError(std::string("reduced model on prediction grid: ") + e.what(), g, 0);
    }
  });

  std::vector<CorrectionMap> maps;
  for (std::size_t s = 0; s < cfg.schemes.size(); ++s)
    maps.push_back(fit_correction(data, cfg.schemes[s],
                                  {.log_transform = cfg.log_transform, .seed = derive_seed(cfg.seed, {0x666974, s}),
                                   .threads = opt.threads}));

  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  RunSummary summary{dir, {}};
  auto emit = [&](const std::string& name, const std::string& content) {
    detail::write_file(dir / name, content);
    summary.files.push_back(name);
  };

  const auto& names = cfg.design.shared;
  const auto& Y = *data.training.replicates;
  {
    std::ostringstream os;
    os << "# " << header(cfg) << "\n# experiment=" << cfg.name << " detailed=" << cfg.detailed_ref
       << " reduced=" << cfg.reduced_ref << "\n# statistic=" << describe(cfg.statistic) << " runs=" << cfg.design.runs
       << "\n";
    for (const auto& p : names) os << p.name << ',';
    os << "reduced,mean";
    for (Eigen::Index j = 0; j < Y.cols(); ++j) os << ",y" << j + 1;
    os << '\n';
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      for (Eigen::Index d = 0; d < data.training.inputs[i].size(); ++d) os << format_number(data.training.inputs[i][d]) << ',';
      os << format_number(data.reduced[i]) << ',' << format_number(data.training.targets[i]);
      for (Eigen::Index j = 0; j < Y.cols(); ++j) os << ',' << format_number(Y(i, j));
      os << '\n';
    }
    emit("training.csv", os.str());
  }
  {
    nlohmann::json recs = nlohmann::json::array();
    const std::size_t k = static_cast<std::size_t>(Y.cols());
    for (std::size_t i = 0; i < data.reduced_estimates.size(); ++i) {
      const auto& r = data.reduced_estimates[i];
      recs.push_back({{"model", "reduced"}, {"i", i}, {"spec", describe(cfg.statistic)}, {"value", r.value},
                      {"se", r.standard_error}, {"n", r.n_samples}});
      for (std::size_t j = 0; j < k; ++j) {
        const auto& d = data.detailed_estimates[i * k + j];
        recs.push_back({{"model", "detailed"}, {"i", i}, {"j", j}, {"free", data.free_values[i * k + j]},
                        {"spec", describe(cfg.statistic)}, {"value", d.value}, {"se", d.standard_error},
                        {"n", d.n_samples}});
      }
    }
    nlohmann::json doc{{"config_hash", cfg.hash}, {"seed", cfg.seed}, {"statistic", detail::to_json(cfg.statistic)},
                       {"records", recs}};
    emit("statistics.json", doc.dump(1) + "\n");
  }

  nlohmann::json eps = nlohmann::json::array();
  for (std::size_t s = 0; s < maps.size(); ++s) {
    const auto& cm = maps[s];
    const std::string sname = scheme_name(cfg.schemes[s]);
    std::vector<detail::MapRow> rows;
    for (Eigen::Index i = 0; i < data.training.size(); ++i)
      rows.push_back({true, data.training.inputs[i], data.training.targets[i], cm.predict(data.training.inputs[i], cfg.alpha),
                      data.reduced[i]});
    for (std::size_t g = 0; g < grid.size(); ++g)
      rows.push_back({false, grid[g], std::nullopt, cm.predict(grid[g], cfg.alpha), grid_m[g]});

    std::ostringstream os;
    os << "# " << header(cfg) << "\n# scheme=" << sname << " transform=" << cm.transform().name()
       << " alpha=" << format_number(cfg.alpha) << " statistic=" << describe(cfg.statistic) << "\nkind";
    for (const auto& p : names) os << ',' << p.name;
    os << ",target,mean,sd,lo,hi,reduced,corrected,corrected_lo,corrected_hi\n";
    for (const auto& r : rows) {
      os << (r.train ? "train" : "grid");
      for (Eigen::Index d = 0; d < r.x.size(); ++d) os << ',' << format_number(r.x[d]);
      os << ',' << (r.target ? format_number(*r.target) : "") << ',' << format_number(r.c.mean) << ','
         << format_number(r.c.sd) << ',' << format_number(r.c.lo) << ',' << format_number(r.c.hi) << ','
         << format_number(r.m_value) << ',' << format_number(r.m_value + r.c.mean) << ','
         << format_number(r.m_value + r.c.lo) << ',' << format_number(r.m_value + r.c.hi) << '\n';
    }
    emit("map_" + sname + ".csv", os.str());
    emit("plot_" + sname + ".svg", detail::render_svg(cfg, sname, rows));

    const auto e = estimate_epsilon(cm, cfg.alpha, cfg.epsilon_points, derive_seed(cfg.seed, {0x657073}));
    const auto& gp = cm.posterior();
    nlohmann::json noise;
    if (gp.noise().size() && (gp.noise().array() == gp.noise()[0]).all()) noise = gp.noise()[0];
    else noise = std::vector<double>(gp.noise().data(), gp.noise().data() + gp.noise().size());
    eps.push_back({{"scheme", sname},
                   {"epsilon", e.epsilon},
                   {"alpha", e.alpha},
                   {"n_points", e.n_points},
                   {"transform", cm.transform().name()},
                   {"signal_variance", gp.params().signal_variance},
                   {"lengthscale", std::vector<double>(gp.params().lengthscale.data(),
                                                       gp.params().lengthscale.data() + gp.params().lengthscale.size())},
                   {"noise", noise},
                   {"log_likelihood", cm.log_likelihood()}});
  }
  nlohmann::json report{{"config_hash", cfg.hash},
                        {"seed", cfg.seed},
                        {"experiment", cfg.name},
                        {"statistic", detail::to_json(cfg.statistic)},
                        {"design", {{"points", cfg.design.points},
                                    {"replicates", cfg.design.effective_replicates()},
                                    {"runs", cfg.design.runs}}},
                        {"maps", eps}};
  emit("epsilon.json", report.dump(1) + "\n");
  return summary;
}

}  // namespace corrmap
