#pragma once

// Experiment orchestration behind the gdim command line: run configuration,
// one runner per experiment, staged result files and spectrum comparison.

#include <boost/version.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "gdim/dei.hpp"
#include "gdim/dynsys.hpp"
#include "gdim/error.hpp"
#include "gdim/evt.hpp"
#include "gdim/ingest.hpp"
#include "gdim/io.hpp"
#include "gdim/largedev.hpp"
#include "gdim/recurrence.hpp"
#include "gdim/rng.hpp"
#include "gdim/scaling.hpp"

namespace gdim {

inline constexpr std::string_view kVersion = "0.1.0";

enum class Experiment { Gamma, Upsilon, ReturnTimes, Tail, BlockMax, LocalDim, Dei, RateFn, HittingLdp, IngestSpectrum };

inline constexpr std::array kExperiments = {Experiment::Gamma,    Experiment::Upsilon, Experiment::ReturnTimes,
                                            Experiment::Tail,     Experiment::BlockMax, Experiment::LocalDim,
                                            Experiment::Dei,      Experiment::RateFn,   Experiment::HittingLdp,
                                            Experiment::IngestSpectrum};

inline std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::Gamma: return "gamma";
    case Experiment::Upsilon: return "upsilon";
    case Experiment::ReturnTimes: return "return-times";
    case Experiment::Tail: return "tail";
    case Experiment::BlockMax: return "blockmax";
    case Experiment::LocalDim: return "localdim";
    case Experiment::Dei: return "dei";
    case Experiment::RateFn: return "ratefn";
    case Experiment::HittingLdp: return "hitting-ldp";
    case Experiment::IngestSpectrum: return "ingest-spectrum";
  }
  return "?";
}

inline std::optional<Experiment> experiment_from_string(std::string_view s) {
  for (auto e : kExperiments)
    if (to_string(e) == s) return e;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Configuration

struct ConfigKey {
  std::string_view name;
  std::string_view fallback;  // used when no experiment-specific default applies
  std::string_view help;
  bool hashed = true;         // false: does not change results
};

inline constexpr std::array<ConfigKey, 44> kConfigKeys = {{
    {"experiment", "", "experiment to run"},
    {"system", "arnold-cat", "dynamical system"},
    {"params", "", "comma-separated system parameters (empty: defaults)"},
    {"input", "", "series file for ingest-spectrum"},
    {"format", "csv", "series format: csv or raw-f64"},
    {"dim", "0", "state dimension of the series (0: infer, csv only)"},
    {"metric", "euclidean", "metric for ingested series"},
    {"seed", "1", "master seed"},
    {"threads", "0", "worker threads (0: all cores)", false},
    {"out", "results", "output directory", false},
    {"burn_in", "1000", "discarded transient steps"},
    {"len", "100000", "trajectory or series length"},
    {"targets", "2000", "target points for recurrence integrals"},
    {"H", "32", "hits per target for upsilon"},
    {"q", "2,3,4", "q values: list and/or ranges a..b[:step]"},
    {"r_max", "0.1", "largest radius"},
    {"r_min", "0.001", "smallest radius"},
    {"radii", "12", "number of radii"},
    {"estimator", "auto", "slope estimator: auto, least-squares, extrapolated, hitting"},
    {"jackknife", "0", "jackknife error bars (0 or 1)"},
    {"fit_r_lo", "", "lower end of the radius fit window"},
    {"fit_r_hi", "", "upper end of the radius fit window"},
    {"centers", "0", "center points"},
    {"replicas", "4", "independent replicas"},
    {"u_min", "0", "first threshold u"},
    {"u_max", "12", "last threshold u"},
    {"u_count", "49", "number of thresholds"},
    {"fit_u_lo", "", "lower end of the u fit window"},
    {"fit_u_hi", "", "upper end of the u fit window"},
    {"min_count", "1", "minimum tail count per fit point"},
    {"block_len", "10000", "block length for block maxima"},
    {"blocks", "200", "number of blocks"},
    {"quantile", "0.98", "threshold quantile"},
    {"p_list", "0.95,0.96,0.97,0.98,0.99", "quantiles for ingest-spectrum"},
    {"stride", "1", "every stride-th series point is a center"},
    {"exclusion", "0", "temporal neighbours left out around a center"},
    {"s_min", "0.9", "first s (hitting-ldp: offset from D1)"},
    {"s_max", "2.3", "last s"},
    {"s_step", "0.02", "s spacing"},
    {"r_levels", "4..8", "radii 2^-k for the empirical rate function"},
    {"r", "0.00390625", "ball radius for hitting-ldp"},
    {"pairs", "100000", "(z, x) pairs for hitting-ldp"},
    {"d1", "", "information dimension (empty: from the analytic spectrum)"},
    {"scan_len", "4194304", "longest hitting-time scan"},
}};

namespace detail {

inline std::optional<std::string_view> experiment_default(Experiment e, std::string_view key) {
  using E = Experiment;
  struct Row {
    E e;
    std::string_view key, value;
  };
  static constexpr Row rows[] = {
      {E::Upsilon, "len", "1000000"},     {E::Upsilon, "r_min", "0.01"},       {E::ReturnTimes, "r_min", "0.01"},
      {E::ReturnTimes, "len", "200000"},   {E::LocalDim, "len", "200000"},      {E::LocalDim, "centers", "2000"},
      {E::Dei, "len", "1000000"},          {E::Dei, "q", "2..6"},               {E::Dei, "replicas", "20"},
      {E::Dei, "quantile", "0.997"},       {E::Tail, "len", "1000000"},         {E::Tail, "min_count", "1000"},
      {E::RateFn, "len", "1000000"},       {E::RateFn, "centers", "10000"},     {E::RateFn, "min_count", "10"},
      {E::RateFn, "system", "sierpinski"}, {E::HittingLdp, "system", "sierpinski"},
      {E::HittingLdp, "s_min", "-0.5"},    {E::HittingLdp, "s_max", "1"},       {E::HittingLdp, "s_step", "0.05"},
  };
  for (const auto& r : rows)
    if (r.e == e && r.key == key) return r.value;
  return std::nullopt;
}

inline const ConfigKey* find_key(std::string_view name) {
  for (const auto& k : kConfigKeys)
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace detail

/// Explicit settings by key; everything else resolves to defaults. The
/// experiment key picks experiment-specific defaults.
class RunConfig {
 public:
  void set(std::string_view key, std::string_view value) {
    if (!detail::find_key(key)) throw ValidationError("unknown config key '" + std::string(key) + "'");
    values_[std::string(key)] = std::string(io::trim(value));
  }

  bool has(std::string_view key) const { return values_.count(std::string(key)) > 0; }

  /// Later settings win.
  void merge(const RunConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string get(std::string_view key) const {
    const ConfigKey* k = detail::find_key(key);
    if (!k) throw ValidationError("unknown config key '" + std::string(key) + "'");
    if (auto it = values_.find(std::string(key)); it != values_.end()) return it->second;
    if (key != "experiment") {
      if (auto e = experiment_from_string(get("experiment")))
        if (auto d = detail::experiment_default(*e, key)) return std::string(*d);
    }
    return std::string(k->fallback);
  }

  /// Every key with its effective value, one key=value line each, under a
  /// [run] section header.
  std::string serialize(bool hashed_only = false) const {
    std::string s = "[run]\n";
    for (const auto& k : kConfigKeys) {
      if (hashed_only && !k.hashed) continue;
      s += std::string(k.name) + "=" + get(k.name) + "\n";
    }
    return s;
  }

  /// Hash of the settings that affect results (threads and out excluded).
  std::string hash() const { return io::hex64(io::fnv1a(serialize(true))); }

 private:
  std::map<std::string, std::string> values_;
};

/// key=value lines; '#' comments, blank lines and [section] headers are
/// skipped.
inline RunConfig parse_config(std::istream& in) {
  RunConfig c;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = io::trim(line);
    if (t.empty() || t.front() == '#' || t.front() == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ValidationError("config line " + std::to_string(n) + ": expected key=value");
    try {
      c.set(io::trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(n) + ": " + e.what());
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  return parse_config(in);
}

/// Value list: comma-separated numbers and ranges a..b or a..b:step.
inline std::vector<double> parse_value_list(std::string_view key, std::string_view text) {
  auto bad = [&](const std::string& why) {
    return ValidationError(std::string(key) + ": " + why + " in '" + std::string(text) + "'");
  };
  std::vector<double> out;
  if (io::trim(text).empty()) throw bad("empty list");
  for (auto item : io::split(text, ',')) {
    item = io::trim(item);
    const auto dots = item.find("..");
    if (dots == std::string_view::npos) {
      auto v = io::parse_double(item);
      if (!v || !std::isfinite(*v)) throw bad("not a number: '" + std::string(item) + "'");
      out.push_back(*v);
      continue;
    }
    auto rest = item.substr(dots + 2);
    double step = 1.0;
    if (const auto colon = rest.find(':'); colon != std::string_view::npos) {
      auto s = io::parse_double(rest.substr(colon + 1));
      if (!s || !(*s > 0.0)) throw bad("range step must be > 0");
      step = *s;
      rest = rest.substr(0, colon);
    }
    auto a = io::parse_double(item.substr(0, dots));
    auto b = io::parse_double(rest);
    if (!a || !b || !std::isfinite(*a) || !std::isfinite(*b)) throw bad("malformed range '" + std::string(item) + "'");
    if (*b < *a) throw bad("range end below start");
    const auto n = static_cast<std::size_t>(std::floor((*b - *a) / step + 1e-9));
    for (std::size_t k = 0; k <= n; ++k) out.push_back(*a + static_cast<double>(k) * step);
  }
  return out;
}

/// Typed, validated view of a RunConfig.
struct Settings {
  Experiment experiment = Experiment::Gamma;
  std::optional<SystemSpec> spec;
  std::string input;
  SeriesFormat format = SeriesFormat::Csv;
  std::size_t dim = 0;
  Metric metric = Metric::Euclidean;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::string out;
  std::size_t burn_in = kDefaultBurnIn, len = 0, targets = 0, H = 0, radii = 0, centers = 0, replicas = 0,
              u_count = 0, min_count = 1, block_len = 0, blocks = 0, stride = 1, exclusion = 0, pairs = 0,
              scan_len = 0;
  std::vector<double> q, p_list, r_levels;
  double r_max = 0.1, r_min = 0.001, quantile = 0.98, u_min = 0.0, u_max = 0.0, s_min = 0.0, s_max = 0.0,
         s_step = 0.0, r = 0.0;
  std::string estimator;
  bool jackknife = false;
  std::optional<double> fit_r_lo, fit_r_hi, fit_u_lo, fit_u_hi, d1;

  RadiusGrid grid() const { return RadiusGrid::spanning(r_max, r_min, radii); }
  FitRange fit_range() const { return {fit_r_lo, fit_r_hi}; }
  std::vector<double> s_grid() const {
    std::vector<double> g;
    const auto n = static_cast<std::size_t>(std::floor((s_max - s_min) / s_step + 1e-9));
    for (std::size_t k = 0; k <= n; ++k) g.push_back(s_min + static_cast<double>(k) * s_step);
    return g;
  }
};

namespace detail {

inline std::optional<Metric> metric_from_string(std::string_view s) {
  for (auto m : {Metric::TorusEuclidean, Metric::Euclidean, Metric::Interval1D})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

}  // namespace detail

/// Parses and checks every key. Errors are ValidationError naming the key.
inline Settings resolve(const RunConfig& c) {
  auto fail = [](std::string_view key, const std::string& why, const std::string& got) {
    return ValidationError(std::string(key) + ": " + why + ", got '" + got + "'");
  };
  auto real = [&](std::string_view key) {
    const auto t = c.get(key);
    auto v = io::parse_double(t);
    if (!v || !std::isfinite(*v)) throw fail(key, "expected a finite number", t);
    return *v;
  };
  auto opt_real = [&](std::string_view key) -> std::optional<double> {
    if (c.get(key).empty()) return std::nullopt;
    return real(key);
  };
  auto count = [&](std::string_view key, std::int64_t min) {
    const auto t = c.get(key);
    auto v = io::parse_int(t);
    if (!v || *v < min) throw fail(key, "expected an integer >= " + std::to_string(min), t);
    return static_cast<std::size_t>(*v);
  };
  auto open_unit = [&](std::string_view key, double v) {
    if (!(v > 0.0 && v < 1.0)) throw fail(key, "expected a value in (0, 1)", io::fmt(v));
  };

  Settings s;
  const auto name = c.get("experiment");
  const auto e = experiment_from_string(name);
  if (!e) throw fail("experiment", "unknown experiment", name);
  s.experiment = *e;

  if (s.experiment != Experiment::IngestSpectrum) {
    const auto sys = c.get("system");
    const auto kind = system_kind_from_string(sys);
    if (!kind) throw fail("system", "unknown system", sys);
    SystemSpec spec = SystemSpec::standard(*kind);
    if (const auto p = c.get("params"); !p.empty()) spec.params = parse_value_list("params", p);
    try {
      spec.validate();
    } catch (const DomainError& err) {
      throw ValidationError(std::string("params: ") + err.what());
    }
    s.spec = spec;
  }

  s.input = c.get("input");
  if (s.experiment == Experiment::IngestSpectrum && s.input.empty())
    throw ValidationError("input: ingest-spectrum needs a series file");
  const auto fmt = series_format_from_string(c.get("format"));
  if (!fmt) throw fail("format", "expected csv or raw-f64", c.get("format"));
  s.format = *fmt;
  s.dim = count("dim", 0);
  const auto metric = detail::metric_from_string(c.get("metric"));
  if (!metric) throw fail("metric", "expected euclidean, torus-euclidean or interval", c.get("metric"));
  s.metric = *metric;

  {
    const auto t = c.get("seed");
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) throw fail("seed", "expected an unsigned integer", t);
    s.seed = v;
  }
  s.threads = static_cast<unsigned>(count("threads", 0));
  s.out = c.get("out");
  if (s.out.empty()) throw ValidationError("out: output directory must not be empty");

  s.burn_in = count("burn_in", 0);
  s.len = count("len", 1);
  s.targets = count("targets", 1);
  s.H = count("H", 1);
  s.radii = count("radii", 2);
  s.centers = count("centers", 0);
  s.replicas = count("replicas", 1);
  s.u_count = count("u_count", 3);
  s.min_count = count("min_count", 1);
  s.block_len = count("block_len", 1);
  s.blocks = count("blocks", 1);
  s.stride = count("stride", 1);
  s.exclusion = count("exclusion", 0);
  s.pairs = count("pairs", 1);
  s.scan_len = count("scan_len", 1);

  s.q = parse_value_list("q", c.get("q"));
  s.p_list = parse_value_list("p_list", c.get("p_list"));
  for (double p : s.p_list) open_unit("p_list", p);
  s.r_levels = parse_value_list("r_levels", c.get("r_levels"));
  for (double k : s.r_levels)
    if (!(k > 0.0)) throw fail("r_levels", "exponents must be > 0", io::fmt(k));

  s.r_max = real("r_max");
  s.r_min = real("r_min");
  if (!(s.r_max > s.r_min && s.r_min > 0.0)) throw fail("r_max", "need r_max > r_min > 0", c.get("r_max"));
  s.quantile = real("quantile");
  open_unit("quantile", s.quantile);
  s.u_min = real("u_min");
  s.u_max = real("u_max");
  if (!(s.u_max > s.u_min)) throw fail("u_max", "must exceed u_min", c.get("u_max"));
  s.s_min = real("s_min");
  s.s_max = real("s_max");
  s.s_step = real("s_step");
  if (!(s.s_step > 0.0)) throw fail("s_step", "must be > 0", c.get("s_step"));
  if (s.s_max < s.s_min) throw fail("s_max", "must not lie below s_min", c.get("s_max"));
  s.r = real("r");
  open_unit("r", s.r);

  s.estimator = c.get("estimator");
  if (s.estimator != "auto" && s.estimator != "least-squares" && s.estimator != "extrapolated" &&
      s.estimator != "hitting")
    throw fail("estimator", "expected auto, least-squares, extrapolated or hitting", s.estimator);
  const auto jk = c.get("jackknife");
  if (jk != "0" && jk != "1") throw fail("jackknife", "expected 0 or 1", jk);
  s.jackknife = jk == "1";
  s.fit_r_lo = opt_real("fit_r_lo");
  s.fit_r_hi = opt_real("fit_r_hi");
  s.fit_u_lo = opt_real("fit_u_lo");
  s.fit_u_hi = opt_real("fit_u_hi");
  s.d1 = opt_real("d1");

  const bool integer_q = s.experiment == Experiment::Tail || s.experiment == Experiment::BlockMax ||
                         s.experiment == Experiment::Dei;
  for (double q : s.q)
    if (integer_q && !(q >= 2.0 && q == std::floor(q))) throw fail("q", "this experiment needs integers >= 2", io::fmt(q));
  return s;
}

// ---------------------------------------------------------------------------
// Results

struct OutputFile {
  std::string name;
  std::string content;
};

struct SeedUse {
  std::string role;
  std::uint64_t value = 0;
};

struct RunResult {
  std::vector<OutputFile> files;
  std::vector<SeedUse> seeds;
  std::vector<std::string> notes;
};

namespace detail {

/// CSV text with the config hash as its first line.
class CsvFile {
 public:
  CsvFile(std::string name, const std::string& hash) : name_(std::move(name)) { out_ << "# config_hash=" << hash << '\n'; }
  std::ostream& stream() { return out_; }
  OutputFile done() { return {name_, out_.str()}; }

 private:
  std::string name_;
  std::ostringstream out_;
};

inline std::string q_tag(double q) { return io::fmt(q); }

inline SpectrumOptions spectrum_options(const Settings& s, SlopeEstimator fallback) {
  SpectrumOptions o;
  o.range = s.fit_range();
  o.jackknife = s.jackknife;
  if (s.estimator == "auto")
    o.estimator = fallback;
  else if (s.estimator == "least-squares")
    o.estimator = SlopeEstimator::LeastSquares;
  else if (s.estimator == "extrapolated")
    o.estimator = SlopeEstimator::Extrapolated;
  else
    o.estimator = SlopeEstimator::Hitting;
  return o;
}

inline void add_table_outputs(RunResult& res, const std::string& hash, const ScalingTable& table,
                              const DimensionSpectrum& spectrum) {
  CsvFile t("scaling_table.csv", hash);
  write_scaling_table_csv(t.stream(), table);
  res.files.push_back(t.done());
  CsvFile sp("spectrum.csv", hash);
  write_spectrum_csv(sp.stream(), spectrum);
  res.files.push_back(sp.done());
}

/// Analytic tau where the invariant measure is known exactly.
inline std::optional<TauFunction> analytic_tau(const SystemSpec& spec) {
  switch (spec.kind) {
    case SystemKind::SierpinskiIFS: return sierpinski_tau(spec.params[0], spec.params[1], spec.params[2]);
    case SystemKind::ArnoldCat: return uniform_tau(2.0);
    case SystemKind::ThreeXMod1: return uniform_tau(1.0);
    default: return std::nullopt;
  }
}

inline std::optional<double> analytic_d1(const SystemSpec& spec) {
  switch (spec.kind) {
    case SystemKind::SierpinskiIFS: {
      double h = 0.0;
      for (double p : spec.params) h -= p * std::log2(p);
      return h;
    }
    case SystemKind::ArnoldCat: return 2.0;
    case SystemKind::ThreeXMod1: return 1.0;
    default: return std::nullopt;
  }
}

inline RunResult run_recurrence(const Settings& s, const std::string& hash) {
  RunResult res;
  const auto& spec = *s.spec;
  const auto grid = s.grid();
  if (s.experiment == Experiment::ReturnTimes) {
    const std::uint64_t seed = derive_seed(s.seed, 0);
    res.seeds.push_back({"trajectory", seed});
    const auto traj = generate_trajectory(spec, seed, s.burn_in, s.len);
    const auto table = first_return_integral(traj, grid, s.q, s.centers, s.threads);
    const auto sp = spectrum_from_table(table, spectrum_options(s, SlopeEstimator::LeastSquares));
    add_table_outputs(res, hash, table, sp);
    return res;
  }
  const std::uint64_t ts = derive_seed(s.seed, 0), ss = derive_seed(s.seed, 1);
  res.seeds.push_back({"targets", ts});
  res.seeds.push_back({"sample", ss});
  const auto target = generate_trajectory(spec, ts, s.burn_in, s.targets);
  const auto sample = generate_trajectory(spec, ss, s.burn_in, s.len);
  if (s.experiment == Experiment::Gamma) {
    const auto table = correlation_integral(target, sample, grid, s.q, s.threads);
    auto opts = spectrum_options(s, SlopeEstimator::LeastSquares);
    if (std::find(s.q.begin(), s.q.end(), 1.0) != s.q.end())
      opts.d1 = information_dimension(log_measure_average(target, sample, grid, s.threads), opts.range);
    add_table_outputs(res, hash, table, spectrum_from_table(table, opts));
  } else {
    const auto table = hitting_integral(target, sample, grid, s.q, s.H, s.threads);
    add_table_outputs(res, hash, table, spectrum_from_table(table, spectrum_options(s, SlopeEstimator::Hitting)));
  }
  return res;
}

inline RunResult run_tail(const Settings& s, const std::string& hash) {
  RunResult res;
  res.seeds.push_back({"replicas (derive_seed(seed, b))", s.seed});
  const auto u = linear_u_grid(s.u_min, s.u_max, s.u_count);
  DimensionSpectrum sp;
  sp.method = SpectrumMethod::ExceedanceFit;
  double lo = kInf, hi = 0.0;
  for (double qd : s.q) {
    const auto q = static_cast<std::size_t>(qd);
    const auto tail = exceedance_tail(*s.spec, q, s.len, s.replicas, u, s.seed, s.burn_in, s.threads);
    CsvFile f("tail_q" + q_tag(qd) + ".csv", hash);
    write_tail_csv(f.stream(), tail);
    res.files.push_back(f.done());
    const auto fit = tau_from_tail(tail, URange{s.fit_u_lo, s.fit_u_hi}, s.min_count);
    sp.push(qd, fit.tau, fit.tau / (qd - 1.0), fit.stderr / (qd - 1.0));
    lo = std::min(lo, fit.r_lo);
    hi = std::max(hi, fit.r_hi);
  }
  sp.r_lo = lo;
  sp.r_hi = hi;
  flag_monotonicity(sp);
  CsvFile f("spectrum.csv", hash);
  write_spectrum_csv(f.stream(), sp);
  res.files.push_back(f.done());
  return res;
}

inline RunResult run_blockmax(const Settings& s, const std::string& hash) {
  RunResult res;
  std::vector<GevRow> rows;
  DimensionSpectrum sp;
  sp.method = SpectrumMethod::GevFit;
  for (std::size_t i = 0; i < s.q.size(); ++i) {
    const double q = s.q[i];
    const std::uint64_t seed = derive_seed(s.seed, i);
    res.seeds.push_back({"q=" + q_tag(q), seed});
    const auto maxima = product_block_maxima(*s.spec, static_cast<std::size_t>(q), s.block_len, s.blocks, seed, s.burn_in);
    GevRow row{q, s.block_len, fit_gev(maxima), {}};
    row.dim = dq_from_gev(row.fit, q, s.block_len);
    const double se_sigma = gev_stderr({row.fit.mu, row.fit.sigma, row.fit.xi}, maxima)[1];
    const double se = se_sigma / (row.fit.sigma * row.fit.sigma * (q - 1.0));
    sp.push(q, row.dim.dq * (q - 1.0), row.dim.dq, se);
    rows.push_back(row);
  }
  flag_monotonicity(sp);
  CsvFile g("gev.csv", hash);
  write_gev_csv(g.stream(), rows);
  res.files.push_back(g.done());
  CsvFile f("spectrum.csv", hash);
  write_spectrum_csv(f.stream(), sp);
  res.files.push_back(f.done());
  return res;
}

inline RunResult run_localdim(const Settings& s, const std::string& hash) {
  RunResult res;
  const std::uint64_t ts = derive_seed(s.seed, 0), cs = derive_seed(s.seed, 1);
  res.seeds.push_back({"trajectory", ts});
  res.seeds.push_back({"centers", cs});
  const auto traj = generate_trajectory(*s.spec, ts, s.burn_in, s.len);
  const auto centers = generate_trajectory(*s.spec, cs, s.burn_in, std::max<std::size_t>(s.centers, 1));
  const auto sample = local_dimensions(traj, centers, s.quantile, kMinExceedances, s.threads);
  if (sample.size() == 0) throw InsufficientData("localdim: centers with a local dimension", 0, 1);
  if (sample.skipped > 0) res.notes.push_back("centers skipped: " + std::to_string(sample.skipped));
  CsvFile l("local_dims.csv", hash);
  write_local_dims_csv(l.stream(), sample);
  res.files.push_back(l.done());
  DimensionSpectrum sp;
  sp.method = SpectrumMethod::LocalDimFormula;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (double q : s.q) {
    const auto p = dq_from_local_dims(sample, q);
    sp.push(q, q == 1.0 ? 0.0 : p.dq * (q - 1.0), p.dq, nan);
    sp.r_lo = sp.r_hi = p.r_eff;
  }
  flag_monotonicity(sp);
  CsvFile f("spectrum.csv", hash);
  write_spectrum_csv(f.stream(), sp);
  res.files.push_back(f.done());
  return res;
}

inline RunResult run_dei(const Settings& s, const std::string& hash) {
  RunResult res;
  DeiOptions o;
  o.quantile = s.quantile;
  o.replicas = s.replicas;
  o.burn_in = s.burn_in;
  o.threads = s.threads;
  std::vector<DeiEstimate> rows;
  for (std::size_t i = 0; i < s.q.size(); ++i) {
    const int q = static_cast<int>(s.q[i]);
    const std::uint64_t seed = derive_seed(s.seed, i);
    res.seeds.push_back({"q=" + std::to_string(q), seed});
    rows.push_back(theta_q_empirical(*s.spec, q, s.len, seed, o));
  }
  for (double qd : s.q) {
    try {
      rows.push_back(theta_q_analytic(s.spec->kind, static_cast<int>(qd)));
    } catch (const UnsupportedError&) {
      break;
    }
  }
  CsvFile f("dei.csv", hash);
  write_dei_csv(f.stream(), rows);
  res.files.push_back(f.done());
  return res;
}

inline RunResult run_ratefn(const Settings& s, const std::string& hash) {
  RunResult res;
  const std::uint64_t ts = derive_seed(s.seed, 0), cs = derive_seed(s.seed, 1);
  res.seeds.push_back({"trajectory", ts});
  res.seeds.push_back({"centers", cs});
  const auto traj = generate_trajectory(*s.spec, ts, s.burn_in, s.len);
  const auto centers = generate_trajectory(*s.spec, cs, s.burn_in, std::max<std::size_t>(s.centers, 1));
  const auto grid = s.s_grid();
  std::vector<RateCurve> curves;
  for (double k : s.r_levels) {
    const double r = std::exp2(-k);
    const auto sample = local_dimensions_at_radius(traj, centers, r, s.threads);
    curves.push_back(empirical_rate_local_dim(sample, grid, r));
  }
  std::vector<RateCurve> all = curves;
  if (const auto tau = analytic_tau(*s.spec)) {
    const auto Q = legendre(RateKind::Q, *tau, grid);
    all.insert(all.begin(), Q);
    all.insert(all.begin() + 1, legendre(RateKind::FAlpha, *tau, grid));
    const auto d = approach_distances(curves, Q, s.min_count);
    CsvFile a("approach.csv", hash);
    a.stream() << "r_level,sup_distance\n";
    for (std::size_t i = 0; i < curves.size(); ++i) a.stream() << io::fmt(*curves[i].r_level) << ',' << io::fmt(d[i]) << '\n';
    res.files.push_back(a.done());
  }
  CsvFile f("rate.csv", hash);
  write_rate_csv(f.stream(), all);
  res.files.push_back(f.done());
  return res;
}

inline RunResult run_hitting_ldp(const Settings& s, const std::string& hash) {
  RunResult res;
  const auto tau = analytic_tau(*s.spec);
  std::optional<double> d1 = s.d1;
  if (!d1) d1 = analytic_d1(*s.spec);
  if (!d1) throw ValidationError("d1: no analytic spectrum for " + s.spec->name() + "; set d1");
  HittingRateOptions o;
  o.d1 = *d1;
  o.seed = s.seed;
  o.scan_len = s.scan_len;
  o.burn_in = s.burn_in;
  o.threads = s.threads;
  res.seeds.push_back({"pair i: z derive_seed(seed, 2i), x derive_seed(seed, 2i+1)", s.seed});
  const auto offsets = s.s_grid();
  auto emp = empirical_rate_hitting(*s.spec, s.r, offsets, s.pairs, o);
  std::vector<RateCurve> all{emp};
  std::optional<double> window;
  if (tau) {
    std::vector<double> qg;
    for (double q = -4.0; q <= 4.0 + 1e-9; q += 0.25) qg.push_back(q);
    const auto F = free_energy(*tau, qg);
    window = hitting_window(F, *d1);
    mark_window(all[0], *d1, *window);
    std::vector<double> abs;
    for (double off : offsets) abs.push_back(*d1 + off);
    auto qhat = legendre(RateKind::Qhat, *tau, abs);
    mark_window(qhat, *d1, *window);
    all.push_back(qhat);
  }
  CsvFile f("rate.csv", hash);
  write_rate_csv(f.stream(), all);
  res.files.push_back(f.done());
  CsvFile h("hitting.csv", hash);
  h.stream() << "# d1=" << io::fmt(*d1) << ",window=" << (window ? io::fmt(*window) : std::string()) << '\n';
  h.stream() << "offset,s,value,censored,flagged,out_of_window,tail_count\n";
  const auto& c = all[0];
  for (std::size_t i = 0; i < c.size(); ++i)
    h.stream() << io::fmt(offsets[i]) << ',' << io::fmt(c.s[i]) << ',' << io::fmt(c.values[i]) << ','
               << (c.censored[i] ? 1 : 0) << ',' << (c.flagged[i] ? 1 : 0) << ','
               << (!c.out_of_window.empty() && c.out_of_window[i] ? 1 : 0) << ',' << c.tail_count[i] << '\n';
  res.files.push_back(h.done());
  return res;
}

inline RunResult run_ingest(const Settings& s, const std::string& hash) {
  RunResult res;
  LoadOptions lo;
  lo.dim = s.dim;
  lo.metric = s.metric;
  const auto series = load_series(s.input, s.format, lo);
  QuantileOptions o;
  o.stride = s.stride;
  o.exclusion = s.exclusion;
  o.threads = s.threads;
  const auto table = quantile_spectrum(series, s.p_list, s.q, o);
  for (const auto& row : table.rows)
    if (row.spread_decrease) res.notes.push_back("spread of local dimensions decreases at p=" + io::fmt(row.p));
  CsvFile f("quantile_table.csv", hash);
  write_quantile_table_csv(f.stream(), table);
  res.files.push_back(f.done());
  return res;
}

}  // namespace detail

/// Runs the configured experiment and returns its files without touching
/// the filesystem (apart from reading an ingest input).
inline RunResult run_experiment(const RunConfig& config) {
  const Settings s = resolve(config);
  const std::string hash = config.hash();
  switch (s.experiment) {
    case Experiment::Gamma:
    case Experiment::Upsilon:
    case Experiment::ReturnTimes: return detail::run_recurrence(s, hash);
    case Experiment::Tail: return detail::run_tail(s, hash);
    case Experiment::BlockMax: return detail::run_blockmax(s, hash);
    case Experiment::LocalDim: return detail::run_localdim(s, hash);
    case Experiment::Dei: return detail::run_dei(s, hash);
    case Experiment::RateFn: return detail::run_ratefn(s, hash);
    case Experiment::HittingLdp: return detail::run_hitting_ldp(s, hash);
    case Experiment::IngestSpectrum: return detail::run_ingest(s, hash);
  }
  throw ValidationError("unknown experiment");
}

/// Manifest: versions, wall time, seed ledger and file list as comments,
/// followed by the config echo. The file can be passed back as --config.
inline std::string manifest_text(const RunConfig& config, const RunResult& res, double wall_seconds) {
  std::ostringstream m;
  m << "# gdim manifest\n";
  m << "# config_hash=" << config.hash() << '\n';
  m << "# gdim_version=" << kVersion << '\n';
#ifdef __VERSION__
  m << "# compiler=" << __VERSION__ << '\n';
#endif
  m << "# boost=" << BOOST_LIB_VERSION << '\n';
  m << "# wall_time_s=" << io::fmt(wall_seconds) << '\n';
  m << "# seed ledger (master seed " << config.get("seed") << ")\n";
  for (const auto& u : res.seeds) m << "#   " << u.role << ": " << u.value << '\n';
  m << "# files\n";
  for (const auto& f : res.files) m << "#   " << f.name << '\n';
  for (const auto& n : res.notes) m << "# note: " << n << '\n';
  m << config.serialize();
  return m.str();
}

/// Writes every file under a temporary name first and renames only once all
/// of them are on disk, so a failed run leaves earlier results untouched.
inline void commit_files(const std::filesystem::path& dir, const std::vector<OutputFile>& files) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("out: cannot create directory '" + dir.string() + "': " + ec.message());
  std::vector<fs::path> staged;
  auto cleanup = [&] {
    for (const auto& p : staged) fs::remove(p, ec);
  };
  for (const auto& f : files) {
    const fs::path tmp = dir / ("." + f.name + ".partial");
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << f.content;
    out.close();
    staged.push_back(tmp);
    if (!out) {
      cleanup();
      throw ValidationError("out: cannot write '" + tmp.string() + "'");
    }
  }
  for (std::size_t i = 0; i < files.size(); ++i) fs::rename(staged[i], dir / files[i].name);
}

/// 2 for invalid input or configuration, 3 for too little data, 1 otherwise.
inline int exit_status(const std::exception& e) {
  if (dynamic_cast<const InsufficientData*>(&e)) return 3;
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ArgumentError*>(&e) ||
      dynamic_cast<const DomainError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const RangeError*>(&e) || dynamic_cast<const UnsupportedError*>(&e))
    return 2;
  return 1;
}

// ---------------------------------------------------------------------------
// Comparison

struct CompareRow {
  double q = 0.0;
  double dq_a = 0.0, stderr_a = 0.0, dq_b = 0.0, stderr_b = 0.0;
  double diff = 0.0;      // dq_a - dq_b
  double combined = 0.0;  // sqrt(stderr_a^2 + stderr_b^2)
  bool within = false;    // |diff| <= combined
};

namespace detail {
inline bool same_value(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }
}  // namespace detail

/// Per-q differences of two spectra over the same q grid. Identical entries
/// (NaN included) give a zero difference.
inline std::vector<CompareRow> compare(const DimensionSpectrum& a, const DimensionSpectrum& b) {
  if (a.q_list != b.q_list) {
    std::string qa, qb;
    for (double q : a.q_list) qa += (qa.empty() ? "" : ",") + io::fmt(q);
    for (double q : b.q_list) qb += (qb.empty() ? "" : ",") + io::fmt(q);
    throw ValidationError("compare: q grids differ (" + qa + " vs " + qb + ")");
  }
  std::vector<CompareRow> rows;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CompareRow r;
    r.q = a.q_list[i];
    r.dq_a = a.dq[i];
    r.stderr_a = a.stderr[i];
    r.dq_b = b.dq[i];
    r.stderr_b = b.stderr[i];
    r.diff = detail::same_value(r.dq_a, r.dq_b) ? 0.0 : r.dq_a - r.dq_b;
    const double sa = std::isnan(r.stderr_a) ? 0.0 : r.stderr_a, sb = std::isnan(r.stderr_b) ? 0.0 : r.stderr_b;
    r.combined = std::hypot(sa, sb);
    r.within = std::abs(r.diff) <= r.combined;
    rows.push_back(r);
  }
  return rows;
}

/// The curve D2 / (q - 1) on the q values of s above 2, with D2 and its
/// stderr carried over from the q = 2 entry of s.
inline DimensionSpectrum hyperbola_reference(const DimensionSpectrum& s) {
  const std::size_t i2 = s.q_index(2.0);
  DimensionSpectrum h;
  h.method = s.method;
  h.r_lo = s.r_lo;
  h.r_hi = s.r_hi;
  for (double q : s.q_list)
    if (q > 2.0) h.push(q, s.dq[i2], s.dq[i2] / (q - 1.0), s.stderr[i2] / (q - 1.0));
  return h;
}

/// s restricted to its entries with q above 2.
inline DimensionSpectrum above_two(const DimensionSpectrum& s) {
  DimensionSpectrum t;
  t.method = s.method;
  t.r_lo = s.r_lo;
  t.r_hi = s.r_hi;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.q_list[i] > 2.0) t.push(s.q_list[i], s.tau[i], s.dq[i], s.stderr[i]);
  return t;
}

/// CSV columns: q, dq_a, stderr_a, dq_b, stderr_b, diff, combined_stderr, within.
inline void write_compare_csv(std::ostream& out, std::span<const CompareRow> rows) {
  out << "q,dq_a,stderr_a,dq_b,stderr_b,diff,combined_stderr,within\n";
  for (const auto& r : rows)
    out << io::fmt(r.q) << ',' << io::fmt(r.dq_a) << ',' << io::fmt(r.stderr_a) << ',' << io::fmt(r.dq_b) << ','
        << io::fmt(r.stderr_b) << ',' << io::fmt(r.diff) << ',' << io::fmt(r.combined) << ',' << (r.within ? 1 : 0)
        << '\n';
}

/// Value of the "# config_hash=" line, if the file has one.
inline std::optional<std::string> config_hash_of(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    const auto t = io::trim(line);
    if (t.rfind("# config_hash=", 0) == 0) return std::string(t.substr(14));
    if (!t.empty() && t.front() != '#') break;
  }
  return std::nullopt;
}

}  // namespace gdim
