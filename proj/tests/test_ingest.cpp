#include "catch_amalgamated.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "gdim/ingest.hpp"

using namespace gdim;
using Catch::Approx;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("gdim_ingest_" + name);
}

EmpiricalSeries series_of(const Trajectory& t) {
  std::ostringstream out;
  write_trajectory_csv(out, t);
  std::istringstream in(out.str());
  return parse_series_csv(in);
}

}  // namespace

TEST_CASE("CSV series with three columns", "[ingest]") {
  std::ostringstream text;
  text << "# x,y,z\n";
  for (int i = 0; i < 100; ++i) text << i << ',' << 0.5 * i << ',' << -i << '\n';
  std::istringstream in(text.str());
  const auto s = parse_series_csv(in);
  CHECK(s.dim() == 3);
  CHECK(s.size() == 100);
  CHECK(s.bounding_box[0] == std::pair{0.0, 99.0});
  CHECK(s.bounding_box[1] == std::pair{0.0, 49.5});
  CHECK(s.bounding_box[2] == std::pair{-99.0, 0.0});
}

TEST_CASE("CSV errors name the line", "[ingest]") {
  SECTION("NaN") {
    std::istringstream in("# h\n1,2\n3,nan\n");
    try {
      parse_series_csv(in);
      FAIL("expected an error");
    } catch (const NonFiniteError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SECTION("ragged row") {
    std::istringstream in("1,2\n3,4\n5\n");
    try {
      parse_series_csv(in);
      FAIL("expected an error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  SECTION("garbage") {
    std::istringstream in("1,2\n3,x\n");
    CHECK_THROWS_AS(parse_series_csv(in), ParseError);
  }
  SECTION("inf") {
    std::istringstream in("1,inf\n");
    CHECK_THROWS_AS(parse_series_csv(in), NonFiniteError);
  }
  SECTION("empty") {
    std::istringstream in("# only a header\n");
    CHECK_THROWS_AS(parse_series_csv(in), InsufficientData);
  }
  SECTION("declared dimension") {
    std::istringstream in("1,2,3\n");
    LoadOptions o;
    o.dim = 2;
    CHECK_THROWS_AS(parse_series_csv(in, o), ParseError);
  }
}

TEST_CASE("exported trajectory CSV round-trips bit-exactly", "[ingest]") {
  const auto t = generate_trajectory(SystemSpec::henon(), 5, 100, 2000, 0);
  const auto path = temp_file("henon.csv");
  {
    std::ofstream out(path);
    write_trajectory_csv(out, t);
  }
  const auto s = load_series(path.string(), SeriesFormat::Csv);
  REQUIRE(s.size() == t.size());
  REQUIRE(s.dim() == 2);
  CHECK(s.label() == path.string());
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t k = 0; k < 2; ++k) CHECK(s.states.state(i)[k] == t.state(i)[k]);
  std::filesystem::remove(path);
}

TEST_CASE("raw-f64 series round-trips", "[ingest]") {
  const auto t = generate_trajectory(SystemSpec::lorenz63(), 2, 100, 500, 0);
  const auto path = temp_file("lorenz.f64");
  {
    std::ofstream out(path, std::ios::binary);
    write_series_raw(out, t);
  }
  CHECK(std::filesystem::file_size(path) == 500 * 3 * 8);
  LoadOptions o;
  o.dim = 3;
  const auto s = load_series(path.string(), SeriesFormat::RawF64, o);
  REQUIRE(s.size() == 500);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k) CHECK(s.states.state(i)[k] == t.state(i)[k]);

  o.dim = 0;
  CHECK_THROWS_AS(load_series(path.string(), SeriesFormat::RawF64, o), ArgumentError);
  o.dim = 7;
  CHECK_THROWS_AS(load_series(path.string(), SeriesFormat::RawF64, o), ParseError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_series(path.string(), SeriesFormat::Csv), ArgumentError);
}

TEST_CASE("raw-f64 rejects non-finite values", "[ingest]") {
  std::ostringstream out;
  const Trajectory t({1.0, 2.0, 3.0, std::numeric_limits<double>::quiet_NaN()}, 2, Metric::Euclidean);
  write_series_raw(out, t);
  std::istringstream in(out.str());
  LoadOptions o;
  o.dim = 2;
  try {
    parse_series_raw(in, o);
    FAIL("expected an error");
  } catch (const NonFiniteError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("format names", "[ingest]") {
  CHECK(series_format_from_string("csv") == SeriesFormat::Csv);
  CHECK(series_format_from_string("raw-f64") == SeriesFormat::RawF64);
  CHECK_FALSE(series_format_from_string("netcdf"));
  CHECK(to_string(SeriesFormat::RawF64) == "raw-f64");
}

TEST_CASE("series local dimension leaves out the exclusion window", "[ingest]") {
  const auto t = generate_trajectory(SystemSpec::three_x_mod1(), 8, 100, 5000, 0);
  QuantileOptions o;
  const std::size_t i = 1234;
  // oracle: drop the center itself and its neighbours by hand
  for (std::size_t w : {0, 3}) {
    o.exclusion = w;
    std::vector<double> phi;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (j + w >= i && j <= i + w) continue;
      phi.push_back(-std::log(std::abs(t.state(j)[0] - t.state(i)[0])));
    }
    const auto rec = exceedances_over_quantile(phi, 0.98);
    const auto got = series_local_dimension(t, i, 0.98, o);
    CHECK(got.d1r == pot_dimension(rec));
    CHECK(got.n_exceedances == rec.count());
  }
}

TEST_CASE("quantile spectrum of a Sierpinski series", "[ingest]") {
  const auto s = series_of(generate_trajectory(SystemSpec::sierpinski(), 12, 1000, 30000, 0));
  const std::vector<double> ps{0.98};
  const std::vector<double> qs{2.0, 3.0};
  QuantileOptions o;
  o.stride = 15;
  const auto t = quantile_spectrum(s, ps, qs, o);
  REQUIRE(t.rows.size() == 1);
  const auto& row = t.rows[0];
  CHECK(row.n_centers + row.n_dropped == 2000);
  CHECK(row.d_mean == Approx(1.5).margin(0.15));
  const double d2 = -std::log2(2.0 * std::pow(0.25, 2.0) + std::pow(0.5, 2.0));
  CHECK(row.dq[0] == Approx(d2).epsilon(0.10));
  CHECK(row.d_max >= row.d_mean);
  CHECK(row.d_mean >= row.d_min);
  for (double d : row.dq) {
    CHECK(d >= row.d_min);
    CHECK(d <= row.d_max);
  }
  CHECK(row.dq[1] <= row.dq[0]);
  CHECK(row.r_eff > 0.0);
  CHECK(row.r_eff < 0.2);
}

TEST_CASE("spread of local dimensions grows with the quantile", "[ingest]") {
  const auto s = series_of(generate_trajectory(SystemSpec::sierpinski(), 13, 1000, 100000, 0));
  const std::vector<double> ps{0.95, 0.98, 0.995};
  const std::vector<double> qs{2.0};
  QuantileOptions o;
  o.stride = 25;  // 4000 centers keep the sd estimates' own noise below the trend
  const auto t = quantile_spectrum(s, ps, qs, o);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[1].d_sd >= t.rows[0].d_sd);
  CHECK(t.rows[2].d_sd >= t.rows[1].d_sd);
  for (const auto& r : t.rows) CHECK_FALSE(r.spread_decrease);
}

TEST_CASE("spread diagnostic follows p order, not row order", "[ingest]") {
  const auto s = series_of(generate_trajectory(SystemSpec::sierpinski(), 13, 1000, 25000, 0));
  const std::vector<double> ps{0.98, 0.95};
  const std::vector<double> qs{};
  QuantileOptions o;
  o.stride = 50;
  const auto t = quantile_spectrum(s, ps, qs, o);
  REQUIRE(t.rows.size() == 2);
  CHECK_FALSE(t.rows[1].spread_decrease);
  CHECK(t.rows[0].spread_decrease == (t.rows[0].d_sd < t.rows[1].d_sd));
}

TEST_CASE("quantile spectrum feasibility and degenerate input", "[ingest]") {
  const std::vector<double> qs{2.0};
  SECTION("too short for the largest quantile") {
    const auto s = series_of(generate_trajectory(SystemSpec::three_x_mod1(), 1, 100, 20000, 0));
    const std::vector<double> ps{0.9, 0.995};
    try {
      quantile_spectrum(s, ps, qs);
      FAIL("expected an error");
    } catch (const InsufficientData& e) {
      CHECK(e.required() == feasible_length(0.995, kMinExceedances));
      CHECK(e.required() == 100000);
    }
  }
  SECTION("constant series") {
    std::ostringstream text;
    for (int i = 0; i < 5000; ++i) text << "0.25,0.75\n";
    std::istringstream in(text.str());
    const auto s = parse_series_csv(in);
    const std::vector<double> ps{0.9};
    QuantileOptions o;
    o.stride = 50;
    CHECK_THROWS_AS(quantile_spectrum(s, ps, qs, o), InsufficientData);
  }
  SECTION("argument checks") {
    const auto s = series_of(generate_trajectory(SystemSpec::three_x_mod1(), 1, 100, 5000, 0));
    const std::vector<double> bad{1.0};
    CHECK_THROWS_AS(quantile_spectrum(s, bad, qs), ArgumentError);
    CHECK_THROWS_AS(quantile_spectrum(s, std::vector<double>{}, qs), ArgumentError);
  }
}

TEST_CASE("Table-1 layout CSV", "[ingest][io]") {
  QuantileTable t;
  t.q_list = {2.0, 0.5};
  for (double p : {0.95, 0.96, 0.97, 0.98, 0.99}) {
    QuantileRow r;
    r.p = p;
    r.d_min = 6.4;
    r.d_mean = 13.0;
    r.dq = {10.5, 14.0};
    r.d_max = 25.7;
    r.r_eff = 0.01;
    r.n_dropped = 2;
    t.rows.push_back(r);
  }
  std::ostringstream out;
  write_quantile_table_csv(out, t);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "p,d_min,d_mean,D2,D0.5,d_max,r_eff,n_dropped");
  std::getline(in, line);
  CHECK(line == "0.94999999999999996,6.4000000000000004,13,10.5,14,25.699999999999999,0.01,2");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 5);
}
