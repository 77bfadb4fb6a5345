#include <doctest.h>

#include <fstream>

#include "splitlstm/data.hpp"
#include "splitlstm/error.hpp"
#include "test_support.hpp"

using namespace splitlstm;

namespace {

std::string seven_column_csv(int rows) {
  std::string text = "date,temperature,ph,conductivity,dissolved_oxygen,turbidity,nitrate\n";
  for (int i = 0; i < rows; ++i) {
    text += "2010-01-" + std::to_string(i) + ",12.5,7.9,410," + std::to_string(8.0 + 0.001 * i) + ",3.1,1.2\n";
  }
  return text;
}

}  // namespace

TEST_CASE("csv parsing") {
  SUBCASE("seven columns, one selected") {
    const TimeSeries s = parse_csv(seven_column_csv(3264));
    CHECK(s.values.size() == 3264);
    CHECK(s.values[10] == doctest::Approx(8.01));
    CHECK(s.timestamps.size() == 3264);
    CHECK(s.timestamps[0] == "2010-01-0");
  }
  SUBCASE("other column") {
    const TimeSeries s = parse_csv(seven_column_csv(20), "ph");
    CHECK(s.values.front() == 7.9);
  }
  SUBCASE("missing column names the available ones") {
    try {
      parse_csv(seven_column_csv(20), "salinity");
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      CHECK(what.find("salinity") != std::string::npos);
      CHECK(what.find("dissolved_oxygen") != std::string::npos);
      CHECK(what.find("turbidity") != std::string::npos);
    }
  }
  SUBCASE("header only") { CHECK_THROWS_AS(parse_csv("date,dissolved_oxygen\n"), ConfigError); }
  SUBCASE("empty file") { CHECK_THROWS_AS(parse_csv(""), ConfigError); }
  SUBCASE("non-numeric value names the row") {
    try {
      parse_csv("day,dissolved_oxygen\n0,8.1\n1,abc\n2,8.3\n");
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find('3') != std::string::npos);
    }
  }
  SUBCASE("file round trip through to_csv") {
    const auto dir = testing::temp_dir("data_csv");
    const TimeSeries s = generate_synthetic(2, 40);
    std::ofstream(dir / "s.csv") << to_csv(s);
    const TimeSeries back = load_csv(dir / "s.csv");
    CHECK(back.values == s.values);
    CHECK_THROWS(load_csv(dir / "missing.csv"));
  }
}

TEST_CASE("synthetic series") {
  const TimeSeries a = generate_synthetic(42, 3264);
  CHECK(a.values.size() == 3264);
  CHECK(generate_synthetic(42, 3264).values == a.values);
  CHECK_FALSE(generate_synthetic(43, 3264).values == a.values);
  for (double v : a.values) {
    CHECK(v >= 4.0);
    CHECK(v <= 14.0);
  }
  // Nearly nine full seasonal cycles, so the mean sits near the 9.0 baseline.
  double sum = 0.0;
  for (double v : a.values) sum += v;
  CHECK(sum / 3264.0 == doctest::Approx(9.0).epsilon(0.02));
  CHECK_THROWS_AS(generate_synthetic(1, 15), ConfigError);
}

TEST_CASE("chronological split") {
  const TimeSeries s = generate_synthetic(1, 3264);
  const auto [train, test] = chronological_split(s, 0.7);
  CHECK(train.values.size() == 2284);
  CHECK(test.values.size() == 980);
  CHECK(train.values.back() == s.values[2283]);
  CHECK(test.values.front() == s.values[2284]);

  const auto [a, b] = chronological_split(generate_synthetic(1, 100), 0.7);
  CHECK(a.values.size() == 70);
  CHECK(b.values.size() == 30);

  CHECK_THROWS_AS(chronological_split(generate_synthetic(1, 40), 0.7), ConfigError);
  CHECK_THROWS_AS(chronological_split(s, 1.0), ConfigError);
  CHECK_THROWS_AS(chronological_split(s, 0.0), ConfigError);
}

TEST_CASE("min-max normalization") {
  const std::vector<double> train{4.0, 14.0, 9.0};
  const NormalizationParams p = fit_minmax(train);
  CHECK(p.min == 4.0);
  CHECK(p.max == 14.0);
  CHECK(p.apply(9.0) == 0.5);
  CHECK(p.apply(15.0) == doctest::Approx(1.1));
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-50, 50);
    CHECK(std::abs(p.invert(p.apply(x)) - x) <= 1e-12);
  }
  const auto scaled = apply_minmax(train, p);
  CHECK(invert_minmax(scaled, p) == std::vector<double>{4.0, 14.0, 9.0});
  CHECK_THROWS_AS(fit_minmax(std::vector<double>{3.0, 3.0}), ConfigError);
  CHECK_THROWS_AS(fit_minmax(std::vector<double>{}), ConfigError);
}

TEST_CASE("windowing") {
  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i;
  const auto one = make_windows(v);
  REQUIRE(one.size() == 1);
  CHECK(one[0].x.size() == 15);
  CHECK(one[0].x.back() == 14.0);
  CHECK(one[0].y == 15.0);

  const auto s = generate_synthetic(9, 3264);
  const auto all = make_windows(s.values);
  CHECK(all.size() == 3249);
  for (std::size_t i = 0; i < all.size(); i += 97) {
    CHECK(all[i].x.front() == s.values[i]);
    CHECK(all[i].y == s.values[i + 15]);
  }
  CHECK_THROWS_AS(make_windows(std::vector<double>(15, 1.0)), ConfigError);
}

TEST_CASE("prepare keeps train and test apart") {
  const TimeSeries s = generate_synthetic(42, 3264);
  const PreparedData d = prepare(s);
  CHECK(d.train.size() == 2284 - 15);
  CHECK(d.test.size() == 980 - 15);
  const auto [train, test] = chronological_split(s);
  const auto norm = fit_minmax(train.values);
  CHECK(d.norm.min == norm.min);
  CHECK(d.norm.max == norm.max);
  // First test window starts at the first test day, not inside the train segment.
  CHECK(d.test.front().x.front() == norm.apply(test.values.front()));
  for (const auto& w : d.train) {
    for (double x : w.x) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
}
