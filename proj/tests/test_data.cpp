#include "fme/data.hpp"
#include "fme/errors.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

using namespace fme;

namespace {

FunctionalDataset parse(const std::string& text) {
  std::istringstream in(text);
  return read_matrix_csv(in);
}

}  // namespace

TEST_CASE("matrix csv parsing") {
  const FunctionalDataset d = parse("label,0,0.5,1\n1,0.1,0.2,0.3\n2,1,2,3\n");
  CHECK(d.n() == 2);
  CHECK(d.G == 2);
  CHECK(d.grid.size() == 3);
  CHECK(d.curves(1, 2) == 3.0);
  CHECK(d.labels == std::vector<int>{1, 2});

  const FunctionalDataset crlf = parse("label,0,1\r\n3,1,2\r\n1,2,3\r\n");
  CHECK(crlf.G == 3);
  CHECK(crlf.curves(0, 1) == 2.0);
}

TEST_CASE("matrix csv errors name the row") {
  auto row_of = [](const std::string& text) -> std::size_t {
    try {
      parse(text);
    } catch (const ParseError& e) {
      return e.row();
    }
    return 0;
  };
  CHECK(row_of("label,0,0.5,1\n1,0.1,0.2,0.3\n2,1,2\n") == 3);
  CHECK(row_of("label,0,0.5\n1,0.1,x\n") == 2);
  CHECK(row_of("label,0,0.5\n0,0.1,0.2\n") == 2);
  CHECK(row_of("label,0,0.5\nA,0.1,0.2\n") == 2);
  CHECK(row_of("y,0,0.5\n1,0.1,0.2\n") == 1);
  CHECK(row_of("label,0,0\n1,0.1,0.2\n") == 1);
  CHECK(row_of("label,0.5,0\n1,0.1,0.2\n") == 1);
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("label,0,1\n"), ParseError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/file.csv"), ParseError);
  try {
    parse("label,0,0.5\n1,0.1,zz\n");
  } catch (const ParseError& e) {
    CHECK(e.column() == 3);
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
}

TEST_CASE("phoneme-shaped file") {
  std::mt19937_64 rng(1);
  std::ostringstream os;
  os << "label";
  for (int j = 0; j < 256; ++j) os << ',' << j + 1;
  os << '\n';
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    os << 1 + i % 5;
    for (int j = 0; j < 256; ++j) os << ',' << n(rng);
    os << '\n';
  }
  const FunctionalDataset d = parse(os.str());
  CHECK(d.n() == 1000);
  CHECK(d.G == 5);
  CHECK(d.grid.size() == 256);
}

TEST_CASE("csv round trip is value-identical") {
  std::mt19937_64 rng(2);
  FunctionalDataset d = testing_helpers::random_dataset(rng, 12, 3, 25);
  d.curves(0, 0) = 1.0 / 3.0;
  d.curves(1, 1) = -1e-300;
  d.curves(2, 2) = 6.02214076e23;
  std::ostringstream a;
  write_matrix_csv(a, d);
  const FunctionalDataset back = parse(a.str());
  CHECK(back.curves == d.curves);
  CHECK(back.grid == d.grid);
  CHECK(back.labels == d.labels);
  std::ostringstream b;
  write_matrix_csv(b, back);
  CHECK(a.str() == b.str());
  CHECK(a.str().find('\r') == std::string::npos);
}

TEST_CASE("format_double round trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 123456789.123456789, 0.0}) {
    const std::string s = format_double(v);
    CHECK(std::stod(s) == v);
  }
}

TEST_CASE("simulation") {
  SimConfig sc;
  sc.n_train = 60;
  sc.n_test = 40;
  sc.seed = 5;

  SUBCASE("fixed seed reproduces the datasets byte for byte") {
    const SimResult a = simulate(sc), b = simulate(sc);
    std::ostringstream sa, sb;
    write_matrix_csv(sa, a.train);
    write_matrix_csv(sb, b.train);
    CHECK(sa.str() == sb.str());
    CHECK(a.test.curves == b.test.curves);
    std::ostringstream ta, tb;
    write_truth(ta, sc, a.truth);
    write_truth(tb, sc, b.truth);
    CHECK(ta.str() == tb.str());
    sc.seed = 6;
    CHECK(simulate(sc).train.curves != a.train.curves);
  }
  SUBCASE("shapes") {
    const SimResult r = simulate(sc);
    CHECK(r.train.n() == 60);
    CHECK(r.test.n() == 40);
    CHECK(r.train.grid.size() == 100);
    CHECK(r.train.G == 3);
    CHECK(r.train.grid[0] == 0.0);
    CHECK(r.train.grid[99] == 1.0);
  }
  SUBCASE("cluster frequencies follow the true gating") {
    sc.n_train = 2000;
    const SimResult r = simulate(sc);
    const BSplineBasis b = make_basis(sc.curve_order, sc.curve_dim, sc.domain);
    const CurveProjector proj(b, r.train.grid);
    // Gating probabilities are evaluated at the noise-free coefficients,
    // recovered here from a noiseless re-simulation with the same seed.
    SimConfig clean = sc;
    clean.noise_var = 0.0;
    const SimResult c = simulate(clean);
    const Eigen::MatrixXd coeffs = proj.project_rows(c.train.curves);
    double mean_p = 0.0, freq = 0.0;
    for (Eigen::Index i = 0; i < coeffs.rows(); ++i) {
      mean_p += true_gating_prob(c.truth, coeffs.row(i).transpose());
      freq += (*r.train.clusters)[i] == 1;
    }
    mean_p /= 2000.0;
    freq /= 2000.0;
    CHECK(std::abs(freq - mean_p) < 3.0 * std::sqrt(mean_p * (1.0 - mean_p) / 2000.0));
  }
  SUBCASE("noiseless saturated generator is perfectly classifiable") {
    SimConfig sat = sc;
    sat.noise_var = 0.0;
    sat.mean_amplitude = 400.0;
    sat.expert_scale = 1e5;
    sat.n_test = 500;
    const SimResult r = simulate(sat);
    CHECK(correct_classification_rate(true_parameter_predict(sat, r.truth, r.test), r.test.labels) >= 0.99);
  }
  SUBCASE("invalid settings") {
    sc.n_train = 0;
    CHECK_THROWS_AS(simulate(sc), ConfigError);
  }
}

TEST_CASE("stratified split") {
  FunctionalDataset d;
  d.grid = Eigen::VectorXd::LinSpaced(5, 0.0, 1.0);
  d.curves = Eigen::MatrixXd::Zero(10, 5);
  for (int i = 0; i < 10; ++i) d.curves(i, 0) = i;
  d.labels = {1, 2, 1, 2, 1, 2, 1, 2, 1, 2};
  d.G = 2;
  const auto [train, test] = split(d, 0.5, 3);
  CHECK(train.n() == 5);
  CHECK(test.n() == 5);
  int ones = 0;
  for (int y : test.labels) ones += y == 1;
  CHECK((ones == 2 || ones == 3));
  const auto again = split(d, 0.5, 3);
  CHECK(again.second.curves == test.curves);
  CHECK_THROWS_AS(split(d, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split(d, 1.0, 1), ConfigError);

  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    const FunctionalDataset r = testing_helpers::random_dataset(rng, 37 + rep, 4, 12);
    const double frac = 0.2 + 0.02 * rep;
    const auto parts = split(r, frac, rep);
    CHECK(parts.first.n() + parts.second.n() == r.n());
    std::map<int, int> total, in_test;
    for (int y : r.labels) ++total[y];
    for (int y : parts.second.labels) ++in_test[y];
    for (const auto& [y, cnt] : total) CHECK(std::abs(in_test[y] - frac * cnt) <= 1.0);
  }
}

TEST_CASE("correct classification rate") {
  CHECK(correct_classification_rate({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(correct_classification_rate({2, 3, 1}, {1, 2, 3}) == 0.0);
  CHECK(correct_classification_rate({1, 2, 3, 1}, {1, 2, 1, 1}) == 0.75);
  CHECK_THROWS_AS(correct_classification_rate({1}, {1, 2}), ConfigError);

  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> g(1, 4);
  const int n = 4000;
  std::vector<int> truth(n), guess(n);
  for (int i = 0; i < n; ++i) {
    truth[i] = 1 + i % 4;
    guess[i] = g(rng);
  }
  const double ccr = correct_classification_rate(guess, truth);
  CHECK(std::abs(ccr - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / n));
}
