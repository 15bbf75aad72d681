#include "fme/data.hpp"

#include "fme/errors.hpp"
#include "fme/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string_view>

namespace fme {

void FunctionalDataset::validate() const {
  if (curves.rows() < 1) throw ConfigError("dataset has no curves");
  if (curves.cols() != grid.size()) throw ConfigError("curve length differs from grid length");
  if (static_cast<Eigen::Index>(labels.size()) != curves.rows())
    throw ConfigError("number of labels differs from number of curves");
  for (Eigen::Index j = 1; j < grid.size(); ++j)
    if (!(grid[j] > grid[j - 1])) throw ConfigError("grid must be strictly increasing");
  if (!grid.allFinite() || !curves.allFinite()) throw NumericError("dataset contains non-finite values");
  for (int y : labels)
    if (y < 1 || y > G) throw ConfigError("label " + std::to_string(y) + " outside 1.." + std::to_string(G));
  if (clusters && static_cast<Eigen::Index>(clusters->size()) != curves.rows())
    throw ConfigError("number of cluster labels differs from number of curves");
}

FunctionalDataset FunctionalDataset::subset(const std::vector<Eigen::Index>& index) const {
  FunctionalDataset out;
  out.grid = grid;
  out.G = G;
  out.curves.resize(static_cast<Eigen::Index>(index.size()), grid.size());
  out.labels.reserve(index.size());
  if (clusters) out.clusters.emplace();
  for (std::size_t i = 0; i < index.size(); ++i) {
    out.curves.row(static_cast<Eigen::Index>(i)) = curves.row(index[i]);
    out.labels.push_back(labels[index[i]]);
    if (clusters) out.clusters->push_back((*clusters)[index[i]]);
  }
  return out;
}

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    cells.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

double parse_real(std::string_view cell, std::size_t row, std::size_t col) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
    throw ParseError("row " + std::to_string(row) + ", column " + std::to_string(col) +
                         ": '" + std::string(cell) + "' is not a number",
                     row, col);
  if (!std::isfinite(v))
    throw ParseError("row " + std::to_string(row) + ", column " + std::to_string(col) +
                         ": non-finite value",
                     row, col);
  return v;
}

}  // namespace

FunctionalDataset read_matrix_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file: missing header row", 1, 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_cells(line);
  if (header.empty() || header[0] != "label")
    throw ParseError("row 1, column 1: header must start with 'label'", 1, 1);
  if (header.size() < 2) throw ParseError("row 1: header declares no grid values", 1, 0);

  FunctionalDataset data;
  const std::size_t len = header.size() - 1;
  data.grid.resize(static_cast<Eigen::Index>(len));
  for (std::size_t j = 0; j < len; ++j) {
    data.grid[static_cast<Eigen::Index>(j)] = parse_real(header[j + 1], 1, j + 2);
    if (j > 0 && !(data.grid[j] > data.grid[j - 1]))
      throw ParseError("row 1, column " + std::to_string(j + 2) +
                           ": grid values must be strictly increasing (duplicate or unsorted)",
                       1, j + 2);
  }

  std::vector<std::vector<double>> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != len + 1)
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(len + 1) +
                           " cells, found " + std::to_string(cells.size()),
                       row, 0);
    int label = 0;
    const auto [ptr, ec] = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), label);
    if (ec != std::errc() || ptr != cells[0].data() + cells[0].size() || cells[0].empty())
      throw ParseError("row " + std::to_string(row) + ", column 1: label '" + std::string(cells[0]) +
                           "' is not an integer",
                       row, 1);
    if (label < 1)
      throw ParseError("row " + std::to_string(row) + ", column 1: label must be at least 1", row, 1);
    std::vector<double> values(len);
    for (std::size_t j = 0; j < len; ++j) values[j] = parse_real(cells[j + 1], row, j + 2);
    data.labels.push_back(label);
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw ParseError("file contains no data rows", row, 0);
  data.curves.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(len));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < len; ++j) data.curves(i, j) = rows[i][j];
  data.G = *std::max_element(data.labels.begin(), data.labels.end());
  if (data.G < 2) data.G = 2;
  return data;
}

FunctionalDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'", 0, 0);
  return read_matrix_csv(in);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void write_matrix_csv(std::ostream& out, const FunctionalDataset& data) {
  std::string line = "label";
  for (Eigen::Index j = 0; j < data.grid.size(); ++j) line += "," + format_double(data.grid[j]);
  out << line << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    line = std::to_string(data.labels[i]);
    for (Eigen::Index j = 0; j < data.curves.cols(); ++j) line += "," + format_double(data.curves(i, j));
    out << line << '\n';
  }
}

void save_dataset(const std::string& path, const FunctionalDataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  write_matrix_csv(out, data);
  if (!out) throw Error("failed writing '" + path + "'");
}

double PiecewiseLinear::operator()(double t) const {
  if (nodes.empty()) return 0.0;
  if (t <= nodes.front().first) return nodes.front().second;
  if (t >= nodes.back().first) return nodes.back().second;
  for (std::size_t j = 1; j < nodes.size(); ++j) {
    if (t <= nodes[j].first) {
      const auto [t0, v0] = nodes[j - 1];
      const auto [t1, v1] = nodes[j];
      return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
    }
  }
  return nodes.back().second;
}

PiecewiseLinear PiecewiseLinear::scaled(double s) const {
  PiecewiseLinear out = *this;
  for (auto& n : out.nodes) n.second *= s;
  return out;
}

void SimConfig::validate() const {
  if (n_train < 1 || n_test < 1) throw ConfigError("simulation sizes must be positive");
  if (!(noise_var >= 0.0)) throw ConfigError("noise variance must be nonnegative");
  if (grid_len < curve_dim) throw ConfigError("grid is shorter than the curve basis");
  if (!(coeff_var >= 0.0)) throw ConfigError("coefficient variance must be nonnegative");
}

namespace {

// Node lists on [0, 1]; mapped affinely onto the configured domain.
PiecewiseLinear on_domain(std::vector<std::pair<double, double>> unit_nodes, const Interval& dom) {
  for (auto& n : unit_nodes) n.first = dom.lo + n.first * dom.width();
  return PiecewiseLinear{std::move(unit_nodes)};
}

// Exact integrals of each basis function against a piecewise-linear function.
Eigen::VectorXd loadings(const BSplineBasis& basis, const PiecewiseLinear& f) {
  std::vector<double> breaks(basis.knots().data(), basis.knots().data() + basis.knots().size());
  for (const auto& n : f.nodes)
    if (basis.domain().contains(n.first)) breaks.push_back(n.first);
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  Eigen::VectorXd nodes, weights;
  gauss_legendre(basis.order() + 1, nodes, weights);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(basis.dim());
  for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
    const double half = 0.5 * (breaks[s + 1] - breaks[s]);
    const double mid = 0.5 * (breaks[s + 1] + breaks[s]);
    for (Eigen::Index q = 0; q < nodes.size(); ++q) {
      const double t = mid + half * nodes[q];
      out += (half * weights[q] * f(t)) * eval_basis(basis, t);
    }
  }
  return out;
}

Eigen::VectorXd greville(const BSplineBasis& basis) {
  Eigen::VectorXd g(basis.dim());
  const auto& k = basis.knots();
  const int m = basis.order();
  for (int j = 0; j < basis.dim(); ++j) {
    if (m == 1) {
      g[j] = 0.5 * (k[j] + k[j + 1]);
    } else {
      double s = 0.0;
      for (int i = 1; i < m; ++i) s += k[j + i];
      g[j] = s / (m - 1);
    }
  }
  return g;
}

Eigen::VectorXd uniform_grid(const Interval& dom, int len) {
  return Eigen::VectorXd::LinSpaced(len, dom.lo, dom.hi);
}

}  // namespace

SimTruth make_truth(const SimConfig& config) {
  config.validate();
  const BSplineBasis basis = make_basis(config.curve_order, config.curve_dim, config.domain);
  const Interval& dom = config.domain;
  SimTruth truth;

  const Eigen::VectorXd abscissae = greville(basis);
  truth.cluster_mean.resize(basis.dim());
  for (int j = 0; j < basis.dim(); ++j) {
    const double u = (abscissae[j] - dom.lo) / dom.width();
    truth.cluster_mean[j] = config.mean_amplitude * std::exp(-std::pow((u - 0.5) / 0.1, 2));
  }

  truth.gating_function = on_domain({{0.0, -4.0}, {0.5, 4.0}, {1.0, -2.0}}, dom);
  truth.gating_loadings = loadings(basis, truth.gating_function);

  // Expert 2 reverses the roles of the two effects of expert 1.
  const double s = config.expert_scale;
  const PiecewiseLinear ramp = on_domain({{0.0, 1.0}, {0.35, 1.0}, {0.65, -1.0}, {1.0, -1.0}}, dom);
  const PiecewiseLinear tent = on_domain({{0.0, -1.0}, {0.2, -1.0}, {0.5, 1.0}, {0.8, -1.0}, {1.0, -1.0}}, dom);
  truth.expert_functions = {{ramp.scaled(s), tent.scaled(s)}, {tent.scaled(-s), ramp.scaled(-s)}};
  truth.expert_intercepts = Eigen::MatrixXd::Zero(truth.K, truth.G - 1);
  for (const auto& per_class : truth.expert_functions) {
    std::vector<Eigen::VectorXd> l;
    for (const auto& f : per_class) l.push_back(loadings(basis, f));
    truth.expert_loadings.push_back(std::move(l));
  }
  // Center each expert score on its cluster and shift it so the three classes
  // are about equally frequent.
  const double coeff_sd = std::sqrt(config.coeff_var);
  for (int k = 0; k < truth.K; ++k) {
    const double sign = k == 0 ? 1.0 : -1.0;
    for (int g = 0; g < truth.G - 1; ++g) {
      const Eigen::VectorXd& l = truth.expert_loadings[k][g];
      truth.expert_intercepts(k, g) = -sign * l.dot(truth.cluster_mean) - 0.195 * coeff_sd * l.norm();
    }
  }
  return truth;
}

void write_truth(std::ostream& out, const SimConfig& config, const SimTruth& truth) {
  auto vec = [&](const std::string& key, const Eigen::VectorXd& v) {
    out << key;
    for (Eigen::Index j = 0; j < v.size(); ++j) out << ' ' << format_double(v[j]);
    out << '\n';
  };
  auto nodes = [&](const std::string& key, const PiecewiseLinear& f) {
    out << key;
    for (const auto& [t, v] : f.nodes) out << ' ' << format_double(t) << ':' << format_double(v);
    out << '\n';
  };
  out << "fme-truth 1\n";
  out << "seed " << config.seed << '\n';
  out << "n_train " << config.n_train << "\nn_test " << config.n_test << '\n';
  out << "noise_var " << format_double(config.noise_var) << '\n';
  out << "grid_len " << config.grid_len << '\n';
  out << "domain " << format_double(config.domain.lo) << ' ' << format_double(config.domain.hi) << '\n';
  out << "curve_order " << config.curve_order << "\ncurve_dim " << config.curve_dim << '\n';
  out << "coeff_var " << format_double(config.coeff_var) << '\n';
  out << "mean_amplitude " << format_double(config.mean_amplitude) << '\n';
  out << "expert_scale " << format_double(config.expert_scale) << '\n';
  out << "K " << truth.K << "\nG " << truth.G << '\n';
  vec("cluster_mean", truth.cluster_mean);
  out << "gating.intercept " << format_double(truth.gating_intercept) << '\n';
  nodes("gating.function", truth.gating_function);
  vec("gating.loadings", truth.gating_loadings);
  for (int k = 0; k < truth.K; ++k) {
    const std::string prefix = "expert." + std::to_string(k + 1);
    vec(prefix + ".intercepts", truth.expert_intercepts.row(k).transpose());
    for (int g = 0; g < truth.G - 1; ++g) {
      nodes(prefix + ".function." + std::to_string(g + 1), truth.expert_functions[k][g]);
      vec(prefix + ".loadings." + std::to_string(g + 1), truth.expert_loadings[k][g]);
    }
  }
  out << "end\n";
}

double true_gating_prob(const SimTruth& truth, const Eigen::Ref<const Eigen::VectorXd>& coeffs) {
  const double score = truth.gating_intercept + truth.gating_loadings.dot(coeffs);
  return 1.0 / (1.0 + std::exp(-score));
}

namespace {

Eigen::VectorXd true_expert_probs(const SimTruth& truth, int k,
                                  const Eigen::Ref<const Eigen::VectorXd>& coeffs) {
  Eigen::VectorXd scores(truth.G - 1);
  for (int g = 0; g < truth.G - 1; ++g)
    scores[g] = truth.expert_intercepts(k, g) + truth.expert_loadings[k][g].dot(coeffs);
  return log_softmax_with_reference(scores).array().exp();
}

}  // namespace

Eigen::VectorXd true_class_probs(const SimTruth& truth, const Eigen::Ref<const Eigen::VectorXd>& coeffs) {
  const double p1 = true_gating_prob(truth, coeffs);
  return p1 * true_expert_probs(truth, 0, coeffs) + (1.0 - p1) * true_expert_probs(truth, 1, coeffs);
}

SimResult simulate(const SimConfig& config) {
  SimResult out;
  out.truth = make_truth(config);
  const BSplineBasis basis = make_basis(config.curve_order, config.curve_dim, config.domain);
  const Eigen::VectorXd grid = uniform_grid(config.domain, config.grid_len);
  const Eigen::MatrixXd colloc = collocation_matrix(basis, grid);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double coeff_sd = std::sqrt(config.coeff_var);
  const double noise_sd = std::sqrt(config.noise_var);

  auto draw = [&](int n) {
    FunctionalDataset d;
    d.grid = grid;
    d.G = out.truth.G;
    d.curves.resize(n, grid.size());
    d.clusters.emplace();
    for (int i = 0; i < n; ++i) {
      const double sign = unif(rng) < 0.5 ? 1.0 : -1.0;
      Eigen::VectorXd c = sign * out.truth.cluster_mean;
      for (Eigen::Index j = 0; j < c.size(); ++j) c[j] += coeff_sd * normal(rng);
      const int z = unif(rng) < true_gating_prob(out.truth, c) ? 0 : 1;
      const Eigen::VectorXd probs = true_expert_probs(out.truth, z, c);
      const double u = unif(rng);
      int y = out.truth.G;
      double acc = 0.0;
      for (int g = 0; g < out.truth.G; ++g) {
        acc += probs[g];
        if (u < acc) {
          y = g + 1;
          break;
        }
      }
      Eigen::VectorXd x = colloc * c;
      for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += noise_sd * normal(rng);
      d.curves.row(i) = x.transpose();
      d.labels.push_back(y);
      d.clusters->push_back(z + 1);
    }
    return d;
  };
  out.train = draw(config.n_train);
  out.test = draw(config.n_test);
  return out;
}

std::vector<int> true_parameter_predict(const SimConfig& config, const SimTruth& truth,
                                        const FunctionalDataset& data) {
  const BSplineBasis basis = make_basis(config.curve_order, config.curve_dim, config.domain);
  const CurveProjector proj(basis, data.grid);
  const Eigen::MatrixXd coeffs = proj.project_rows(data.curves);
  std::vector<int> labels(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i)
    labels[i] = argmax_label(true_class_probs(truth, coeffs.row(i).transpose()));
  return labels;
}

std::pair<FunctionalDataset, FunctionalDataset> split(const FunctionalDataset& data,
                                                      double test_fraction, std::uint64_t seed) {
  const auto n = static_cast<double>(data.n());
  if (!(test_fraction > 0.0 && test_fraction < 1.0) ||
      n * std::min(test_fraction, 1.0 - test_fraction) < 1.0)
    throw ConfigError("test fraction leaves an empty partition");

  std::vector<std::vector<Eigen::Index>> by_class(data.G);
  for (Eigen::Index i = 0; i < data.n(); ++i) by_class[data.labels[i] - 1].push_back(i);

  // Largest-remainder quotas keep each class within one observation of its
  // exact share while hitting the rounded total.
  const auto total = static_cast<std::size_t>(std::llround(test_fraction * n));
  std::vector<std::size_t> quota(data.G);
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (int g = 0; g < data.G; ++g) {
    const double exact = test_fraction * static_cast<double>(by_class[g].size());
    quota[g] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[g];
    remainders.emplace_back(exact - std::floor(exact), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < total && j < remainders.size(); ++j) {
    const int g = remainders[j].second;
    if (quota[g] < by_class[g].size()) {
      ++quota[g];
      ++assigned;
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> train_idx, test_idx;
  for (int g = 0; g < data.G; ++g) {
    auto idx = by_class[g];
    std::shuffle(idx.begin(), idx.end(), rng);
    test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[g]));
    train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(quota[g]), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  if (train_idx.empty() || test_idx.empty()) throw ConfigError("split produced an empty partition");
  return {data.subset(train_idx), data.subset(test_idx)};
}

double correct_classification_rate(const std::vector<int>& predicted, const std::vector<int>& actual) {
  if (predicted.size() != actual.size())
    throw ConfigError("predicted and actual label vectors differ in length");
  if (predicted.empty()) throw ConfigError("cannot score an empty label vector");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == actual[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace fme
