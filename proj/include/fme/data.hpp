#pragma once

#include "fme/basis.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fme {

/// n curves sampled on a common grid with 1-based class labels.
struct FunctionalDataset {
  Eigen::VectorXd grid;
  Eigen::MatrixXd curves;  // n x grid.size()
  std::vector<int> labels;
  int G = 2;
  /// Latent cluster (1-based) of each curve; simulation only.
  std::optional<std::vector<int>> clusters;

  Eigen::Index n() const noexcept { return curves.rows(); }
  /// Throws ConfigError/NumericError when an invariant is violated.
  void validate() const;
  /// Rows selected by `index`, in that order.
  FunctionalDataset subset(const std::vector<Eigen::Index>& index) const;
};

/// matrix_csv: line 1 is `label` followed by the grid values; every further
/// line is an integer label followed by the samples. G is the largest label.
FunctionalDataset read_matrix_csv(std::istream& in);
FunctionalDataset load_dataset(const std::string& path);

/// Writes with 17 significant digits and LF line endings.
void write_matrix_csv(std::ostream& out, const FunctionalDataset& data);
void save_dataset(const std::string& path, const FunctionalDataset& data);

/// Shortest-exact decimal form with 17 significant digits.
std::string format_double(double v);

/// Piecewise-linear function given by (t, value) nodes, constant beyond
/// the first and last node.
struct PiecewiseLinear {
  std::vector<std::pair<double, double>> nodes;

  double operator()(double t) const;
  PiecewiseLinear scaled(double s) const;
};

/// Settings of the shipped simulation generator (K = 2 experts, G = 3 classes).
struct SimConfig {
  int n_train = 300;
  int n_test = 200;
  double noise_var = 1.0;
  int grid_len = 100;
  Interval domain{0.0, 1.0};
  int curve_order = 4;
  int curve_dim = 15;
  double coeff_var = 20.0;
  double mean_amplitude = 16.0;
  double expert_scale = 60.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Generative parameters of a simulated study.
struct SimTruth {
  int K = 2;
  int G = 3;
  Eigen::VectorXd cluster_mean;  // curve coefficients of cluster 1; cluster 2 uses its negation
  double gating_intercept = 0.0;
  PiecewiseLinear gating_function;
  Eigen::MatrixXd expert_intercepts;                     // K x (G-1)
  std::vector<std::vector<PiecewiseLinear>> expert_functions;  // K x (G-1)
  /// Integrals of each curve basis function against the true coefficient
  /// functions: gating (r), experts K x (G-1) vectors of length r.
  Eigen::VectorXd gating_loadings;
  std::vector<std::vector<Eigen::VectorXd>> expert_loadings;
};

struct SimResult {
  FunctionalDataset train;
  FunctionalDataset test;
  SimTruth truth;
};

SimTruth make_truth(const SimConfig& config);
SimResult simulate(const SimConfig& config);

/// Plain-text record of the generator settings and true parameters, one
/// "key values..." line each.
void write_truth(std::ostream& out, const SimConfig& config, const SimTruth& truth);

/// Class probabilities of the true mixture for a curve with basis
/// coefficients `coeffs`.
Eigen::VectorXd true_class_probs(const SimTruth& truth, const Eigen::Ref<const Eigen::VectorXd>& coeffs);
/// Probability of cluster 1 under the true gating.
double true_gating_prob(const SimTruth& truth, const Eigen::Ref<const Eigen::VectorXd>& coeffs);

/// Classifier that plugs the true parameters into the mixture, using the
/// least-squares basis coefficients of the observed curves.
std::vector<int> true_parameter_predict(const SimConfig& config, const SimTruth& truth,
                                        const FunctionalDataset& data);

/// Label-stratified random partition; deterministic per seed.
std::pair<FunctionalDataset, FunctionalDataset> split(const FunctionalDataset& data,
                                                      double test_fraction, std::uint64_t seed);

double correct_classification_rate(const std::vector<int>& predicted, const std::vector<int>& actual);

}  // namespace fme
