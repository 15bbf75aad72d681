#pragma once

#include "fme/basis.hpp"
#include "fme/data.hpp"
#include "fme/model.hpp"

#include <Eigen/Dense>

#include <random>

namespace testing_helpers {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index size, double sd = 1.0) {
  return random_matrix(rng, size, 1, sd).col(0);
}

inline fme::BasisConfig small_basis() {
  fme::BasisConfig b;
  b.order = 4;
  b.r = 8;
  b.p = 6;
  b.q = 7;
  return b;
}

inline fme::FmeModel random_plain_model(std::mt19937_64& rng, int K, int G, const fme::BasisConfig& basis,
                                        double sd = 1.0) {
  fme::FmeModel m;
  m.basis = basis;
  m.gating = fme::GatingParams::zeros(K, basis.p, fme::Parameterization::Plain);
  m.gating.intercepts = random_vector(rng, K - 1, sd);
  m.gating.coeffs = random_matrix(rng, K - 1, basis.p, sd);
  m.experts = fme::ExpertParams::zeros(K, G, basis.q, fme::Parameterization::Plain);
  for (auto& e : m.experts.experts) {
    e.intercepts = random_vector(rng, G - 1, sd);
    e.coeffs = random_matrix(rng, G - 1, basis.q, sd);
  }
  return m;
}

/// Smooth random curves on a uniform grid with random labels in 1..G.
inline fme::FunctionalDataset random_dataset(std::mt19937_64& rng, int n, int G, int grid_len = 40,
                                             fme::Interval dom = {0.0, 1.0}) {
  fme::FunctionalDataset d;
  d.grid = Eigen::VectorXd::LinSpaced(grid_len, dom.lo, dom.hi);
  d.G = G;
  const fme::BSplineBasis b = fme::make_basis(4, 8, dom);
  const Eigen::MatrixXd colloc = fme::collocation_matrix(b, d.grid);
  d.curves = random_matrix(rng, n, 8) * colloc.transpose();
  std::uniform_int_distribution<int> lab(1, G);
  for (int i = 0; i < n; ++i) d.labels.push_back(i < G ? i + 1 : lab(rng));
  return d;
}

}  // namespace testing_helpers
