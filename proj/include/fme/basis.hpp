#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace fme {

/// Closed interval [lo, hi] with lo < hi.
struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  double width() const noexcept { return hi - lo; }
  bool contains(double t) const noexcept { return t >= lo && t <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Clamped B-spline system of a given order (degree + 1) and dimension on a
/// closed interval, with uniformly spaced interior knots.
///
/// The knot vector has dim + order entries; the first and last `order`
/// entries are replicated at the domain ends.
class BSplineBasis {
 public:
  BSplineBasis(int order, int dim, Interval domain);

  int order() const noexcept { return order_; }
  int dim() const noexcept { return dim_; }
  const Interval& domain() const noexcept { return domain_; }
  const Eigen::VectorXd& knots() const noexcept { return knots_; }

  /// Index of the knot span containing t, in [order-1, dim-1]. t = hi maps
  /// to the last nondegenerate span.
  int span(double t) const;

  /// Values of the `order` basis functions that may be nonzero at t; entry i
  /// belongs to basis function span(t) - order + 1 + i.
  Eigen::VectorXd nonzero_values(double t, int span_index) const;

  friend bool operator==(const BSplineBasis& a, const BSplineBasis& b) {
    return a.order_ == b.order_ && a.dim_ == b.dim_ && a.domain_ == b.domain_;
  }

 private:
  int order_;
  int dim_;
  Interval domain_;
  Eigen::VectorXd knots_;
};

/// Throws ConfigError when dim < order, order < 1 or the domain is empty.
BSplineBasis make_basis(int order, int dim, Interval domain);

/// Dense vector of all dim basis values at t. Throws DomainError outside T.
Eigen::VectorXd eval_basis(const BSplineBasis& basis, double t);

/// Collocation matrix: row i holds eval_basis(basis, grid[i]).
Eigen::MatrixXd collocation_matrix(const BSplineBasis& basis,
                                   const Eigen::Ref<const Eigen::VectorXd>& grid);

struct CurveCoefficients {
  Eigen::VectorXd coeffs;
  int basis_dim = 0;
  /// Root-mean-square residual of the fitted expansion on the sampling grid.
  double residual_rms = 0.0;
};

/// Least-squares projection of sampled curves onto a basis on a fixed grid.
/// The factorization of the collocation matrix is computed once and shared
/// by every curve projected through the same instance.
class CurveProjector {
 public:
  CurveProjector(const BSplineBasis& basis, const Eigen::VectorXd& grid);

  const BSplineBasis& basis() const noexcept { return basis_; }
  const Eigen::VectorXd& grid() const noexcept { return grid_; }

  CurveCoefficients project(const Eigen::Ref<const Eigen::VectorXd>& samples) const;

  /// Projects every row of `curves` (n x grid.size()); returns n x dim.
  Eigen::MatrixXd project_rows(const Eigen::Ref<const Eigen::MatrixXd>& curves) const;

 private:
  BSplineBasis basis_;
  Eigen::VectorXd grid_;
  Eigen::MatrixXd design_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

CurveCoefficients project_curve(const BSplineBasis& basis,
                                const Eigen::VectorXd& grid,
                                const Eigen::VectorXd& samples);

/// Pointwise values of the expansion coeffs^T b(t) on grid.
Eigen::VectorXd reconstruct(const BSplineBasis& basis,
                            const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                            const Eigen::Ref<const Eigen::VectorXd>& grid);

struct CrossGram {
  /// (dim_a x dim_b), entry (a, b) = integral of b_a(t) b_b(t) over T.
  Eigen::MatrixXd matrix;
  /// Gauss-Legendre nodes used on each knot span.
  int quadrature_nodes = 0;
};

/// Exact (to rounding) integrals of products of basis functions, using
/// Gauss-Legendre quadrature on each span of the merged knot sequences.
CrossGram cross_gram(const BSplineBasis& basis_a, const BSplineBasis& basis_b);

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

/// dim equally spaced points strictly inside T, offset by half a spacing.
Eigen::VectorXd default_eval_points(const BSplineBasis& basis);

/// Finite-difference approximation of the d-th derivative of each basis
/// function at `eval_points` (which must be uniformly spaced); row j is
/// D^d b(t_j). The step is the spacing of eval_points. Stencils are central
/// where they fit inside T and shifted one-sided near the ends. d = 0 gives
/// plain evaluation.
Eigen::MatrixXd derivative_block(const BSplineBasis& basis, int d,
                                 const Eigen::VectorXd& eval_points);

/// Stacked derivative operator [D^{d1} b(t_j); D^{d2} b(t_j)] with the
/// inverse of the leading block and the chain map block_d2 * block_d1^{-1}.
struct DerivativeOperator {
  int d1 = 0;
  int d2 = 2;
  Eigen::VectorXd eval_points;
  Eigen::MatrixXd block_d1;
  Eigen::MatrixXd block_d2;
  Eigen::MatrixXd block_d1_inverse;
  Eigen::MatrixXd chain;
  double condition = 0.0;

  /// [block_d1; block_d2], shape 2 dim x dim.
  Eigen::MatrixXd stacked() const;
  int dim() const noexcept { return static_cast<int>(block_d1.cols()); }
};

/// Largest accepted 2-norm condition number of block_d1.
inline constexpr double kMaxOperatorCondition = 1e12;

/// Requires 0 <= d1 < d2 < order. Throws OperatorError when block_d1 is
/// numerically singular (always the case for d1 >= 1, since finite
/// differences annihilate the constant function).
DerivativeOperator derivative_operator(const BSplineBasis& basis, int d1, int d2);

/// Assembles the operator from explicit blocks (used when loading a model).
DerivativeOperator derivative_operator_from_blocks(int d1, int d2,
                                                   Eigen::VectorXd eval_points,
                                                   Eigen::MatrixXd block_d1,
                                                   Eigen::MatrixXd block_d2);

}  // namespace fme
