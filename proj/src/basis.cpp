#include "fme/basis.hpp"

#include "fme/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace fme {

namespace {

void require_finite_grid(const Eigen::Ref<const Eigen::VectorXd>& grid,
                         const Interval& domain) {
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i])) throw NumericError("grid contains a non-finite value");
    if (!domain.contains(grid[i]))
      throw DomainError("grid point " + std::to_string(grid[i]) + " lies outside the basis domain");
  }
}

// Fornberg's recursion: weights of the `deriv`-th derivative at x0 for the
// stencil nodes xs.
std::vector<double> fd_weights(double x0, const std::vector<double>& xs, int deriv) {
  const int n = static_cast<int>(xs.size());
  std::vector<std::vector<double>> c(n, std::vector<double>(deriv + 1, 0.0));
  double c1 = 1.0;
  double c4 = xs[0] - x0;
  c[0][0] = 1.0;
  for (int i = 1; i < n; ++i) {
    const int mn = std::min(i, deriv);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = xs[i] - x0;
    for (int j = 0; j < i; ++j) {
      const double c3 = xs[i] - xs[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k)
          c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
        c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
      }
      for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
      c[j][0] = c4 * c[j][0] / c3;
    }
    c1 = c2;
  }
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = c[i][deriv];
  return w;
}

}  // namespace

BSplineBasis::BSplineBasis(int order, int dim, Interval domain)
    : order_(order), dim_(dim), domain_(domain) {
  if (order < 1) throw ConfigError("B-spline order must be at least 1");
  if (dim < order)
    throw ConfigError("B-spline dimension " + std::to_string(dim) +
                      " is smaller than the order " + std::to_string(order));
  if (!(domain.lo < domain.hi) || !std::isfinite(domain.lo) || !std::isfinite(domain.hi))
    throw ConfigError("B-spline domain must be a nondegenerate finite interval");

  knots_.resize(dim + order);
  const int interior = dim - order;
  const double step = domain.width() / (interior + 1);
  for (int i = 0; i < order; ++i) {
    knots_[i] = domain.lo;
    knots_[dim + i] = domain.hi;
  }
  for (int j = 1; j <= interior; ++j) knots_[order - 1 + j] = domain.lo + j * step;
}

int BSplineBasis::span(double t) const {
  if (t >= domain_.hi) return dim_ - 1;
  const auto* first = knots_.data() + order_ - 1;
  const auto* last = knots_.data() + dim_ + 1;
  const auto* it = std::upper_bound(first, last, t);
  return static_cast<int>(it - knots_.data()) - 1;
}

Eigen::VectorXd BSplineBasis::nonzero_values(double t, int mu) const {
  const int p = order_ - 1;
  Eigen::VectorXd n(order_), left(order_), right(order_);
  n[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - knots_[mu + 1 - j];
    right[j] = knots_[mu + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }
  return n;
}

BSplineBasis make_basis(int order, int dim, Interval domain) {
  return BSplineBasis(order, dim, domain);
}

Eigen::VectorXd eval_basis(const BSplineBasis& basis, double t) {
  if (!std::isfinite(t)) throw NumericError("evaluation point is not finite");
  if (!basis.domain().contains(t))
    throw DomainError("evaluation point " + std::to_string(t) + " lies outside the basis domain");
  Eigen::VectorXd values = Eigen::VectorXd::Zero(basis.dim());
  const int mu = basis.span(t);
  values.segment(mu - basis.order() + 1, basis.order()) = basis.nonzero_values(t, mu);
  return values;
}

Eigen::MatrixXd collocation_matrix(const BSplineBasis& basis,
                                   const Eigen::Ref<const Eigen::VectorXd>& grid) {
  require_finite_grid(grid, basis.domain());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(grid.size(), basis.dim());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const int mu = basis.span(grid[i]);
    m.row(i).segment(mu - basis.order() + 1, basis.order()) =
        basis.nonzero_values(grid[i], mu).transpose();
  }
  return m;
}

CurveProjector::CurveProjector(const BSplineBasis& basis, const Eigen::VectorXd& grid)
    : basis_(basis), grid_(grid) {
  if (grid.size() < basis.dim())
    throw RankError("projection is underdetermined: " + std::to_string(grid.size()) +
                    " samples for a basis of dimension " + std::to_string(basis.dim()));
  for (Eigen::Index i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ConfigError("projection grid must be strictly increasing");
  design_ = collocation_matrix(basis, grid);
  qr_.compute(design_);
  if (qr_.rank() < basis.dim())
    throw RankError("collocation matrix has rank " + std::to_string(qr_.rank()) +
                    " < basis dimension " + std::to_string(basis.dim()));
}

CurveCoefficients CurveProjector::project(const Eigen::Ref<const Eigen::VectorXd>& samples) const {
  if (samples.size() != grid_.size())
    throw ConfigError("sample count does not match the projection grid");
  if (!samples.allFinite()) throw NumericError("curve samples contain non-finite values");
  CurveCoefficients out;
  out.coeffs = qr_.solve(samples);
  out.basis_dim = basis_.dim();
  out.residual_rms = std::sqrt((design_ * out.coeffs - samples).squaredNorm() /
                               static_cast<double>(samples.size()));
  return out;
}

Eigen::MatrixXd CurveProjector::project_rows(const Eigen::Ref<const Eigen::MatrixXd>& curves) const {
  if (curves.cols() != grid_.size())
    throw ConfigError("curve length does not match the projection grid");
  if (!curves.allFinite()) throw NumericError("curve samples contain non-finite values");
  return qr_.solve(curves.transpose()).transpose();
}

CurveCoefficients project_curve(const BSplineBasis& basis, const Eigen::VectorXd& grid,
                                const Eigen::VectorXd& samples) {
  return CurveProjector(basis, grid).project(samples);
}

Eigen::VectorXd reconstruct(const BSplineBasis& basis,
                            const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                            const Eigen::Ref<const Eigen::VectorXd>& grid) {
  if (coeffs.size() != basis.dim())
    throw ConfigError("coefficient vector length " + std::to_string(coeffs.size()) +
                      " does not match basis dimension " + std::to_string(basis.dim()));
  return collocation_matrix(basis, grid) * coeffs;
}

void gauss_legendre(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / j;
      }
      dp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

CrossGram cross_gram(const BSplineBasis& basis_a, const BSplineBasis& basis_b) {
  if (!(basis_a.domain() == basis_b.domain()))
    throw ConfigError("cross-Gram requires bases on identical domains");

  std::vector<double> breaks(basis_a.knots().data(), basis_a.knots().data() + basis_a.knots().size());
  breaks.insert(breaks.end(), basis_b.knots().data(), basis_b.knots().data() + basis_b.knots().size());
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  CrossGram out;
  out.quadrature_nodes = basis_a.order() + basis_b.order();
  Eigen::VectorXd nodes, weights;
  gauss_legendre(out.quadrature_nodes, nodes, weights);

  out.matrix = Eigen::MatrixXd::Zero(basis_a.dim(), basis_b.dim());
  for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
    const double lo = breaks[s], hi = breaks[s + 1];
    const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    for (int q = 0; q < out.quadrature_nodes; ++q) {
      const double t = mid + half * nodes[q];
      const int mu_a = basis_a.span(t), mu_b = basis_b.span(t);
      const Eigen::VectorXd va = basis_a.nonzero_values(t, mu_a);
      const Eigen::VectorXd vb = basis_b.nonzero_values(t, mu_b);
      out.matrix.block(mu_a - basis_a.order() + 1, mu_b - basis_b.order() + 1,
                       basis_a.order(), basis_b.order()) +=
          (half * weights[q]) * va * vb.transpose();
    }
  }
  if (basis_a == basis_b)
    out.matrix.triangularView<Eigen::StrictlyLower>() = out.matrix.transpose().triangularView<Eigen::StrictlyLower>();
  return out;
}

Eigen::VectorXd default_eval_points(const BSplineBasis& basis) {
  const int m = basis.dim();
  const double h = basis.domain().width() / m;
  Eigen::VectorXd pts(m);
  for (int j = 0; j < m; ++j) pts[j] = basis.domain().lo + (j + 0.5) * h;
  return pts;
}

Eigen::MatrixXd derivative_block(const BSplineBasis& basis, int d,
                                 const Eigen::VectorXd& eval_points) {
  if (d < 0) throw ConfigError("derivative order must be nonnegative");
  const Eigen::Index m = eval_points.size();
  if (m == 0) throw ConfigError("derivative block needs at least one evaluation point");
  if (d == 0) return collocation_matrix(basis, eval_points);
  if (m < 2) throw ConfigError("finite differences need at least two evaluation points");

  const double h = eval_points[1] - eval_points[0];
  for (Eigen::Index j = 1; j < m; ++j)
    if (std::abs(eval_points[j] - eval_points[j - 1] - h) > 1e-9 * std::abs(h))
      throw ConfigError("finite differences require uniformly spaced evaluation points");

  // Symmetric stencils: d + 1 nodes for even d, d + 2 for odd d.
  const int half = (d + 1) / 2;
  const int width = 2 * half + 1;
  const Interval& dom = basis.domain();
  const double slack = 1e-12 * dom.width();
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(m, basis.dim());
  for (Eigen::Index j = 0; j < m; ++j) {
    const double tj = eval_points[j];
    int lo = -half;
    while (tj + lo * h < dom.lo - slack) ++lo;
    while (tj + (lo + width - 1) * h > dom.hi + slack) --lo;
    if (tj + lo * h < dom.lo - slack)
      throw ConfigError("finite-difference stencil does not fit inside the domain");
    std::vector<double> xs(width);
    for (int s = 0; s < width; ++s) xs[s] = (lo + s) * h;
    const std::vector<double> w = fd_weights(0.0, xs, d);
    for (int s = 0; s < width; ++s) {
      if (w[s] == 0.0) continue;
      const double t = std::clamp(tj + xs[s], dom.lo, dom.hi);
      block.row(j) += w[s] * eval_basis(basis, t).transpose();
    }
  }
  return block;
}

Eigen::MatrixXd DerivativeOperator::stacked() const {
  Eigen::MatrixXd a(block_d1.rows() + block_d2.rows(), block_d1.cols());
  a << block_d1, block_d2;
  return a;
}

DerivativeOperator derivative_operator_from_blocks(int d1, int d2, Eigen::VectorXd eval_points,
                                                   Eigen::MatrixXd block_d1,
                                                   Eigen::MatrixXd block_d2) {
  if (block_d1.rows() != block_d1.cols() || block_d2.rows() != block_d1.rows() ||
      block_d2.cols() != block_d1.cols())
    throw ConfigError("derivative operator blocks must be square and of equal size");
  DerivativeOperator op;
  op.d1 = d1;
  op.d2 = d2;
  op.eval_points = std::move(eval_points);
  op.block_d1 = std::move(block_d1);
  op.block_d2 = std::move(block_d2);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(op.block_d1);
  const auto& sv = svd.singularValues();
  const double smin = sv[sv.size() - 1];
  op.condition = smin > 0.0 ? sv[0] / smin : std::numeric_limits<double>::infinity();
  if (!(op.condition <= kMaxOperatorCondition))
    throw OperatorError("derivative block of order " + std::to_string(d1) +
                            " is singular (condition number " + std::to_string(op.condition) + ")",
                        op.condition);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(op.block_d1);
  op.block_d1_inverse = lu.inverse();
  op.chain = op.block_d2 * op.block_d1_inverse;
  return op;
}

DerivativeOperator derivative_operator(const BSplineBasis& basis, int d1, int d2) {
  if (d1 < 0 || d2 <= d1)
    throw ConfigError("derivative orders must satisfy 0 <= d1 < d2");
  if (d2 >= basis.order())
    throw ConfigError("derivative order " + std::to_string(d2) +
                      " is not below the spline order " + std::to_string(basis.order()));
  Eigen::VectorXd pts = default_eval_points(basis);
  Eigen::MatrixXd b1 = derivative_block(basis, d1, pts);
  Eigen::MatrixXd b2 = derivative_block(basis, d2, pts);
  return derivative_operator_from_blocks(d1, d2, std::move(pts), std::move(b1), std::move(b2));
}

}  // namespace fme
