#include "oracles.hpp"

#include <cmath>
#include <limits>

namespace oracle {

double bspline(const Eigen::VectorXd& knots, int order, int i, double t) {
  const Eigen::Index n = knots.size();
  if (order == 1) {
    const double lo = knots[i], hi = knots[i + 1];
    if (lo < hi && t >= lo && t < hi) return 1.0;
    // Closed right end: the last nondegenerate span owns t = knots[n-1].
    if (t == knots[n - 1] && hi == knots[n - 1] && lo < hi) return 1.0;
    return 0.0;
  }
  double left = 0.0, right = 0.0;
  const double dl = knots[i + order - 1] - knots[i];
  const double dr = knots[i + order] - knots[i + 1];
  if (dl > 0.0) left = (t - knots[i]) / dl * bspline(knots, order - 1, i, t);
  if (dr > 0.0) right = (knots[i + order] - t) / dr * bspline(knots, order - 1, i + 1, t);
  return left + right;
}

double basis_integral(const Eigen::VectorXd& knots, int order, int a, int panels) {
  const double lo = knots[0], hi = knots[knots.size() - 1];
  const double h = (hi - lo) / panels;
  double s = bspline(knots, order, a, lo) + bspline(knots, order, a, hi);
  for (int j = 1; j < panels; ++j) s += (j % 2 ? 4.0 : 2.0) * bspline(knots, order, a, lo + j * h);
  return s * h / 3.0;
}

namespace {

Eigen::VectorXd probs_from(const Eigen::VectorXd& scores) {
  // Reference class with score 0 appended last.
  const Eigen::Index C = scores.size() + 1;
  Eigen::VectorXd e(C);
  const double m = std::max(0.0, scores.size() ? scores.maxCoeff() : 0.0);
  for (Eigen::Index c = 0; c + 1 < C; ++c) e[c] = std::exp(scores[c] - m);
  e[C - 1] = std::exp(-m);
  return e / e.sum();
}

}  // namespace

MultinomialFit irls_multinomial(const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets,
                                const Eigen::VectorXd& weights, int max_iter) {
  const Eigen::Index n = x.rows(), d = x.cols(), C = targets.cols();
  const Eigen::Index m = C - 1, block = d + 1, dim = m * block;
  Eigen::MatrixXd xt(n, block);
  xt.col(0).setOnes();
  xt.rightCols(d) = x;

  auto nll = [&](const Eigen::VectorXd& theta) {
    double f = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd s(m);
      for (Eigen::Index c = 0; c < m; ++c) s[c] = xt.row(i).dot(theta.segment(c * block, block));
      const Eigen::VectorXd p = probs_from(s);
      for (Eigen::Index c = 0; c < C; ++c)
        if (targets(i, c) > 0.0) f -= weights[i] * targets(i, c) * std::log(p[c]);
    }
    return f;
  };

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim);
  MultinomialFit out;
  double f = nll(theta);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd s(m);
      for (Eigen::Index c = 0; c < m; ++c) s[c] = xt.row(i).dot(theta.segment(c * block, block));
      const Eigen::VectorXd p = probs_from(s);
      const double ti = targets.row(i).sum();
      for (Eigen::Index a = 0; a < m; ++a) {
        grad.segment(a * block, block) += weights[i] * (ti * p[a] - targets(i, a)) * xt.row(i).transpose();
        for (Eigen::Index b = 0; b < m; ++b) {
          const double v = weights[i] * ti * ((a == b ? p[a] : 0.0) - p[a] * p[b]);
          hess.block(a * block, b * block, block, block) += v * xt.row(i).transpose() * xt.row(i);
        }
      }
    }
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    double t = 1.0;
    Eigen::VectorXd next = theta - step;
    double fn = nll(next);
    while (fn > f && t > 1e-10) {
      t *= 0.5;
      next = theta - t * step;
      fn = nll(next);
    }
    out.iterations = it + 1;
    const bool small = step.lpNorm<Eigen::Infinity>() * t < 1e-12 * (1.0 + theta.lpNorm<Eigen::Infinity>());
    theta = next;
    f = fn;
    if (small) {
      out.converged = true;
      break;
    }
  }
  out.intercepts.resize(m);
  out.coeffs.resize(m, d);
  for (Eigen::Index c = 0; c < m; ++c) {
    out.intercepts[c] = theta[c * block];
    out.coeffs.row(c) = theta.segment(c * block + 1, d).transpose();
  }
  return out;
}

Eigen::VectorXd direct_softmax(const Eigen::VectorXd& intercepts, const Eigen::MatrixXd& coeffs,
                               const Eigen::VectorXd& x) {
  const Eigen::Index C = intercepts.size() + 1;
  Eigen::VectorXd e(C);
  for (Eigen::Index c = 0; c + 1 < C; ++c) e[c] = std::exp(intercepts[c] + coeffs.row(c).dot(x));
  e[C - 1] = 1.0;
  return e / e.sum();
}

Eigen::VectorXd direct_mixture(const fme::FmeModel& model, const Eigen::VectorXd& gating_design,
                               const Eigen::VectorXd& expert_design) {
  const Eigen::VectorXd pi = direct_softmax(model.gating.intercepts, model.gating.coeffs, gating_design);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(model.G());
  for (int k = 0; k < model.K(); ++k) {
    const auto& e = model.experts.experts[k];
    out += pi[k] * direct_softmax(e.intercepts, e.coeffs, expert_design);
  }
  return out;
}

double direct_log_likelihood(const fme::FmeModel& model, const fme::DesignBundle& designs) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < designs.n(); ++i) {
    const Eigen::VectorXd p =
        direct_mixture(model, designs.gating.row(i).transpose(), designs.expert.row(i).transpose());
    total += std::log(p[designs.labels[i] - 1]);
  }
  return total;
}

double two_class_objective(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::VectorXd& w,
                           double l1, const Eigen::MatrixXd* m, const Eigen::VectorXd& theta) {
  const Eigen::Index d = x.cols();
  const double b = theta[0];
  const Eigen::VectorXd u = theta.tail(d);
  double f = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double s = b + x.row(i).dot(u);
    // -log p(y): class 1 has score s, class 2 has score 0.
    const double log1pe = s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    f += w[i] * (y[i] == 1 ? log1pe - s : log1pe);
  }
  double pen = u.lpNorm<1>();
  if (m) pen += (*m * u).lpNorm<1>();
  return f + l1 * pen;
}

GridResult grid_minimize(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::VectorXd& w,
                         double l1, const Eigen::MatrixXd* m, int points_per_axis, int levels) {
  const int dim = static_cast<int>(x.cols()) + 1;
  Eigen::VectorXd center = Eigen::VectorXd::Zero(dim);
  double half = 10.0;
  GridResult best{center, std::numeric_limits<double>::infinity()};
  const int P = points_per_axis;
  std::vector<int> idx(dim);
  for (int level = 0; level < levels; ++level) {
    const double step = 2.0 * half / (P - 1);
    std::fill(idx.begin(), idx.end(), 0);
    Eigen::VectorXd theta(dim);
    while (true) {
      bool inside = true;
      for (int a = 0; a < dim; ++a) {
        theta[a] = center[a] - half + step * idx[a];
        if (theta[a] < -10.0 - 1e-12 || theta[a] > 10.0 + 1e-12) inside = false;
      }
      if (inside) {
        const double v = two_class_objective(x, y, w, l1, m, theta);
        if (v < best.value) best = {theta, v};
      }
      int a = 0;
      while (a < dim && ++idx[a] == P) idx[a++] = 0;
      if (a == dim) break;
    }
    center = best.theta;
    half /= 4.0;
  }
  return best;
}

}  // namespace oracle
