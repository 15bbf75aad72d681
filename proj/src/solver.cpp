#include "fme/solver.hpp"

#include "fme/errors.hpp"
#include "fme/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace fme {

PwmlrParams PwmlrParams::zeros(Eigen::Index classes, Eigen::Index d) {
  return {Eigen::VectorXd::Zero(classes - 1), Eigen::MatrixXd::Zero(classes - 1, d)};
}

namespace {

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

void check_inputs(const Eigen::Ref<const Eigen::MatrixXd>& x,
                  const Eigen::Ref<const Eigen::MatrixXd>& targets,
                  const Eigen::Ref<const Eigen::VectorXd>& weights) {
  if (x.cols() < 1) throw ConfigError("design dimension must be at least 1");
  if (targets.rows() != x.rows() || weights.size() != x.rows())
    throw ConfigError("designs, targets and weights disagree on the number of observations");
  if (targets.cols() < 2) throw ConfigError("at least two classes are required");
  if (!x.allFinite() || !targets.allFinite() || !weights.allFinite())
    throw NumericError("solver inputs contain non-finite values");
  if ((weights.array() < 0.0).any()) throw ConfigError("weights must be nonnegative");
}

// Solver state lives on standardized designs z = (x - mean) / scale with an
// intercept column prepended. theta row c = [intercept, coefficients].
class Problem {
 public:
  Problem(const Eigen::Ref<const Eigen::MatrixXd>& x,
          const Eigen::Ref<const Eigen::MatrixXd>& targets,
          const Eigen::Ref<const Eigen::VectorXd>& weights, double l1_weight,
          const Eigen::MatrixXd* penalty_map)
      : t_(targets), w_(weights), d_(x.cols()), cp_(targets.cols() - 1) {
    const double wsum = weights.sum();
    mean_ = (x.transpose() * weights) / wsum;
    Eigen::MatrixXd centered = x.rowwise() - mean_.transpose();
    const double var = (centered.array().square().colwise() * weights.array()).sum() /
                       (wsum * static_cast<double>(d_));
    scale_ = var > 0.0 ? std::sqrt(var) : 1.0;
    z_.resize(x.rows(), d_ + 1);
    z_.col(0).setOnes();
    z_.rightCols(d_) = centered / scale_;
    tsum_ = targets.rowwise().sum();
    lambda_ = l1_weight / scale_;

    if (lambda_ > 0.0) {
      const Eigen::Index rd = penalty_map ? 2 * d_ : d_;
      dmap_.resize(rd, d_);
      dmap_.topRows(d_).setIdentity();
      if (penalty_map) {
        if (penalty_map->rows() != d_ || penalty_map->cols() != d_)
          throw ConfigError("penalty map must be square with the design dimension");
        dmap_.bottomRows(d_) = *penalty_map;
      }
      generalized_ = penalty_map != nullptr;
      e_ = Eigen::MatrixXd::Zero(cp_ * rd, size());
      for (Eigen::Index c = 0; c < cp_; ++c)
        e_.block(c * rd, c * (d_ + 1) + 1, rd, d_) = dmap_;
    }
  }

  Eigen::Index size() const { return cp_ * (d_ + 1); }
  Eigen::Index d() const { return d_; }
  Eigen::Index cp() const { return cp_; }
  bool penalized() const { return lambda_ > 0.0; }
  bool generalized() const { return generalized_; }
  double lambda() const { return lambda_; }
  const Eigen::MatrixXd& e() const { return e_; }
  bool is_intercept(Eigen::Index idx) const { return idx % (d_ + 1) == 0; }

  Eigen::VectorXd to_theta(const PwmlrParams& p) const {
    Eigen::VectorXd th(size());
    for (Eigen::Index c = 0; c < cp_; ++c) {
      th[c * (d_ + 1)] = p.intercepts[c] + p.coeffs.row(c).dot(mean_);
      th.segment(c * (d_ + 1) + 1, d_) = p.coeffs.row(c).transpose() * scale_;
    }
    return th;
  }

  PwmlrParams to_params(const Eigen::VectorXd& th) const {
    PwmlrParams p = PwmlrParams::zeros(cp_ + 1, d_);
    for (Eigen::Index c = 0; c < cp_; ++c) {
      p.coeffs.row(c) = th.segment(c * (d_ + 1) + 1, d_).transpose() / scale_;
      p.intercepts[c] = th[c * (d_ + 1)] - p.coeffs.row(c).dot(mean_);
    }
    return p;
  }

  double penalty(const Eigen::VectorXd& th) const {
    if (!penalized()) return 0.0;
    return lambda_ * (e_ * th).lpNorm<1>();
  }

  // Smooth part; fills gradient and Hessian when requested.
  double smooth(const Eigen::VectorXd& th, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const {
    const Eigen::Index n = z_.rows();
    Eigen::MatrixXd scores(n, cp_);
    for (Eigen::Index c = 0; c < cp_; ++c) scores.col(c) = z_ * th.segment(c * (d_ + 1), d_ + 1);
    Eigen::MatrixXd probs(n, cp_ + 1);
    double f = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd lp = log_softmax_with_reference(scores.row(i).transpose());
      f -= w_[i] * t_.row(i).dot(lp);
      probs.row(i) = lp.array().exp().transpose();
    }
    if (grad) {
      grad->resize(size());
      for (Eigen::Index c = 0; c < cp_; ++c) {
        const Eigen::VectorXd r =
            w_.array() * (tsum_.array() * probs.col(c).array() - t_.col(c).array());
        grad->segment(c * (d_ + 1), d_ + 1) = z_.transpose() * r;
      }
    }
    if (hess) {
      hess->resize(size(), size());
      const Eigen::ArrayXd wt = w_.array() * tsum_.array();
      for (Eigen::Index c = 0; c < cp_; ++c) {
        for (Eigen::Index c2 = c; c2 < cp_; ++c2) {
          Eigen::ArrayXd h = -wt * probs.col(c).array() * probs.col(c2).array();
          if (c == c2) h += wt * probs.col(c).array();
          const Eigen::MatrixXd blk = z_.transpose() * (z_.array().colwise() * h).matrix();
          hess->block(c * (d_ + 1), c2 * (d_ + 1), d_ + 1, d_ + 1) = blk;
          if (c2 != c) hess->block(c2 * (d_ + 1), c * (d_ + 1), d_ + 1, d_ + 1) = blk.transpose();
        }
      }
    }
    return f;
  }

  double objective(const Eigen::VectorXd& th) const { return smooth(th, nullptr, nullptr) + penalty(th); }

 private:
  Eigen::MatrixXd z_;
  Eigen::MatrixXd t_;
  Eigen::VectorXd w_;
  Eigen::VectorXd tsum_;
  Eigen::VectorXd mean_;
  double scale_ = 1.0;
  double lambda_ = 0.0;
  Eigen::Index d_;
  Eigen::Index cp_;
  bool generalized_ = false;
  Eigen::MatrixXd dmap_;
  Eigen::MatrixXd e_;
};

// Minimizes g'(x - th) + 0.5 (x - th)' H (x - th) + lambda ||x_coef||_1 by
// cyclic coordinate descent.
Eigen::VectorXd lasso_subproblem(const Problem& pb, const Eigen::VectorXd& th,
                                 const Eigen::VectorXd& g, const Eigen::MatrixXd& h) {
  Eigen::VectorXd x = th;
  Eigen::VectorXd hdelta = Eigen::VectorXd::Zero(th.size());
  for (int sweep = 0; sweep < 2000; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      const double a = h(j, j);
      if (a <= 0.0) continue;
      const double grad_j = g[j] + hdelta[j];
      const double v = x[j] - grad_j / a;
      const double nx = pb.is_intercept(j) ? v : soft_threshold(v, pb.lambda() / a);
      const double change = nx - x[j];
      if (change != 0.0) {
        hdelta += change * h.col(j);
        x[j] = nx;
        max_change = std::max(max_change, std::abs(change));
      }
    }
    if (max_change <= 1e-12 * (1.0 + x.lpNorm<Eigen::Infinity>())) break;
  }
  return x;
}

struct AdmmState {
  Eigen::VectorXd z;
  Eigen::VectorXd y;  // scaled dual
  double rho = 1.0;
};

// Generalized-lasso subproblem with auxiliary z = E x.
Eigen::VectorXd admm_subproblem(const Problem& pb, const Eigen::VectorXd& th,
                                const Eigen::VectorXd& g, const Eigen::MatrixXd& h,
                                AdmmState& st, const SolverOptions& opt) {
  const Eigen::MatrixXd& e = pb.e();
  const Eigen::MatrixXd ete = e.transpose() * e;
  const Eigen::VectorXd rhs0 = h * th - g;
  Eigen::LLT<Eigen::MatrixXd> llt(h + st.rho * ete);
  Eigen::VectorXd x = th;
  for (int it = 0; it < opt.admm_max_iters; ++it) {
    x = llt.solve(rhs0 + st.rho * e.transpose() * (st.z - st.y));
    const Eigen::VectorXd ex = e * x;
    const Eigen::VectorXd z_old = st.z;
    const double t = pb.lambda() / st.rho;
    st.z = (ex + st.y).unaryExpr([t](double v) { return soft_threshold(v, t); });
    st.y += ex - st.z;
    const double primal = (ex - st.z).lpNorm<Eigen::Infinity>();
    const double dual = st.rho * (e.transpose() * (st.z - z_old)).lpNorm<Eigen::Infinity>();
    const double scale = 1.0 + std::max(ex.lpNorm<Eigen::Infinity>(), st.z.lpNorm<Eigen::Infinity>());
    if (primal <= opt.admm_tol * scale && dual <= opt.admm_tol * (1.0 + g.lpNorm<Eigen::Infinity>()))
      break;
    if (primal > 10.0 * dual || dual > 10.0 * primal) {
      const double factor = primal > dual ? 2.0 : 0.5;
      st.rho *= factor;
      st.y /= factor;
      llt.compute(h + st.rho * ete);
    }
  }
  return x;
}

// Rows of E (per class) whose image is pinned to zero, then Newton on the
// remaining piecewise-smooth objective inside the null space of those rows.
Eigen::VectorXd polish(const Problem& pb, const Eigen::VectorXd& th,
                       const std::vector<bool>& zero_rows) {
  const Eigen::Index n = th.size();
  const Eigen::Index d = pb.d();
  const Eigen::Index rd = pb.generalized() ? 2 * d : d;
  const Eigen::MatrixXd& e = pb.e();

  // Basis of the admissible subspace, built class by class.
  std::vector<Eigen::VectorXd> cols;
  for (Eigen::Index c = 0; c < pb.cp(); ++c) {
    const Eigen::Index off = c * (d + 1);
    cols.push_back(Eigen::VectorXd::Unit(n, off));
    std::vector<Eigen::Index> free_coords;
    for (Eigen::Index j = 0; j < d; ++j)
      if (!zero_rows[c * rd + j]) free_coords.push_back(j);
    if (free_coords.empty()) continue;
    std::vector<Eigen::Index> pinned;
    for (Eigen::Index j = d; j < rd; ++j)
      if (zero_rows[c * rd + j]) pinned.push_back(j);
    Eigen::MatrixXd kernel;
    if (pinned.empty()) {
      kernel = Eigen::MatrixXd::Identity(free_coords.size(), free_coords.size());
    } else {
      Eigen::MatrixXd rows(pinned.size(), free_coords.size());
      for (std::size_t a = 0; a < pinned.size(); ++a)
        for (std::size_t b = 0; b < free_coords.size(); ++b)
          rows(a, b) = e(c * rd + pinned[a], off + 1 + free_coords[b]);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows, Eigen::ComputeFullV);
      const auto& sv = svd.singularValues();
      const double tol = 1e-10 * std::max(1.0, sv.size() ? sv[0] : 0.0);
      Eigen::Index rank = 0;
      for (Eigen::Index k = 0; k < sv.size(); ++k)
        if (sv[k] > tol) ++rank;
      kernel = svd.matrixV().rightCols(free_coords.size() - rank);
    }
    for (Eigen::Index k = 0; k < kernel.cols(); ++k) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
      for (std::size_t b = 0; b < free_coords.size(); ++b) v[off + 1 + free_coords[b]] = kernel(b, k);
      cols.push_back(std::move(v));
    }
  }
  Eigen::MatrixXd basis(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) basis.col(k) = cols[k];

  Eigen::VectorXd phi = basis.transpose() * th;
  Eigen::VectorXd cur = basis * phi;
  double f_cur = pb.objective(cur);
  const Eigen::MatrixXd eb = e * basis;
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd g;
    Eigen::MatrixXd h;
    pb.smooth(cur, &g, &h);
    Eigen::VectorXd sgn = (eb * phi).unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
    for (Eigen::Index r = 0; r < sgn.size(); ++r)
      if (zero_rows[r]) sgn[r] = 0.0;
    const Eigen::VectorXd gr = basis.transpose() * g + pb.lambda() * eb.transpose() * sgn;
    Eigen::MatrixXd hr = basis.transpose() * h * basis;
    hr.diagonal().array() += 1e-10 * std::max(1.0, hr.diagonal().mean());
    const Eigen::VectorXd step = -hr.ldlt().solve(gr);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::VectorXd cand_phi = phi + t * step;
      const Eigen::VectorXd cand = basis * cand_phi;
      const double f_new = pb.objective(cand);
      if (f_new <= f_cur + 1e-4 * t * gr.dot(step)) {
        moved = f_new < f_cur;
        phi = cand_phi;
        cur = cand;
        f_cur = f_new;
        break;
      }
      t *= 0.5;
    }
    if (!moved || (t * step).lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + phi.lpNorm<Eigen::Infinity>()))
      break;
  }
  return cur;
}

}  // namespace

double pwmlr_nll(const Eigen::Ref<const Eigen::MatrixXd>& designs,
                 const Eigen::Ref<const Eigen::MatrixXd>& targets,
                 const Eigen::Ref<const Eigen::VectorXd>& weights, const PwmlrParams& params) {
  double f = 0.0;
  for (Eigen::Index i = 0; i < designs.rows(); ++i) {
    if (weights[i] == 0.0) continue;
    const Eigen::VectorXd lp =
        log_softmax_with_reference(params.intercepts + params.coeffs * designs.row(i).transpose());
    f -= weights[i] * targets.row(i).dot(lp);
  }
  return f;
}

PwmlrParams pwmlr_nll_gradient(const Eigen::Ref<const Eigen::MatrixXd>& designs,
                               const Eigen::Ref<const Eigen::MatrixXd>& targets,
                               const Eigen::Ref<const Eigen::VectorXd>& weights,
                               const PwmlrParams& params) {
  PwmlrParams g = PwmlrParams::zeros(targets.cols(), designs.cols());
  const Eigen::Index cp = targets.cols() - 1;
  for (Eigen::Index i = 0; i < designs.rows(); ++i) {
    const Eigen::VectorXd p =
        log_softmax_with_reference(params.intercepts + params.coeffs * designs.row(i).transpose())
            .array()
            .exp();
    const double tsum = targets.row(i).sum();
    const Eigen::VectorXd r = weights[i] * (tsum * p.head(cp) - targets.row(i).head(cp).transpose());
    g.intercepts += r;
    g.coeffs += r * designs.row(i);
  }
  return g;
}

double pwmlr_penalty(const PwmlrParams& params, double l1_weight, const Eigen::MatrixXd* penalty_map) {
  if (l1_weight == 0.0) return 0.0;
  double s = 0.0;
  for (Eigen::Index c = 0; c < params.coeffs.rows(); ++c) {
    s += params.coeffs.row(c).lpNorm<1>();
    if (penalty_map) s += (*penalty_map * params.coeffs.row(c).transpose()).lpNorm<1>();
  }
  return l1_weight * s;
}

PwmlrResult solve_pwmlr(const Eigen::Ref<const Eigen::MatrixXd>& designs,
                        const Eigen::Ref<const Eigen::MatrixXd>& targets,
                        const Eigen::Ref<const Eigen::VectorXd>& weights, double l1_weight,
                        const Eigen::MatrixXd* penalty_map, const PwmlrParams* warm_start,
                        const SolverOptions& options) {
  check_inputs(designs, targets, weights);
  if (!(l1_weight >= 0.0)) throw ConfigError("l1 weight must be nonnegative");
  const Eigen::Index classes = targets.cols();
  const Eigen::Index d = designs.cols();
  PwmlrParams start = warm_start ? *warm_start : PwmlrParams::zeros(classes, d);
  if (start.intercepts.size() != classes - 1 || start.coeffs.rows() != classes - 1 ||
      start.coeffs.cols() != d)
    throw ConfigError("warm start has the wrong shape");

  auto raw_objective = [&](const PwmlrParams& p) {
    return pwmlr_objective(designs, targets, weights, l1_weight, penalty_map, p);
  };

  PwmlrResult result;
  const double wsum = weights.sum();
  if (!(wsum > 1e-12)) {
    result.params = start;
    result.objective = raw_objective(start);
    result.converged = true;
    return result;
  }

  const Problem pb(designs, targets, weights, l1_weight, penalty_map);
  const PwmlrParams zero = PwmlrParams::zeros(classes, d);
  const double f_start = raw_objective(start);
  const double f_zero = raw_objective(zero);
  const PwmlrParams& origin = f_zero < f_start ? zero : start;
  const double f_origin = std::min(f_zero, f_start);

  Eigen::VectorXd th = pb.to_theta(origin);
  double f = pb.objective(th);
  AdmmState admm;
  admm.rho = options.admm_rho;
  if (pb.penalized()) {
    admm.z = pb.e() * th;
    admm.y = Eigen::VectorXd::Zero(admm.z.size());
  }
  Eigen::VectorXd last_image;
  bool last_full_step = false;

  for (int it = 0; it < options.max_outer_iters; ++it) {
    result.iterations = it + 1;
    Eigen::VectorXd g;
    Eigen::MatrixXd h;
    pb.smooth(th, &g, &h);
    h.diagonal().array() += 1e-10 * std::max(1.0, h.diagonal().mean());

    Eigen::VectorXd target;
    if (!pb.penalized()) {
      target = th - h.ldlt().solve(g);
    } else if (!pb.generalized()) {
      target = lasso_subproblem(pb, th, g, h);
      last_image = pb.e() * target;
    } else {
      target = admm_subproblem(pb, th, g, h, admm, options);
      last_image = admm.z;
    }
    const Eigen::VectorXd delta = target - th;
    const double decrease = g.dot(delta) + pb.penalty(target) - pb.penalty(th);

    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd cand = th + t * delta;
      const double f_new = pb.objective(cand);
      if (f_new <= f + 1e-4 * t * std::min(decrease, 0.0)) {
        accepted = f_new <= f;
        if (accepted) {
          th = cand;
          f = f_new;
        }
        break;
      }
      t *= 0.5;
    }
    last_full_step = accepted && t == 1.0;
    const double step = t * delta.lpNorm<Eigen::Infinity>();
    if (!accepted || step <= options.tol * std::max(1.0, th.lpNorm<Eigen::Infinity>())) {
      result.converged = accepted || delta.lpNorm<Eigen::Infinity>() <=
                                         options.tol * std::max(1.0, th.lpNorm<Eigen::Infinity>());
      break;
    }
  }

  if (pb.penalized()) {
    const Eigen::VectorXd image = pb.e() * th;
    const double tol = 1e-9 * (1.0 + image.lpNorm<Eigen::Infinity>());
    std::vector<bool> zero_rows(image.size());
    for (Eigen::Index r = 0; r < image.size(); ++r)
      zero_rows[r] = (last_full_step && last_image.size() == image.size() && last_image[r] == 0.0)
                         ? std::abs(image[r]) <= 1e-6 * (1.0 + image.lpNorm<Eigen::Infinity>())
                         : std::abs(image[r]) <= tol;
    const Eigen::VectorXd polished = polish(pb, th, zero_rows);
    const double f_pol = pb.objective(polished);
    if (f_pol <= f + 1e-9 * (1.0 + std::abs(f))) {
      th = polished;
      f = f_pol;
    }
  }

  result.params = pb.to_params(th);
  result.objective = raw_objective(result.params);
  if (!(result.objective <= f_origin)) {
    result.params = origin;
    result.objective = f_origin;
  }
  return result;
}

}  // namespace fme
