#include "fme/model.hpp"

#include "fme/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fme {

const char* to_string(Parameterization p) noexcept {
  return p == Parameterization::Plain ? "plain" : "derivative";
}

GatingParams GatingParams::zeros(int K, int p, Parameterization param) {
  if (K < 1) throw ConfigError("number of experts must be at least 1");
  GatingParams g;
  g.K = K;
  g.intercepts = Eigen::VectorXd::Zero(K - 1);
  g.coeffs = Eigen::MatrixXd::Zero(K - 1, p);
  g.parameterization = param;
  return g;
}

ExpertParams ExpertParams::zeros(int K, int G, int q, Parameterization param) {
  if (G < 2) throw ConfigError("number of classes must be at least 2");
  ExpertParams e;
  e.G = G;
  e.parameterization = param;
  e.experts.assign(K, ExpertBlock{Eigen::VectorXd::Zero(G - 1), Eigen::MatrixXd::Zero(G - 1, q)});
  return e;
}

void FmeModel::validate() const {
  if (gating.parameterization != experts.parameterization)
    throw ConfigError("gating and expert parameterizations differ");
  if (gating.K != experts.K())
    throw ConfigError("gating has " + std::to_string(gating.K) + " components but there are " +
                      std::to_string(experts.K()) + " experts");
  if (gating.intercepts.size() != gating.K - 1 || gating.coeffs.rows() != gating.K - 1)
    throw ConfigError("gating blocks do not have K-1 rows");
  if (gating.K > 1 && gating.coeffs.cols() != basis.p)
    throw ConfigError("gating coefficient length differs from p");
  for (const auto& e : experts.experts) {
    if (e.intercepts.size() != experts.G - 1 || e.coeffs.rows() != experts.G - 1)
      throw ConfigError("expert blocks do not have G-1 rows");
    if (e.coeffs.cols() != basis.q) throw ConfigError("expert coefficient length differs from q");
    if (!e.intercepts.allFinite() || !e.coeffs.allFinite())
      throw NumericError("expert parameters contain non-finite values");
  }
  if (!gating.intercepts.allFinite() || !gating.coeffs.allFinite())
    throw NumericError("gating parameters contain non-finite values");
  if (parameterization() == Parameterization::DerivativeReparam) {
    if (!op_p || !op_q) throw ConfigError("derivative-form model lacks its operators");
    if (op_p->dim() != basis.p || op_q->dim() != basis.q)
      throw ConfigError("operator dimensions differ from p/q");
  }
}

void DesignBundle::validate() const {
  const Eigen::Index rows = gating.rows();
  if (expert.rows() != rows || static_cast<Eigen::Index>(labels.size()) != rows ||
      (curve_coeffs.size() > 0 && curve_coeffs.rows() != rows))
    throw ConfigError("design bundle fields disagree on the number of observations");
  if (!gating.allFinite() || !expert.allFinite())
    throw NumericError("design vectors contain non-finite values");
  for (int y : labels)
    if (y < 1 || y > G) throw ConfigError("label " + std::to_string(y) + " outside 1..G");
}

Eigen::VectorXd gating_log_probs(const GatingParams& gating,
                                 const Eigen::Ref<const Eigen::VectorXd>& design) {
  if (!design.allFinite()) throw NumericError("gating design contains non-finite values");
  if (gating.K == 1) return Eigen::VectorXd::Zero(1);
  if (design.size() != gating.coeffs.cols())
    throw ConfigError("gating design length " + std::to_string(design.size()) +
                      " differs from coefficient length " + std::to_string(gating.coeffs.cols()));
  return log_softmax_with_reference(gating.intercepts + gating.coeffs * design);
}

Eigen::VectorXd gating_probs(const GatingParams& gating,
                             const Eigen::Ref<const Eigen::VectorXd>& design) {
  return gating_log_probs(gating, design).array().exp();
}

Eigen::VectorXd expert_log_probs(const ExpertParams& experts, int k,
                                 const Eigen::Ref<const Eigen::VectorXd>& design) {
  if (k < 0 || k >= experts.K())
    throw std::out_of_range("expert index " + std::to_string(k) + " out of range");
  if (!design.allFinite()) throw NumericError("expert design contains non-finite values");
  const ExpertBlock& e = experts.experts[k];
  if (design.size() != e.coeffs.cols())
    throw ConfigError("expert design length " + std::to_string(design.size()) +
                      " differs from coefficient length " + std::to_string(e.coeffs.cols()));
  return log_softmax_with_reference(e.intercepts + e.coeffs * design);
}

Eigen::VectorXd expert_probs(const ExpertParams& experts, int k,
                             const Eigen::Ref<const Eigen::VectorXd>& design) {
  return expert_log_probs(experts, k, design).array().exp();
}

Eigen::VectorXd mixture_class_probs(const FmeModel& model,
                                    const Eigen::Ref<const Eigen::VectorXd>& gating_design,
                                    const Eigen::Ref<const Eigen::VectorXd>& expert_design) {
  const Eigen::VectorXd log_pi = gating_log_probs(model.gating, gating_design);
  Eigen::MatrixXd log_joint(model.G(), model.K());
  for (int k = 0; k < model.K(); ++k)
    log_joint.col(k) = expert_log_probs(model.experts, k, expert_design).array() + log_pi[k];
  Eigen::VectorXd out(model.G());
  for (int g = 0; g < model.G(); ++g) out[g] = std::exp(log_sum_exp(log_joint.row(g)));
  return out / out.sum();
}

void check_compatible(const FmeModel& model, const DesignBundle& designs) {
  if (model.parameterization() != designs.parameterization)
    throw ConfigError(std::string("model uses the ") + to_string(model.parameterization()) +
                      " parameterization but designs were built for " +
                      to_string(designs.parameterization));
  if (designs.G != model.G() && !designs.labels.empty()) {
    for (int y : designs.labels)
      if (y > model.G()) throw ConfigError("label exceeds the model's number of classes");
  }
}

double log_likelihood(const FmeModel& model, const DesignBundle& designs) {
  check_compatible(model, designs);
  if (designs.n() == 0) throw ConfigError("log-likelihood of an empty sample");
  double total = 0.0;
  Eigen::VectorXd terms(model.K());
  for (Eigen::Index i = 0; i < designs.n(); ++i) {
    const Eigen::VectorXd log_pi = gating_log_probs(model.gating, designs.gating.row(i).transpose());
    const int y = designs.labels[i] - 1;
    for (int k = 0; k < model.K(); ++k)
      terms[k] = log_pi[k] + expert_log_probs(model.experts, k, designs.expert.row(i).transpose())[y];
    total += log_sum_exp(terms);
  }
  return total;
}

DerivativeBlocks derivative_blocks(const DerivativeOperator& op,
                                   const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                                   Parameterization param) {
  DerivativeBlocks out;
  if (param == Parameterization::DerivativeReparam) {
    out.d1 = coeffs;
    out.d2 = op.chain * coeffs;
    const double scale = op.chain.cwiseAbs().rowwise().sum().maxCoeff() *
                         (coeffs.size() ? coeffs.cwiseAbs().maxCoeff() : 0.0);
    const double tol = 1e-9 * scale;
    for (Eigen::Index j = 0; j < out.d2.size(); ++j)
      if (std::abs(out.d2[j]) <= tol) out.d2[j] = 0.0;
  } else {
    out.d1 = op.block_d1 * coeffs;
    out.d2 = op.block_d2 * coeffs;
  }
  return out;
}

double penalty_value(const FmeModel& model, double chi, double lambda) {
  if (!(chi >= 0.0) || !(lambda >= 0.0))
    throw ConfigError("penalty weights must be nonnegative");
  const bool reparam = model.parameterization() == Parameterization::DerivativeReparam;
  if (reparam && (!model.op_p || !model.op_q))
    throw ConfigError("derivative-form model lacks its operators");
  auto block_norm = [&](const Eigen::Ref<const Eigen::VectorXd>& u, const DerivativeOperator* op) {
    double s = u.lpNorm<1>();
    if (op) s += (op->chain * u).lpNorm<1>();
    return s;
  };
  double total = 0.0;
  if (chi > 0.0)
    for (Eigen::Index k = 0; k < model.gating.coeffs.rows(); ++k)
      total += chi * block_norm(model.gating.coeffs.row(k).transpose(),
                                reparam ? &*model.op_p : nullptr);
  if (lambda > 0.0)
    for (const auto& e : model.experts.experts)
      for (Eigen::Index g = 0; g < e.coeffs.rows(); ++g)
        total += lambda * block_norm(e.coeffs.row(g).transpose(), reparam ? &*model.op_q : nullptr);
  return total;
}

int argmax_label(const Eigen::Ref<const Eigen::VectorXd>& probs) {
  Eigen::Index best = 0;
  for (Eigen::Index g = 1; g < probs.size(); ++g)
    if (probs[g] > probs[best]) best = g;
  return static_cast<int>(best) + 1;
}

Prediction predict(const FmeModel& model, const Eigen::Ref<const Eigen::VectorXd>& gating_design,
                   const Eigen::Ref<const Eigen::VectorXd>& expert_design) {
  Prediction p;
  p.class_probs = mixture_class_probs(model, gating_design, expert_design);
  p.cluster_probs = gating_probs(model.gating, gating_design);
  p.label = argmax_label(p.class_probs);
  return p;
}

std::vector<int> predict_labels(const FmeModel& model, const DesignBundle& designs) {
  check_compatible(model, designs);
  std::vector<int> labels(designs.n());
  for (Eigen::Index i = 0; i < designs.n(); ++i)
    labels[i] = argmax_label(mixture_class_probs(model, designs.gating.row(i).transpose(),
                                                 designs.expert.row(i).transpose()));
  return labels;
}

namespace {

Eigen::VectorXd interpolate(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& grid) {
  Eigen::VectorXd out(grid.size());
  const Eigen::Index m = x.size();
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    if (t <= x[0]) {
      out[i] = y[0];
    } else if (t >= x[m - 1]) {
      out[i] = y[m - 1];
    } else {
      while (j + 1 < m && x[j + 1] < t) ++j;
      while (j > 0 && x[j] > t) --j;
      const double w = (t - x[j]) / (x[j + 1] - x[j]);
      out[i] = (y[j] == 0.0 && y[j + 1] == 0.0) ? 0.0 : (1.0 - w) * y[j] + w * y[j + 1];
    }
  }
  return out;
}

struct BlockSampler {
  BSplineBasis basis;
  DerivativeOperator op;
  Eigen::MatrixXd grid_values;  // collocation on the export grid

  CurveSamples sample(const Eigen::Ref<const Eigen::VectorXd>& coeffs, Parameterization param,
                      const Eigen::VectorXd& grid) const {
    const DerivativeBlocks blocks = derivative_blocks(op, coeffs, param);
    const Eigen::VectorXd plain =
        param == Parameterization::DerivativeReparam ? Eigen::VectorXd(op.block_d1_inverse * coeffs)
                                                     : Eigen::VectorXd(coeffs);
    return {grid_values * plain, interpolate(op.eval_points, blocks.d1, grid),
            interpolate(op.eval_points, blocks.d2, grid)};
  }
};

// Plain models do not require an invertible leading block, so the sampler
// assembles its blocks directly.
BlockSampler make_sampler(const FmeModel& model, int dim, const std::optional<DerivativeOperator>& op,
                          const Eigen::VectorXd& grid) {
  BSplineBasis basis = make_basis(model.basis.order, dim, model.basis.domain);
  DerivativeOperator o;
  if (op) {
    o = *op;
  } else {
    o.d1 = model.basis.d1;
    o.d2 = model.basis.d2;
    o.eval_points = default_eval_points(basis);
    o.block_d1 = derivative_block(basis, o.d1, o.eval_points);
    o.block_d2 = derivative_block(basis, o.d2, o.eval_points);
  }
  Eigen::MatrixXd values = collocation_matrix(basis, grid);
  return {std::move(basis), std::move(o), std::move(values)};
}

}  // namespace

CoefficientCurves coefficient_functions(const FmeModel& model, const Eigen::VectorXd& grid) {
  model.validate();
  CoefficientCurves out;
  out.grid = grid;
  const Parameterization param = model.parameterization();
  if (model.K() > 1) {
    const BlockSampler gs = make_sampler(model, model.basis.p, model.op_p, grid);
    for (Eigen::Index k = 0; k < model.gating.coeffs.rows(); ++k)
      out.gating.push_back(gs.sample(model.gating.coeffs.row(k).transpose(), param, grid));
  }
  const BlockSampler es = make_sampler(model, model.basis.q, model.op_q, grid);
  for (const auto& e : model.experts.experts) {
    std::vector<CurveSamples> per_class;
    for (Eigen::Index g = 0; g < e.coeffs.rows(); ++g)
      per_class.push_back(es.sample(e.coeffs.row(g).transpose(), param, grid));
    out.experts.push_back(std::move(per_class));
  }
  return out;
}

FmeModel to_derivative_form(const FmeModel& plain, const DerivativeOperator& op_p,
                            const DerivativeOperator& op_q) {
  if (plain.parameterization() != Parameterization::Plain)
    throw ConfigError("model is already in derivative form");
  FmeModel out = plain;
  out.gating.parameterization = Parameterization::DerivativeReparam;
  out.experts.parameterization = Parameterization::DerivativeReparam;
  if (out.gating.coeffs.rows() > 0) out.gating.coeffs = plain.gating.coeffs * op_p.block_d1.transpose();
  for (auto& e : out.experts.experts) e.coeffs = e.coeffs * op_q.block_d1.transpose();
  out.op_p = op_p;
  out.op_q = op_q;
  out.basis.d1 = op_p.d1;
  out.basis.d2 = op_p.d2;
  return out;
}

FmeModel to_plain_form(const FmeModel& reparam) {
  if (reparam.parameterization() != Parameterization::DerivativeReparam)
    throw ConfigError("model is already in plain form");
  if (!reparam.op_p || !reparam.op_q) throw ConfigError("derivative-form model lacks its operators");
  FmeModel out = reparam;
  out.gating.parameterization = Parameterization::Plain;
  out.experts.parameterization = Parameterization::Plain;
  if (out.gating.coeffs.rows() > 0)
    out.gating.coeffs = reparam.gating.coeffs * reparam.op_p->block_d1_inverse.transpose();
  for (auto& e : out.experts.experts) e.coeffs = e.coeffs * reparam.op_q->block_d1_inverse.transpose();
  out.op_p.reset();
  out.op_q.reset();
  return out;
}

namespace {

int block_dof(const Eigen::Ref<const Eigen::VectorXd>& u, const DerivativeOperator* op) {
  if (!op) return static_cast<int>((u.array() != 0.0).count());
  const DerivativeBlocks b = derivative_blocks(*op, u, Parameterization::DerivativeReparam);
  std::vector<Eigen::Index> zero_d1, zero_d2;
  for (Eigen::Index j = 0; j < b.d1.size(); ++j)
    if (b.d1[j] == 0.0) zero_d1.push_back(j);
  for (Eigen::Index j = 0; j < b.d2.size(); ++j)
    if (b.d2[j] == 0.0) zero_d2.push_back(j);
  const Eigen::Index rows = static_cast<Eigen::Index>(zero_d1.size() + zero_d2.size());
  if (rows == 0) return static_cast<int>(u.size());
  Eigen::MatrixXd active(rows, u.size());
  Eigen::Index r = 0;
  for (auto j : zero_d1) active.row(r++) = Eigen::RowVectorXd::Unit(u.size(), j);
  for (auto j : zero_d2) active.row(r++) = op->chain.row(j);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(active);
  lu.setThreshold(1e-10);
  return static_cast<int>(u.size() - lu.rank());
}

}  // namespace

int degrees_of_freedom(const FmeModel& model) {
  const bool reparam = model.parameterization() == Parameterization::DerivativeReparam;
  int df = static_cast<int>(model.gating.intercepts.size());
  for (Eigen::Index k = 0; k < model.gating.coeffs.rows(); ++k)
    df += block_dof(model.gating.coeffs.row(k).transpose(), reparam ? &*model.op_p : nullptr);
  for (const auto& e : model.experts.experts) {
    df += static_cast<int>(e.intercepts.size());
    for (Eigen::Index g = 0; g < e.coeffs.rows(); ++g)
      df += block_dof(e.coeffs.row(g).transpose(), reparam ? &*model.op_q : nullptr);
  }
  return df;
}

}  // namespace fme
