#include "fme/em.hpp"

#include "fme/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace fme {

const char* display_name(Variant v) noexcept {
  switch (v) {
    case Variant::FmeEm: return "FME-EM";
    case Variant::FmeEmLasso: return "FME-EM-Lasso";
    case Variant::IfmeEm: return "iFME-EM";
    case Variant::Fmlr: return "FMLR";
  }
  return "?";
}

const char* flag_name(Variant v) noexcept {
  switch (v) {
    case Variant::FmeEm: return "fme-em";
    case Variant::FmeEmLasso: return "fme-em-lasso";
    case Variant::IfmeEm: return "ifme-em";
    case Variant::Fmlr: return "fmlr";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::FmeEm, Variant::FmeEmLasso, Variant::IfmeEm, Variant::Fmlr})
    if (name == flag_name(v)) return v;
  throw ConfigError("unknown variant '" + name + "'");
}

Parameterization parameterization_of(Variant v) noexcept {
  return v == Variant::IfmeEm ? Parameterization::DerivativeReparam : Parameterization::Plain;
}

FitConfig FitConfig::resolved() const {
  FitConfig c = *this;
  if (c.variant == Variant::Fmlr) {
    c.K = 1;
    c.chi = 0.0;
  }
  if (c.variant == Variant::FmeEm) c.chi = c.lambda = 0.0;
  if (c.K < 1) throw ConfigError("K must be at least 1");
  if (!(c.chi >= 0.0) || !(c.lambda >= 0.0)) throw ConfigError("chi and lambda must be nonnegative");
  if (c.max_em_iters < 1) throw ConfigError("max EM iterations must be positive");
  if (c.n_restarts < 1) throw ConfigError("at least one restart is required");
  if (!(c.em_rel_tol > 0.0)) throw ConfigError("EM tolerance must be positive");
  return c;
}

DesignBundle build_designs(const FunctionalDataset& data, const BasisConfig& config,
                           Parameterization param) {
  data.validate();
  const BSplineBasis br = make_basis(config.order, config.r, config.domain);
  const BSplineBasis bp = make_basis(config.order, config.p, config.domain);
  const BSplineBasis bq = make_basis(config.order, config.q, config.domain);

  DesignBundle out;
  out.G = data.G;
  out.labels = data.labels;
  out.parameterization = param;
  out.basis = config;
  out.curve_coeffs = CurveProjector(br, data.grid).project_rows(data.curves);
  out.gating = out.curve_coeffs * cross_gram(br, bp).matrix;
  out.expert = out.curve_coeffs * cross_gram(br, bq).matrix;
  if (param == Parameterization::DerivativeReparam) {
    out.op_p = derivative_operator(bp, config.d1, config.d2);
    out.op_q = derivative_operator(bq, config.d1, config.d2);
    out.gating = out.gating * out.op_p->block_d1_inverse;
    out.expert = out.expert * out.op_q->block_d1_inverse;
  }
  return out;
}

EStep e_step(const FmeModel& model, const DesignBundle& designs) {
  check_compatible(model, designs);
  const Eigen::Index n = designs.n();
  const int K = model.K();
  EStep out;
  out.tau.resize(n, K);
  Eigen::VectorXd lj(K);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd log_pi = gating_log_probs(model.gating, designs.gating.row(i).transpose());
    const int y = designs.labels[i] - 1;
    for (int k = 0; k < K; ++k)
      lj[k] = log_pi[k] + expert_log_probs(model.experts, k, designs.expert.row(i).transpose())[y];
    const double lse = log_sum_exp(lj);
    out.log_likelihood += lse;
    out.tau.row(i) = (lj.array() - lse).exp().transpose();
    out.tau.row(i) /= out.tau.row(i).sum();
  }
  return out;
}

namespace {

const Eigen::MatrixXd* gating_map(const DesignBundle& designs, const FitConfig& config) {
  return (config.variant == Variant::IfmeEm && designs.op_p) ? &designs.op_p->chain : nullptr;
}

const Eigen::MatrixXd* expert_map(const DesignBundle& designs, const FitConfig& config) {
  return (config.variant == Variant::IfmeEm && designs.op_q) ? &designs.op_q->chain : nullptr;
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int G) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), G);
  for (std::size_t i = 0; i < labels.size(); ++i) t(static_cast<Eigen::Index>(i), labels[i] - 1) = 1.0;
  return t;
}

}  // namespace

GatingUpdate m_step_gating(const Eigen::MatrixXd& tau, const DesignBundle& designs,
                           const FitConfig& config, const GatingParams* previous) {
  const int K = static_cast<int>(tau.cols());
  GatingUpdate out;
  out.params = GatingParams::zeros(K, static_cast<int>(designs.gating.cols()), designs.parameterization);
  if (K == 1) return out;
  PwmlrParams warm = previous ? PwmlrParams{previous->intercepts, previous->coeffs}
                              : PwmlrParams::zeros(K, designs.gating.cols());
  const PwmlrResult res =
      solve_pwmlr(designs.gating, tau, Eigen::VectorXd::Ones(designs.n()), config.chi,
                  gating_map(designs, config), &warm, config.solver);
  out.params.intercepts = res.params.intercepts;
  out.params.coeffs = res.params.coeffs;
  out.converged = res.converged;
  return out;
}

ExpertUpdate m_step_experts(const Eigen::MatrixXd& tau, const DesignBundle& designs,
                            const FitConfig& config, const ExpertParams* previous) {
  const int K = static_cast<int>(tau.cols());
  ExpertUpdate out;
  out.params = ExpertParams::zeros(K, designs.G, static_cast<int>(designs.expert.cols()),
                                   designs.parameterization);
  const Eigen::MatrixXd targets = one_hot(designs.labels, designs.G);
  for (int k = 0; k < K; ++k) {
    PwmlrParams warm = previous ? PwmlrParams{previous->experts[k].intercepts, previous->experts[k].coeffs}
                                : PwmlrParams::zeros(designs.G, designs.expert.cols());
    const PwmlrResult res = solve_pwmlr(designs.expert, targets, tau.col(k), config.lambda,
                                        expert_map(designs, config), &warm, config.solver);
    out.params.experts[k].intercepts = res.params.intercepts;
    out.params.experts[k].coeffs = res.params.coeffs;
    out.converged = out.converged && res.converged;
  }
  return out;
}

std::vector<int> kmeans_partition(const Eigen::MatrixXd& points, int k, std::uint64_t seed) {
  const Eigen::Index n = points.rows();
  if (k < 1 || k > n) throw ConfigError("k-means needs 1 <= k <= n");
  std::vector<int> assign(n, 0);
  if (k == 1) return assign;

  std::mt19937_64 rng(seed);
  Eigen::MatrixXd centers(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = points.row(pick(rng));
  Eigen::VectorXd dist2(n);
  for (int c = 1; c < k; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) best = std::min(best, (points.row(i) - centers.row(j)).squaredNorm());
      dist2[i] = best;
    }
    const double total = dist2.sum();
    Eigen::Index chosen = pick(rng);
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= dist2[i];
        if (u <= 0.0) {
          chosen = i;
          break;
        }
      }
    }
    centers.row(c) = points.row(chosen);
  }

  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dd = (points.row(i) - centers.row(c)).squaredNorm();
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      if (assign[i] != best || iter == 0) changed = changed || assign[i] != best;
      assign[i] = best;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(c) = sums.row(c) / counts[c];
        continue;
      }
      // Empty group: reseed at the point farthest from its center.
      Eigen::Index far = 0;
      double fd = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dd = (points.row(i) - centers.row(assign[i])).squaredNorm();
        if (dd > fd && counts[assign[i]] > 1) {
          fd = dd;
          far = i;
        }
      }
      --counts[assign[far]];
      assign[far] = c;
      counts[c] = 1;
      centers.row(c) = points.row(far);
      changed = true;
    }
    if (!changed && iter > 0) break;
  }
  return assign;
}

Eigen::MatrixXd responsibilities_from_partition(const std::vector<int>& partition, int K) {
  const auto n = static_cast<Eigen::Index>(partition.size());
  if (K == 1) return Eigen::MatrixXd::Ones(n, 1);
  Eigen::MatrixXd tau = Eigen::MatrixXd::Constant(n, K, 0.1 / (K - 1));
  for (Eigen::Index i = 0; i < n; ++i) tau(i, partition[i]) = 0.9;
  return tau;
}

namespace {

std::vector<BlockSparsity> sparsity_summary(const FmeModel& model) {
  std::vector<BlockSparsity> out;
  const bool reparam = model.parameterization() == Parameterization::DerivativeReparam;
  auto add = [&](std::string name, const Eigen::Ref<const Eigen::VectorXd>& u, const DerivativeOperator* op) {
    BlockSparsity b;
    b.name = name;
    b.size = static_cast<int>(u.size());
    b.nonzero = static_cast<int>((u.array() != 0.0).count());
    out.push_back(b);
    if (op) {
      const DerivativeBlocks blocks = derivative_blocks(*op, u, Parameterization::DerivativeReparam);
      BlockSparsity b2;
      b2.name = name + ".d2";
      b2.size = static_cast<int>(blocks.d2.size());
      b2.nonzero = static_cast<int>((blocks.d2.array() != 0.0).count());
      out.push_back(b2);
    }
  };
  for (Eigen::Index k = 0; k < model.gating.coeffs.rows(); ++k)
    add("gating." + std::to_string(k + 1), model.gating.coeffs.row(k).transpose(),
        reparam ? &*model.op_p : nullptr);
  for (int k = 0; k < model.experts.K(); ++k)
    for (Eigen::Index g = 0; g < model.experts.experts[k].coeffs.rows(); ++g)
      add("expert." + std::to_string(k + 1) + ".class." + std::to_string(g + 1),
          model.experts.experts[k].coeffs.row(g).transpose(), reparam ? &*model.op_q : nullptr);
  return out;
}

FmeModel assemble(const DesignBundle& designs, GatingParams gating, ExpertParams experts) {
  FmeModel m;
  m.gating = std::move(gating);
  m.experts = std::move(experts);
  m.basis = designs.basis;
  m.op_p = designs.op_p;
  m.op_q = designs.op_q;
  return m;
}

void check_designs(const DesignBundle& designs, const FitConfig& config) {
  designs.validate();
  if (designs.n() == 0) throw ConfigError("cannot fit an empty dataset");
  if (config.K > designs.n()) throw ConfigError("K exceeds the number of observations");
  if (designs.parameterization != parameterization_of(config.variant))
    throw ConfigError(std::string("variant ") + display_name(config.variant) +
                      " requires designs in the " + to_string(parameterization_of(config.variant)) +
                      " parameterization");
  if (designs.G < 2) throw ConfigError("at least two classes are required");
}

struct DegenerateComponent {};

// Runs EM from a starting model; throws DegenerateComponent when a component
// loses all responsibility.
FitReport run_em(const DesignBundle& designs, const FitConfig& config, FmeModel model,
                 bool solver_ok) {
  FitReport rep;
  rep.solver_converged = solver_ok;
  double prev = 0.0;
  for (int iter = 0; iter <= config.max_em_iters; ++iter) {
    const EStep es = e_step(model, designs);
    const double pen = penalty_value(model, config.chi, config.lambda);
    const double obj = es.log_likelihood - pen;
    rep.trace.push_back(obj);
    rep.model = model;
    rep.log_likelihood = es.log_likelihood;
    rep.penalized_log_likelihood = obj;
    rep.iterations = iter;
    for (int k = 0; k < model.K(); ++k)
      if (es.tau.col(k).maxCoeff() < 1e-8) throw DegenerateComponent{};
    if (iter > 0 && std::abs(obj - prev) / (1.0 + std::abs(obj)) < config.em_rel_tol) {
      rep.converged = true;
      break;
    }
    if (iter == config.max_em_iters) break;
    prev = obj;
    GatingUpdate gu = m_step_gating(es.tau, designs, config, &model.gating);
    ExpertUpdate eu = m_step_experts(es.tau, designs, config, &model.experts);
    rep.solver_converged = rep.solver_converged && gu.converged && eu.converged;
    model.gating = std::move(gu.params);
    model.experts = std::move(eu.params);
  }
  rep.sparsity = sparsity_summary(rep.model);
  return rep;
}

FitReport fit_fmlr(const DesignBundle& designs, const FitConfig& config) {
  const Eigen::MatrixXd targets = one_hot(designs.labels, designs.G);
  const PwmlrResult res = solve_pwmlr(designs.expert, targets, Eigen::VectorXd::Ones(designs.n()),
                                      config.lambda, nullptr, nullptr, config.solver);
  ExpertParams experts = ExpertParams::zeros(1, designs.G, static_cast<int>(designs.expert.cols()),
                                             designs.parameterization);
  experts.experts[0] = {res.params.intercepts, res.params.coeffs};
  FitReport rep;
  rep.model = assemble(designs, GatingParams::zeros(1, static_cast<int>(designs.gating.cols()),
                                                    designs.parameterization),
                       std::move(experts));
  rep.log_likelihood = log_likelihood(rep.model, designs);
  rep.penalized_log_likelihood = rep.log_likelihood - penalty_value(rep.model, 0.0, config.lambda);
  rep.trace = {rep.penalized_log_likelihood};
  rep.converged = res.converged;
  rep.solver_converged = res.converged;
  rep.iterations = res.iterations;
  rep.sparsity = sparsity_summary(rep.model);
  rep.restart_objectives = {rep.penalized_log_likelihood};
  return rep;
}

}  // namespace

FitReport fit_from_model(const DesignBundle& designs, const FitConfig& config_in, const FmeModel& start) {
  const FitConfig config = config_in.resolved();
  check_designs(designs, config);
  check_compatible(start, designs);
  return run_em(designs, config, start, true);
}

FitReport fit_from_responsibilities(const DesignBundle& designs, const FitConfig& config_in,
                                    const Eigen::MatrixXd& tau0) {
  const FitConfig config = config_in.resolved();
  check_designs(designs, config);
  if (tau0.rows() != designs.n() || tau0.cols() != config.K)
    throw ConfigError("initial responsibilities have the wrong shape");
  GatingUpdate gu = m_step_gating(tau0, designs, config);
  ExpertUpdate eu = m_step_experts(tau0, designs, config);
  return run_em(designs, config, assemble(designs, std::move(gu.params), std::move(eu.params)),
                gu.converged && eu.converged);
}

FitReport fit_designs(const DesignBundle& designs, const FitConfig& config_in) {
  const FitConfig config = config_in.resolved();
  check_designs(designs, config);
  if (config.variant == Variant::Fmlr) return fit_fmlr(designs, config);

  const Eigen::MatrixXd& points = designs.curve_coeffs.size() ? designs.curve_coeffs : designs.expert;
  std::mt19937_64 rng(config.seed);
  FitReport best;
  bool have_best = false;
  int failed = 0;
  std::vector<double> objectives;
  for (int r = 0; r < config.n_restarts; ++r) {
    std::vector<int> part = kmeans_partition(points, config.K, config.seed + 7919ULL * r);
    if (r > 0 && config.K > 1) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::uniform_int_distribution<int> other(0, config.K - 1);
      for (int& a : part)
        if (u(rng) < 0.25) a = other(rng);
    }
    try {
      FitReport rep = fit_from_responsibilities(designs, config,
                                                responsibilities_from_partition(part, config.K));
      objectives.push_back(rep.penalized_log_likelihood);
      if (!have_best || rep.penalized_log_likelihood > best.penalized_log_likelihood) {
        best = std::move(rep);
        best.selected_restart = r;
        have_best = true;
      }
    } catch (const DegenerateComponent&) {
      ++failed;
      objectives.push_back(-std::numeric_limits<double>::infinity());
    }
  }
  if (!have_best)
    throw NumericError("every EM restart ended with a degenerate component (K=" + std::to_string(config.K) + ")");
  best.failed_restarts = failed;
  best.restart_objectives = std::move(objectives);
  return best;
}

FitReport fit(const FunctionalDataset& data, const FitConfig& config) {
  const FitConfig c = config.resolved();
  if (data.n() < c.K) throw ConfigError("K exceeds the number of observations");
  return fit_designs(build_designs(data, c.basis, parameterization_of(c.variant)), c);
}

SelectionResult select_hyperparams(const FunctionalDataset& data, const FitConfig& base,
                                   const std::vector<double>& chi_grid,
                                   const std::vector<double>& lambda_grid,
                                   const std::vector<int>& K_grid, SelectionCriterion criterion) {
  if (chi_grid.empty() || lambda_grid.empty() || K_grid.empty())
    throw ConfigError("hyperparameter grids must be nonempty");
  const Parameterization param = parameterization_of(base.variant);
  const DesignBundle all = build_designs(data, base.basis, param);
  DesignBundle train_d, valid_d;
  std::vector<int> valid_labels;
  if (criterion == SelectionCriterion::ValidationCcr) {
    auto [tr, va] = split(data, 0.25, base.seed);
    train_d = build_designs(tr, base.basis, param);
    valid_d = build_designs(va, base.basis, param);
    valid_labels = va.labels;
  }

  SelectionResult out;
  bool have = false;
  double best_score = 0.0;
  SelectionRow best_row;
  auto sparser = [](const SelectionRow& a, const SelectionRow& b) {
    if (a.K != b.K) return a.K < b.K;
    if (a.lambda != b.lambda) return a.lambda > b.lambda;
    return a.chi > b.chi;
  };
  for (int K : K_grid) {
    for (double lambda : lambda_grid) {
      for (double chi : chi_grid) {
        FitConfig cfg = base;
        cfg.K = K;
        cfg.chi = chi;
        cfg.lambda = lambda;
        const FitConfig rc = cfg.resolved();
        SelectionRow row{rc.chi, rc.lambda, rc.K, 0.0, 0, 0.0};
        if (criterion == SelectionCriterion::Bic) {
          const FitReport rep = fit_designs(all, rc);
          row.df = degrees_of_freedom(rep.model);
          row.log_likelihood = rep.log_likelihood;
          row.score = -2.0 * rep.log_likelihood + row.df * std::log(static_cast<double>(data.n()));
        } else {
          const FitReport rep = fit_designs(train_d, rc);
          row.df = degrees_of_freedom(rep.model);
          row.log_likelihood = rep.log_likelihood;
          row.score = correct_classification_rate(predict_labels(rep.model, valid_d), valid_labels);
        }
        out.table.push_back(row);
        const double s = criterion == SelectionCriterion::Bic ? row.score : -row.score;
        if (!have || s < best_score || (s == best_score && sparser(row, best_row))) {
          have = true;
          best_score = s;
          best_row = row;
        }
      }
    }
  }
  out.chi = best_row.chi;
  out.lambda = best_row.lambda;
  out.K = best_row.K;
  return out;
}

}  // namespace fme
