#pragma once

#include <Eigen/Dense>

#include <optional>

namespace fme {

struct SolverOptions {
  int max_outer_iters = 100;
  /// Stop when the scaled proximal-Newton step falls below this.
  double tol = 1e-6;
  int admm_max_iters = 500;
  /// Initial augmented-penalty parameter; adapted by residual balancing.
  double admm_rho = 1.0;
  double admm_tol = 1e-6;
};

/// Weighted multinomial-logistic parameters with the last class as
/// reference: intercepts (C-1) and coefficient rows (C-1) x d.
struct PwmlrParams {
  Eigen::VectorXd intercepts;
  Eigen::MatrixXd coeffs;

  static PwmlrParams zeros(Eigen::Index classes, Eigen::Index d);
};

struct PwmlrResult {
  PwmlrParams params;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Minimizes
///   -sum_i w_i sum_c t_ic log p_c(x_i) + l1_weight * sum_c (||u_c||_1 + ||M u_c||_1)
/// over intercepts and coefficient rows u_c, c < C. Without a penalty map the
/// second norm is dropped; with l1_weight = 0 this is weighted maximum
/// likelihood. Targets may be soft (rows of responsibilities).
///
/// Designs are centered and scaled by one common factor internally; the
/// penalty is applied to the coefficients as returned. The result is never
/// worse than the warm start or the zero vector. When the weights sum to
/// (numerically) zero the warm start is returned unchanged.
PwmlrResult solve_pwmlr(const Eigen::Ref<const Eigen::MatrixXd>& designs,
                        const Eigen::Ref<const Eigen::MatrixXd>& targets,
                        const Eigen::Ref<const Eigen::VectorXd>& weights, double l1_weight,
                        const Eigen::MatrixXd* penalty_map = nullptr,
                        const PwmlrParams* warm_start = nullptr,
                        const SolverOptions& options = {});

/// Weighted negative log-likelihood at `params`.
double pwmlr_nll(const Eigen::Ref<const Eigen::MatrixXd>& designs,
                 const Eigen::Ref<const Eigen::MatrixXd>& targets,
                 const Eigen::Ref<const Eigen::VectorXd>& weights, const PwmlrParams& params);

/// Gradient of pwmlr_nll in the layout of PwmlrParams.
PwmlrParams pwmlr_nll_gradient(const Eigen::Ref<const Eigen::MatrixXd>& designs,
                               const Eigen::Ref<const Eigen::MatrixXd>& targets,
                               const Eigen::Ref<const Eigen::VectorXd>& weights,
                               const PwmlrParams& params);

double pwmlr_penalty(const PwmlrParams& params, double l1_weight,
                     const Eigen::MatrixXd* penalty_map);

inline double pwmlr_objective(const Eigen::Ref<const Eigen::MatrixXd>& designs,
                              const Eigen::Ref<const Eigen::MatrixXd>& targets,
                              const Eigen::Ref<const Eigen::VectorXd>& weights, double l1_weight,
                              const Eigen::MatrixXd* penalty_map, const PwmlrParams& params) {
  return pwmlr_nll(designs, targets, weights, params) +
         pwmlr_penalty(params, l1_weight, penalty_map);
}

}  // namespace fme
