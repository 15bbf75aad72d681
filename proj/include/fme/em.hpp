#pragma once

#include "fme/data.hpp"
#include "fme/model.hpp"
#include "fme/solver.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace fme {

enum class Variant { FmeEm, FmeEmLasso, IfmeEm, Fmlr };

/// Display names in benchmark order: FME-EM, FME-EM-Lasso, iFME-EM, FMLR.
const char* display_name(Variant v) noexcept;
/// CLI spelling: fme-em, fme-em-lasso, ifme-em, fmlr.
const char* flag_name(Variant v) noexcept;
Variant parse_variant(const std::string& name);
Parameterization parameterization_of(Variant v) noexcept;

struct FitConfig {
  Variant variant = Variant::IfmeEm;
  int K = 2;
  double chi = 0.0;
  double lambda = 0.0;
  BasisConfig basis;
  int max_em_iters = 1000;
  double em_rel_tol = 1e-6;
  int n_restarts = 5;
  std::uint64_t seed = 1;
  SolverOptions solver;

  /// Applies the variant's forced settings (FMLR: K = 1, chi = 0;
  /// FME-EM: chi = lambda = 0) and checks ranges.
  FitConfig resolved() const;
};

/// Projects every curve on b_r and forms the gating/expert designs; for the
/// derivative parameterization the designs are mapped through the inverse
/// transposed leading operator blocks and the operators are attached.
DesignBundle build_designs(const FunctionalDataset& data, const BasisConfig& config,
                           Parameterization param);

struct EStep {
  Eigen::MatrixXd tau;  // n x K responsibilities
  double log_likelihood = 0.0;
};

EStep e_step(const FmeModel& model, const DesignBundle& designs);

struct GatingUpdate {
  GatingParams params;
  bool converged = true;
};

struct ExpertUpdate {
  ExpertParams params;
  bool converged = true;
};

/// Maximizes sum_ik tau_ik log pi_k(i) - chi * penalty, warm-started from
/// `previous` when given.
GatingUpdate m_step_gating(const Eigen::MatrixXd& tau, const DesignBundle& designs,
                           const FitConfig& config, const GatingParams* previous = nullptr);

/// One weighted multinomial-logistic fit per expert with weights tau[., k].
/// Experts whose weights vanish keep their previous parameters.
ExpertUpdate m_step_experts(const Eigen::MatrixXd& tau, const DesignBundle& designs,
                            const FitConfig& config, const ExpertParams* previous = nullptr);

struct BlockSparsity {
  std::string name;
  int nonzero = 0;
  int size = 0;
};

struct FitReport {
  FmeModel model;
  /// Penalized observed-data log-likelihood at each E-step of the kept run.
  std::vector<double> trace;
  bool converged = false;
  bool solver_converged = true;
  int iterations = 0;
  int selected_restart = 0;
  int failed_restarts = 0;
  double log_likelihood = 0.0;
  double penalized_log_likelihood = 0.0;
  std::vector<BlockSparsity> sparsity;
  std::vector<double> restart_objectives;  // -inf for failed restarts
};

/// Hard partition of the rows of `points` into k groups (Lloyd iterations
/// from a seeded k-means++ start). Returns 0-based assignments.
std::vector<int> kmeans_partition(const Eigen::MatrixXd& points, int k, std::uint64_t seed);

/// Responsibilities 0.9 on the assigned group, 0.1 spread over the rest.
Eigen::MatrixXd responsibilities_from_partition(const std::vector<int>& partition, int K);

/// EM from the given initial responsibilities; no restarts.
FitReport fit_from_responsibilities(const DesignBundle& designs, const FitConfig& config,
                                    const Eigen::MatrixXd& tau0);

/// EM from an explicit starting model; no restarts.
FitReport fit_from_model(const DesignBundle& designs, const FitConfig& config, const FmeModel& start);

/// Full fit on prepared designs, including restarts.
FitReport fit_designs(const DesignBundle& designs, const FitConfig& config);

FitReport fit(const FunctionalDataset& data, const FitConfig& config);

enum class SelectionCriterion { Bic, ValidationCcr };

struct SelectionRow {
  double chi = 0.0;
  double lambda = 0.0;
  int K = 1;
  double score = 0.0;
  int df = 0;
  double log_likelihood = 0.0;
};

struct SelectionResult {
  double chi = 0.0;
  double lambda = 0.0;
  int K = 1;
  std::vector<SelectionRow> table;
};

/// Grid search; BIC = -2 loglik + df log n (minimized), validation CCR on a
/// stratified 25% hold-out (maximized). Ties go to the sparser setting:
/// smaller K, then larger lambda, then larger chi.
SelectionResult select_hyperparams(const FunctionalDataset& data, const FitConfig& base,
                                   const std::vector<double>& chi_grid,
                                   const std::vector<double>& lambda_grid,
                                   const std::vector<int>& K_grid, SelectionCriterion criterion);

}  // namespace fme
