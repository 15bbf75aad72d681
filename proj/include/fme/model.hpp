#pragma once

#include "fme/basis.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace fme {

/// Plain: coefficient vectors act on projected designs (r_i, x_i).
/// DerivativeReparam: coefficient vectors are the leading derivative blocks
/// (omega, gamma) and act on the transformed designs (s_i, v_i).
enum class Parameterization { Plain, DerivativeReparam };

const char* to_string(Parameterization p) noexcept;

/// Log-probabilities of a softmax whose last category is the reference with
/// score zero. `scores` holds the free categories' scores.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax_with_reference(
    const Eigen::MatrixBase<Derived>& scores) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = scores.size();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(m + 1);
  out.head(m) = scores;
  out[m] = Scalar(0);
  const Scalar top = out.maxCoeff();
  const Scalar lse = top + std::log((out.array() - top).exp().sum());
  return out.array() - lse;
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

/// Softmax gating network over K components; component K is the reference
/// with zero intercept and zero coefficient vector, so only K-1 blocks are
/// stored.
struct GatingParams {
  int K = 1;
  Eigen::VectorXd intercepts;  // K-1
  Eigen::MatrixXd coeffs;      // (K-1) x p, one row per free component
  Parameterization parameterization = Parameterization::Plain;

  static GatingParams zeros(int K, int p, Parameterization param);
  Eigen::Index design_dim() const noexcept { return coeffs.cols(); }
};

/// Multinomial-logistic expert with class G as reference.
struct ExpertBlock {
  Eigen::VectorXd intercepts;  // G-1
  Eigen::MatrixXd coeffs;      // (G-1) x q
};

struct ExpertParams {
  int G = 2;
  std::vector<ExpertBlock> experts;  // K blocks
  Parameterization parameterization = Parameterization::Plain;

  static ExpertParams zeros(int K, int G, int q, Parameterization param);
  int K() const noexcept { return static_cast<int>(experts.size()); }
  Eigen::Index design_dim() const noexcept {
    return experts.empty() ? 0 : experts.front().coeffs.cols();
  }
};

/// Dimensions and operator settings shared by fitting and prediction.
struct BasisConfig {
  int order = 4;
  int r = 15;  // curve basis
  int p = 15;  // gating coefficient basis
  int q = 15;  // expert coefficient basis
  Interval domain{0.0, 1.0};
  int d1 = 0;
  int d2 = 2;

  friend bool operator==(const BasisConfig&, const BasisConfig&) = default;
};

struct FmeModel {
  GatingParams gating;
  ExpertParams experts;
  BasisConfig basis;
  /// Present for DerivativeReparam models: operators for b_p and b_q.
  std::optional<DerivativeOperator> op_p;
  std::optional<DerivativeOperator> op_q;

  Parameterization parameterization() const noexcept { return gating.parameterization; }
  int K() const noexcept { return gating.K; }
  int G() const noexcept { return experts.G; }

  /// Throws ConfigError when the blocks disagree with each other or with
  /// the basis configuration.
  void validate() const;
};

/// Per-observation design vectors; labels are 1-based class indices.
struct DesignBundle {
  Eigen::MatrixXd gating;        // n x p: r_i or s_i
  Eigen::MatrixXd expert;        // n x q: x_i or v_i
  Eigen::MatrixXd curve_coeffs;  // n x r: basis coefficients of each curve
  std::vector<int> labels;
  int G = 2;
  Parameterization parameterization = Parameterization::Plain;
  BasisConfig basis;
  /// Operators that produced (s_i, v_i); present for DerivativeReparam.
  std::optional<DerivativeOperator> op_p;
  std::optional<DerivativeOperator> op_q;

  Eigen::Index n() const noexcept { return gating.rows(); }
  void validate() const;
};

Eigen::VectorXd gating_probs(const GatingParams& gating,
                             const Eigen::Ref<const Eigen::VectorXd>& design);
Eigen::VectorXd gating_log_probs(const GatingParams& gating,
                                 const Eigen::Ref<const Eigen::VectorXd>& design);

/// k is 0-based; throws std::out_of_range when k >= K.
Eigen::VectorXd expert_probs(const ExpertParams& experts, int k,
                             const Eigen::Ref<const Eigen::VectorXd>& design);
Eigen::VectorXd expert_log_probs(const ExpertParams& experts, int k,
                                 const Eigen::Ref<const Eigen::VectorXd>& design);

Eigen::VectorXd mixture_class_probs(const FmeModel& model,
                                    const Eigen::Ref<const Eigen::VectorXd>& gating_design,
                                    const Eigen::Ref<const Eigen::VectorXd>& expert_design);

/// Throws ConfigError when the bundle's parameterization differs from the model's.
void check_compatible(const FmeModel& model, const DesignBundle& designs);

/// Observed-data log-likelihood sum_i log sum_k pi_k(i) P(y_i | i, k).
double log_likelihood(const FmeModel& model, const DesignBundle& designs);

/// chi * sum_k ||omega_k||_1 + lambda * sum_{k,g} ||gamma_kg||_1. For
/// DerivativeReparam models omega_k stacks the stored block and its chain
/// image; for Plain models it is the stored coefficient vector. Intercepts
/// are never penalized.
double penalty_value(const FmeModel& model, double chi, double lambda);

struct Prediction {
  int label = 1;                 // 1-based, ties toward the smaller index
  Eigen::VectorXd class_probs;   // G
  Eigen::VectorXd cluster_probs; // K, prior gating probabilities
};

Prediction predict(const FmeModel& model, const Eigen::Ref<const Eigen::VectorXd>& gating_design,
                   const Eigen::Ref<const Eigen::VectorXd>& expert_design);
std::vector<int> predict_labels(const FmeModel& model, const DesignBundle& designs);

/// Index (1-based) of the largest entry, ties toward the smaller index.
int argmax_label(const Eigen::Ref<const Eigen::VectorXd>& probs);

struct CurveSamples {
  Eigen::VectorXd value;
  Eigen::VectorXd deriv_d1;
  Eigen::VectorXd deriv_d2;
};

struct CoefficientCurves {
  Eigen::VectorXd grid;
  std::vector<CurveSamples> gating;               // K-1
  std::vector<std::vector<CurveSamples>> experts;  // K x (G-1)
};

/// Samples alpha_k(t) and beta_kg(t) on `grid` together with their
/// finite-difference derivative blocks. The derivative columns are the
/// operator blocks (omega / gamma) at the operator evaluation points,
/// linearly interpolated onto `grid`, so zeros in the blocks stay exact.
CoefficientCurves coefficient_functions(const FmeModel& model, const Eigen::VectorXd& grid);

/// Leading and trailing derivative blocks of one coefficient vector;
/// entries of the trailing block at rounding level are reported as 0.
struct DerivativeBlocks {
  Eigen::VectorXd d1;
  Eigen::VectorXd d2;
};
DerivativeBlocks derivative_blocks(const DerivativeOperator& op,
                                   const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                                   Parameterization param);

/// omega = A^{[d1]} zeta, gamma = A^{[d1]} eta; operators are attached.
FmeModel to_derivative_form(const FmeModel& plain, const DerivativeOperator& op_p,
                            const DerivativeOperator& op_q);
/// zeta = (A^{[d1]})^{-1} omega, eta = (A^{[d1]})^{-1} gamma.
FmeModel to_plain_form(const FmeModel& reparam);

/// Number of nonzero free parameters (intercepts included). For
/// DerivativeReparam blocks the count of a coefficient vector is its
/// dimension minus the rank of the zero rows of [I; chain], i.e. the
/// degrees of freedom of a generalized lasso fit.
int degrees_of_freedom(const FmeModel& model);

}  // namespace fme
