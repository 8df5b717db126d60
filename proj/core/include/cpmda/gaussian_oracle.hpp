#pragma once

// Gaussian linear model: dataset generation and closed-form oracle
// conditional quantiles/intervals via multivariate-Gaussian conditioning,
// plus the standard-normal quantile primitive.
//
// The model: Y = beta^T X + eps with eps ~ N(0, sigma_eps^2) independent of
// (X, M), and X | (M = m) ~ N(mu^m, Sigma^m). The homogeneous case
// (mu^m = mu, Sigma^m = Sigma for all m) covers Gaussian X with MCAR masks.

#include "cpmda/data_model.hpp"
#include "cpmda/missingness.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <utility>

namespace cpmda {

/// Inverse standard-normal CDF, absolute error below 1e-9 on (0,1).
double std_normal_quantile(double p);

/// Parameters of the Gaussian linear model. Per-mask overrides of
/// (mu, Sigma) are accepted for non-MCAR scenarios but default to the
/// homogeneous case used throughout.
struct GlmParams {
  int d = 0;
  Eigen::VectorXd beta;
  double sigma_eps = 1.0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  std::map<MaskPattern, std::pair<Eigen::VectorXd, Eigen::MatrixXd>> per_mask;

  /// Equicorrelated covariance phi*ones + (1-phi)*I with constant mean.
  static GlmParams equicorrelated(Eigen::VectorXd beta, double sigma_eps, double mu_value,
                                  double phi);
  /// The synthetic benchmark configuration: coefficients
  /// (1, 2, -1, 3, -0.5, -1, 0.3, 1.7, 0.4, -0.3) truncated to the first d,
  /// unit mean, phi = 0.8, unit noise. Valid for 1 <= d <= 10.
  static GlmParams benchmark(int d);

  /// Throws std::invalid_argument on asymmetric or non-PSD sigma,
  /// non-positive noise, or inconsistent dimensions.
  void validate() const;
};

/// Conditional law of the missing block given the observed block.
struct ConditionalGaussian {
  Eigen::VectorXd mean;     // mu_{mis|obs}, indexed by missing coordinates in order
  Eigen::MatrixXd cov;      // Sigma_{mis|obs}
  std::vector<int> missing; // coordinate indices the blocks refer to
};

/// Schur-complement conditioning of X_mis on X_obs = row[obs]. The row is
/// full length; only observed coordinates are read. The all-missing mask
/// returns the unconditional (mu, Sigma). Throws on a singular observed
/// block (after one jitter retry).
ConditionalGaussian conditional_gaussian(const GlmParams& params, const MaskPattern& m,
                                         const Eigen::VectorXd& row);

/// E[Y | X_obs, M = m]: the Bayes mean predictor under the model.
double oracle_mean(const GlmParams& params, const MaskPattern& m, const Eigen::VectorXd& row);

/// Conditional standard deviation sqrt(beta_mis^T Sigma_{mis|obs} beta_mis
/// + sigma_eps^2); depends on the mask only.
double oracle_conditional_std(const GlmParams& params, const MaskPattern& m);

/// Oracle predictive interval at miscoverage alpha; its length
/// 2 q_{1-alpha/2} * oracle_conditional_std(m) does not depend on the row.
PredictionInterval oracle_interval(const GlmParams& params, const MaskPattern& m,
                                   const Eigen::VectorXd& row, double alpha);

double oracle_interval_length(const GlmParams& params, const MaskPattern& m, double alpha);

/// Draw n rows: X ~ N(mu, Sigma) via Cholesky, Y = beta^T X + eps, masks
/// MCAR and independent of (X, Y). The generated feature buffer retains the
/// true values under masked cells (the mask flags them missing), which the
/// evaluation harness relies on. Deterministic given seed.
MaskedDataset generate_glm_dataset(const GlmParams& params, int n, const McarSpec& mcar,
                                   std::uint64_t seed);

}  // namespace cpmda
