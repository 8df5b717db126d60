#include "cpmda/gaussian_oracle.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <random>
#include <stdexcept>

namespace cpmda {

namespace {

// Acklam's rational approximation for the inverse normal CDF, polished with
// one Halley step against the erfc-based CDF. Absolute error ~1e-15.
double acklam_inverse_cdf(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  // Halley refinement: e = Phi(x) - p, Phi via erfc for tail accuracy.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

}  // namespace

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("std_normal_quantile: p must lie in (0,1)");
  }
  return acklam_inverse_cdf(p);
}

GlmParams GlmParams::equicorrelated(Eigen::VectorXd beta, double sigma_eps, double mu_value,
                                    double phi) {
  GlmParams params;
  params.d = static_cast<int>(beta.size());
  params.beta = std::move(beta);
  params.sigma_eps = sigma_eps;
  params.mu = Eigen::VectorXd::Constant(params.d, mu_value);
  params.sigma = Eigen::MatrixXd::Constant(params.d, params.d, phi) +
                 (1.0 - phi) * Eigen::MatrixXd::Identity(params.d, params.d);
  params.validate();
  return params;
}

GlmParams GlmParams::benchmark(int d) {
  if (d < 1 || d > 10) throw std::invalid_argument("GlmParams::benchmark: d must lie in [1,10]");
  Eigen::VectorXd full(10);
  full << 1.0, 2.0, -1.0, 3.0, -0.5, -1.0, 0.3, 1.7, 0.4, -0.3;
  return equicorrelated(full.head(d), 1.0, 1.0, 0.8);
}

void GlmParams::validate() const {
  if (d < 1) throw std::invalid_argument("GlmParams: dimension must be >= 1");
  if (beta.size() != d || mu.size() != d || sigma.rows() != d || sigma.cols() != d) {
    throw std::invalid_argument("GlmParams: inconsistent dimensions");
  }
  if (!(sigma_eps > 0.0)) throw std::invalid_argument("GlmParams: sigma_eps must be > 0");
  if (!sigma.isApprox(sigma.transpose(), 1e-12)) {
    throw std::invalid_argument("GlmParams: sigma must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10) {
    throw std::invalid_argument("GlmParams: sigma must be positive semidefinite");
  }
}

namespace {

struct MaskMoments {
  const Eigen::VectorXd* mu;
  const Eigen::MatrixXd* sigma;
};

MaskMoments moments_for_mask(const GlmParams& params, const MaskPattern& m) {
  const auto it = params.per_mask.find(m);
  if (it != params.per_mask.end()) return {&it->second.first, &it->second.second};
  return {&params.mu, &params.sigma};
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& a, const std::vector<int>& rows,
                       const std::vector<int>& cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < cols.size(); ++j) out(i, j) = a(rows[i], cols[j]);
  }
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
  return out;
}

// Solve Sigma_oo * X = B symmetrically; one jitter retry before failing.
Eigen::MatrixXd solve_obs_block(const Eigen::MatrixXd& sigma_oo, const Eigen::MatrixXd& b) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma_oo);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  Eigen::MatrixXd jittered =
      sigma_oo + 1e-10 * Eigen::MatrixXd::Identity(sigma_oo.rows(), sigma_oo.cols());
  Eigen::LLT<Eigen::MatrixXd> retry(jittered);
  if (retry.info() == Eigen::Success) return retry.solve(b);
  throw std::runtime_error("conditional_gaussian: observed covariance block is singular");
}

}  // namespace

ConditionalGaussian conditional_gaussian(const GlmParams& params, const MaskPattern& m,
                                         const Eigen::VectorXd& row) {
  if (m.dimension() != params.d || row.size() != params.d) {
    throw std::invalid_argument("conditional_gaussian: dimension mismatch");
  }
  const auto [mu_ptr, sigma_ptr] = moments_for_mask(params, m);
  const Eigen::VectorXd& mu = *mu_ptr;
  const Eigen::MatrixXd& sigma = *sigma_ptr;

  ConditionalGaussian out;
  out.missing = m.missing_indices();
  const std::vector<int> obs = m.observed_indices();

  if (obs.empty()) {  // empty conditioning set: unconditional law
    out.mean = gather(mu, out.missing);
    out.cov = gather(sigma, out.missing, out.missing);
    return out;
  }
  if (out.missing.empty()) {
    out.mean = Eigen::VectorXd(0);
    out.cov = Eigen::MatrixXd(0, 0);
    return out;
  }

  const Eigen::MatrixXd sigma_oo = gather(sigma, obs, obs);
  const Eigen::MatrixXd sigma_mo = gather(sigma, out.missing, obs);
  const Eigen::VectorXd x_obs = gather(row, obs);
  for (int j : obs) {
    if (!std::isfinite(row(j))) {
      throw std::invalid_argument("conditional_gaussian: observed coordinate holds a non-finite value");
    }
  }

  // mu_c = mu_mis + Sigma_mo Sigma_oo^{-1} (x_obs - mu_obs)
  // Sigma_c = Sigma_mm - Sigma_mo Sigma_oo^{-1} Sigma_om
  const Eigen::MatrixXd solved = solve_obs_block(sigma_oo, sigma_mo.transpose());
  out.mean = gather(mu, out.missing) + solved.transpose() * (x_obs - gather(mu, obs));
  out.cov = gather(sigma, out.missing, out.missing) - sigma_mo * solved;
  return out;
}

double oracle_mean(const GlmParams& params, const MaskPattern& m, const Eigen::VectorXd& row) {
  const ConditionalGaussian cond = conditional_gaussian(params, m, row);
  double mean = 0.0;
  for (int j : m.observed_indices()) mean += params.beta(j) * row(j);
  for (size_t k = 0; k < cond.missing.size(); ++k) {
    mean += params.beta(cond.missing[k]) * cond.mean(k);
  }
  return mean;
}

double oracle_conditional_std(const GlmParams& params, const MaskPattern& m) {
  // The conditional covariance does not depend on the conditioning point, so
  // probing at the mean is enough.
  const ConditionalGaussian cond = conditional_gaussian(params, m, params.mu);
  const Eigen::VectorXd beta_mis = gather(params.beta, cond.missing);
  const double var = beta_mis.dot(cond.cov * beta_mis) + params.sigma_eps * params.sigma_eps;
  return std::sqrt(var);
}

PredictionInterval oracle_interval(const GlmParams& params, const MaskPattern& m,
                                   const Eigen::VectorXd& row, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("oracle_interval: alpha must lie in (0,1)");
  }
  const ConditionalGaussian cond = conditional_gaussian(params, m, row);
  double center = 0.0;
  for (int j : m.observed_indices()) center += params.beta(j) * row(j);
  const Eigen::VectorXd beta_mis = gather(params.beta, cond.missing);
  if (!cond.missing.empty()) center += beta_mis.dot(cond.mean);
  const double sd =
      std::sqrt(beta_mis.dot(cond.cov * beta_mis) + params.sigma_eps * params.sigma_eps);
  const double half = std_normal_quantile(1.0 - alpha / 2.0) * sd;

  PredictionInterval out;
  out.lower = center - half;
  out.upper = center + half;
  out.mask_used = m;
  out.cal_subset_size = 0;
  return out;
}

double oracle_interval_length(const GlmParams& params, const MaskPattern& m, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("oracle_interval_length: alpha must lie in (0,1)");
  }
  return 2.0 * std_normal_quantile(1.0 - alpha / 2.0) * oracle_conditional_std(params, m);
}

MaskedDataset generate_glm_dataset(const GlmParams& params, int n, const McarSpec& mcar,
                                   std::uint64_t seed) {
  params.validate();
  if (n < 1) throw std::invalid_argument("generate_glm_dataset: need n >= 1");

  Eigen::LLT<Eigen::MatrixXd> llt(params.sigma);
  Eigen::MatrixXd chol;
  if (llt.info() == Eigen::Success) {
    chol = llt.matrixL();
  } else {
    Eigen::LLT<Eigen::MatrixXd> retry(params.sigma +
                                      1e-10 * Eigen::MatrixXd::Identity(params.d, params.d));
    if (retry.info() != Eigen::Success) {
      throw std::invalid_argument("generate_glm_dataset: sigma is not positive semidefinite");
    }
    chol = retry.matrixL();
  }

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::MatrixXd x(n, params.d);
  Eigen::VectorXd y(n);
  Eigen::VectorXd z(params.d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < params.d; ++j) z(j) = gauss(rng);
    x.row(i) = (params.mu + chol * z).transpose();
    y(i) = params.beta.dot(x.row(i)) + params.sigma_eps * gauss(rng);
  }

  // Masks come from an independent stream so they never depend on (X, Y).
  std::vector<MaskPattern> masks = gen_mcar_masks(n, params.d, mcar, seed + 1);
  return MaskedDataset(std::move(x), std::move(masks), std::move(y));
}

}  // namespace cpmda
