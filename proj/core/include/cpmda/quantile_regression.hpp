#pragma once

// Pinball loss, mask-concatenated featurization, and conditional-quantile
// models: a deterministic convex solver for linear pinball regression plus
// an optional small multilayer perceptron.

#include "cpmda/data_model.hpp"
#include "cpmda/imputation.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <utility>
#include <vector>

namespace cpmda {

/// ell_tau(y, yhat): tau * (y - yhat) above the prediction, (1 - tau) *
/// (yhat - y) below it.
double pinball_loss(double y, double yhat, double tau);

/// Imputed row concatenated with the mask bits as 0/1 reals: a 2d-vector.
Eigen::VectorXd featurize_with_mask(const Imputer& imputer, const Eigen::VectorXd& row,
                                    const MaskPattern& m);

enum class QrKind { Linear, Mlp };

struct QrHyper {
  // MLP settings (unused by the linear solver): three fully connected
  // layers with hidden width 64, ReLU, dropout, pinball loss, Adam; the
  // epoch count is tuned on a hold-out slice of the training rows.
  int max_epochs = 2000;
  int batch_size = 64;
  double learning_rate = 5e-4;
  double dropout = 0.1;
  double holdout_fraction = 0.1;
  int hidden_dim = 64;
  std::uint64_t seed = 0;
};

/// Conditional-quantile predictor at a fixed level.
class QuantileModel {
 public:
  /// Fit to minimize empirical pinball risk. The linear kind solves the
  /// convex program by iteratively reweighted least squares with a
  /// smoothing parameter annealed from 1e-2 to 1e-8; the MLP kind trains a
  /// 3-layer network, deterministic given hyper.seed.
  static QuantileModel fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double tau,
                           QrKind kind = QrKind::Linear, const QrHyper& hyper = {});

  double predict(const Eigen::VectorXd& features) const;
  Eigen::VectorXd predict_many(const Eigen::MatrixXd& x) const;

  double tau() const { return tau_; }
  QrKind kind() const { return kind_; }
  int input_dim() const { return input_dim_; }

  // Linear parameters (throws for the MLP kind).
  const Eigen::VectorXd& weights() const;
  double intercept() const;

 private:
  double tau_ = 0.5;
  QrKind kind_ = QrKind::Linear;
  int input_dim_ = 0;

  Eigen::VectorXd weights_;
  double intercept_ = 0.0;

  // MLP parameters: (W1,b1),(W2,b2),(W3,b3).
  std::vector<Eigen::MatrixXd> layer_w_;
  std::vector<Eigen::VectorXd> layer_b_;
};

/// Per-coordinate subgradient interval [lo, hi] of the empirical pinball
/// risk at the model's linear parameters (weights then intercept),
/// normalized by the row count. Residuals within zero_tol of the kink
/// contribute their full subdifferential. At an optimum every interval
/// contains zero.
std::pair<Eigen::VectorXd, Eigen::VectorXd> pinball_subgradient_interval(
    const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const QuantileModel& model,
    double zero_tol = 1e-7);

}  // namespace cpmda
