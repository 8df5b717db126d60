#pragma once

// Split conformal machinery: finite-sample-corrected empirical quantiles,
// conformity scores, the impute-then-predict conformal pipeline, and the
// pattern-size group-calibration baseline.

#include "cpmda/data_model.hpp"
#include "cpmda/imputation.hpp"
#include "cpmda/quantile_regression.hpp"

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace cpmda {

/// k-th smallest score with k = ceil((1-alpha)(#S+1)); +infinity when the
/// index exceeds #S (including the empty set). This is the inflated-quantile
/// correction (1-alpha)(1 + 1/#S) read as an order statistic.
double corrected_upper_quantile(std::span<const double> scores, double alpha);

/// Lower-tail counterpart via negation symmetry:
/// -corrected_upper_quantile(-scores, alpha); -infinity when degenerate.
double corrected_lower_quantile(std::span<const double> scores, double alpha);

/// max(q_low - y, y - q_upp): negative iff y lies strictly inside.
double cqr_score(double q_low, double q_upp, double y);

/// |y - yhat|.
double abs_residual_score(double yhat, double y);

enum class ScoreKind { Cqr, AbsResidual };

/// Multiset of calibration scores at a fixed miscoverage level.
struct CalibrationRecord {
  std::vector<double> scores;
  double alpha = 0.1;

  double upper_correction() const { return corrected_upper_quantile(scores, alpha); }
};

/// Mean predictor consuming the raw (row, mask) pair; used to conformalize
/// absolute residuals around an arbitrary regressor, including the
/// Gaussian-model Bayes mean.
using MeanFn = std::function<double(const Eigen::VectorXd& row, const MaskPattern& m)>;

/// Split conformal prediction on impute-then-predict: the imputer and the
/// bound models are fitted on the training rows, calibration scores on the
/// calibration rows. Immutable once fitted.
class ItpPipeline {
 public:
  struct FitOptions {
    ImputerKind imputer_kind = ImputerKind::IterativeRidge;
    ImputerOptions imputer_options;
    QrKind model_kind = QrKind::Linear;
    QrHyper hyper;
    /// For AbsResidual only: conformalize around this external predictor
    /// instead of fitting a linear mean on the imputed features.
    MeanFn external_mean;
  };

  static ItpPipeline fit(const MaskedDataset& data, const SplitIndices& split,
                         ScoreKind score_kind, double alpha, const FitOptions& options = {});

  /// CQR: [q_low(z) - Qhat, q_upp(z) + Qhat]; AbsResidual: [yhat - Qhat,
  /// yhat + Qhat]. Qhat may be +infinity, which propagates to an infinite
  /// interval.
  PredictionInterval predict(const Eigen::VectorXd& row, const MaskPattern& m) const;

  /// Interval computed against an explicit score record (used by the
  /// pattern-size baseline).
  PredictionInterval predict_with_record(const Eigen::VectorXd& row, const MaskPattern& m,
                                         const CalibrationRecord& record) const;

  /// Score of a labelled point under the fitted models.
  double score(const Eigen::VectorXd& row, const MaskPattern& m, double y) const;

  const Imputer& imputer() const { return imputer_; }
  const QuantileModel& q_low() const { return q_low_; }
  const QuantileModel& q_upp() const { return q_upp_; }
  const CalibrationRecord& record() const { return record_; }
  ScoreKind score_kind() const { return score_kind_; }
  double alpha() const { return alpha_; }
  int dimension() const { return imputer_.dimension(); }

 private:
  Imputer imputer_;
  ScoreKind score_kind_ = ScoreKind::Cqr;
  double alpha_ = 0.1;
  QuantileModel q_low_, q_upp_;  // cqr
  bool has_mean_ = false;
  MeanFn mean_;                  // abs_residual
  CalibrationRecord record_;
};

/// Calibration scores partitioned by mask pattern size. Sizes with no
/// calibration points inherit the marginal record at prediction time.
std::map<int, CalibrationRecord> groupwise_calibrate_by_pattern_size(const ItpPipeline& pipeline,
                                                                     const MaskedDataset& data,
                                                                     const std::vector<int>& cal_rows);

/// Prediction using the record matching the test mask's size.
PredictionInterval itp_predict_by_pattern_size(const ItpPipeline& pipeline,
                                               const std::map<int, CalibrationRecord>& records,
                                               const Eigen::VectorXd& row, const MaskPattern& m);

}  // namespace cpmda
