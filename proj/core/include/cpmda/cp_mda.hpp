#pragma once

// Conformal prediction with missing-data augmentation: the calibration set
// is re-masked to match (exact masking) or include (nested masking) the
// test mask before scoring, which restores coverage conditionally on the
// missing pattern under MCAR. Also ships the partitioned nested variant
// whose sub-bag quantiles are mask-conditionally conservative.

#include "cpmda/conformal_core.hpp"
#include "cpmda/data_model.hpp"
#include "cpmda/imputation.hpp"
#include "cpmda/missingness.hpp"
#include "cpmda/quantile_regression.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace cpmda {

/// Fitted state shared by the MDA calibrators: a train-fitted imputer, the
/// two quantile models at levels alpha/2 and 1-alpha/2, and the untouched
/// calibration rows. Calibration rows are never used for model fitting.
class MdaPipeline {
 public:
  struct FitOptions {
    ImputerKind imputer_kind = ImputerKind::IterativeRidge;
    ImputerOptions imputer_options;
    QrKind model_kind = QrKind::Linear;
    QrHyper hyper;
  };

  static MdaPipeline fit(const MaskedDataset& data, const SplitIndices& split, double alpha,
                         const FitOptions& options = {});

  const Imputer& imputer() const { return imputer_; }
  const QuantileModel& q_low() const { return q_low_; }
  const QuantileModel& q_upp() const { return q_upp_; }
  double alpha() const { return alpha_; }
  int dimension() const { return imputer_.dimension(); }
  int cal_size() const { return static_cast<int>(cal_masks_.size()); }

  const Eigen::MatrixXd& cal_rows() const { return cal_rows_; }      // visible rows (NaN when masked)
  const std::vector<MaskPattern>& cal_masks() const { return cal_masks_; }
  const Eigen::VectorXd& cal_responses() const { return cal_responses_; }

 private:
  Imputer imputer_;
  QuantileModel q_low_, q_upp_;
  double alpha_ = 0.1;
  Eigen::MatrixXd cal_rows_;
  std::vector<MaskPattern> cal_masks_;
  Eigen::VectorXd cal_responses_;
};

/// Correction term of exact masking for one test mask: calibration rows
/// whose mask is included in m are re-masked to m, imputed and scored; the
/// corrected score quantile is returned together with the retained subset
/// size. +infinity when the subset is too small (or empty).
struct ExactCorrection {
  double qhat = 0.0;
  std::int64_t cal_subset_size = 0;
};
ExactCorrection mda_exact_correction(const MdaPipeline& p, const MaskPattern& m);

PredictionInterval mda_exact_interval(const MdaPipeline& p, const Eigen::VectorXd& row,
                                      const MaskPattern& m);
/// Overload reusing a precomputed correction (the correction depends on the
/// test mask only, so harnesses share it across test points).
PredictionInterval mda_exact_interval(const MdaPipeline& p, const Eigen::VectorXd& row,
                                      const MaskPattern& m, const ExactCorrection& correction);

/// Nested masking: every calibration row k gets the augmented mask
/// max(m, m^(k)); its score shifts the quantile predictions made on the
/// test point under that same augmented mask, filling a lower and an upper
/// bag of size #Cal whose corrected quantiles bound the interval.
PredictionInterval mda_nested_interval(const MdaPipeline& p, const Eigen::VectorXd& row,
                                       const MaskPattern& m);

/// Partitioned nested variant: the bags are restricted to entries whose
/// augmented mask equals a single chosen pattern including m. Default
/// choice: m itself when feasible, otherwise the smallest-cardinality
/// occurring superset; alternatively a seeded random draw weighted by
/// sub-bag cardinality. Empty sub-bags yield an infinite interval.
struct PartitionChoice {
  std::optional<MaskPattern> fixed;
  std::optional<std::uint64_t> random_seed;
};
PredictionInterval mda_nested_partitioned_interval(const MdaPipeline& p,
                                                   const Eigen::VectorXd& row,
                                                   const MaskPattern& m,
                                                   const PartitionChoice& choice = {});

}  // namespace cpmda
