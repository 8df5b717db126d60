#pragma once

// Deterministic imputation functions that map observed coordinates to
// themselves and fill missing ones from the observed ones, fitted on
// training rows and applicable out of sample.

#include "cpmda/data_model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace cpmda {

enum class ImputerKind { Constant, Mean, IterativeRidge };

struct ImputerOptions {
  double constant_value = 0.0;
  /// Ridge penalty; unset means per-column 1e-3 * observed variance.
  std::optional<double> lambda;
  int max_sweeps = 10;
  double tol = 1e-6;
};

/// A fitted imputation function. impute() never alters observed coordinates
/// and never reads masked cells, so it works on rows whose masked entries
/// hold NaN, a sentinel, or stale values.
class Imputer {
 public:
  /// Fit on the given rows (callers pass the training subset). Mean and
  /// iterative-ridge fitting require every column to have at least one
  /// observed value; a fully missing column is reported by index.
  static Imputer fit(ImputerKind kind, const MaskedDataset& data,
                     const ImputerOptions& options = {});

  Eigen::VectorXd impute(const Eigen::VectorXd& row, const MaskPattern& m) const;

  ImputerKind kind() const { return kind_; }
  int dimension() const { return d_; }

 private:
  struct ColumnModel {
    double intercept = 0.0;
    Eigen::VectorXd weights;  // over the other d-1 columns, in index order
  };

  ImputerKind kind_ = ImputerKind::Constant;
  int d_ = 0;
  double constant_value_ = 0.0;
  Eigen::VectorXd column_means_;
  std::vector<ColumnModel> column_models_;  // iterative ridge only
  int max_sweeps_ = 10;
  double tol_ = 1e-6;
};

}  // namespace cpmda
