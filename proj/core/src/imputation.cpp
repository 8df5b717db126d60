#include "cpmda/imputation.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>

namespace cpmda {

namespace {

// Mean of observed cells per column; throws naming the first fully missing
// column.
Eigen::VectorXd observed_column_means(const MaskedDataset& data) {
  const int d = data.dimension();
  Eigen::VectorXd means = Eigen::VectorXd::Zero(d);
  for (int j = 0; j < d; ++j) {
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < data.size(); ++i) {
      if (data.is_observed(i, j)) {
        sum += data.value(i, j);
        ++count;
      }
    }
    if (count == 0) {
      throw std::invalid_argument("Imputer::fit: column " + std::to_string(j) +
                                  " has no observed values");
    }
    means(j) = sum / count;
  }
  return means;
}

double observed_column_variance(const MaskedDataset& data, int j, double mean) {
  double ss = 0.0;
  int count = 0;
  for (int i = 0; i < data.size(); ++i) {
    if (data.is_observed(i, j)) {
      const double dev = data.value(i, j) - mean;
      ss += dev * dev;
      ++count;
    }
  }
  return count > 0 ? ss / count : 0.0;
}

}  // namespace

Imputer Imputer::fit(ImputerKind kind, const MaskedDataset& data, const ImputerOptions& options) {
  Imputer imp;
  imp.kind_ = kind;
  imp.d_ = data.dimension();
  imp.max_sweeps_ = options.max_sweeps;
  imp.tol_ = options.tol;

  if (kind == ImputerKind::Constant) {
    imp.constant_value_ = options.constant_value;
    return imp;
  }

  imp.column_means_ = observed_column_means(data);
  if (kind == ImputerKind::Mean) return imp;

  // Iterative ridge: chained column-wise ridge regressions starting from
  // mean fill, fixed column order per sweep, stopping at max_sweeps or when
  // no imputed cell moves by more than tol.
  if (options.lambda && *options.lambda <= 0.0) {
    throw std::invalid_argument("Imputer::fit: ridge lambda must be > 0");
  }
  if (options.max_sweeps < 1) throw std::invalid_argument("Imputer::fit: max_sweeps must be >= 1");

  const int n = data.size();
  const int d = imp.d_;
  Eigen::VectorXd lambdas(d);
  for (int j = 0; j < d; ++j) {
    if (options.lambda) {
      lambdas(j) = *options.lambda;
    } else {
      lambdas(j) = std::max(1e-3 * observed_column_variance(data, j, imp.column_means_(j)), 1e-10);
    }
  }

  // Completed working matrix: observed values, mean fill elsewhere.
  Eigen::MatrixXd completed(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      completed(i, j) = data.is_observed(i, j) ? data.value(i, j) : imp.column_means_(j);
    }
  }

  imp.column_models_.assign(d, ColumnModel{});
  for (auto& cm : imp.column_models_) cm.weights = Eigen::VectorXd::Zero(d - 1);

  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (int j = 0; j < d; ++j) {
      // Design: current completed values of all columns but j, on rows where
      // column j is observed.
      std::vector<int> rows;
      rows.reserve(n);
      for (int i = 0; i < n; ++i) {
        if (data.is_observed(i, j)) rows.push_back(i);
      }
      const int nr = static_cast<int>(rows.size());

      ColumnModel& cm = imp.column_models_[j];
      if (d == 1 || nr == 0) {
        cm.intercept = imp.column_means_(j);
        cm.weights = Eigen::VectorXd::Zero(std::max(d - 1, 0));
      } else {
        Eigen::MatrixXd z(nr, d - 1);
        Eigen::VectorXd target(nr);
        for (int r = 0; r < nr; ++r) {
          const int i = rows[r];
          int c = 0;
          for (int k = 0; k < d; ++k) {
            if (k == j) continue;
            z(r, c++) = completed(i, k);
          }
          target(r) = data.value(i, j);
        }
        // Centered ridge with unpenalized intercept.
        const Eigen::RowVectorXd z_mean = z.colwise().mean();
        const double t_mean = target.mean();
        const Eigen::MatrixXd zc = z.rowwise() - z_mean;
        const Eigen::VectorXd tc = target.array() - t_mean;
        Eigen::MatrixXd gram = zc.transpose() * zc;
        gram.diagonal().array() += lambdas(j);
        cm.weights = gram.ldlt().solve(zc.transpose() * tc);
        cm.intercept = t_mean - z_mean * cm.weights;
      }

      // Chained update: refresh imputed cells of column j immediately.
      for (int i = 0; i < n; ++i) {
        if (data.is_observed(i, j)) continue;
        double pred = cm.intercept;
        int c = 0;
        for (int k = 0; k < d; ++k) {
          if (k == j) continue;
          pred += cm.weights(c++) * completed(i, k);
        }
        max_change = std::max(max_change, std::abs(pred - completed(i, j)));
        completed(i, j) = pred;
      }
    }
    if (max_change < options.tol) break;
  }
  return imp;
}

Eigen::VectorXd Imputer::impute(const Eigen::VectorXd& row, const MaskPattern& m) const {
  if (row.size() != d_ || m.dimension() != d_) {
    throw std::invalid_argument("Imputer::impute: dimension mismatch");
  }
  Eigen::VectorXd out = row;

  switch (kind_) {
    case ImputerKind::Constant:
      for (int j = 0; j < d_; ++j) {
        if (m.missing(j)) out(j) = constant_value_;
      }
      return out;
    case ImputerKind::Mean:
      for (int j = 0; j < d_; ++j) {
        if (m.missing(j)) out(j) = column_means_(j);
      }
      return out;
    case ImputerKind::IterativeRidge:
      break;
  }

  // Same sweep scheme as fitting, run with the frozen column models.
  for (int j = 0; j < d_; ++j) {
    if (m.missing(j)) out(j) = column_means_(j);
  }
  if (m.count_missing() == 0) return out;
  for (int sweep = 0; sweep < max_sweeps_; ++sweep) {
    double max_change = 0.0;
    for (int j = 0; j < d_; ++j) {
      if (!m.missing(j)) continue;
      const ColumnModel& cm = column_models_[j];
      double pred = cm.intercept;
      int c = 0;
      for (int k = 0; k < d_; ++k) {
        if (k == j) continue;
        pred += cm.weights(c++) * out(k);
      }
      max_change = std::max(max_change, std::abs(pred - out(j)));
      out(j) = pred;
    }
    if (max_change < tol_) break;
  }
  return out;
}

}  // namespace cpmda
