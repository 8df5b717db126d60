#include "cpmda/conformal_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cpmda {

double corrected_upper_quantile(std::span<const double> scores, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("corrected_upper_quantile: alpha must lie in (0,1)");
  }
  const auto n = static_cast<long>(scores.size());
  const long k = static_cast<long>(std::ceil((1.0 - alpha) * static_cast<double>(n + 1)));
  if (k > n) return std::numeric_limits<double>::infinity();
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
  return sorted[k - 1];
}

double corrected_lower_quantile(std::span<const double> scores, double alpha) {
  std::vector<double> negated(scores.size());
  std::transform(scores.begin(), scores.end(), negated.begin(), [](double s) { return -s; });
  return -corrected_upper_quantile(negated, alpha);
}

double cqr_score(double q_low, double q_upp, double y) {
  return std::max(q_low - y, y - q_upp);
}

double abs_residual_score(double yhat, double y) { return std::abs(y - yhat); }

namespace {

// Quantile crossing is repaired by swapping the two predictions before any
// score or interval is formed.
std::pair<double, double> ordered_bounds(double low, double upp) {
  if (low > upp) std::swap(low, upp);
  return {low, upp};
}

}  // namespace

ItpPipeline ItpPipeline::fit(const MaskedDataset& data, const SplitIndices& split,
                             ScoreKind score_kind, double alpha, const FitOptions& options) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("ItpPipeline::fit: alpha must lie in (0,1)");
  }
  if (split.train.empty() || split.cal.empty()) {
    throw std::invalid_argument("ItpPipeline::fit: split sides must be nonempty");
  }

  ItpPipeline p;
  p.score_kind_ = score_kind;
  p.alpha_ = alpha;

  const MaskedDataset train = data.subset(split.train);
  p.imputer_ = Imputer::fit(options.imputer_kind, train, options.imputer_options);

  const int n_train = train.size();
  Eigen::MatrixXd features(n_train, 2 * data.dimension());
  for (int i = 0; i < n_train; ++i) {
    features.row(i) = featurize_with_mask(p.imputer_, train.visible_row(i), train.mask(i));
  }

  if (score_kind == ScoreKind::Cqr) {
    p.q_low_ = QuantileModel::fit(features, train.responses(), alpha / 2.0, options.model_kind,
                                  options.hyper);
    QrHyper upper_hyper = options.hyper;
    upper_hyper.seed = options.hyper.seed + 1;
    p.q_upp_ = QuantileModel::fit(features, train.responses(), 1.0 - alpha / 2.0,
                                  options.model_kind, upper_hyper);
  } else if (options.external_mean) {
    p.has_mean_ = true;
    p.mean_ = options.external_mean;
  } else {
    // Linear least-squares mean on the imputed mask-concatenated features.
    Eigen::MatrixXd design(n_train, features.cols() + 1);
    design.leftCols(features.cols()) = features;
    design.col(features.cols()).setOnes();
    Eigen::MatrixXd gram = design.transpose() * design;
    gram.diagonal().array() += 1e-8 * (1.0 + gram.diagonal().maxCoeff());
    Eigen::VectorXd params = gram.ldlt().solve(design.transpose() * train.responses());
    const Eigen::VectorXd w = params.head(features.cols());
    const double b = params(features.cols());
    const Imputer imputer_copy = p.imputer_;
    p.has_mean_ = true;
    p.mean_ = [imputer_copy, w, b](const Eigen::VectorXd& row, const MaskPattern& m) {
      return w.dot(featurize_with_mask(imputer_copy, row, m)) + b;
    };
  }

  p.record_.alpha = alpha;
  p.record_.scores.reserve(split.cal.size());
  const MaskedDataset cal = data.subset(split.cal);
  for (int i = 0; i < cal.size(); ++i) {
    p.record_.scores.push_back(p.score(cal.visible_row(i), cal.mask(i), cal.response(i)));
  }
  return p;
}

double ItpPipeline::score(const Eigen::VectorXd& row, const MaskPattern& m, double y) const {
  if (score_kind_ == ScoreKind::Cqr) {
    const Eigen::VectorXd z = featurize_with_mask(imputer_, row, m);
    const auto [low, upp] = ordered_bounds(q_low_.predict(z), q_upp_.predict(z));
    return cqr_score(low, upp, y);
  }
  return abs_residual_score(mean_(row, m), y);
}

PredictionInterval ItpPipeline::predict_with_record(const Eigen::VectorXd& row,
                                                    const MaskPattern& m,
                                                    const CalibrationRecord& record) const {
  const double qhat = record.upper_correction();

  PredictionInterval out;
  out.mask_used = m;
  out.cal_subset_size = static_cast<std::int64_t>(record.scores.size());
  if (score_kind_ == ScoreKind::Cqr) {
    const Eigen::VectorXd z = featurize_with_mask(imputer_, row, m);
    const auto [low, upp] = ordered_bounds(q_low_.predict(z), q_upp_.predict(z));
    out.lower = low - qhat;
    out.upper = upp + qhat;
  } else {
    const double center = mean_(row, m);
    out.lower = center - qhat;
    out.upper = center + qhat;
  }
  return out;
}

PredictionInterval ItpPipeline::predict(const Eigen::VectorXd& row, const MaskPattern& m) const {
  return predict_with_record(row, m, record_);
}

std::map<int, CalibrationRecord> groupwise_calibrate_by_pattern_size(
    const ItpPipeline& pipeline, const MaskedDataset& data, const std::vector<int>& cal_rows) {
  std::map<int, CalibrationRecord> records;
  const MaskedDataset cal = data.subset(cal_rows);
  for (int i = 0; i < cal.size(); ++i) {
    const int size = cal.mask(i).count_missing();
    auto& record = records[size];
    record.alpha = pipeline.alpha();
    record.scores.push_back(pipeline.score(cal.visible_row(i), cal.mask(i), cal.response(i)));
  }
  return records;
}

PredictionInterval itp_predict_by_pattern_size(const ItpPipeline& pipeline,
                                               const std::map<int, CalibrationRecord>& records,
                                               const Eigen::VectorXd& row, const MaskPattern& m) {
  const auto it = records.find(m.count_missing());
  if (it == records.end()) return pipeline.predict(row, m);
  return pipeline.predict_with_record(row, m, it->second);
}

}  // namespace cpmda
