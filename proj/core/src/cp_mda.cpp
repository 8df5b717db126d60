#include "cpmda/cp_mda.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

namespace cpmda {

MdaPipeline MdaPipeline::fit(const MaskedDataset& data, const SplitIndices& split, double alpha,
                             const FitOptions& options) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("MdaPipeline::fit: alpha must lie in (0,1)");
  }
  if (split.train.empty() || split.cal.empty()) {
    throw std::invalid_argument("MdaPipeline::fit: split sides must be nonempty");
  }

  MdaPipeline p;
  p.alpha_ = alpha;

  const MaskedDataset train = data.subset(split.train);
  p.imputer_ = Imputer::fit(options.imputer_kind, train, options.imputer_options);

  Eigen::MatrixXd features(train.size(), 2 * data.dimension());
  for (int i = 0; i < train.size(); ++i) {
    features.row(i) = featurize_with_mask(p.imputer_, train.visible_row(i), train.mask(i));
  }
  p.q_low_ =
      QuantileModel::fit(features, train.responses(), alpha / 2.0, options.model_kind, options.hyper);
  QrHyper upper_hyper = options.hyper;
  upper_hyper.seed = options.hyper.seed + 1;
  p.q_upp_ = QuantileModel::fit(features, train.responses(), 1.0 - alpha / 2.0, options.model_kind,
                                upper_hyper);

  const MaskedDataset cal = data.subset(split.cal);
  p.cal_rows_.resize(cal.size(), cal.dimension());
  p.cal_masks_.reserve(cal.size());
  Eigen::VectorXd responses(cal.size());
  for (int i = 0; i < cal.size(); ++i) {
    p.cal_rows_.row(i) = cal.visible_row(i);
    p.cal_masks_.push_back(cal.mask(i));
    responses(i) = cal.response(i);
  }
  p.cal_responses_ = std::move(responses);
  return p;
}

namespace {

std::pair<double, double> quantile_pair(const MdaPipeline& p, const Eigen::VectorXd& row,
                                        const MaskPattern& m) {
  const Eigen::VectorXd z = featurize_with_mask(p.imputer(), row, m);
  double low = p.q_low().predict(z);
  double upp = p.q_upp().predict(z);
  if (low > upp) std::swap(low, upp);
  return {low, upp};
}

}  // namespace

ExactCorrection mda_exact_correction(const MdaPipeline& p, const MaskPattern& m) {
  if (m.dimension() != p.dimension()) {
    throw std::invalid_argument("mda_exact_correction: mask length mismatch");
  }
  std::vector<double> scores;
  for (int k = 0; k < p.cal_size(); ++k) {
    if (!mask_included(p.cal_masks()[k], m)) continue;
    // Additional masking: the retained row is re-masked to the test mask.
    assert(mask_max(p.cal_masks()[k], m) == m);
    const auto [low, upp] = quantile_pair(p, p.cal_rows().row(k), m);
    scores.push_back(cqr_score(low, upp, p.cal_responses()(k)));
  }
  ExactCorrection out;
  out.cal_subset_size = static_cast<std::int64_t>(scores.size());
  out.qhat = corrected_upper_quantile(scores, p.alpha());
  return out;
}

PredictionInterval mda_exact_interval(const MdaPipeline& p, const Eigen::VectorXd& row,
                                      const MaskPattern& m, const ExactCorrection& correction) {
  const auto [low, upp] = quantile_pair(p, row, m);
  PredictionInterval out;
  out.lower = low - correction.qhat;
  out.upper = upp + correction.qhat;
  out.mask_used = m;
  out.cal_subset_size = correction.cal_subset_size;
  return out;
}

PredictionInterval mda_exact_interval(const MdaPipeline& p, const Eigen::VectorXd& row,
                                      const MaskPattern& m) {
  return mda_exact_interval(p, row, m, mda_exact_correction(p, m));
}

namespace {

struct NestedBags {
  std::vector<double> lower;           // z_{alpha/2} entries
  std::vector<double> upper;           // z_{1-alpha/2} entries
  std::vector<MaskPattern> augmented;  // m~ per calibration row
};

NestedBags nested_bags(const MdaPipeline& p, const Eigen::VectorXd& row, const MaskPattern& m) {
  if (m.dimension() != p.dimension()) {
    throw std::invalid_argument("mda_nested: mask length mismatch");
  }
  const int n_cal = p.cal_size();
  NestedBags bags;
  bags.lower.reserve(n_cal);
  bags.upper.reserve(n_cal);
  bags.augmented.reserve(n_cal);
  for (int k = 0; k < n_cal; ++k) {
    const MaskPattern augmented = mask_max(m, p.cal_masks()[k]);
    const auto [cal_low, cal_upp] = quantile_pair(p, p.cal_rows().row(k), augmented);
    const double s = cqr_score(cal_low, cal_upp, p.cal_responses()(k));
    // Temporary test masking: predict on the test point under the same
    // augmented mask, then shift by the calibration score.
    const auto [test_low, test_upp] = quantile_pair(p, row, augmented);
    bags.lower.push_back(test_low - s);
    bags.upper.push_back(test_upp + s);
    bags.augmented.push_back(augmented);
  }
  return bags;
}

}  // namespace

PredictionInterval mda_nested_interval(const MdaPipeline& p, const Eigen::VectorXd& row,
                                       const MaskPattern& m) {
  const NestedBags bags = nested_bags(p, row, m);
  PredictionInterval out;
  out.lower = corrected_lower_quantile(bags.lower, p.alpha());
  out.upper = corrected_upper_quantile(bags.upper, p.alpha());
  if (out.lower > out.upper) std::swap(out.lower, out.upper);
  out.mask_used = m;
  out.cal_subset_size = static_cast<std::int64_t>(bags.lower.size());
  return out;
}

PredictionInterval mda_nested_partitioned_interval(const MdaPipeline& p,
                                                   const Eigen::VectorXd& row,
                                                   const MaskPattern& m,
                                                   const PartitionChoice& choice) {
  const NestedBags bags = nested_bags(p, row, m);

  std::map<MaskPattern, std::vector<int>> partition;
  for (size_t k = 0; k < bags.augmented.size(); ++k) {
    partition[bags.augmented[k]].push_back(static_cast<int>(k));
  }

  MaskPattern chosen;
  if (choice.fixed) {
    if (!mask_included(m, *choice.fixed)) {
      throw std::invalid_argument(
          "mda_nested_partitioned_interval: fixed pattern must include the test mask");
    }
    chosen = *choice.fixed;
  } else if (choice.random_seed) {
    // Weighted draw over occurring augmented masks, probability
    // proportional to sub-bag cardinality.
    std::vector<const MaskPattern*> keys;
    std::vector<double> weights;
    for (const auto& [key, members] : partition) {
      keys.push_back(&key);
      weights.push_back(static_cast<double>(members.size()));
    }
    std::mt19937_64 rng(*choice.random_seed);
    std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
    chosen = *keys[pick(rng)];
  } else if (partition.count(m) > 0) {
    // Some calibration mask is included in the test mask, so the test mask
    // itself occurs as an augmented pattern.
    chosen = m;
  } else if (!partition.empty()) {
    // Smallest-cardinality occurring superset; map order breaks ties
    // deterministically.
    const MaskPattern* best = nullptr;
    for (const auto& [key, members] : partition) {
      if (best == nullptr || key.count_missing() < best->count_missing()) best = &key;
    }
    chosen = *best;
  } else {
    chosen = m;
  }

  std::vector<double> sub_lower, sub_upper;
  if (const auto it = partition.find(chosen); it != partition.end()) {
    for (int k : it->second) {
      sub_lower.push_back(bags.lower[k]);
      sub_upper.push_back(bags.upper[k]);
    }
  }

  PredictionInterval out;
  out.lower = corrected_lower_quantile(sub_lower, p.alpha());
  out.upper = corrected_upper_quantile(sub_upper, p.alpha());
  if (out.lower > out.upper) std::swap(out.lower, out.upper);
  out.mask_used = chosen;
  out.cal_subset_size = static_cast<std::int64_t>(sub_lower.size());
  return out;
}

}  // namespace cpmda
