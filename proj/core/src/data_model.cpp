#include "cpmda/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cpmda {

MaskPattern MaskPattern::from_string(std::string_view s) {
  std::vector<std::uint8_t> bits;
  bits.reserve(s.size());
  for (char c : s) {
    if (c == '0') {
      bits.push_back(0);
    } else if (c == '1') {
      bits.push_back(1);
    } else {
      throw std::invalid_argument("MaskPattern::from_string: expected only '0'/'1', got '" +
                                  std::string(1, c) + "'");
    }
  }
  return MaskPattern(std::move(bits));
}

int MaskPattern::count_missing() const {
  return static_cast<int>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<int> MaskPattern::missing_indices() const {
  std::vector<int> idx;
  for (int j = 0; j < dimension(); ++j) {
    if (missing(j)) idx.push_back(j);
  }
  return idx;
}

std::vector<int> MaskPattern::observed_indices() const {
  std::vector<int> idx;
  for (int j = 0; j < dimension(); ++j) {
    if (observed(j)) idx.push_back(j);
  }
  return idx;
}

std::string MaskPattern::to_string() const {
  std::string s(bits_.size(), '0');
  for (size_t j = 0; j < bits_.size(); ++j) {
    if (bits_[j]) s[j] = '1';
  }
  return s;
}

SplitIndices split_train_cal(int n, double cal_fraction, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("split_train_cal: need n >= 2, got " + std::to_string(n));
  if (!(cal_fraction > 0.0 && cal_fraction < 1.0)) {
    throw std::invalid_argument("split_train_cal: cal_fraction must lie in (0,1)");
  }
  const int n_cal = static_cast<int>(std::lround(cal_fraction * n));
  if (n_cal < 1 || n_cal > n - 1) {
    throw std::invalid_argument("split_train_cal: split leaves an empty side (n=" +
                                std::to_string(n) + ", |cal|=" + std::to_string(n_cal) + ")");
  }

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  SplitIndices split;
  split.cal.assign(perm.begin(), perm.begin() + n_cal);
  split.train.assign(perm.begin() + n_cal, perm.end());
  std::sort(split.cal.begin(), split.cal.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

MaskedDataset::MaskedDataset(Eigen::MatrixXd features, std::vector<MaskPattern> masks,
                             Eigen::VectorXd responses)
    : features_(std::move(features)), masks_(std::move(masks)), responses_(std::move(responses)) {
  const auto n = features_.rows();
  if (static_cast<Eigen::Index>(masks_.size()) != n || responses_.size() != n) {
    throw std::invalid_argument("MaskedDataset: features, masks and responses must share row count");
  }
  for (const auto& m : masks_) {
    if (m.dimension() != features_.cols()) {
      throw std::invalid_argument("MaskedDataset: mask length does not match feature dimension");
    }
  }
}

double MaskedDataset::value(int i, int j) const {
  if (!is_observed(i, j)) {
    throw std::logic_error("MaskedDataset::value: cell (" + std::to_string(i) + "," +
                           std::to_string(j) + ") is masked; consult the mask before reading");
  }
  return features_(i, j);
}

Eigen::VectorXd MaskedDataset::visible_row(int i) const {
  Eigen::VectorXd row = features_.row(i);
  const MaskPattern& m = masks_[i];
  for (int j = 0; j < dimension(); ++j) {
    if (m.missing(j)) row(j) = std::numeric_limits<double>::quiet_NaN();
  }
  return row;
}

MaskedDataset MaskedDataset::subset(const std::vector<int>& rows) const {
  Eigen::MatrixXd f(rows.size(), dimension());
  std::vector<MaskPattern> m;
  m.reserve(rows.size());
  Eigen::VectorXd y(rows.size());
  for (size_t k = 0; k < rows.size(); ++k) {
    const int i = rows[k];
    if (i < 0 || i >= size()) throw std::out_of_range("MaskedDataset::subset: row index out of range");
    f.row(k) = features_.row(i);
    m.push_back(masks_[i]);
    y(k) = responses_(i);
  }
  return MaskedDataset(std::move(f), std::move(m), std::move(y));
}

}  // namespace cpmda
