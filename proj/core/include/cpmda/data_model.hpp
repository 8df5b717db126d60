#pragma once

// Core value types shared across the library: missingness patterns, datasets
// with explicit missing cells, train/calibration splits and prediction
// intervals. All types are immutable after construction and safe to share
// across threads.

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

namespace cpmda {

/// Per-row missingness pattern: bit j set means coordinate j is missing.
class MaskPattern {
 public:
  MaskPattern() = default;
  explicit MaskPattern(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {}

  static MaskPattern zeros(int d) { return MaskPattern(std::vector<std::uint8_t>(d, 0)); }
  static MaskPattern ones(int d) { return MaskPattern(std::vector<std::uint8_t>(d, 1)); }
  /// Parse "0101"-style strings; '1' marks a missing coordinate.
  static MaskPattern from_string(std::string_view s);

  int dimension() const { return static_cast<int>(bits_.size()); }
  /// Number of missing coordinates (the pattern size).
  int count_missing() const;
  int count_observed() const { return dimension() - count_missing(); }

  bool missing(int j) const { return bits_[j] != 0; }
  bool observed(int j) const { return bits_[j] == 0; }
  void set_missing(int j, bool miss) { bits_[j] = miss ? 1 : 0; }

  bool all_observed() const { return count_missing() == 0; }
  bool all_missing() const { return count_missing() == dimension(); }

  std::vector<int> missing_indices() const;
  std::vector<int> observed_indices() const;

  std::string to_string() const;

  friend bool operator==(const MaskPattern& a, const MaskPattern& b) { return a.bits_ == b.bits_; }
  friend bool operator!=(const MaskPattern& a, const MaskPattern& b) { return !(a == b); }
  /// Lexicographic order; used only to make map iteration deterministic.
  friend bool operator<(const MaskPattern& a, const MaskPattern& b) { return a.bits_ < b.bits_; }

 private:
  std::vector<std::uint8_t> bits_;
};

/// Disjoint train/calibration index sets over rows 0..n-1.
struct SplitIndices {
  std::vector<int> train;
  std::vector<int> cal;
};

/// Uniform random split without replacement; |cal| = round(cal_fraction * n).
/// Deterministic given seed. Throws std::invalid_argument if n < 2,
/// cal_fraction is outside (0,1), or either side would be empty.
SplitIndices split_train_cal(int n, double cal_fraction, std::uint64_t seed);

/// Feature matrix with explicit missing cells, one mask per row, and a
/// complete response vector. The mask matrix is the single source of truth:
/// a cell is readable iff its mask bit is 0. The underlying buffer may hold
/// a NaN sentinel or a retained true value at masked cells (the latter after
/// MCAR injection into complete data); readers must consult the mask.
class MaskedDataset {
 public:
  MaskedDataset(Eigen::MatrixXd features, std::vector<MaskPattern> masks,
                Eigen::VectorXd responses);

  int size() const { return static_cast<int>(features_.rows()); }
  int dimension() const { return static_cast<int>(features_.cols()); }

  bool is_observed(int i, int j) const { return masks_[i].observed(j); }
  /// Observed cell value; throws std::logic_error on a masked cell.
  double value(int i, int j) const;
  /// Raw buffer content regardless of mask (sentinel or retained value).
  double raw(int i, int j) const { return features_(i, j); }
  /// Row copy with NaN forced at masked coordinates. This is what model
  /// code should consume: masked values are physically unreadable.
  Eigen::VectorXd visible_row(int i) const;

  const MaskPattern& mask(int i) const { return masks_[i]; }
  const std::vector<MaskPattern>& masks() const { return masks_; }
  double response(int i) const { return responses_(i); }
  const Eigen::VectorXd& responses() const { return responses_; }
  const Eigen::MatrixXd& features() const { return features_; }

  MaskedDataset subset(const std::vector<int>& rows) const;

 private:
  Eigen::MatrixXd features_;
  std::vector<MaskPattern> masks_;
  Eigen::VectorXd responses_;
};

/// Closed prediction interval, possibly unbounded on either side.
struct PredictionInterval {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  MaskPattern mask_used;
  std::int64_t cal_subset_size = 0;

  bool covers(double y) const { return lower <= y && y <= upper; }
  bool is_infinite() const { return !std::isfinite(lower) || !std::isfinite(upper); }
  double length() const { return upper - lower; }
};

}  // namespace cpmda
