#pragma once

// MCAR mask generation, mask algebra (inclusion partial order, elementwise
// max), masking of complete rows, and per-pattern-size test mask sampling.
// All functions are pure; RNG state enters only through explicit seeds.

#include "cpmda/data_model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace cpmda {

/// MCAR mechanism: every eligible bit is independently missing with rate p.
/// column_subset restricts eligibility (columns outside it are never masked),
/// mirroring injection into only the quantitative columns of a dataset.
struct McarSpec {
  double rate = 0.0;
  std::optional<std::vector<int>> column_subset;
};

/// n independent MCAR masks of length d. Deterministic given seed.
std::vector<MaskPattern> gen_mcar_masks(int n, int d, const McarSpec& spec, std::uint64_t seed);

/// True iff every missing coordinate of a is also missing in b (a included
/// in b, equality allowed).
bool mask_included(const MaskPattern& a, const MaskPattern& b);

/// Elementwise maximum; the least upper bound under mask_included.
MaskPattern mask_max(const MaskPattern& a, const MaskPattern& b);

/// Hide coordinates of a complete row: masked cells become NaN, observed
/// cells are untouched. Idempotent on observed coordinates.
Eigen::VectorXd apply_mask(const Eigen::VectorXd& row, const MaskPattern& m);

/// Evaluation masks with a fixed count per pattern size: for each size
/// s in 0..d-1 (plus s=d when include_all_missing), emits per_size masks
/// drawn with replacement from the empirical conditional distribution of
/// `mechanism_sample` given size s. Sizes absent from the sample fall back
/// to the uniform distribution over size-s masks, which is the conditional
/// law under plain MCAR.
std::vector<MaskPattern> sample_eval_patterns(int d, int per_size,
                                              std::span<const MaskPattern> mechanism_sample,
                                              std::uint64_t seed,
                                              bool include_all_missing = false);

}  // namespace cpmda
