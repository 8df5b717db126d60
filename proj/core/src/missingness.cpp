#include "cpmda/missingness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cpmda {

std::vector<MaskPattern> gen_mcar_masks(int n, int d, const McarSpec& spec, std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("gen_mcar_masks: need n >= 1 and d >= 1");
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0)) {
    throw std::invalid_argument("gen_mcar_masks: rate must lie in [0,1]");
  }
  std::vector<std::uint8_t> eligible(d, 1);
  if (spec.column_subset) {
    eligible.assign(d, 0);
    for (int j : *spec.column_subset) {
      if (j < 0 || j >= d) throw std::invalid_argument("gen_mcar_masks: column index out of range");
      eligible[j] = 1;
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<MaskPattern> masks;
  masks.reserve(n);
  for (int i = 0; i < n; ++i) {
    std::vector<std::uint8_t> bits(d, 0);
    for (int j = 0; j < d; ++j) {
      // Draw for every coordinate so the stream layout does not depend on
      // the eligible set.
      const double u = unif(rng);
      if (eligible[j] && u < spec.rate) bits[j] = 1;
    }
    masks.emplace_back(std::move(bits));
  }
  return masks;
}

bool mask_included(const MaskPattern& a, const MaskPattern& b) {
  if (a.dimension() != b.dimension()) {
    throw std::invalid_argument("mask_included: length mismatch");
  }
  for (int j = 0; j < a.dimension(); ++j) {
    if (a.missing(j) && !b.missing(j)) return false;
  }
  return true;
}

MaskPattern mask_max(const MaskPattern& a, const MaskPattern& b) {
  if (a.dimension() != b.dimension()) {
    throw std::invalid_argument("mask_max: length mismatch");
  }
  std::vector<std::uint8_t> bits(a.dimension());
  for (int j = 0; j < a.dimension(); ++j) {
    bits[j] = (a.missing(j) || b.missing(j)) ? 1 : 0;
  }
  return MaskPattern(std::move(bits));
}

Eigen::VectorXd apply_mask(const Eigen::VectorXd& row, const MaskPattern& m) {
  if (row.size() != m.dimension()) {
    throw std::invalid_argument("apply_mask: length mismatch");
  }
  Eigen::VectorXd out = row;
  for (int j = 0; j < m.dimension(); ++j) {
    if (m.missing(j)) out(j) = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

namespace {

// Uniform mask of exactly s missing coordinates via partial Fisher-Yates.
MaskPattern uniform_mask_of_size(int d, int s, std::mt19937_64& rng) {
  std::vector<int> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::uint8_t> bits(d, 0);
  for (int k = 0; k < s; ++k) {
    std::uniform_int_distribution<int> pick(k, d - 1);
    std::swap(idx[k], idx[pick(rng)]);
    bits[idx[k]] = 1;
  }
  return MaskPattern(std::move(bits));
}

}  // namespace

std::vector<MaskPattern> sample_eval_patterns(int d, int per_size,
                                              std::span<const MaskPattern> mechanism_sample,
                                              std::uint64_t seed, bool include_all_missing) {
  if (per_size < 1) throw std::invalid_argument("sample_eval_patterns: per_size must be >= 1");
  std::map<int, std::vector<const MaskPattern*>> by_size;
  for (const auto& m : mechanism_sample) {
    if (m.dimension() != d) {
      throw std::invalid_argument("sample_eval_patterns: mechanism sample mask of wrong length");
    }
    by_size[m.count_missing()].push_back(&m);
  }

  std::mt19937_64 rng(seed);
  const int max_size = include_all_missing ? d : d - 1;
  std::vector<MaskPattern> out;
  out.reserve(static_cast<size_t>(per_size) * (max_size + 1));
  for (int s = 0; s <= max_size; ++s) {
    const auto it = by_size.find(s);
    for (int k = 0; k < per_size; ++k) {
      if (it != by_size.end() && !it->second.empty()) {
        std::uniform_int_distribution<size_t> pick(0, it->second.size() - 1);
        out.push_back(*it->second[pick(rng)]);
      } else {
        out.push_back(uniform_mask_of_size(d, s, rng));
      }
    }
  }
  return out;
}

}  // namespace cpmda
