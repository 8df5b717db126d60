#pragma once

// Coverage and length estimators (marginal, per-mask, per-pattern-size) and
// the repeated-experiment runner: generate or ingest data, fit the selected
// methods once per repetition, evaluate on a marginal test set and on
// fixed-count per-pattern test sets, and emit one report per method per
// repetition.

#include "cpmda/conformal_core.hpp"
#include "cpmda/cp_mda.hpp"
#include "cpmda/data_model.hpp"
#include "cpmda/gaussian_oracle.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cpmda {

/// One evaluation group: the whole test set ("marginal"), one mask
/// ("mask:0110..") or one pattern size ("size:2").
struct GroupRecord {
  std::string key;
  int n_test = 0;
  double coverage = 0.0;
  /// Mean of upper-lower over finite intervals; NaN when none are finite.
  double mean_length = 0.0;
  double infinite_fraction = 0.0;
  /// Mean length with infinite intervals replaced by the response range
  /// supplied to coverage_report; NaN when no clamp was supplied.
  double clamped_mean_length = 0.0;
};

struct CoverageReport {
  std::vector<GroupRecord> groups;
  const GroupRecord* find(const std::string& key) const;
  double lowest_mask_coverage() const;
};

/// Empirical coverage (closed intervals; infinite bounds count as covering)
/// and lengths, grouped marginally, by mask and by pattern size.
/// length_clamp, when given, is the value substituted for infinite lengths
/// in clamped_mean_length (callers pass the train+cal response range).
CoverageReport coverage_report(std::span<const PredictionInterval> intervals,
                               const Eigen::VectorXd& y, std::span<const MaskPattern> masks,
                               std::optional<double> length_clamp = {});

enum class Method {
  Qr,
  Cqr,
  CqrMdaExact,
  CqrMdaNested,
  CqrMdaNestedPartitioned,
  MeanScp,
  ScpByPatternSize,
};

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct ExperimentSizes {
  int train = 500;
  int cal = 250;
  int test_marginal = 2000;
  int per_pattern = 100;
  bool include_all_missing = false;
};

struct ExperimentConfig {
  GlmParams generator;
  double mcar_rate = 0.2;
  std::vector<Method> methods;
  double alpha = 0.1;
  ExperimentSizes sizes;
  int repetitions = 1;
  std::uint64_t base_seed = 0;
  MdaPipeline::FitOptions fit;
};

struct RepetitionResult {
  int repetition = 0;
  std::uint64_t seed = 0;
  Method method = Method::Cqr;
  CoverageReport report;
};

/// Synthetic protocol: for repetition r with seed base_seed + r, generate
/// train+cal rows, split, fit each method once, then evaluate on a fresh
/// marginal test set (same missingness) and on per-pattern test sets built
/// by applying sampled evaluation masks to fresh complete draws. The
/// marginal group comes from the marginal set; mask and size groups come
/// from the fixed-count pattern sets. A failure in any repetition aborts
/// with the repetition index in the message.
std::vector<RepetitionResult> run_experiment(const ExperimentConfig& cfg);

/// Dataset protocol: per repetition, shuffle rows, slice train/cal/test,
/// inject MCAR into the eligible columns, fit and evaluate. Per-pattern
/// sets draw masks from the injected empirical distribution by size and
/// apply them to originally complete test rows. Methods around the Bayes
/// mean are unavailable here; mean_scp and scp_by_pattern_size fall back to
/// a fitted linear mean.
std::vector<RepetitionResult> run_dataset_experiment(const ExperimentConfig& cfg,
                                                     const MaskedDataset& data,
                                                     const std::vector<int>& eligible_columns);

/// Across-repetition aggregation of one (method, group) cell.
struct AggregateRecord {
  std::string method;
  std::string group;
  int repetitions = 0;
  double mean_coverage = 0.0;
  /// Monte Carlo standard error: across-repetition std / sqrt(R).
  double coverage_mcse = 0.0;
  double mean_length = 0.0;          // across reps with a finite per-rep mean
  double mean_clamped_length = 0.0;
  double mean_infinite_fraction = 0.0;
};

std::vector<AggregateRecord> aggregate_results(std::span<const RepetitionResult> results);

const AggregateRecord* find_aggregate(std::span<const AggregateRecord> aggregates,
                                      const std::string& method, const std::string& group);

}  // namespace cpmda
