#include "cpmda/evaluation.hpp"

#include "cpmda/missingness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cpmda {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 step; decorrelates the per-stage RNG streams.
  std::uint64_t z = seed + salt * 0x9e3779b97f4a7c15ULL + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

GroupRecord make_record(std::string key, const std::vector<int>& members,
                        std::span<const PredictionInterval> intervals, const Eigen::VectorXd& y,
                        std::optional<double> clamp) {
  GroupRecord rec;
  rec.key = std::move(key);
  rec.n_test = static_cast<int>(members.size());
  int covered = 0;
  int finite = 0;
  double finite_sum = 0.0;
  double clamped_sum = 0.0;
  for (int i : members) {
    const PredictionInterval& iv = intervals[i];
    if (iv.covers(y(i))) ++covered;
    if (iv.is_infinite()) {
      clamped_sum += clamp.value_or(std::numeric_limits<double>::quiet_NaN());
    } else {
      ++finite;
      finite_sum += iv.length();
      clamped_sum += iv.length();
    }
  }
  rec.coverage = rec.n_test > 0 ? static_cast<double>(covered) / rec.n_test : 0.0;
  rec.mean_length =
      finite > 0 ? finite_sum / finite : std::numeric_limits<double>::quiet_NaN();
  rec.infinite_fraction =
      rec.n_test > 0 ? static_cast<double>(rec.n_test - finite) / rec.n_test : 0.0;
  rec.clamped_mean_length =
      (clamp && rec.n_test > 0) ? clamped_sum / rec.n_test : std::numeric_limits<double>::quiet_NaN();
  return rec;
}

}  // namespace

const GroupRecord* CoverageReport::find(const std::string& key) const {
  for (const auto& g : groups) {
    if (g.key == key) return &g;
  }
  return nullptr;
}

double CoverageReport::lowest_mask_coverage() const {
  double lowest = std::numeric_limits<double>::quiet_NaN();
  for (const auto& g : groups) {
    if (g.key.rfind("mask:", 0) != 0) continue;
    if (std::isnan(lowest) || g.coverage < lowest) lowest = g.coverage;
  }
  return lowest;
}

CoverageReport coverage_report(std::span<const PredictionInterval> intervals,
                               const Eigen::VectorXd& y, std::span<const MaskPattern> masks,
                               std::optional<double> length_clamp) {
  const int n = static_cast<int>(intervals.size());
  if (y.size() != n || static_cast<int>(masks.size()) != n) {
    throw std::invalid_argument("coverage_report: length mismatch");
  }
  if (n == 0) throw std::invalid_argument("coverage_report: empty test set");

  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);

  CoverageReport report;
  report.groups.push_back(make_record("marginal", all, intervals, y, length_clamp));

  std::map<int, std::vector<int>> by_size;
  std::map<MaskPattern, std::vector<int>> by_mask;
  for (int i = 0; i < n; ++i) {
    by_size[masks[i].count_missing()].push_back(i);
    by_mask[masks[i]].push_back(i);
  }
  for (const auto& [size, members] : by_size) {
    report.groups.push_back(
        make_record("size:" + std::to_string(size), members, intervals, y, length_clamp));
  }
  for (const auto& [mask, members] : by_mask) {
    report.groups.push_back(
        make_record("mask:" + mask.to_string(), members, intervals, y, length_clamp));
  }
  return report;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Qr: return "qr";
    case Method::Cqr: return "cqr";
    case Method::CqrMdaExact: return "cqr_mda_exact";
    case Method::CqrMdaNested: return "cqr_mda_nested";
    case Method::CqrMdaNestedPartitioned: return "cqr_mda_nested_partitioned";
    case Method::MeanScp: return "mean_scp";
    case Method::ScpByPatternSize: return "scp_by_pattern_size";
  }
  throw std::logic_error("method_name: unknown method");
}

Method method_from_name(const std::string& name) {
  static const std::map<std::string, Method> lookup = {
      {"qr", Method::Qr},
      {"cqr", Method::Cqr},
      {"cqr_mda_exact", Method::CqrMdaExact},
      {"cqr_mda_nested", Method::CqrMdaNested},
      {"cqr_mda_nested_partitioned", Method::CqrMdaNestedPartitioned},
      {"mean_scp", Method::MeanScp},
      {"scp_by_pattern_size", Method::ScpByPatternSize},
  };
  const auto it = lookup.find(name);
  if (it == lookup.end()) throw std::invalid_argument("unknown method name: " + name);
  return it->second;
}

namespace {

bool needs_mda(const std::vector<Method>& methods) {
  for (Method m : methods) {
    if (m == Method::Cqr || m == Method::CqrMdaExact || m == Method::CqrMdaNested ||
        m == Method::CqrMdaNestedPartitioned) {
      return true;
    }
  }
  return false;
}

bool contains(const std::vector<Method>& methods, Method m) {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

// Test material shared by every method within one repetition.
struct TestSets {
  // Marginal set: rows as the methods see them (NaN at masked cells).
  Eigen::MatrixXd marginal_rows;
  std::vector<MaskPattern> marginal_masks;
  Eigen::VectorXd marginal_y;
  // Per-pattern set with fixed counts per size.
  Eigen::MatrixXd pattern_rows;
  std::vector<MaskPattern> pattern_masks;
  Eigen::VectorXd pattern_y;
  double length_clamp = 0.0;
};

// The per-repetition fitted state: one MDA pipeline powers cqr and the
// three MDA calibrators (they share imputer and quantile fits); vanilla QR
// refits on train+cal; the mean baselines conformalize absolute residuals.
struct FittedMethods {
  std::optional<MdaPipeline> mda;
  CalibrationRecord cqr_record;  // scores of calibration rows under their own masks
  std::optional<Imputer> qr_imputer;
  std::optional<QuantileModel> qr_low, qr_upp;
  std::optional<ItpPipeline> mean_pipeline;
  std::map<int, CalibrationRecord> size_records;
};

FittedMethods fit_methods(const ExperimentConfig& cfg, const MaskedDataset& data,
                          const SplitIndices& split, const MeanFn& mean_fn) {
  FittedMethods fitted;

  if (needs_mda(cfg.methods)) {
    fitted.mda = MdaPipeline::fit(data, split, cfg.alpha, cfg.fit);
    if (contains(cfg.methods, Method::Cqr)) {
      fitted.cqr_record.alpha = cfg.alpha;
      const MdaPipeline& p = *fitted.mda;
      for (int k = 0; k < p.cal_size(); ++k) {
        const Eigen::VectorXd z =
            featurize_with_mask(p.imputer(), p.cal_rows().row(k), p.cal_masks()[k]);
        double low = p.q_low().predict(z);
        double upp = p.q_upp().predict(z);
        if (low > upp) std::swap(low, upp);
        fitted.cqr_record.scores.push_back(cqr_score(low, upp, p.cal_responses()(k)));
      }
    }
  }

  if (contains(cfg.methods, Method::Qr)) {
    // Vanilla QR trains on train and calibration combined.
    std::vector<int> all_rows = split.train;
    all_rows.insert(all_rows.end(), split.cal.begin(), split.cal.end());
    std::sort(all_rows.begin(), all_rows.end());
    const MaskedDataset full = data.subset(all_rows);
    fitted.qr_imputer = Imputer::fit(cfg.fit.imputer_kind, full, cfg.fit.imputer_options);
    Eigen::MatrixXd features(full.size(), 2 * full.dimension());
    for (int i = 0; i < full.size(); ++i) {
      features.row(i) = featurize_with_mask(*fitted.qr_imputer, full.visible_row(i), full.mask(i));
    }
    fitted.qr_low = QuantileModel::fit(features, full.responses(), cfg.alpha / 2.0,
                                       cfg.fit.model_kind, cfg.fit.hyper);
    QrHyper upper_hyper = cfg.fit.hyper;
    upper_hyper.seed = cfg.fit.hyper.seed + 1;
    fitted.qr_upp = QuantileModel::fit(features, full.responses(), 1.0 - cfg.alpha / 2.0,
                                       cfg.fit.model_kind, upper_hyper);
  }

  if (contains(cfg.methods, Method::MeanScp) || contains(cfg.methods, Method::ScpByPatternSize)) {
    ItpPipeline::FitOptions options;
    options.imputer_kind = cfg.fit.imputer_kind;
    options.imputer_options = cfg.fit.imputer_options;
    options.model_kind = cfg.fit.model_kind;
    options.hyper = cfg.fit.hyper;
    options.external_mean = mean_fn;  // Bayes mean for synthetic runs, else fitted
    fitted.mean_pipeline = ItpPipeline::fit(data, split, ScoreKind::AbsResidual, cfg.alpha, options);
    if (contains(cfg.methods, Method::ScpByPatternSize)) {
      fitted.size_records = groupwise_calibrate_by_pattern_size(*fitted.mean_pipeline, data, split.cal);
    }
  }

  return fitted;
}

PredictionInterval predict_one(const FittedMethods& fitted, Method method,
                               const Eigen::VectorXd& row, const MaskPattern& m,
                               std::map<MaskPattern, ExactCorrection>& exact_memo) {
  switch (method) {
    case Method::Qr: {
      const Eigen::VectorXd z = featurize_with_mask(*fitted.qr_imputer, row, m);
      double low = fitted.qr_low->predict(z);
      double upp = fitted.qr_upp->predict(z);
      if (low > upp) std::swap(low, upp);
      return PredictionInterval{low, upp, m, 0};
    }
    case Method::Cqr: {
      const MdaPipeline& p = *fitted.mda;
      const Eigen::VectorXd z = featurize_with_mask(p.imputer(), row, m);
      double low = p.q_low().predict(z);
      double upp = p.q_upp().predict(z);
      if (low > upp) std::swap(low, upp);
      const double qhat = fitted.cqr_record.upper_correction();
      return PredictionInterval{low - qhat, upp + qhat, m,
                                static_cast<std::int64_t>(fitted.cqr_record.scores.size())};
    }
    case Method::CqrMdaExact: {
      auto it = exact_memo.find(m);
      if (it == exact_memo.end()) {
        it = exact_memo.emplace(m, mda_exact_correction(*fitted.mda, m)).first;
      }
      return mda_exact_interval(*fitted.mda, row, m, it->second);
    }
    case Method::CqrMdaNested:
      return mda_nested_interval(*fitted.mda, row, m);
    case Method::CqrMdaNestedPartitioned:
      return mda_nested_partitioned_interval(*fitted.mda, row, m);
    case Method::MeanScp:
      return fitted.mean_pipeline->predict(row, m);
    case Method::ScpByPatternSize:
      return itp_predict_by_pattern_size(*fitted.mean_pipeline, fitted.size_records, row, m);
  }
  throw std::logic_error("predict_one: unknown method");
}

std::vector<RepetitionResult> evaluate_repetition(const ExperimentConfig& cfg,
                                                  const FittedMethods& fitted,
                                                  const TestSets& sets, int rep,
                                                  std::uint64_t seed) {
  std::vector<RepetitionResult> out;
  for (Method method : cfg.methods) {
    // Exact's correction depends on the test mask only; share it across
    // test points within the repetition.
    std::map<MaskPattern, ExactCorrection> exact_memo;

    const int n_marg = static_cast<int>(sets.marginal_masks.size());
    std::vector<PredictionInterval> marginal_intervals;
    marginal_intervals.reserve(n_marg);
    for (int i = 0; i < n_marg; ++i) {
      marginal_intervals.push_back(predict_one(fitted, method, sets.marginal_rows.row(i),
                                               sets.marginal_masks[i], exact_memo));
    }
    const CoverageReport marginal_report = coverage_report(
        marginal_intervals, sets.marginal_y, sets.marginal_masks, sets.length_clamp);

    RepetitionResult result;
    result.repetition = rep;
    result.seed = seed;
    result.method = method;
    result.report.groups.push_back(*marginal_report.find("marginal"));

    if (!sets.pattern_masks.empty()) {
      const int n_pat = static_cast<int>(sets.pattern_masks.size());
      std::vector<PredictionInterval> pattern_intervals;
      pattern_intervals.reserve(n_pat);
      for (int i = 0; i < n_pat; ++i) {
        pattern_intervals.push_back(predict_one(fitted, method, sets.pattern_rows.row(i),
                                                sets.pattern_masks[i], exact_memo));
      }
      const CoverageReport pattern_report = coverage_report(
          pattern_intervals, sets.pattern_y, sets.pattern_masks, sets.length_clamp);
      for (const auto& group : pattern_report.groups) {
        if (group.key != "marginal") result.report.groups.push_back(group);
      }
    }
    out.push_back(std::move(result));
  }
  return out;
}

void validate_config(const ExperimentConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) {
    throw std::invalid_argument("ExperimentConfig: alpha must lie in (0,1)");
  }
  if (cfg.repetitions < 1) throw std::invalid_argument("ExperimentConfig: repetitions must be >= 1");
  if (cfg.methods.empty()) throw std::invalid_argument("ExperimentConfig: empty method list");
  if (cfg.sizes.train < 1 || cfg.sizes.cal < 1) {
    throw std::invalid_argument("ExperimentConfig: train and cal sizes must be >= 1");
  }
  if (cfg.sizes.test_marginal < 1) {
    throw std::invalid_argument("ExperimentConfig: test_marginal must be >= 1");
  }
}

}  // namespace

std::vector<RepetitionResult> run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  cfg.generator.validate();

  const int n = cfg.sizes.train + cfg.sizes.cal;
  const double cal_fraction = static_cast<double>(cfg.sizes.cal) / n;
  const McarSpec mcar{cfg.mcar_rate, std::nullopt};

  std::vector<RepetitionResult> results;
  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(rep);
    try {
      const MaskedDataset data = generate_glm_dataset(cfg.generator, n, mcar, mix_seed(seed, 0));
      const SplitIndices split = split_train_cal(n, cal_fraction, mix_seed(seed, 1));

      TestSets sets;
      const double y_max = data.responses().maxCoeff();
      const double y_min = data.responses().minCoeff();
      sets.length_clamp = y_max - y_min;

      // Marginal test set: fresh draws with the same missingness.
      const MaskedDataset marginal =
          generate_glm_dataset(cfg.generator, cfg.sizes.test_marginal, mcar, mix_seed(seed, 2));
      sets.marginal_rows.resize(marginal.size(), marginal.dimension());
      for (int i = 0; i < marginal.size(); ++i) sets.marginal_rows.row(i) = marginal.visible_row(i);
      sets.marginal_masks = marginal.masks();
      sets.marginal_y = marginal.responses();

      // Per-pattern test sets: evaluation masks from the empirical mechanism
      // (the train+cal masks), applied to fresh complete draws.
      if (cfg.sizes.per_pattern > 0) {
        sets.pattern_masks =
            sample_eval_patterns(cfg.generator.d, cfg.sizes.per_pattern, data.masks(),
                                 mix_seed(seed, 3), cfg.sizes.include_all_missing);
        const int n_pat = static_cast<int>(sets.pattern_masks.size());
        const MaskedDataset complete = generate_glm_dataset(
            cfg.generator, n_pat, McarSpec{0.0, std::nullopt}, mix_seed(seed, 4));
        sets.pattern_rows.resize(n_pat, complete.dimension());
        for (int i = 0; i < n_pat; ++i) {
          sets.pattern_rows.row(i) = apply_mask(complete.visible_row(i), sets.pattern_masks[i]);
        }
        sets.pattern_y = complete.responses();
      }

      const GlmParams generator = cfg.generator;  // captured by the Bayes mean
      const MeanFn oracle_mean_fn = [generator](const Eigen::VectorXd& row, const MaskPattern& m) {
        return oracle_mean(generator, m, row);
      };
      const FittedMethods fitted = fit_methods(cfg, data, split, oracle_mean_fn);
      auto rep_results = evaluate_repetition(cfg, fitted, sets, rep, seed);
      results.insert(results.end(), std::make_move_iterator(rep_results.begin()),
                     std::make_move_iterator(rep_results.end()));
    } catch (const std::exception& e) {
      throw std::runtime_error("run_experiment: repetition " + std::to_string(rep) +
                               " failed: " + e.what());
    }
  }
  return results;
}

std::vector<RepetitionResult> run_dataset_experiment(const ExperimentConfig& cfg,
                                                     const MaskedDataset& data,
                                                     const std::vector<int>& eligible_columns) {
  validate_config(cfg);
  const int n_total = data.size();
  const int n_fit = cfg.sizes.train + cfg.sizes.cal;
  if (n_fit + 1 > n_total) {
    throw std::invalid_argument("run_dataset_experiment: dataset smaller than train+cal+1 rows");
  }

  std::vector<RepetitionResult> results;
  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(rep);
    try {
      // Fresh injection per repetition so masks vary with the split.
      std::vector<MaskPattern> fresh = gen_mcar_masks(
          n_total, data.dimension(), McarSpec{cfg.mcar_rate, eligible_columns}, mix_seed(seed, 10));
      Eigen::MatrixXd features = data.features();
      std::vector<MaskPattern> masks(n_total, MaskPattern::zeros(data.dimension()));
      for (int i = 0; i < n_total; ++i) masks[i] = mask_max(data.mask(i), fresh[i]);
      const MaskedDataset injected(std::move(features), std::move(masks), data.responses());

      std::vector<int> perm(n_total);
      std::iota(perm.begin(), perm.end(), 0);
      std::mt19937_64 rng(mix_seed(seed, 11));
      std::shuffle(perm.begin(), perm.end(), rng);

      SplitIndices split;
      split.train.assign(perm.begin(), perm.begin() + cfg.sizes.train);
      split.cal.assign(perm.begin() + cfg.sizes.train, perm.begin() + n_fit);
      const int n_test = std::min(cfg.sizes.test_marginal, n_total - n_fit);
      std::vector<int> test_idx(perm.begin() + n_fit, perm.begin() + n_fit + n_test);

      TestSets sets;
      {
        std::vector<int> fit_rows(perm.begin(), perm.begin() + n_fit);
        double y_min = std::numeric_limits<double>::infinity();
        double y_max = -std::numeric_limits<double>::infinity();
        for (int i : fit_rows) {
          y_min = std::min(y_min, data.response(i));
          y_max = std::max(y_max, data.response(i));
        }
        sets.length_clamp = y_max - y_min;
      }

      sets.marginal_rows.resize(n_test, data.dimension());
      sets.marginal_y.resize(n_test);
      for (int t = 0; t < n_test; ++t) {
        const int i = test_idx[t];
        sets.marginal_rows.row(t) = injected.visible_row(i);
        sets.marginal_masks.push_back(injected.mask(i));
        sets.marginal_y(t) = data.response(i);
      }

      // Per-pattern sets: only rows complete before injection can take an
      // arbitrary evaluation mask; eval masks come from the injected
      // empirical distribution, bucketed by size.
      if (cfg.sizes.per_pattern > 0) {
        std::vector<int> complete_rows;
        for (int t = 0; t < n_test; ++t) {
          if (data.mask(test_idx[t]).all_observed()) complete_rows.push_back(test_idx[t]);
        }
        if (!complete_rows.empty()) {
          std::map<int, std::vector<const MaskPattern*>> by_size;
          for (int i = 0; i < n_fit; ++i) {
            const MaskPattern& m = injected.mask(perm[i]);
            by_size[m.count_missing()].push_back(&m);
          }
          std::mt19937_64 pattern_rng(mix_seed(seed, 12));
          std::vector<MaskPattern> eval_masks;
          for (const auto& [size, bucket] : by_size) {
            if (size == data.dimension() && !cfg.sizes.include_all_missing) continue;
            std::uniform_int_distribution<size_t> pick(0, bucket.size() - 1);
            for (int k = 0; k < cfg.sizes.per_pattern; ++k) {
              eval_masks.push_back(*bucket[pick(pattern_rng)]);
            }
          }
          const int n_pat = static_cast<int>(eval_masks.size());
          sets.pattern_rows.resize(n_pat, data.dimension());
          sets.pattern_y.resize(n_pat);
          std::uniform_int_distribution<size_t> pick_row(0, complete_rows.size() - 1);
          for (int k = 0; k < n_pat; ++k) {
            const int i = complete_rows[pick_row(pattern_rng)];
            Eigen::VectorXd complete_row = data.features().row(i);
            sets.pattern_rows.row(k) = apply_mask(complete_row, eval_masks[k]);
            sets.pattern_y(k) = data.response(i);
          }
          sets.pattern_masks = std::move(eval_masks);
        }
      }

      const FittedMethods fitted = fit_methods(cfg, injected, split, nullptr);
      auto rep_results = evaluate_repetition(cfg, fitted, sets, rep, seed);
      results.insert(results.end(), std::make_move_iterator(rep_results.begin()),
                     std::make_move_iterator(rep_results.end()));
    } catch (const std::exception& e) {
      throw std::runtime_error("run_dataset_experiment: repetition " + std::to_string(rep) +
                               " failed: " + e.what());
    }
  }
  return results;
}

std::vector<AggregateRecord> aggregate_results(std::span<const RepetitionResult> results) {
  struct Cell {
    std::vector<double> coverages;
    std::vector<double> lengths;
    std::vector<double> clamped;
    std::vector<double> infinite;
  };
  std::map<std::pair<std::string, std::string>, Cell> cells;
  for (const auto& result : results) {
    for (const auto& group : result.report.groups) {
      Cell& cell = cells[{method_name(result.method), group.key}];
      cell.coverages.push_back(group.coverage);
      if (std::isfinite(group.mean_length)) cell.lengths.push_back(group.mean_length);
      if (std::isfinite(group.clamped_mean_length)) cell.clamped.push_back(group.clamped_mean_length);
      cell.infinite.push_back(group.infinite_fraction);
    }
  }

  const auto mean_of = [](const std::vector<double>& v) {
    return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                     : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };

  std::vector<AggregateRecord> out;
  for (const auto& [key, cell] : cells) {
    AggregateRecord rec;
    rec.method = key.first;
    rec.group = key.second;
    rec.repetitions = static_cast<int>(cell.coverages.size());
    rec.mean_coverage = mean_of(cell.coverages);
    double ss = 0.0;
    for (double c : cell.coverages) ss += (c - rec.mean_coverage) * (c - rec.mean_coverage);
    rec.coverage_mcse = cell.coverages.size() > 1
                            ? std::sqrt(ss / (cell.coverages.size() - 1)) /
                                  std::sqrt(static_cast<double>(cell.coverages.size()))
                            : 0.0;
    rec.mean_length = mean_of(cell.lengths);
    rec.mean_clamped_length = mean_of(cell.clamped);
    rec.mean_infinite_fraction = mean_of(cell.infinite);
    out.push_back(std::move(rec));
  }
  return out;
}

const AggregateRecord* find_aggregate(std::span<const AggregateRecord> aggregates,
                                      const std::string& method, const std::string& group) {
  for (const auto& rec : aggregates) {
    if (rec.method == method && rec.group == group) return &rec;
  }
  return nullptr;
}

}  // namespace cpmda
