#pragma once

// File-format surface: CSV ingestion with missing-value tokens, MCAR
// injection into loaded datasets, plot-ready results emission, the
// synthetic-dataset interchange format, and the JSON run configuration.

#include "cpmda/data_model.hpp"
#include "cpmda/evaluation.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cpmda {

struct CsvOptions {
  std::vector<std::string> na_tokens = {"", "NA", "NaN"};
};

struct LoadedDataset {
  MaskedDataset data;
  std::vector<std::string> feature_names;
  std::string target_name;
};

/// Comma-separated UTF-8 file with a header row; cells matching an NA token
/// become missing (mask bit 1). The target column must be numeric and
/// complete. Unparseable cells are reported with row and column.
LoadedDataset load_csv_dataset(const std::string& path, const std::string& target_column,
                               const CsvOptions& options = {});

/// Writes features and target back out; masked cells emit "NA".
void save_csv_dataset(const std::string& path, const MaskedDataset& data,
                      const std::vector<std::string>& feature_names,
                      const std::string& target_name);

/// New masks = elementwise max of existing masks and fresh MCAR masks over
/// the given columns. Feature values under newly masked cells are retained
/// in the buffer (flagged missing) so semi-synthetic evaluation can check
/// the truth without re-reading the file.
MaskedDataset inject_mcar(const MaskedDataset& data, const std::vector<int>& columns, double rate,
                          std::uint64_t seed);

/// Ground-truth interchange format for generated data: columns x1..xd,
/// m1..md (0/1 mask bits) and y. Values under masked cells are the true
/// generated ones.
void save_synth_dataset(const std::string& path, const MaskedDataset& data);
MaskedDataset load_synth_dataset(const std::string& path);

/// One emitted line per (method, repetition, group).
struct ResultsRow {
  std::string method;
  int repetition = 0;
  std::string group;
  int n_test = 0;
  double coverage = 0.0;
  double mean_length = 0.0;
  double infinite_fraction = 0.0;
  std::uint64_t seed = 0;
};

std::vector<ResultsRow> rows_from_results(std::span<const RepetitionResult> results);

/// Fixed header `method,repetition,group,n_test,coverage,mean_length,
/// infinite_fraction,seed`, floats at 6 significant digits, rows sorted by
/// (method, repetition, group). Identical inputs produce identical bytes.
void emit_results(std::span<const ResultsRow> rows, const std::string& path);

std::vector<ResultsRow> load_results(const std::string& path);

/// Run configuration parsed from a single JSON document. Exactly one of
/// generator/dataset must be present; unknown keys are errors.
struct DatasetSpec {
  std::string path;
  std::string target;
  std::vector<std::string> na_tokens = {"", "NA", "NaN"};
  std::vector<int> inject_columns;  // empty means every feature column
  double inject_rate = 0.2;
};

struct RunConfig {
  ExperimentConfig experiment;
  bool has_generator = false;
  std::optional<DatasetSpec> dataset;
};

RunConfig parse_config_json(const std::string& text);
RunConfig parse_config_file(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace cpmda
