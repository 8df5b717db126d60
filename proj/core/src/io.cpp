#include "cpmda/io.hpp"

#include "cpmda/missingness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cpmda {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

double parse_numeric(const std::string& cell, int row, int col) {
  try {
    size_t pos = 0;
    const double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("unparseable numeric cell \"" + cell + "\" at row " +
                             std::to_string(row) + ", column " + std::to_string(col));
  }
}

// %.6g with a stable spelling for non-finite values.
std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string format_full(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

LoadedDataset load_csv_dataset(const std::string& path, const std::string& target_column,
                               const CsvOptions& options) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error("load_csv_dataset: empty file: " + path);

  const std::vector<std::string> header = split_csv_line(lines[0]);
  int target_idx = -1;
  for (size_t j = 0; j < header.size(); ++j) {
    if (trim(header[j]) == target_column) target_idx = static_cast<int>(j);
  }
  if (target_idx < 0) {
    throw std::runtime_error("load_csv_dataset: target column \"" + target_column +
                             "\" not found in header");
  }
  const int d = static_cast<int>(header.size()) - 1;
  if (d < 1) throw std::runtime_error("load_csv_dataset: no feature columns");

  const auto is_na = [&](const std::string& cell) {
    const std::string t = trim(cell);
    return std::find(options.na_tokens.begin(), options.na_tokens.end(), t) !=
           options.na_tokens.end();
  };

  const int n = static_cast<int>(lines.size()) - 1;
  if (n < 1) throw std::runtime_error("load_csv_dataset: no data rows");
  Eigen::MatrixXd features(n, d);
  std::vector<MaskPattern> masks;
  masks.reserve(n);
  Eigen::VectorXd y(n);

  for (int i = 0; i < n; ++i) {
    const std::vector<std::string> cells = split_csv_line(lines[i + 1]);
    if (static_cast<int>(cells.size()) != d + 1) {
      throw std::runtime_error("load_csv_dataset: row " + std::to_string(i) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(d + 1));
    }
    std::vector<std::uint8_t> bits(d, 0);
    int c = 0;
    for (int j = 0; j < d + 1; ++j) {
      if (j == target_idx) {
        if (is_na(cells[j])) {
          throw std::runtime_error("load_csv_dataset: missing target value at row " +
                                   std::to_string(i));
        }
        y(i) = parse_numeric(trim(cells[j]), i, j);
      } else {
        if (is_na(cells[j])) {
          bits[c] = 1;
          features(i, c) = std::numeric_limits<double>::quiet_NaN();
        } else {
          features(i, c) = parse_numeric(trim(cells[j]), i, j);
        }
        ++c;
      }
    }
    masks.emplace_back(std::move(bits));
  }

  LoadedDataset out{MaskedDataset(std::move(features), std::move(masks), std::move(y)), {}, {}};
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    if (j == target_idx) continue;
    out.feature_names.push_back(trim(header[j]));
  }
  out.target_name = trim(header[target_idx]);
  return out;
}

void save_csv_dataset(const std::string& path, const MaskedDataset& data,
                      const std::vector<std::string>& feature_names,
                      const std::string& target_name) {
  if (static_cast<int>(feature_names.size()) != data.dimension()) {
    throw std::invalid_argument("save_csv_dataset: feature name count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  for (int j = 0; j < data.dimension(); ++j) out << feature_names[j] << ',';
  out << target_name << '\n';
  for (int i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.dimension(); ++j) {
      if (data.is_observed(i, j)) {
        out << format_full(data.value(i, j));
      } else {
        out << "NA";
      }
      out << ',';
    }
    out << format_full(data.response(i)) << '\n';
  }
}

MaskedDataset inject_mcar(const MaskedDataset& data, const std::vector<int>& columns, double rate,
                          std::uint64_t seed) {
  for (int j : columns) {
    if (j < 0 || j >= data.dimension()) {
      throw std::invalid_argument("inject_mcar: column index out of range: " + std::to_string(j));
    }
  }
  McarSpec spec{rate, columns.empty() ? std::nullopt : std::make_optional(columns)};
  const std::vector<MaskPattern> fresh = gen_mcar_masks(data.size(), data.dimension(), spec, seed);

  Eigen::MatrixXd features = data.features();  // values retained under new bits
  std::vector<MaskPattern> masks;
  masks.reserve(data.size());
  for (int i = 0; i < data.size(); ++i) masks.push_back(mask_max(data.mask(i), fresh[i]));
  return MaskedDataset(std::move(features), std::move(masks), data.responses());
}

void save_synth_dataset(const std::string& path, const MaskedDataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  const int d = data.dimension();
  for (int j = 0; j < d; ++j) out << 'x' << (j + 1) << ',';
  for (int j = 0; j < d; ++j) out << 'm' << (j + 1) << ',';
  out << "y\n";
  for (int i = 0; i < data.size(); ++i) {
    for (int j = 0; j < d; ++j) out << format_full(data.raw(i, j)) << ',';
    for (int j = 0; j < d; ++j) out << (data.mask(i).missing(j) ? 1 : 0) << ',';
    out << format_full(data.response(i)) << '\n';
  }
}

MaskedDataset load_synth_dataset(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.size() < 2) throw std::runtime_error("load_synth_dataset: no data rows in " + path);
  const std::vector<std::string> header = split_csv_line(lines[0]);
  const int width = static_cast<int>(header.size());
  if (width < 3 || (width - 1) % 2 != 0) {
    throw std::runtime_error("load_synth_dataset: malformed header in " + path);
  }
  const int d = (width - 1) / 2;
  for (int j = 0; j < d; ++j) {
    if (trim(header[j]) != "x" + std::to_string(j + 1) ||
        trim(header[d + j]) != "m" + std::to_string(j + 1)) {
      throw std::runtime_error("load_synth_dataset: expected x1..xd,m1..md,y header in " + path);
    }
  }
  if (trim(header[width - 1]) != "y") {
    throw std::runtime_error("load_synth_dataset: expected final column y in " + path);
  }

  const int n = static_cast<int>(lines.size()) - 1;
  Eigen::MatrixXd features(n, d);
  std::vector<MaskPattern> masks;
  masks.reserve(n);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const std::vector<std::string> cells = split_csv_line(lines[i + 1]);
    if (static_cast<int>(cells.size()) != width) {
      throw std::runtime_error("load_synth_dataset: row " + std::to_string(i) + " is malformed");
    }
    std::vector<std::uint8_t> bits(d, 0);
    for (int j = 0; j < d; ++j) {
      features(i, j) = parse_numeric(trim(cells[j]), i, j);
      const std::string bit = trim(cells[d + j]);
      if (bit == "1") {
        bits[j] = 1;
      } else if (bit != "0") {
        throw std::runtime_error("load_synth_dataset: mask cell must be 0/1 at row " +
                                 std::to_string(i));
      }
    }
    y(i) = parse_numeric(trim(cells[width - 1]), i, width - 1);
    masks.emplace_back(std::move(bits));
  }
  return MaskedDataset(std::move(features), std::move(masks), std::move(y));
}

std::vector<ResultsRow> rows_from_results(std::span<const RepetitionResult> results) {
  std::vector<ResultsRow> rows;
  for (const auto& result : results) {
    for (const auto& group : result.report.groups) {
      ResultsRow row;
      row.method = method_name(result.method);
      row.repetition = result.repetition;
      row.group = group.key;
      row.n_test = group.n_test;
      row.coverage = group.coverage;
      row.mean_length = group.mean_length;
      row.infinite_fraction = group.infinite_fraction;
      row.seed = result.seed;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void emit_results(std::span<const ResultsRow> rows, const std::string& path) {
  std::vector<const ResultsRow*> sorted;
  sorted.reserve(rows.size());
  for (const auto& row : rows) sorted.push_back(&row);
  std::sort(sorted.begin(), sorted.end(), [](const ResultsRow* a, const ResultsRow* b) {
    return std::tie(a->method, a->repetition, a->group) <
           std::tie(b->method, b->repetition, b->group);
  });

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out << "method,repetition,group,n_test,coverage,mean_length,infinite_fraction,seed\n";
  for (const ResultsRow* row : sorted) {
    out << row->method << ',' << row->repetition << ',' << row->group << ',' << row->n_test << ','
        << format_double(row->coverage) << ',' << format_double(row->mean_length) << ','
        << format_double(row->infinite_fraction) << ',' << row->seed << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<ResultsRow> load_results(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error("load_results: empty file: " + path);
  if (lines[0] != "method,repetition,group,n_test,coverage,mean_length,infinite_fraction,seed") {
    throw std::runtime_error("load_results: unexpected header in " + path);
  }
  const auto parse_special = [](const std::string& cell, int row, int col) {
    if (cell == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (cell == "inf") return std::numeric_limits<double>::infinity();
    if (cell == "-inf") return -std::numeric_limits<double>::infinity();
    return parse_numeric(cell, row, col);
  };
  std::vector<ResultsRow> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    const std::vector<std::string> cells = split_csv_line(lines[i]);
    if (cells.size() != 8) {
      throw std::runtime_error("load_results: malformed row " + std::to_string(i));
    }
    ResultsRow row;
    row.method = cells[0];
    row.repetition = static_cast<int>(parse_numeric(cells[1], i, 1));
    row.group = cells[2];
    row.n_test = static_cast<int>(parse_numeric(cells[3], i, 3));
    row.coverage = parse_special(cells[4], i, 4);
    row.mean_length = parse_special(cells[5], i, 5);
    row.infinite_fraction = parse_special(cells[6], i, 6);
    row.seed = static_cast<std::uint64_t>(std::stoull(cells[7]));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::vector<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("config: unknown key \"" + key + "\" in " + where);
    }
  }
}

GlmParams parse_generator(const json& g) {
  reject_unknown_keys(g, {"d", "beta", "mu", "sigma", "equicorrelation", "sigma_eps"}, "generator");
  if (!g.contains("d")) throw std::invalid_argument("config: generator.d is required");
  const int d = g.at("d").get<int>();

  GlmParams params;
  if (g.contains("beta")) {
    const auto beta = g.at("beta").get<std::vector<double>>();
    if (static_cast<int>(beta.size()) != d) {
      throw std::invalid_argument("config: generator.beta length must equal d");
    }
    Eigen::VectorXd b(d);
    for (int j = 0; j < d; ++j) b(j) = beta[j];
    const double phi = g.value("equicorrelation", 0.8);
    const double mu = g.contains("mu") && g.at("mu").is_number() ? g.at("mu").get<double>() : 1.0;
    params = GlmParams::equicorrelated(b, g.value("sigma_eps", 1.0), mu, phi);
  } else {
    params = GlmParams::benchmark(d);
    if (g.contains("sigma_eps")) params.sigma_eps = g.at("sigma_eps").get<double>();
    if (g.contains("equicorrelation")) {
      const double phi = g.at("equicorrelation").get<double>();
      params.sigma = Eigen::MatrixXd::Constant(d, d, phi) +
                     (1.0 - phi) * Eigen::MatrixXd::Identity(d, d);
    }
  }
  if (g.contains("mu") && g.at("mu").is_array()) {
    const auto mu = g.at("mu").get<std::vector<double>>();
    if (static_cast<int>(mu.size()) != d) {
      throw std::invalid_argument("config: generator.mu length must equal d");
    }
    for (int j = 0; j < d; ++j) params.mu(j) = mu[j];
  }
  if (g.contains("sigma")) {
    const auto rows = g.at("sigma").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(rows.size()) != d) {
      throw std::invalid_argument("config: generator.sigma must be d x d");
    }
    for (int i = 0; i < d; ++i) {
      if (static_cast<int>(rows[i].size()) != d) {
        throw std::invalid_argument("config: generator.sigma must be d x d");
      }
      for (int j = 0; j < d; ++j) params.sigma(i, j) = rows[i][j];
    }
  }
  params.validate();
  return params;
}

}  // namespace

RunConfig parse_config_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown_keys(doc,
                      {"alpha", "seed", "repetitions", "methods", "mcar_rate", "generator",
                       "dataset", "sizes", "imputer", "model"},
                      "top level");

  RunConfig cfg;
  cfg.experiment.alpha = doc.value("alpha", 0.1);
  cfg.experiment.base_seed = doc.value("seed", std::uint64_t{0});
  cfg.experiment.repetitions = doc.value("repetitions", 1);
  cfg.experiment.mcar_rate = doc.value("mcar_rate", 0.2);

  if (!doc.contains("methods")) throw std::invalid_argument("config: methods list is required");
  for (const auto& name : doc.at("methods").get<std::vector<std::string>>()) {
    cfg.experiment.methods.push_back(method_from_name(name));
  }

  if (doc.contains("sizes")) {
    const json& s = doc.at("sizes");
    reject_unknown_keys(s, {"train", "cal", "test_marginal", "per_pattern", "include_all_missing"},
                        "sizes");
    cfg.experiment.sizes.train = s.value("train", 500);
    cfg.experiment.sizes.cal = s.value("cal", 250);
    cfg.experiment.sizes.test_marginal = s.value("test_marginal", 2000);
    cfg.experiment.sizes.per_pattern = s.value("per_pattern", 100);
    cfg.experiment.sizes.include_all_missing = s.value("include_all_missing", false);
  }

  if (doc.contains("imputer")) {
    const json& imp = doc.at("imputer");
    reject_unknown_keys(imp, {"kind", "constant_value", "lambda", "max_sweeps", "tol"}, "imputer");
    const std::string kind = imp.value("kind", "iterative_ridge");
    if (kind == "constant") {
      cfg.experiment.fit.imputer_kind = ImputerKind::Constant;
    } else if (kind == "mean") {
      cfg.experiment.fit.imputer_kind = ImputerKind::Mean;
    } else if (kind == "iterative_ridge") {
      cfg.experiment.fit.imputer_kind = ImputerKind::IterativeRidge;
    } else {
      throw std::invalid_argument("config: unknown imputer kind \"" + kind + "\"");
    }
    if (imp.contains("constant_value")) {
      cfg.experiment.fit.imputer_options.constant_value = imp.at("constant_value").get<double>();
    }
    if (imp.contains("lambda")) {
      cfg.experiment.fit.imputer_options.lambda = imp.at("lambda").get<double>();
    }
    cfg.experiment.fit.imputer_options.max_sweeps = imp.value("max_sweeps", 10);
    cfg.experiment.fit.imputer_options.tol = imp.value("tol", 1e-6);
  }

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    reject_unknown_keys(
        m, {"kind", "max_epochs", "batch_size", "learning_rate", "dropout", "hidden_dim", "seed"},
        "model");
    const std::string kind = m.value("kind", "linear");
    if (kind == "linear") {
      cfg.experiment.fit.model_kind = QrKind::Linear;
    } else if (kind == "mlp") {
      cfg.experiment.fit.model_kind = QrKind::Mlp;
    } else {
      throw std::invalid_argument("config: unknown model kind \"" + kind + "\"");
    }
    cfg.experiment.fit.hyper.max_epochs = m.value("max_epochs", 2000);
    cfg.experiment.fit.hyper.batch_size = m.value("batch_size", 64);
    cfg.experiment.fit.hyper.learning_rate = m.value("learning_rate", 5e-4);
    cfg.experiment.fit.hyper.dropout = m.value("dropout", 0.1);
    cfg.experiment.fit.hyper.hidden_dim = m.value("hidden_dim", 64);
    cfg.experiment.fit.hyper.seed = m.value("seed", std::uint64_t{0});
  }

  const bool has_generator = doc.contains("generator");
  const bool has_dataset = doc.contains("dataset");
  if (has_generator == has_dataset) {
    throw std::invalid_argument("config: exactly one of generator/dataset must be present");
  }
  if (has_generator) {
    cfg.has_generator = true;
    cfg.experiment.generator = parse_generator(doc.at("generator"));
  } else {
    const json& ds = doc.at("dataset");
    reject_unknown_keys(ds, {"path", "target", "na_tokens", "inject_columns", "inject_rate"},
                        "dataset");
    DatasetSpec spec;
    if (!ds.contains("path") || !ds.contains("target")) {
      throw std::invalid_argument("config: dataset.path and dataset.target are required");
    }
    spec.path = ds.at("path").get<std::string>();
    spec.target = ds.at("target").get<std::string>();
    if (ds.contains("na_tokens")) spec.na_tokens = ds.at("na_tokens").get<std::vector<std::string>>();
    if (ds.contains("inject_columns")) {
      spec.inject_columns = ds.at("inject_columns").get<std::vector<int>>();
    }
    spec.inject_rate = ds.value("inject_rate", 0.2);
    cfg.dataset = std::move(spec);
    // A placeholder generator keeps the struct valid; dataset runs ignore it.
    cfg.experiment.generator = GlmParams::benchmark(1);
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_json(buffer.str());
}

std::string serialize_config(const RunConfig& cfg) {
  json doc;
  doc["alpha"] = cfg.experiment.alpha;
  doc["seed"] = cfg.experiment.base_seed;
  doc["repetitions"] = cfg.experiment.repetitions;
  doc["mcar_rate"] = cfg.experiment.mcar_rate;
  std::vector<std::string> names;
  for (Method m : cfg.experiment.methods) names.push_back(method_name(m));
  doc["methods"] = names;
  doc["sizes"] = {{"train", cfg.experiment.sizes.train},
                  {"cal", cfg.experiment.sizes.cal},
                  {"test_marginal", cfg.experiment.sizes.test_marginal},
                  {"per_pattern", cfg.experiment.sizes.per_pattern},
                  {"include_all_missing", cfg.experiment.sizes.include_all_missing}};

  const char* imputer_kind = "iterative_ridge";
  if (cfg.experiment.fit.imputer_kind == ImputerKind::Constant) imputer_kind = "constant";
  if (cfg.experiment.fit.imputer_kind == ImputerKind::Mean) imputer_kind = "mean";
  json imputer = {{"kind", imputer_kind},
                  {"constant_value", cfg.experiment.fit.imputer_options.constant_value},
                  {"max_sweeps", cfg.experiment.fit.imputer_options.max_sweeps},
                  {"tol", cfg.experiment.fit.imputer_options.tol}};
  if (cfg.experiment.fit.imputer_options.lambda) {
    imputer["lambda"] = *cfg.experiment.fit.imputer_options.lambda;
  }
  doc["imputer"] = imputer;

  doc["model"] = {{"kind", cfg.experiment.fit.model_kind == QrKind::Linear ? "linear" : "mlp"},
                  {"max_epochs", cfg.experiment.fit.hyper.max_epochs},
                  {"batch_size", cfg.experiment.fit.hyper.batch_size},
                  {"learning_rate", cfg.experiment.fit.hyper.learning_rate},
                  {"dropout", cfg.experiment.fit.hyper.dropout},
                  {"hidden_dim", cfg.experiment.fit.hyper.hidden_dim},
                  {"seed", cfg.experiment.fit.hyper.seed}};

  if (cfg.dataset) {
    doc["dataset"] = {{"path", cfg.dataset->path},
                      {"target", cfg.dataset->target},
                      {"na_tokens", cfg.dataset->na_tokens},
                      {"inject_columns", cfg.dataset->inject_columns},
                      {"inject_rate", cfg.dataset->inject_rate}};
  } else {
    const GlmParams& g = cfg.experiment.generator;
    std::vector<double> beta(g.beta.data(), g.beta.data() + g.beta.size());
    std::vector<double> mu(g.mu.data(), g.mu.data() + g.mu.size());
    std::vector<std::vector<double>> sigma(g.d, std::vector<double>(g.d));
    for (int i = 0; i < g.d; ++i) {
      for (int j = 0; j < g.d; ++j) sigma[i][j] = g.sigma(i, j);
    }
    doc["generator"] = {
        {"d", g.d}, {"beta", beta}, {"mu", mu}, {"sigma", sigma}, {"sigma_eps", g.sigma_eps}};
  }
  return doc.dump(2);
}

}  // namespace cpmda
