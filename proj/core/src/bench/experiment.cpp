#include "realcf/bench/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "realcf/error.hpp"
#include "realcf/util/hash.hpp"

namespace realcf::bench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs `f`, prefixing any library error with the stage name while keeping
// its type (the CLI maps types to exit codes).
template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  const auto prefixed = [name](const std::exception& e) {
    return std::string(name) + ": " + e.what();
  };
  try {
    return f();
  } catch (const TrainingError& e) {
    throw TrainingError(prefixed(e));
  } catch (const NumericalError& e) {
    throw NumericalError(prefixed(e));
  } catch (const SchemaError& e) {
    throw SchemaError(prefixed(e));
  } catch (const ParseError& e) {
    throw ParseError(prefixed(e));
  } catch (const ConfigError& e) {
    throw ConfigError(prefixed(e));
  }
}

std::size_t cut(std::size_t epochs) { return std::max<std::size_t>(1, epochs / 10); }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_value(const data::FeatureSpec& f, double v) {
  if (f.kind == data::FeatureKind::kCategorical) {
    const auto code = static_cast<std::size_t>(v);
    if (code < f.categories.size()) return f.categories[code];
  }
  return format_double(v);
}

const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "dataset",     "data_seed",   "train_seed", "eval_seed",  "samples",
      "csv_path",    "schema_path", "classifier", "cvae",       "autoencoder",
      "sensitive",   "eval_fixed",  "eval_rows",  "output_dir"};
  return keys;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig ExperimentConfig::preset(const std::string& dataset) {
  ExperimentConfig c;
  c.dataset = dataset;
  c.data_seed = data::preset_seed(dataset);
  c.classifier = clf::preset_classifier(dataset);
  c.cvae = realac::preset_cvae(dataset);
  c.autoencoder.latent_dim = c.cvae.latent_dim;
  c.autoencoder.hidden = c.cvae.hidden;
  c.sensitive = data::preset_sensitive(dataset);
  return c;
}

void ExperimentConfig::validate() const {
  const auto known = data::known_datasets();
  if (std::find(known.begin(), known.end(), dataset) == known.end()) {
    throw ConfigError("unknown dataset '" + dataset + "'");
  }
  classifier.validate();
  cvae.validate();
  if (autoencoder.hidden.empty() || autoencoder.latent_dim == 0 || autoencoder.batch_size == 0) {
    throw ConfigError("autoencoder needs hidden layers, a latent width and a batch size");
  }
  if (!schema_path.empty() && !std::filesystem::exists(schema_path)) {
    throw ConfigError("schema file '" + schema_path + "' does not exist");
  }
  if (!csv_path.empty() && !std::filesystem::exists(csv_path)) {
    throw ConfigError("CSV file '" + csv_path + "' does not exist");
  }
}

ExperimentConfig ExperimentConfig::fast() const {
  ExperimentConfig c = *this;
  c.classifier.epochs = cut(c.classifier.epochs);
  c.cvae.epochs = cut(c.cvae.epochs);
  c.autoencoder.epochs = cut(c.autoencoder.epochs);
  return c;
}

Json ExperimentConfig::to_json() const {
  return Json{{"dataset", dataset},
              {"data_seed", data_seed},
              {"train_seed", train_seed},
              {"eval_seed", eval_seed},
              {"samples", samples},
              {"csv_path", csv_path},
              {"schema_path", schema_path},
              {"classifier", classifier.to_json()},
              {"cvae", cvae.to_json()},
              {"autoencoder", autoencoder.to_json()},
              {"sensitive", sensitive},
              {"eval_fixed", eval_fixed},
              {"eval_rows", eval_rows},
              {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const Json& json) {
  if (!json.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [key, value] : json.items()) {
    if (!config_keys().count(key)) throw ConfigError("unknown experiment config key '" + key + "'");
  }
  try {
    const ExperimentConfig base = preset(json.at("dataset").get<std::string>());
    Json merged = base.to_json();
    merged.merge_patch(json);
    ExperimentConfig c;
    c.dataset = merged.at("dataset").get<std::string>();
    c.data_seed = merged.at("data_seed").get<std::uint64_t>();
    c.train_seed = merged.at("train_seed").get<std::uint64_t>();
    c.eval_seed = merged.at("eval_seed").get<std::uint64_t>();
    c.samples = merged.at("samples").get<std::size_t>();
    c.csv_path = merged.at("csv_path").get<std::string>();
    c.schema_path = merged.at("schema_path").get<std::string>();
    c.classifier = clf::MlpSpec::from_json(merged.at("classifier"));
    c.cvae = realac::CvaeConfig::from_json(merged.at("cvae"));
    c.autoencoder = metrics::AutoencoderSpec::from_json(merged.at("autoencoder"));
    c.sensitive = merged.at("sensitive").get<std::vector<std::string>>();
    c.eval_fixed = merged.at("eval_fixed").get<std::size_t>();
    c.eval_rows = merged.at("eval_rows").get<std::size_t>();
    c.output_dir = merged.at("output_dir").get<std::string>();
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
}

std::string ExperimentConfig::hash() const {
  Json j = to_json();
  j.erase("output_dir");
  return hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Preparation

std::string resolve_csv(const std::string& dataset, const std::string& explicit_path) {
  if (!explicit_path.empty()) return std::filesystem::exists(explicit_path) ? explicit_path : "";
  const char* dir = std::getenv("REALCF_DATA_DIR");
  if (dir == nullptr || *dir == '\0') return "";
  const std::filesystem::path p = std::filesystem::path(dir) / data::preset_csv_name(dataset);
  return std::filesystem::exists(p) ? p.string() : "";
}

Tensor random_mask(const data::FeatureSchema& schema, std::size_t rows, std::size_t n_fixed,
                   std::uint64_t seed) {
  const std::size_t d = schema.size();
  if (n_fixed >= d) {
    throw ConfigError("cannot freeze " + std::to_string(n_fixed) + " of " + std::to_string(d) +
                      " features");
  }
  Tensor mask = Tensor::zeros(rows, d);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(d);
  for (std::size_t r = 0; r < rows; ++r) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < n_fixed; ++k) mask(r, order[k]) = 1.0;
  }
  return realac::enforce_immutables(schema, std::move(mask));
}

Prepared prepare(const ExperimentConfig& config) {
  config.validate();
  const auto start = Clock::now();
  Prepared p;
  p.config = config;
  p.dataset = stage("load data", [&] {
    data::DataSource src{config.dataset, config.data_seed, config.samples, "", config.schema_path};
    if (!data::is_synthetic(config.dataset)) {
      src.csv_path = resolve_csv(config.dataset, config.csv_path);
      if (src.csv_path.empty()) {
        throw ConfigError("no CSV for '" + config.dataset +
                          "'; set csv_path or REALCF_DATA_DIR");
      }
    }
    return data::load_dataset(src);
  });
  p.edges = data::preset_edges(config.dataset, p.dataset.schema);
  const auto clf_start = Clock::now();
  p.classifier = stage("train classifier", [&] {
    return clf::train_classifier(p.dataset, config.classifier, config.train_seed);
  });
  p.classifier_seconds = seconds_since(clf_start);
  stage("fit metric models", [&] {
    p.edge_models = metrics::fit_edge_models(p.dataset, p.edges);
    p.autoencoders =
        metrics::ClassAutoencoders::fit(p.dataset, config.autoencoder, config.train_seed);
    for (const std::string& name : config.sensitive) {
      p.sensitive.push_back(p.dataset.schema.index_of(name));
    }
    return 0;
  });
  std::vector<std::size_t> rows = p.dataset.split.test;
  if (config.eval_rows > 0 && config.eval_rows < rows.size()) rows.resize(config.eval_rows);
  p.eval_factual = p.dataset.gather(rows);
  p.eval_mask = random_mask(p.dataset.schema, rows.size(), config.eval_fixed, config.eval_seed);
  p.seconds = seconds_since(start);
  return p;
}

// ---------------------------------------------------------------------------
// Runs

RunResult run_cvae(const Prepared& prepared, const realac::CvaeConfig& cvae, const Tensor& mask) {
  const ExperimentConfig& config = prepared.config;
  RunResult out;
  const auto start = Clock::now();
  out.model = stage("train CVAE", [&] {
    return realac::train_cf_model(prepared.dataset, prepared.classifier, prepared.edges, cvae,
                                  config.train_seed);
  });
  out.train_seconds = seconds_since(start);
  out.batch = stage("generate", [&] {
    return realac::generate(out.model, prepared.classifier, prepared.eval_factual, mask);
  });
  out.baseline = stage("random baseline", [&] {
    return metrics::random_flip_baseline(prepared.classifier, out.model.encoder(),
                                         prepared.dataset.schema, prepared.eval_factual, mask,
                                         config.eval_seed);
  });
  const metrics::EvaluationContext ctx{&prepared.dataset.schema, &prepared.edge_models,
                                       &prepared.autoencoders, prepared.sensitive};
  stage("evaluate", [&] {
    out.report = metrics::evaluate(out.batch, ctx);
    out.baseline_report = metrics::evaluate(out.baseline, ctx);
    return 0;
  });
  return out;
}

Json make_bundle(const Prepared& prepared, const realac::CvaeModel& model, std::size_t max_rows) {
  const auto& train = prepared.dataset.split.train;
  std::vector<std::size_t> rows(train.begin(),
                                train.begin() + static_cast<std::ptrdiff_t>(
                                                    std::min(max_rows, train.size())));
  Json edge_models = Json::array();
  for (const auto& m : prepared.edge_models) edge_models.push_back(m.to_json());
  return Json{{"format", "realcf.bundle"},
              {"version", 1},
              {"dataset", prepared.config.dataset},
              {"config_hash", prepared.config.hash()},
              {"classifier", prepared.classifier.to_json()},
              {"cvae", model.to_json()},
              {"edge_models", std::move(edge_models)},
              {"train_rows", tensor_to_json(prepared.dataset.gather(rows))}};
}

void write_cfs_csv(const std::string& path, const realac::CfBatch& batch,
                   const data::FeatureSchema& schema) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  const std::size_t d = schema.size();
  for (std::size_t j = 0; j < d; ++j) out << "factual_" << schema[j].name << ',';
  for (std::size_t j = 0; j < d; ++j) out << "cf_" << schema[j].name << ',';
  for (std::size_t j = 0; j < d; ++j) out << "mask_" << schema[j].name << ',';
  out << "target,pred_factual,pred_cf,proba_cf\n";
  for (std::size_t r = 0; r < batch.size(); ++r) {
    for (std::size_t j = 0; j < d; ++j) out << format_value(schema[j], batch.factual(r, j)) << ',';
    for (std::size_t j = 0; j < d; ++j) {
      out << format_value(schema[j], batch.counterfactual(r, j)) << ',';
    }
    for (std::size_t j = 0; j < d; ++j) out << (batch.mask(r, j) != 0.0 ? 1 : 0) << ',';
    out << batch.target[r] << ',' << batch.factual_pred[r] << ',' << batch.cf_pred[r] << ','
        << format_double(batch.proba_cf(r, static_cast<std::size_t>(batch.target[r]))) << '\n';
  }
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const auto start = Clock::now();
  const Prepared prepared = prepare(config);
  const RunResult run = run_cvae(prepared, config.cvae, prepared.eval_mask);

  ExperimentResult result;
  result.config_hash = config.hash();
  result.classifier = prepared.classifier.test_metrics;
  result.realac = run.report;
  result.baseline = run.baseline_report;
  const std::string tag = " [" + result.config_hash + "]";
  result.table = metrics::MetricsReport::table_header() + "\n" +
                 run.report.table_row("realac/" + config.dataset) + tag + "\n" +
                 run.baseline_report.table_row("random/" + config.dataset) + tag + "\n";

  if (!config.output_dir.empty()) {
    stage("write outputs", [&] {
      namespace fs = std::filesystem;
      fs::create_directories(config.output_dir);
      const fs::path dir(config.output_dir);
      write_json_file((dir / "bundle.json").string(), make_bundle(prepared, run.model));
      write_cfs_csv((dir / "cfs.csv").string(), run.batch, prepared.dataset.schema);
      Json metrics{{"config_hash", result.config_hash},
                   {"dataset", config.dataset},
                   {"classifier",
                    {{"accuracy", result.classifier.accuracy}, {"f1", result.classifier.f1}}},
                   {"realac", result.realac.to_json()},
                   {"random_baseline", result.baseline.to_json()}};
      write_json_file((dir / "metrics.json").string(), metrics);
      write_json_file((dir / "timing.json").string(),
                      Json{{"classifier_seconds", prepared.classifier_seconds},
                           {"prepare_seconds", prepared.seconds},
                           {"cvae_seconds", run.train_seconds},
                           {"total_seconds", seconds_since(start)}});
      std::ofstream((dir / "table.txt").string()) << result.table;
      write_json_file((dir / "config.json").string(), config.to_json());
      return 0;
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<double> default_dep_grid() { return {0.0, 1.0, 4.0, 50.0, 500.0, 1000.0}; }

std::vector<DepAblationRow> ablation_lambda_dep(const Prepared& prepared,
                                                const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("lambda_dep grid is empty");
  std::vector<DepAblationRow> rows;
  for (double lambda : grid) {
    DepAblationRow row;
    row.lambda_dep = lambda;
    try {
      realac::CvaeConfig cvae = prepared.config.cvae;
      cvae.weights.dep = lambda;
      row.report = run_cvae(prepared, cvae, prepared.eval_mask).report;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<FixedAblationRow> ablation_n_fixed(const Prepared& prepared,
                                               const std::vector<std::size_t>& counts) {
  const std::size_t d = prepared.dataset.features();
  for (std::size_t c : counts) {
    if (c >= d) {
      throw ConfigError("n_fixed " + std::to_string(c) + " must be below the feature count " +
                        std::to_string(d));
    }
  }
  const realac::CvaeModel model = stage("train CVAE", [&] {
    return realac::train_cf_model(prepared.dataset, prepared.classifier, prepared.edges,
                                  prepared.config.cvae, prepared.config.train_seed);
  });
  const metrics::EvaluationContext ctx{&prepared.dataset.schema, &prepared.edge_models,
                                       &prepared.autoencoders, prepared.sensitive};
  std::vector<FixedAblationRow> rows;
  for (std::size_t c : counts) {
    FixedAblationRow row;
    row.n_fixed = c;
    row.mask = random_mask(prepared.dataset.schema, prepared.eval_factual.rows(), c,
                           prepared.config.eval_seed + c);
    row.batch = realac::generate(model, prepared.classifier, prepared.eval_factual, row.mask);
    row.report = metrics::evaluate(row.batch, ctx);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string dep_ablation_csv(const std::vector<DepAblationRow>& rows) {
  std::ostringstream out;
  out << "lambda_dep,validity,ces,dps,error\n";
  for (const auto& r : rows) {
    out << format_double(r.lambda_dep) << ',';
    if (r.report) {
      out << format_double(r.report->validity) << ',' << format_double(r.report->causal_edge_score)
          << ',' << format_double(r.report->dps) << ",\n";
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), '"', '\'');
      out << ",,,\"" << msg << "\"\n";
    }
  }
  return out.str();
}

std::string fixed_ablation_csv(const std::vector<FixedAblationRow>& rows) {
  std::ostringstream out;
  out << "n_fixed,validity,distance\n";
  for (const auto& r : rows) {
    out << r.n_fixed << ',' << format_double(r.report.validity) << ','
        << format_double(r.report.distance) << '\n';
  }
  return out.str();
}

}  // namespace realcf::bench
