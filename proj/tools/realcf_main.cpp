#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "realcf/bench/experiment.hpp"
#include "realcf/error.hpp"
#include "realcf/server/http.hpp"
#include "realcf/server/service.hpp"
#include "realcf/util/json.hpp"

namespace fs = std::filesystem;
using namespace realcf;

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericalExit = 3;

struct ConfigArgs {
  std::string dataset;
  std::string config;
  std::string csv;
  std::string out;
  bool fast = false;
  std::optional<std::uint64_t> seed;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a, bool need_out) {
  cmd->add_option("--dataset", a.dataset, "synthetic1|synthetic2|diabetes|sangiovese|adult");
  cmd->add_option("--config", a.config, "experiment config JSON; missing keys use the preset")
      ->check(CLI::ExistingFile);
  cmd->add_option("--csv", a.csv, "dataset CSV (real datasets; default $REALCF_DATA_DIR/<id>.csv)");
  auto* out = cmd->add_option("--out", a.out, "output directory");
  if (need_out) out->required();
  cmd->add_option("--seed", a.seed, "overrides data, training and evaluation seeds");
  cmd->add_flag("--fast", a.fast, "cut every epoch count to 10%");
}

bench::ExperimentConfig load_config(const ConfigArgs& a) {
  Json j = a.config.empty() ? Json::object() : read_json_file(a.config);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!a.dataset.empty()) {
    if (j.contains("dataset") && j["dataset"] != a.dataset) {
      throw ConfigError("--dataset " + a.dataset + " disagrees with the config's dataset " +
                        j["dataset"].dump());
    }
    j["dataset"] = a.dataset;
  }
  if (!j.contains("dataset")) throw ConfigError("give --dataset or a config with \"dataset\"");
  bench::ExperimentConfig c = bench::ExperimentConfig::from_json(j);
  if (!a.csv.empty()) c.csv_path = a.csv;
  if (a.seed) c.data_seed = c.train_seed = c.eval_seed = *a.seed;
  c.output_dir = a.out;
  if (a.fast) c = c.fast();
  c.validate();
  return c;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(std::stod(item, &used));
      } else {
        out.push_back(static_cast<T>(std::stoull(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad list entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

int run_bench(const ConfigArgs& a) {
  const bench::ExperimentConfig c = load_config(a);
  const bench::ExperimentResult r = bench::run_experiment(c);
  std::cout << "classifier accuracy " << r.classifier.accuracy << ", F1 " << r.classifier.f1
            << "\n"
            << r.table;
  return 0;
}

int run_ablate_dep(const ConfigArgs& a, const std::string& grid) {
  const bench::ExperimentConfig c = load_config(a);
  const bench::Prepared p = bench::prepare(c);
  const auto rows = bench::ablation_lambda_dep(
      p, grid.empty() ? bench::default_dep_grid() : parse_list<double>(grid));
  const std::string csv = bench::dep_ablation_csv(rows);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "dep_ablation.csv", csv);
  write_json_file((fs::path(a.out) / "config.json").string(), c.to_json());
  std::cout << csv;
  return 0;
}

int run_ablate_fixed(const ConfigArgs& a, const std::string& counts) {
  const bench::ExperimentConfig c = load_config(a);
  const bench::Prepared p = bench::prepare(c);
  const auto rows = bench::ablation_n_fixed(
      p, counts.empty() ? std::vector<std::size_t>{0, 2, 4, 6, 8}
                        : parse_list<std::size_t>(counts));
  fs::create_directories(a.out);
  for (const auto& row : rows) {
    bench::write_cfs_csv(
        (fs::path(a.out) / ("cfs_n_fixed_" + std::to_string(row.n_fixed) + ".csv")).string(),
        row.batch, p.dataset.schema);
  }
  const std::string csv = bench::fixed_ablation_csv(rows);
  write_text(fs::path(a.out) / "fixed_ablation.csv", csv);
  write_json_file((fs::path(a.out) / "config.json").string(), c.to_json());
  std::cout << csv;
  return 0;
}

int run_train_classifier(const ConfigArgs& a) {
  const bench::ExperimentConfig c = load_config(a);
  data::DataSource src{c.dataset, c.data_seed, c.samples, "", c.schema_path};
  if (!data::is_synthetic(c.dataset)) {
    src.csv_path = bench::resolve_csv(c.dataset, c.csv_path);
    if (src.csv_path.empty()) throw ConfigError("no CSV for '" + c.dataset + "'; pass --csv");
  }
  const data::Dataset d = data::load_dataset(src);
  const clf::TrainedClassifier clf = clf::train_classifier(d, c.classifier, c.train_seed);
  fs::create_directories(a.out);
  write_json_file((fs::path(a.out) / "classifier.json").string(), clf.to_json());
  const Json metrics{{"dataset", c.dataset},
                     {"config_hash", c.hash()},
                     {"accuracy", clf.test_metrics.accuracy},
                     {"f1", clf.test_metrics.f1}};
  write_json_file((fs::path(a.out) / "classifier_metrics.json").string(), metrics);
  std::cout << metrics.dump(2) << "\n";
  return 0;
}

int run_generate(const std::string& model, const std::string& input, const std::string& mask,
                 std::optional<int> target, bool sampled, std::uint64_t seed,
                 const std::string& out) {
  server::Service service;
  service.add(server::Bundle::load(model));
  const std::string dataset = service.datasets().front();
  const Json rows_in = read_json_file(input);
  const Json mask_in = mask.empty() ? Json::object() : read_json_file(mask);
  if (!mask_in.is_object()) throw ConfigError("mask file must hold a name -> bool object");
  const bool single = rows_in.is_object();
  if (!single && !rows_in.is_array()) {
    throw ConfigError("input must be a name -> value object or an array of them");
  }
  Json results = Json::array();
  for (const Json& row : single ? Json::array({rows_in}) : rows_in) {
    Json req{{"dataset", dataset},
             {"instance", row},
             {"mask", mask_in},
             {"latent_mode", sampled ? "sampled" : "mean"},
             {"seed", seed}};
    if (target) req["target"] = *target;
    const server::Response r = service.counterfactual(req.dump());
    if (r.status != 200) throw ConfigError(r.body.dump());
    results.push_back(r.body);
  }
  const Json result = single ? results[0] : results;
  if (out.empty()) {
    std::cout << result.dump(2) << "\n";
  } else {
    write_json_file(out, result);
  }
  return 0;
}

httplib::Server* g_http = nullptr;

void on_signal(int) {
  if (g_http != nullptr) g_http->stop();
}

int run_serve(const std::string& host, int port, const std::string& models_dir) {
  const server::Service service = server::Service::load_dir(models_dir);
  httplib::Server http;
  server::install_routes(http, service);
  g_http = &http;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving";
  for (const auto& d : service.datasets()) std::cerr << ' ' << d;
  std::cerr << " on http://" << host << ':' << port << "\n";
  if (!http.listen(host, port)) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Realistic, actionable counterfactuals for tabular classifiers"};
  app.require_subcommand(1);

  ConfigArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "train, generate and evaluate on one dataset");
  add_config_options(bench_cmd, bench_args, true);

  auto* ablate = app.add_subcommand("ablate", "lambda_dep or n_fixed sweeps");
  ablate->require_subcommand(1);
  ConfigArgs dep_args, fixed_args;
  std::string grid, counts;
  auto* dep_cmd = ablate->add_subcommand("dep", "sweep lambda_dep");
  add_config_options(dep_cmd, dep_args, true);
  dep_cmd->add_option("--grid", grid, "comma-separated lambda_dep values (default 0,1,4,50,500,1000)");
  auto* fixed_cmd = ablate->add_subcommand("fixed", "sweep the number of frozen features");
  add_config_options(fixed_cmd, fixed_args, true);
  fixed_cmd->add_option("--counts", counts, "comma-separated counts (default 0,2,4,6,8)");

  ConfigArgs clf_args;
  auto* clf_cmd = app.add_subcommand("train-classifier", "train and save the classifier only");
  add_config_options(clf_cmd, clf_args, true);

  std::string model, input, mask, gen_out;
  std::optional<int> target;
  bool sampled = false;
  std::uint64_t gen_seed = 0;
  auto* gen_cmd = app.add_subcommand("generate", "counterfactuals from a saved bundle");
  gen_cmd->add_option("--model", model, "bundle.json written by bench")
      ->required()
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--input", input, "row JSON (name -> value) or an array of rows")
      ->required()
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--mask", mask, "mask JSON (name -> true to freeze)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--target", target, "target class (default: flip)")->check(CLI::Range(0, 1));
  gen_cmd->add_flag("--sampled", sampled, "sample z instead of using the posterior mean");
  gen_cmd->add_option("--seed", gen_seed, "seed for --sampled");
  gen_cmd->add_option("--out", gen_out, "write JSON here instead of stdout");

  std::string host = "127.0.0.1", models_dir;
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API over saved bundles");
  serve_cmd->add_option("--port", port, "listen port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--host", host, "listen address");
  serve_cmd->add_option("--models-dir", models_dir, "directory searched for bundle JSON files")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*bench_cmd) return run_bench(bench_args);
    if (*dep_cmd) return run_ablate_dep(dep_args, grid);
    if (*fixed_cmd) return run_ablate_fixed(fixed_args, counts);
    if (*clf_cmd) return run_train_classifier(clf_args);
    if (*gen_cmd) return run_generate(model, input, mask, target, sampled, gen_seed, gen_out);
    if (*serve_cmd) return run_serve(host, port, models_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
