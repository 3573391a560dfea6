#include <filesystem>

#include "realcf/data/sources.hpp"
#include "realcf/error.hpp"

namespace realcf::data {

namespace {

FeatureSpec cont(std::string name, bool mutable_ = true) {
  FeatureSpec f;
  f.name = std::move(name);
  f.default_mutable = mutable_;
  return f;
}

FeatureSpec cat(std::string name, bool mutable_ = true) {
  FeatureSpec f;
  f.name = std::move(name);
  f.kind = FeatureKind::kCategorical;
  f.default_mutable = mutable_;
  return f;
}

FeatureSchema numbered(std::size_t d) {
  std::vector<FeatureSpec> f;
  for (std::size_t j = 1; j <= d; ++j) f.push_back(cont("X" + std::to_string(j)));
  return FeatureSchema(std::move(f), LabelSpec{"label", {"1"}});
}

void require_known(const std::string& id) {
  for (const auto& k : known_datasets()) {
    if (k == id) return;
  }
  throw ConfigError("unknown dataset '" + id + "'");
}

}  // namespace

std::vector<std::string> known_datasets() {
  return {"synthetic1", "synthetic2", "diabetes", "sangiovese", "adult"};
}

bool is_synthetic(const std::string& id) { return id == "synthetic1" || id == "synthetic2"; }

FeatureSchema preset_schema(const std::string& id) {
  require_known(id);
  if (id == "synthetic1") return numbered(7);
  if (id == "synthetic2") return numbered(5);
  if (id == "diabetes") {
    std::vector<FeatureSpec> f;
    for (const char* n : {"Pregnancies", "Glucose", "BloodPressure", "SkinThickness", "Insulin",
                          "BMI", "DiabetesPedigreeFunction", "Age"}) {
      f.push_back(cont(n));
    }
    return FeatureSchema(std::move(f), LabelSpec{"Outcome", {"1"}});
  }
  if (id == "sangiovese") {
    std::vector<FeatureSpec> f;
    for (const char* n : {"SproutN", "BunchN", "GrapeW", "WoodW", "SPAD06", "NDVI06", "SPAD08",
                          "NDVI08", "Acid", "Potass", "Brix", "pH", "Anthoc"}) {
      f.push_back(cont(n));
    }
    return FeatureSchema(std::move(f), LabelSpec{"label", {"1"}});
  }
  std::vector<FeatureSpec> f{cont("age"),
                             cat("education"),
                             cont("educational-num"),
                             cat("marital-status"),
                             cat("relationship"),
                             cat("race", false),
                             cat("gender", false),
                             cont("capital-gain"),
                             cont("capital-loss"),
                             cont("hours-per-week")};
  return FeatureSchema(std::move(f), LabelSpec{"income", {"1", ">50K", ">50K."}});
}

EdgeList preset_edges(const std::string& id, const FeatureSchema& schema) {
  require_known(id);
  EdgeList out;
  auto edge = [&](const char* child, const char* parent, EdgeForm form) {
    out.edges.push_back({schema.index_of(child), schema.index_of(parent), form});
  };
  constexpr auto lin = EdgeForm::kLinear;
  constexpr auto nonlin = EdgeForm::kNonlinear;
  if (id == "synthetic1") {
    edge("X3", "X1", lin);
    edge("X3", "X2", lin);
    edge("X4", "X3", lin);
    edge("X5", "X3", nonlin);
    out.sums.push_back({schema.index_of("X6"), schema.index_of("X7"), 100.0});
  } else if (id == "synthetic2") {
    edge("X2", "X1", nonlin);
    edge("X3", "X1", nonlin);
    edge("X5", "X4", nonlin);
  } else if (id == "diabetes") {
    edge("Insulin", "Glucose", lin);
    edge("SkinThickness", "BMI", lin);
    edge("Pregnancies", "Age", lin);
  } else if (id == "sangiovese") {
    edge("BunchN", "SproutN", lin);
    edge("SPAD08", "SPAD06", lin);
  } else {
    edge("educational-num", "age", lin);
    edge("hours-per-week", "age", nonlin);
  }
  out.validate(schema);
  return out;
}

std::vector<std::string> preset_sensitive(const std::string& id) {
  require_known(id);
  if (id == "adult") return {"race", "gender"};
  return {};
}

SplitSpec preset_split(const std::string& id) {
  require_known(id);
  SplitSpec s;
  if (id == "synthetic1") {
    s.test_fraction = 0.15;
  } else if (id == "synthetic2") {
    s.test_fraction = 0.1;
  } else if (id == "diabetes") {
    s.test_fraction = 0.2;
  } else if (id == "sangiovese") {
    s.test_fraction = 0.2;
    s.split_column = "split";
  } else {
    s.test_fraction = 0.1;
    s.stratify = true;
    s.downsample_negative = true;
    s.drop_columns = {"fnlwgt", "workclass", "occupation", "native-country"};
  }
  return s;
}

std::uint64_t preset_seed(const std::string& id) {
  require_known(id);
  return id == "diabetes" ? 34 : 42;
}

std::size_t preset_samples(const std::string& id) {
  require_known(id);
  if (id == "synthetic1") return 10000;
  if (id == "synthetic2") return 12000;
  return 0;
}

std::string preset_csv_name(const std::string& id) {
  require_known(id);
  return id + ".csv";
}

Dataset load_dataset(const DataSource& source) {
  require_known(source.id);
  if (is_synthetic(source.id)) {
    const std::size_t n = source.samples ? source.samples : preset_samples(source.id);
    return source.id == "synthetic1" ? gen_synthetic1(n, source.seed)
                                     : gen_synthetic2(n, source.seed);
  }
  if (source.csv_path.empty()) throw ConfigError("dataset '" + source.id + "' needs a CSV path");
  if (!std::filesystem::exists(source.csv_path)) {
    throw ConfigError("CSV file '" + source.csv_path + "' does not exist");
  }
  const FeatureSchema schema =
      source.schema_path.empty() ? preset_schema(source.id) : load_schema(source.schema_path);
  return load_csv(source.csv_path, schema, preset_split(source.id), source.seed, source.id);
}

}  // namespace realcf::data
