#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "realcf/data/sources.hpp"
#include "realcf/error.hpp"

namespace realcf::data {

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_double(const std::string& text, double& out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        current += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(std::move(current)));
      current.clear();
    } else if (c != '\r') {
      current += c;
    }
  }
  fields.push_back(trim(std::move(current)));
  return fields;
}

Dataset parse_csv(std::istream& in, FeatureSchema schema, const SplitSpec& split,
                  std::uint64_t seed, std::string id) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
      line.erase(0, 3);
    }
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw ParseError("CSV '" + id + "' is empty");

  std::map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) column.emplace(header[c], c);
  auto require = [&](const std::string& name) {
    auto it = column.find(name);
    if (it == column.end()) throw SchemaError("CSV '" + id + "' has no column '" + name + "'");
    return it->second;
  };
  for (const std::string& dropped : split.drop_columns) {
    if (schema.find(dropped)) {
      throw SchemaError("column '" + dropped + "' is both dropped and a feature");
    }
  }
  const std::size_t d = schema.size();
  std::vector<std::size_t> feature_col(d);
  for (std::size_t j = 0; j < d; ++j) feature_col[j] = require(schema[j].name);
  const std::size_t label_col = require(schema.label().name);
  const bool has_split_col = !split.split_column.empty() && column.count(split.split_column);
  const std::size_t split_col = has_split_col ? column.at(split.split_column) : 0;

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError("CSV '" + id + "' row " + std::to_string(rows.size()) + " (line " +
                       std::to_string(line_no) + ") has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(header.size()));
    }
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw ParseError("CSV '" + id + "' has no data rows");

  for (std::size_t j = 0; j < d; ++j) {
    auto& spec = schema[j];
    if (spec.continuous() || !spec.categories.empty()) continue;
    std::set<std::string> distinct;
    for (const auto& r : rows) distinct.insert(r[feature_col[j]]);
    spec.categories.assign(distinct.begin(), distinct.end());
  }
  schema.validate();

  const std::set<std::string> positive(schema.label().positive.begin(),
                                       schema.label().positive.end());
  Tensor x = Tensor::zeros(rows.size(), d);
  std::vector<int> y(rows.size());
  std::vector<char> is_test(rows.size(), 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const std::string& field = rows[r][feature_col[j]];
      if (schema[j].continuous()) {
        double v = 0.0;
        if (!parse_double(field, v)) {
          throw ParseError("CSV '" + id + "' row " + std::to_string(r) + ": column '" +
                           schema[j].name + "' value '" + field + "' is not numeric");
        }
        x(r, j) = v;
      } else {
        const auto& cats = schema[j].categories;
        auto it = std::find(cats.begin(), cats.end(), field);
        if (it == cats.end()) {
          throw ParseError("CSV '" + id + "' row " + std::to_string(r) + ": '" + field +
                           "' is not a category of '" + schema[j].name + "'");
        }
        x(r, j) = static_cast<double>(it - cats.begin());
      }
    }
    y[r] = positive.count(rows[r][label_col]) ? 1 : 0;
    if (has_split_col) is_test[r] = rows[r][split_col] == "test";
  }

  // Optional negative-class downsampling to the positive count.
  std::vector<std::size_t> keep(rows.size());
  for (std::size_t r = 0; r < keep.size(); ++r) keep[r] = r;
  if (split.downsample_negative) {
    std::vector<std::size_t> neg, pos;
    for (std::size_t r = 0; r < y.size(); ++r) (y[r] ? pos : neg).push_back(r);
    if (neg.size() > pos.size()) {
      std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
      std::shuffle(neg.begin(), neg.end(), rng);
      neg.resize(pos.size());
      keep = pos;
      keep.insert(keep.end(), neg.begin(), neg.end());
      std::sort(keep.begin(), keep.end());
    }
  }

  Dataset out;
  out.id = std::move(id);
  out.schema = std::move(schema);
  out.x = Tensor::zeros(keep.size(), d);
  out.y.resize(keep.size());
  std::vector<char> kept_test(keep.size(), 0);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    std::copy_n(x.row_span(keep[k]).begin(), d, out.x.row_span(k).begin());
    out.y[k] = y[keep[k]];
    kept_test[k] = is_test[keep[k]];
  }
  if (has_split_col) {
    for (std::size_t k = 0; k < keep.size(); ++k) {
      (kept_test[k] ? out.split.test : out.split.train).push_back(k);
    }
    if (out.split.train.empty() || out.split.test.empty()) {
      throw ParseError("split column '" + split.split_column + "' leaves an empty split");
    }
    out.split.train_balanced = out.split.train;
  } else {
    out.split = train_test_split(out.y, split.test_fraction, seed, split.stratify);
  }
  if (split.oversample) oversample(out.split, out.y, seed);
  fit_scaler(out);
  return out;
}

Dataset load_csv(const std::string& path, const FeatureSchema& schema, const SplitSpec& split,
                 std::uint64_t seed, std::string id) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open CSV '" + path + "'");
  return parse_csv(in, schema, split, seed, std::move(id));
}

FeatureSchema load_schema(const std::string& path) {
  return FeatureSchema::from_json(read_json_file(path));
}

}  // namespace realcf::data
