#include "realcf/util/json.hpp"

#include <fstream>
#include <sstream>

#include "realcf/error.hpp"

namespace realcf {

Json tensor_to_json(const diff::Tensor& tensor) {
  return Json{{"shape", tensor.shape()},
              {"values", std::vector<double>(tensor.values().begin(), tensor.values().end())}};
}

diff::Tensor tensor_from_json(const Json& json) {
  try {
    return diff::Tensor(json.at("shape").get<std::vector<std::size_t>>(),
                        json.at("values").get<std::vector<double>>());
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed tensor: ") + e.what());
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& json) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << json.dump(2) << "\n";
}

}  // namespace realcf
