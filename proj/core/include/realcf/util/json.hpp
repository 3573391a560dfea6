#pragma once

#include <json.hpp>

#include "realcf/diff/tensor.hpp"

namespace realcf {

using Json = nlohmann::json;

/// {"shape": [...], "values": [...]}
Json tensor_to_json(const diff::Tensor& tensor);
diff::Tensor tensor_from_json(const Json& json);

/// Reads a whole JSON document; throws ParseError with the path on failure.
Json read_json_file(const std::string& path);
/// Writes `json` with two-space indentation and a trailing newline.
void write_json_file(const std::string& path, const Json& json);

}  // namespace realcf
