#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace realcf {

std::uint64_t fnv1a64(std::string_view bytes);
/// 16 lowercase hex digits.
std::string hex64(std::uint64_t value);

}  // namespace realcf
