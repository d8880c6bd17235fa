#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace desco {

const char* code_version();

/// 64-bit FNV-1a over the bytes of `text`, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// {config_hash, seed, code_version}; the hash covers the compact JSON dump of `config`.
nlohmann::json provenance_block(const nlohmann::json& config, std::uint64_t seed);

} // namespace desco
