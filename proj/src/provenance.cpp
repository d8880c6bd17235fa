#include "desco/provenance.hpp"

#include <cstdio>

#ifndef DESCO_VERSION
#define DESCO_VERSION "unknown"
#endif

namespace desco {

const char* code_version()
{
    return DESCO_VERSION;
}

std::string fnv1a_hex(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json provenance_block(const nlohmann::json& config, std::uint64_t seed)
{
    return {{"config_hash", fnv1a_hex(config.dump())}, {"seed", seed}, {"code_version", code_version()}};
}

} // namespace desco
