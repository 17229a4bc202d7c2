#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace mtsnet {

/// Ordered `key = value` pairs. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Throws ConfigError naming the line for malformed input or repeated keys.
KeyValues parse_key_values(std::istream& is, const std::string& source = "<input>");
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(std::ostream& os, const KeyValues& kv);

std::map<std::string, std::string> to_map(const KeyValues& kv);

}  // namespace mtsnet
