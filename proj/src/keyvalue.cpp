#include "mtsnet/keyvalue.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "mtsnet/errors.hpp"

namespace mtsnet {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(std::istream& is, const std::string& source) {
    KeyValues out;
    std::set<std::string> seen;
    std::string line;
    for (std::size_t n = 1; std::getline(is, line); ++n) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        const std::string where = source + ":" + std::to_string(n);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
        out.emplace_back(std::move(key), trim(t.substr(eq + 1)));
    }
    return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read " + path.string());
    return parse_key_values(is, path.string());
}

void write_key_values(std::ostream& os, const KeyValues& kv) {
    for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

std::map<std::string, std::string> to_map(const KeyValues& kv) { return {kv.begin(), kv.end()}; }

}  // namespace mtsnet
