#include "nafssr/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace nafssr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) return false;
    return true;
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        const std::string key = eq == std::string::npos ? "" : trim(t.substr(0, eq));
        if (!valid_key(key))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
        cfg.values_[key] = trim(t.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError(file.string() + ": cannot open config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    Config cfg = parse(ss.str(), file.string());
    cfg.base_dir_ = file.parent_path();
    return cfg;
}

void Config::set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const std::string key = eq == std::string::npos ? "" : trim(assignment.substr(0, eq));
    if (!valid_key(key)) throw ConfigError("override must look like key=value, got '" + assignment + "'");
    values_[key] = trim(assignment.substr(eq + 1));
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    int out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double Config::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected a number, got '" + v + "'");
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = values_.at(key);
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::filesystem::path Config::get_path(const std::string& key, const std::filesystem::path& fallback) const {
    if (!has(key)) return fallback;
    std::filesystem::path p = values_.at(key);
    return p.is_absolute() || base_dir_.empty() ? p : base_dir_ / p;
}

std::string Config::dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

std::pair<int, int> parse_size(const std::string& text) {
    const auto x = text.find('x');
    int h = 0, w = 0;
    if (x != std::string::npos) {
        const auto r1 = std::from_chars(text.data(), text.data() + x, h);
        const auto r2 = std::from_chars(text.data() + x + 1, text.data() + text.size(), w);
        if (r1.ec == std::errc() && r1.ptr == text.data() + x && r2.ec == std::errc() &&
            r2.ptr == text.data() + text.size() && h > 0 && w > 0)
            return {h, w};
    }
    throw ConfigError("expected a size like 64x192, got '" + text + "'");
}

}  // namespace nafssr
