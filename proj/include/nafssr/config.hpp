#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nafssr {

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Flat "dotted.key = value" settings. Lines starting with '#' are comments.
/// Later assignments win, so overrides are applied after the file.
class Config {
  public:
    static Config parse(const std::string& text, const std::string& origin = "<text>");
    static Config load(const std::filesystem::path& file);

    /// Applies one "key=value" override.
    void set_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    /// Resolves a path value against the directory of the config file.
    std::filesystem::path get_path(const std::string& key, const std::filesystem::path& fallback) const;

    /// Sorted "key = value" lines; parse(dump()) reproduces the config.
    std::string dump() const;
    const std::map<std::string, std::string>& values() const { return values_; }
    const std::filesystem::path& base_dir() const { return base_dir_; }
    void set_base_dir(std::filesystem::path dir) { base_dir_ = std::move(dir); }

  private:
    std::map<std::string, std::string> values_;
    std::filesystem::path base_dir_;
};

/// "HxW" -> {h, w}.
std::pair<int, int> parse_size(const std::string& text);

}  // namespace nafssr
