#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

// Flat dotted-key configuration files: `section.key = value`, `#` comments.
// All validation errors carry the offending field path.

namespace shelab::cli {

class Config {
public:
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string get_string(const std::string& key) const;
    std::string get_string_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    int get_int(const std::string& key) const;
    int get_int_or(const std::string& key, int fallback) const;
    uint64_t get_u64_or(const std::string& key, uint64_t fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;
    std::vector<double> get_double_list(const std::string& key) const;

    std::vector<std::string> keys_with_prefix(const std::string& prefix) const;
    const std::map<std::string, std::string>& entries() const { return entries_; }

    // Config-format text with sorted keys; parseable by from_string.
    std::string serialize() const;

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace shelab::cli
