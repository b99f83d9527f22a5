#include "shelab/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace shelab::cli {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& key, const std::string& what) {
    throw std::invalid_argument("config field '" + key + "': " + what);
}

}  // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str());
}

Config Config::from_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos) {
            std::ostringstream msg;
            msg << "config line " << lineno << ": expected 'key = value', got '" << s << "'";
            throw std::invalid_argument(msg.str());
        }
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key.empty()) {
            std::ostringstream msg;
            msg << "config line " << lineno << ": empty key";
            throw std::invalid_argument(msg.str());
        }
        cfg.entries_[key] = value;
    }
    return cfg;
}

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

void Config::set(const std::string& key, const std::string& value) {
    entries_[key] = value;
}

std::string Config::get_string(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) fail(key, "missing required field");
    return it->second;
}

std::string Config::get_string_or(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key) const {
    std::string v = get_string(key);
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) fail(key, "trailing characters in number '" + v + "'");
        return d;
    } catch (const std::invalid_argument&) {
        fail(key, "not a number: '" + v + "'");
    } catch (const std::out_of_range&) {
        fail(key, "number out of range: '" + v + "'");
    }
}

double Config::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

int Config::get_int(const std::string& key) const {
    double d = get_double(key);
    int i = static_cast<int>(d);
    if (static_cast<double>(i) != d) fail(key, "expected an integer");
    return i;
}

int Config::get_int_or(const std::string& key, int fallback) const {
    return has(key) ? get_int(key) : fallback;
}

uint64_t Config::get_u64_or(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    std::string v = get_string(key);
    try {
        return std::stoull(v);
    } catch (...) {
        fail(key, "not an unsigned integer: '" + v + "'");
    }
}

bool Config::get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(key, "expected a boolean, got '" + v + "'");
}

std::vector<double> Config::get_double_list(const std::string& key) const {
    std::string v = get_string(key);
    std::vector<double> out;
    std::istringstream in(v);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (...) {
            fail(key, "bad list element '" + tok + "'");
        }
    }
    if (out.empty()) fail(key, "empty list");
    return out;
}

std::vector<std::string> Config::keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_)
        if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
}

std::string Config::serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : entries_) out << k << " = " << v << "\n";
    return out.str();
}

}  // namespace shelab::cli
