#include "dla/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dla/error.hpp"

namespace dla {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void check_int(const std::string& key, const std::string& value, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    std::strtoll(value.c_str(), &end, 10);
    if (errno != 0 || end == value.c_str() || *end != '\0')
        throw ConfigError(where + ": value for '" + key + "' is not an integer: '" + value + "'");
}

void check_real(const std::string& key, const std::string& value, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    std::strtod(value.c_str(), &end);
    if (errno == ERANGE || end == value.c_str() || *end != '\0')
        throw ConfigError(where + ": value for '" + key + "' is not a number: '" + value + "'");
}

}  // namespace

void Config::assign(const std::string& key, const std::string& value, const std::string& where) {
    auto it = schema_.find(key);
    if (it == schema_.end())
        throw ConfigError(where + ": unknown key '" + key + "'");
    switch (it->second.type) {
        case OptType::Int: check_int(key, value, where); break;
        case OptType::Real: check_real(key, value, where); break;
        case OptType::Text: break;
    }
    values_[key] = value;
}

Config Config::from_defaults(const Schema& schema, const std::vector<std::string>& overrides) {
    Config cfg;
    cfg.schema_ = schema;
    for (const auto& [key, spec] : schema) cfg.values_[key] = spec.default_value;
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + ov + "'");
        cfg.assign(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)), "--set");
    }
    return cfg;
}

Config Config::from_file(const std::filesystem::path& path, const Schema& schema,
                         const std::vector<std::string>& overrides) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    Config cfg;
    cfg.schema_ = schema;
    for (const auto& [key, spec] : schema) cfg.values_[key] = spec.default_value;

    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        cfg.assign(trim(t.substr(0, eq)), trim(t.substr(eq + 1)),
                   path.string() + ":" + std::to_string(lineno));
    }
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + ov + "'");
        cfg.assign(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)), "--set");
    }
    return cfg;
}

std::int64_t Config::get_int(const std::string& key) const {
    return std::strtoll(get_text(key).c_str(), nullptr, 10);
}

double Config::get_real(const std::string& key) const {
    return std::strtod(get_text(key).c_str(), nullptr);
}

const std::string& Config::get_text(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("key not in schema: '" + key + "'");
    return it->second;
}

std::string Config::resolved_text() const {
    std::ostringstream os;
    for (const auto& [key, value] : values_) os << key << " = " << value << "\n";
    return os.str();
}

void Config::write_resolved(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write resolved config: " + path.string());
    os << resolved_text();
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace dla
