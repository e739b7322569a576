#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dla {

// Schema-checked key = value configuration. Files are UTF-8 text, one
// `key = value` per line, `#` starts a comment. Keys not present in the
// schema are rejected so typos fail loudly instead of silently using a
// default. Later assignments win, command-line overrides win last.

enum class OptType { Int, Real, Text };

struct OptSpec {
    OptType type = OptType::Text;
    std::string default_value;
};

using Schema = std::map<std::string, OptSpec>;

class Config {
public:
    // overrides are raw "key=value" strings as passed to --set
    static Config from_file(const std::filesystem::path& path, const Schema& schema,
                            const std::vector<std::string>& overrides = {});
    static Config from_defaults(const Schema& schema,
                                const std::vector<std::string>& overrides = {});

    std::int64_t get_int(const std::string& key) const;
    double get_real(const std::string& key) const;
    const std::string& get_text(const std::string& key) const;

    // sorted `key = value` lines; parsing the emitted file reproduces *this
    std::string resolved_text() const;
    void write_resolved(const std::filesystem::path& path) const;

private:
    void assign(const std::string& key, const std::string& value, const std::string& where);

    Schema schema_;
    std::map<std::string, std::string> values_;
};

}  // namespace dla
