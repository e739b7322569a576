#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "dla/config.hpp"
#include "dla/error.hpp"

namespace fs = std::filesystem;
using namespace dla;

namespace {

Schema demo_schema() {
    return {
        {"alpha", {OptType::Int, "3"}},
        {"beta", {OptType::Real, "0.5"}},
        {"gamma", {OptType::Text, "hello"}},
    };
}

fs::path write_file(const std::string& name, const std::string& text) {
    fs::path dir = fs::temp_directory_path() / "dla_test_config";
    fs::create_directories(dir);
    fs::path p = dir / name;
    std::ofstream os(p);
    os << text;
    return p;
}

}  // namespace

TEST_CASE("defaults populate every key") {
    Config c = Config::from_defaults(demo_schema());
    CHECK(c.get_int("alpha") == 3);
    CHECK(c.get_real("beta") == 0.5);
    CHECK(c.get_text("gamma") == "hello");
}

TEST_CASE("file assignments, comments and precedence") {
    fs::path p = write_file("demo.cfg",
                            "# a comment line\n"
                            "alpha = 7\n"
                            "\n"
                            "  beta=2.25   # trailing comment\n"
                            "alpha = 9\n");
    Config c = Config::from_file(p, demo_schema());
    CHECK(c.get_int("alpha") == 9);  // later line wins
    CHECK(c.get_real("beta") == 2.25);
    CHECK(c.get_text("gamma") == "hello");
}

TEST_CASE("command-line overrides win over file values") {
    fs::path p = write_file("ov.cfg", "alpha = 7\n");
    Config c = Config::from_file(p, demo_schema(), {"alpha=11", "gamma=world"});
    CHECK(c.get_int("alpha") == 11);
    CHECK(c.get_text("gamma") == "world");
}

TEST_CASE("schema violations are config errors") {
    Schema s = demo_schema();
    CHECK_THROWS_AS(Config::from_defaults(s, {"delta=1"}), ConfigError);
    CHECK_THROWS_AS(Config::from_defaults(s, {"alpha=x"}), ConfigError);
    CHECK_THROWS_AS(Config::from_defaults(s, {"alpha=1.5"}), ConfigError);
    CHECK_THROWS_AS(Config::from_defaults(s, {"beta=abc"}), ConfigError);
    CHECK_THROWS_AS(Config::from_defaults(s, {"no-equals-sign"}), ConfigError);

    fs::path bad = write_file("bad.cfg", "delta = 1\n");
    CHECK_THROWS_AS(Config::from_file(bad, s), ConfigError);
    fs::path noeq = write_file("noeq.cfg", "alpha 5\n");
    CHECK_THROWS_AS(Config::from_file(noeq, s), ConfigError);
    CHECK_THROWS_AS(Config::from_file(fs::path("/no/such/file.cfg"), s), ConfigError);

    Config c = Config::from_defaults(s);
    CHECK_THROWS_AS(c.get_int("delta"), ConfigError);
}

TEST_CASE("resolved text round-trips through the parser") {
    Config c = Config::from_defaults(demo_schema(), {"alpha=42", "beta=1e-3"});
    fs::path p = fs::temp_directory_path() / "dla_test_config" / "resolved.cfg";
    fs::create_directories(p.parent_path());
    c.write_resolved(p);
    Config back = Config::from_file(p, demo_schema());
    CHECK(back.get_int("alpha") == 42);
    CHECK(back.get_real("beta") == 1e-3);
    CHECK(back.get_text("gamma") == "hello");
    CHECK(back.resolved_text() == c.resolved_text());
}
