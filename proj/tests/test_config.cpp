#include "crosslm/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"

using namespace crosslm;

TEST_CASE("every schema key has a usable default") {
    RunConfig cfg;
    for (const auto& entry : RunConfig::schema()) {
        CHECK(cfg.has(entry.key));
        CHECK(cfg.get(entry.key) == entry.value);
    }
    CHECK(cfg.get_int("dim") == 64);
    CHECK(cfg.get_double("alpha_bpe") == 0.5);
    CHECK(cfg.get_double("alpha_train") == 0.7);
    CHECK(cfg.get_double("mlm_rate") == 0.15);
    CHECK(cfg.get_int("stream_len") == 256);
    CHECK(cfg.get_int("batch_size") == 64);
    CHECK(cfg.get_int("tlm_token_budget") == 4000);
}

TEST_CASE("unknown keys are rejected") {
    RunConfig cfg;
    CHECK_THROWS(cfg.set("no_such_key", "1"));
    CHECK_THROWS(cfg.get("no_such_key"));
}

TEST_CASE("files parse with comments and blanks; bad keys fail") {
    const auto path =
        (std::filesystem::temp_directory_path() / "clx_cfg.txt").string();
    {
        std::ofstream out(path);
        out << "# settings\n\n dim = 32 \nlr = 1e-3  # inline comment\n";
    }
    RunConfig cfg;
    cfg.load_file(path);
    CHECK(cfg.get_int("dim") == 32);
    CHECK(cfg.get_double("lr") == 1e-3);
    {
        std::ofstream out(path);
        out << "bogus = 1\n";
    }
    RunConfig cfg2;
    CHECK_THROWS(cfg2.load_file(path));
    std::remove(path.c_str());
}

TEST_CASE("typed getters validate their input") {
    RunConfig cfg;
    cfg.set("dim", "not-a-number");
    CHECK_THROWS(cfg.get_int("dim"));
    cfg.set("lr", "fast");
    CHECK_THROWS(cfg.get_double("lr"));
}

TEST_CASE("dump lists one line per key") {
    RunConfig cfg;
    CHECK(cfg.dump().size() == RunConfig::schema().size());
}
