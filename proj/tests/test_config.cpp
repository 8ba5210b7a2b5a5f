#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hyperlora/config.hpp"

using namespace hyperlora;

TEST_CASE("empty file yields all defaults") {
    Config cfg = Config::load("");
    CHECK(cfg.tree() == Config::defaults());
    CHECK(cfg.geti("pipeline.finetune_iters") == 40);
    CHECK(cfg.geti("precompute.iters") == 400);
    CHECK(cfg.getf("hyper.beta") == doctest::Approx(10.0));
    CHECK(cfg.get_list("corpus.styles").size() == 4);
}

TEST_CASE("file values and overrides apply in precedence order") {
    const std::string path = (std::filesystem::temp_directory_path() / "cfg.json").string();
    {
        std::ofstream out(path);
        out << R"({"pretrain": {"epochs": 3}, "pipeline": {"finetune_iters": 10}})";
    }
    Config cfg = Config::load(path, {"pipeline.finetune_iters=40", "hyper.s=2"});
    CHECK(cfg.geti("pretrain.epochs") == 3);
    CHECK(cfg.geti("pipeline.finetune_iters") == 40);  // override beats file
    CHECK(cfg.geti("hyper.s") == 2);
    std::remove(path.c_str());
}

TEST_CASE("unknown keys are rejected with their path") {
    const std::string path = (std::filesystem::temp_directory_path() / "cfg_bad.json").string();
    {
        std::ofstream out(path);
        out << R"({"foo": {"bar": 1}})";
    }
    CHECK_THROWS_WITH_AS(Config::load(path), doctest::Contains("foo"), ValidationError);
    std::remove(path.c_str());

    CHECK_THROWS_WITH_AS(Config::load("", {"foo.bar=1"}), doctest::Contains("foo.bar"), ValidationError);
    CHECK_THROWS_AS(Config::load("", {"pretrain.epochs=abc"}), ValidationError);
    CHECK_THROWS_AS(Config::load("", {"no_equals"}), ValidationError);
}

TEST_CASE("type mismatches are rejected") {
    const std::string path = (std::filesystem::temp_directory_path() / "cfg_type.json").string();
    {
        std::ofstream out(path);
        out << R"({"pretrain": {"epochs": "many"}})";
    }
    CHECK_THROWS_AS(Config::load(path), ValidationError);
    std::remove(path.c_str());
}

TEST_CASE("resolved tree round-trips through json") {
    Config a = Config::load("", {"seed=77", "corpus.n_identities=12"});
    Config b = Config::from_json(a.tree());
    CHECK(a.tree() == b.tree());
    CHECK(b.seed() == 77);
}
