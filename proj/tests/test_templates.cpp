#include "doctest.h"

#include "lingbridge/error.hpp"
#include "lingbridge/hashing.hpp"
#include "lingbridge/templates.hpp"

#include "support/temp_dir.hpp"

#include <fstream>

using namespace lingbridge;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kGolden = LINGBRIDGE_TEST_DATA_DIR;

}  // namespace

TEST_CASE("shipped templates are byte-identical to the golden transcriptions") {
    const auto set = TemplateSet::load_dir(TemplateSet::default_dir());
    const auto hashes = set.hashes();
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(kGolden / "templates")) {
        const auto name = entry.path().filename().string();
        CAPTURE(name);
        REQUIRE(hashes.count(name) == 1);
        CHECK(hashes.at(name) == sha256_hex(testsupport::slurp(entry.path())));
        ++n;
    }
    CHECK(n == hashes.size());
    CHECK(n == 8);
}

TEST_CASE("render goldens") {
    const auto set = TemplateSet::load_dir(TemplateSet::default_dir());
    const auto cases = json::parse(testsupport::slurp(kGolden / "render" / "cases.json"));
    for (const auto& c : cases) {
        const auto name = c.at("name").get<std::string>();
        CAPTURE(name);
        Bindings b;
        for (const auto& kv : c.at("bindings")) b.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
        const auto& t = set.get(c.at("template").get<std::string>(), lang(c.at("lang").get<std::string>()));
        if (c.contains("error")) {
            try {
                (void)t.render(b);
                FAIL("render should have failed");
            } catch (const Error& e) {
                CHECK(error_code_name(e.code()) == c.at("error").get<std::string>());
            }
        } else {
            CHECK(t.render(b) == testsupport::slurp(kGolden / "render" / c.at("expect_file").get<std::string>()));
        }
    }
}

TEST_CASE("rendering is single pass") {
    PromptTemplate t("judge", lang("en"), "Q=[QUESTION] A=[ANSWER] R=[RES]", {"[QUESTION]", "[ANSWER]", "[RES]"});
    CHECK(t.render({{"[QUESTION]", "[ANSWER]"}, {"[ANSWER]", "[RES]"}, {"[RES]", "x"}}) == "Q=[ANSWER] A=[RES] R=x");
}

TEST_CASE("a template must contain every declared placeholder") {
    CHECK_THROWS_AS(PromptTemplate("label", lang("en"), "no placeholder here", {"[QUESTION]"}), Error);
}

TEST_CASE("unknown templates and languages") {
    const auto set = TemplateSet::load_dir(TemplateSet::default_dir());
    CHECK(set.has("selection", lang("zh")));
    CHECK_FALSE(set.has("judge", lang("zh")));
    CHECK_THROWS_AS(set.get("judge", lang("zh")), Error);
    CHECK_THROWS_AS(declared_placeholders("nonsense"), Error);
}

TEST_CASE("load_dir ignores unrelated files and rejects missing dirs") {
    testsupport::TempDir dir;
    std::ofstream(dir / "judge.en.txt") << "[QUESTION] [ANSWER] [RES]";
    std::ofstream(dir / "README.txt") << "not a template";
    std::ofstream(dir / "notes.md") << "x";
    const auto set = TemplateSet::load_dir(dir.path());
    CHECK(set.hashes().size() == 1);
    CHECK_THROWS_AS(TemplateSet::load_dir(dir / "missing"), Error);
}
