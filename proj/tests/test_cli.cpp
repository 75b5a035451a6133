#include "doctest.h"

#include "lingbridge/cli.hpp"
#include "lingbridge/datasets.hpp"
#include "lingbridge/error.hpp"
#include "lingbridge/simlab.hpp"
#include "support/temp_dir.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace lingbridge;
using json = nlohmann::json;
using testsupport::slurp;
using testsupport::TempDir;

namespace {

int run(std::vector<std::string> args, std::string* captured = nullptr) {
    args.insert(args.begin(), "lingbridge");
    std::ostringstream out;
    const int code = cli_dispatch(args, out);
    if (captured) *captured = out.str();
    return code;
}

struct EnvGuard {
    std::string name;
    EnvGuard(std::string n, const std::string& value) : name(std::move(n)) { ::setenv(name.c_str(), value.c_str(), 1); }
    ~EnvGuard() { ::unsetenv(name.c_str()); }
};

void write_queries(const std::filesystem::path& path) {
    std::ofstream q(path);
    q << json{{"id", "1"}, {"text", "Capital of France?"}, {"lang", "en"}, {"gold_answer", "Paris"}}.dump() << "\n";
    q << json{{"id", "2"}, {"text", "法国首都？"}, {"lang", "zh"}, {"gold_answer", "Paris"}}.dump() << "\n";
    q << json{{"id", "3"}, {"text", "Capital of Italy?"}, {"lang", "en"}, {"gold_answer", "Rome"}}.dump() << "\n";
}

void write_script(const std::filesystem::path& path) {
    // Every candidate answer says Paris, possibly behind a translation marker.
    const json script{{"rules", {{{"contains", {"Answer: Paris", "evaluate: "}}, {"reply", "correct"}},
                                 {{"contains", {"Answer: Rome", "evaluate: "}}, {"reply", "wrong"}}}},
                      {"default", "Paris"}};
    std::ofstream(path) << script.dump();
}

}  // namespace

TEST_CASE("usage errors and help") {
    CHECK(run({"frobnicate"}) == kExitUsage);
    CHECK(run({}) == kExitUsage);
    std::string help;
    CHECK(run({"--help"}, &help) == kExitOk);
    CHECK(help.find("simulate") != std::string::npos);
    CHECK(run({"pipeline-run"}) == kExitUsage);  // missing required options
}

TEST_CASE("configuration errors") {
    TempDir dir;
    std::ofstream(dir / "bad.ini") << "[backend]\nkind = scripted\nsecret_token = x\n";
    CHECK(run({"--config", (dir / "bad.ini").string(), "simulate", "--facts", "10"}) == kExitConfig);
    std::ofstream(dir / "loose.ini") << "kind = scripted\n";
    CHECK(run({"--config", (dir / "loose.ini").string(), "simulate", "--facts", "10"}) == kExitConfig);
    CHECK(run({"--mode", "merge", "pipeline-run", "--input", "x", "--out", "y"}) == kExitConfig);
}

TEST_CASE("settings precedence: flags over environment over file") {
    TempDir dir;
    std::ofstream(dir / "c.ini") << "[pipeline]\nparallelism = 2\nmode = integrate\n[run]\nseed = 3\n";
    Settings s;
    s.load_ini(dir / "c.ini");
    EnvGuard env("LINGBRIDGE_PIPELINE_PARALLELISM", "5");
    s.apply_env();
    CHECK(s.get_int("pipeline.parallelism", 1) == 5);
    CHECK(s.get_or("pipeline.mode", "") == "integrate");
    s.set("pipeline.parallelism", "8");
    CHECK(s.get_int("pipeline.parallelism", 1) == 8);
    CHECK(s.get_int("run.seed", 0) == 3);
    CHECK_THROWS_AS(s.set("backend.api_key", "x"), Error);
    s.set("run.seed", "abc");
    CHECK_THROWS_AS(s.get_int("run.seed", 0), Error);
}

TEST_CASE("detector training is reproducible") {
    TempDir dir;
    SimWorldConfig wc;
    wc.en_specific = 100;
    wc.zh_specific = 200;
    wc.common = 100;
    const auto world = SimWorld::build(wc);
    write_records(dir / "corpus.jsonl", world->corpus("en"));
    for (const char* name : {"m1.bin", "m2.bin"}) {
        CHECK(run({"detector-train", "--lang", "en", "--corpus", (dir / "corpus.jsonl").string(), "--out",
                   (dir / name).string(), "--metrics", (dir / (std::string(name) + ".json")).string()}) == kExitOk);
    }
    CHECK(slurp(dir / "m1.bin") == slurp(dir / "m2.bin"));
    const auto metrics = json::parse(slurp(dir / "m1.bin.json"));
    CHECK(metrics.dump().find("accuracy") != std::string::npos);
    std::string report;
    CHECK(run({"detector-eval", "--model", (dir / "m1.bin").string(), "--corpus", (dir / "corpus.jsonl").string()},
              &report) == kExitOk);
    CHECK(report.find("accuracy") != std::string::npos);
    CHECK(run({"detector-train", "--lang", "en", "--corpus", (dir / "missing.jsonl").string(), "--out",
               (dir / "m3.bin").string()}) == kExitRuntime);
}

TEST_CASE("simulate writes a report and a secret-free manifest") {
    TempDir dir;
    EnvGuard sde("SOURCE_DATE_EPOCH", "1700000000");
    EnvGuard secret("MY_CHAT_KEY", "sk-very-secret-value");
    EnvGuard auth("LINGBRIDGE_BACKEND_AUTH_ENV", "MY_CHAT_KEY");
    std::string table;
    CHECK(run({"--seed", "7", "simulate", "--facts", "200", "--classes", "30,30,40", "--condition", "full,direct",
               "--out", (dir / "sim").string()},
              &table) == kExitOk);
    CHECK(table.find("full") != std::string::npos);
    const auto manifest_text = slurp(dir / "sim" / "manifest.json");
    CHECK(manifest_text.find("sk-very-secret-value") == std::string::npos);
    const auto manifest = json::parse(manifest_text);
    CHECK(manifest.at("command") == "simulate");
    CHECK(manifest.at("seed") == 7);
    CHECK(manifest.at("timestamp") == "2023-11-14T22:13:20Z");
    CHECK(manifest.at("config").dump().find("MY_CHAT_KEY") != std::string::npos);
    const auto report = json::parse(slurp(dir / "sim" / "report.json"));
    CHECK(!report.empty());
}

TEST_CASE("pipeline-run, evaluate and ablate with a scripted backend") {
    TempDir dir;
    write_queries(dir / "q.jsonl");
    write_script(dir / "script.json");
    const std::vector<std::string> common{"--backend", "scripted", "--script", (dir / "script.json").string(),
                                          "--translator", "mock"};
    auto with = [&](std::vector<std::string> extra) {
        auto args = common;
        args.insert(args.end(), extra.begin(), extra.end());
        return args;
    };

    CHECK(run(with({"--ablate", "direct", "pipeline-run", "--input", (dir / "q.jsonl").string(), "--out",
                    (dir / "direct.jsonl").string()})) == kExitOk);
    CHECK(run(with({"--ablate", "no_detector", "pipeline-run", "--input", (dir / "q.jsonl").string(), "--out",
                    (dir / "enh.jsonl").string()})) == kExitOk);
    const auto traces = slurp(dir / "enh.jsonl");
    CHECK(std::count(traces.begin(), traces.end(), '\n') == 3);
    CHECK(traces.find("@@en@@Paris") != std::string::npos);
    CHECK(std::filesystem::exists(dir / "enh.jsonl.manifest.json"));

    // Exact judge: "Paris" is right for 1 and 2, wrong for 3.
    std::string table;
    CHECK(run(with({"--judge", "exact", "evaluate", "--input", (dir / "q.jsonl").string(), "--original",
                    (dir / "direct.jsonl").string(), "--improved", (dir / "enh.jsonl").string(), "--out",
                    (dir / "report.json").string()}),
              &table) == kExitOk);
    const auto report = json::parse(slurp(dir / "report.json"));
    CHECK(report.at("metric") == "accuracy");
    CHECK(report.at("error_rate").at("num") == 0);
    CHECK(table.find("mean calls/query") != std::string::npos);

    // LLM judge from the same script: decisive verdicts.
    CHECK(run(with({"evaluate", "--input", (dir / "q.jsonl").string(), "--original", (dir / "direct.jsonl").string(),
                    "--improved", (dir / "enh.jsonl").string()})) == kExitOk);

    CHECK(run(with({"--judge", "exact", "--ablate", "no_detector", "ablate", "--input", (dir / "q.jsonl").string(),
                    "--out", (dir / "ablate.json").string()})) == kExitOk);
    const auto ab = json::parse(slurp(dir / "ablate.json"));
    CHECK(ab.at("conditions").size() == 1);
    CHECK(ab.at("conditions")[0].at("condition") == "no_detector");
    CHECK(run(with({"--judge", "exact", "--ablate", "full", "ablate", "--input", (dir / "q.jsonl").string()})) ==
          kExitConfig);  // no detector given
}

TEST_CASE("an ambiguous judge exceeding the bound is a validation failure") {
    TempDir dir;
    write_queries(dir / "q.jsonl");
    const json script{{"default", "maybe"}};
    std::ofstream(dir / "script.json") << script.dump();
    const std::vector<std::string> common{"--backend", "scripted", "--script", (dir / "script.json").string(),
                                          "--translator", "mock"};
    auto args = common;
    for (const char* s : {"--ablate", "direct", "pipeline-run", "--input"}) args.push_back(s);
    args.push_back((dir / "q.jsonl").string());
    args.push_back("--out");
    args.push_back((dir / "t.jsonl").string());
    REQUIRE(run(args) == kExitOk);
    args = common;
    for (const char* s : {"evaluate", "--input"}) args.push_back(s);
    args.push_back((dir / "q.jsonl").string());
    args.push_back("--original");
    args.push_back((dir / "t.jsonl").string());
    args.push_back("--improved");
    args.push_back((dir / "t.jsonl").string());
    CHECK(run(args) == kExitValidation);
}

TEST_CASE("label and datagen") {
    TempDir dir;
    {
        std::ofstream in(dir / "records.jsonl");
        in << json{{"id", "a"}, {"text", "What is zongzi?"}, {"lang", "en"}}.dump() << "\n";
        in << json{{"id", "b"}, {"text", "Who is Babe Ruth?"}, {"lang", "en"}}.dump() << "\n";
    }
    json gen = json::object();
    const char* cats[] = {"Chinese knowledge", "English knowledge", "Knowledge with no specific language"};
    for (int i = 0; i < 30; ++i) gen["Q" + std::to_string(i) + "?"] = cats[i % 3];
    const json script{{"rules",
                       {{{"contains", "Question: What is zongzi?"}, {"reply", "Chinese knowledge"}},
                        {{"contains", "Question: Who is Babe Ruth?"}, {"replies", {"English knowledge", "common"}}},
                        {{"contains", "Sports"}, {"reply", gen.dump()}}}}};
    std::ofstream(dir / "script.json") << script.dump();
    const std::vector<std::string> common{"--backend", "scripted", "--script", (dir / "script.json").string()};
    auto args = common;
    for (const auto& s : {std::string("label"), std::string("--input"), (dir / "records.jsonl").string(),
                          std::string("--out"), (dir / "agreed.jsonl").string(), std::string("--queue"),
                          (dir / "queue.jsonl").string()}) {
        args.push_back(s);
    }
    CHECK(run(args) == kExitOk);
    CHECK(ingest(dir / "agreed.jsonl").records.size() == 1);
    CHECK(read_review_queue(dir / "queue.jsonl").size() == 1);

    args = common;
    for (const auto& s : {std::string("datagen"), std::string("--topics"), std::string("Sports"),
                          std::string("--out"), (dir / "gen.jsonl").string()}) {
        args.push_back(s);
    }
    CHECK(run(args) == kExitOk);
    CHECK(ingest(dir / "gen.jsonl").counts.total() == 30);

    CHECK(run({"--translator", "mock", "datagen", "--augment", (dir / "agreed.jsonl").string(), "--target", "zh",
               "--out", (dir / "aug.jsonl").string()}) == kExitOk);
    CHECK(ingest(dir / "aug.jsonl").records.size() == 2);
}
