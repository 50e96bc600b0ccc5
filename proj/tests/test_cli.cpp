#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oodkit/cli.hpp"
#include "oodkit/data_io.hpp"
#include "oodkit/harness.hpp"
#include "oodkit/nn.hpp"

using namespace oodkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "oodkit");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("oodkit_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

/// Small toy task plus a config trimmed for test speed.
fs::path make_toy(const std::string& name) {
    const fs::path root = fresh(name);
    const auto r = invoke({"--out", root.string(), "--seed", "3", "make-toy", "--train-per-class", "40",
                        "--test-per-class", "20", "--oe-count", "200", "--val-count", "80", "--ood-count", "80"});
    REQUIRE(r.code == 0);
    auto cfg = nlohmann::json::parse(std::ifstream(root / "config.json"));
    cfg["train"]["epochs"] = 6;
    cfg["finetune"]["epochs"] = 1;
    cfg["oecc"] = {{"lambda1", {0.0}}, {"lambda2", {0.0, 0.3}}};
    cfg["detectors"] = {{"eps_grid", {0.0}}, {"val_fraction", 0.25}};
    cfg["synthetic"] = {{"count", 20}};
    std::ofstream(root / "config.json") << cfg.dump(2);
    return root;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("argument handling") {
    CHECK(invoke({"--help"}).code == 0);
    CHECK(invoke({}).code == 2);
    CHECK(invoke({"frobnicate"}).code == 2);
    const auto r = invoke({"train"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--config") != std::string::npos);
}

TEST_CASE("missing dataset path exits 2 naming the role") {
    const fs::path root = fresh("missing");
    fs::create_directories(root);
    std::ofstream(root / "config.json") << R"({"datasets": {"d_in_train": "nowhere"}})";
    const auto r = invoke({"--config", (root / "config.json").string(), "--out", (root / "out").string(), "train"});
    CHECK(r.code == 2);
    CHECK(r.err.find("d_in_train") != std::string::npos);
}

TEST_CASE("train is deterministic and records the training accuracy") {
    const fs::path root = make_toy("train");
    const std::string cfg = (root / "config.json").string();
    REQUIRE(invoke({"--config", cfg, "--out", (root / "a").string(), "train"}).code == 0);
    REQUIRE(invoke({"--config", cfg, "--out", (root / "b").string(), "train"}).code == 0);
    CheckpointMeta meta;
    CHECK(load_network(root / "a" / "ce", &meta) == load_network(root / "b" / "ce"));
    CHECK(meta.train_accuracy.has_value());
    for (const auto& e : fs::directory_iterator(root / "a" / "ce"))
        if (e.path().extension() == ".oodt")
            CHECK(slurp(e.path()) == slurp(root / "b" / "ce" / e.path().filename()));
    const auto manifest = nlohmann::json::parse(std::ifstream(root / "a" / "ce" / "run_manifest.json"));
    CHECK(manifest["command"] == "train");
    CHECK(manifest["config"]["sha256"].get<std::string>().size() == 64);
    CHECK(manifest["inputs"].contains("d_in_train"));
}

TEST_CASE("planted collision aborts fine-tuning with the indices") {
    const fs::path root = make_toy("collision");
    const std::string cfg = (root / "config.json").string(), out = (root / "out").string();
    Dataset oe = load_dataset(root / "data" / "d_out_oe");
    Dataset test = load_dataset(root / "data" / "d_out_test");
    std::copy(oe.images.row(11).begin(), oe.images.row(11).end(), test.images.row(4).begin());
    save_dataset(test, root / "data" / "d_out_test");
    const auto r = invoke({"--config", cfg, "--out", out, "finetune"});
    CHECK(r.code == 2);
    CHECK(r.err.find("colliding indices: 11 4") != std::string::npos);
    CHECK_FALSE(fs::exists(root / "out" / "finetune"));
}

TEST_CASE("gen-synthetic") {
    const fs::path root = make_toy("synth");
    const std::string cfg = (root / "config.json").string();
    REQUIRE(invoke({"--config", cfg, "--out", (root / "a").string(), "gen-synthetic"}).code == 0);
    REQUIRE(invoke({"--config", cfg, "--out", (root / "b").string(), "gen-synthetic"}).code == 0);
    for (auto kind : synth::kAllKinds) {
        const std::string name(synth::kind_name(kind));
        const Dataset ds = load_dataset(root / "a" / "synthetic" / name);
        CHECK(ds.size() == 20);
        CHECK(ds.role == Role::DOutVal);
        CHECK(slurp(root / "a" / "synthetic" / name / "images.oodt") ==
              slurp(root / "b" / "synthetic" / name / "images.oodt"));
    }

    Dataset rgb = load_dataset(root / "data" / "d_in_train");
    Dataset gray = rgb;
    gray.images = Tensor({rgb.size(), 1, 8, 8});
    for (std::size_t i = 0; i < rgb.size(); ++i)
        for (std::size_t p = 0; p < 64; ++p) gray.images.row(i)[p] = rgb.images.row(i)[p];
    save_dataset(gray, root / "gray");
    const auto r = invoke({"--config", cfg, "--out", (root / "g").string(), "gen-synthetic", "--source",
                        (root / "gray").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("inverted: refused") != std::string::npos);
    CHECK(r.err.find("rgb_ghosted: refused") != std::string::npos);
    for (auto kind : synth::kAllKinds) {
        const bool rgb_only = kind == synth::Kind::Inverted || kind == synth::Kind::RgbGhosted;
        CHECK(fs::exists(root / "g" / "synthetic" / std::string(synth::kind_name(kind))) == !rgb_only);
    }
}

TEST_CASE("full run, then report reproduces the table") {
    const fs::path root = make_toy("run");
    const std::string cfg = (root / "config.json").string(), out = (root / "out").string();
    const auto r = invoke({"--config", cfg, "--out", out, "run"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const std::string table = slurp(root / "out" / "eval" / "table.txt");
    CHECK(table.rfind("# protocol: zero-shot", 0) == 0);
    for (const char* m : {"MSP", "OECC", "MD", "OECC+MD", "FCGM", "OECC+FCGM"}) CHECK(table.find(m) != std::string::npos);

    const auto rep = invoke({"--out", out, "report"});
    CHECK(rep.code == 0);
    CHECK(rep.out == table);
    const auto js = invoke({"--out", out, "report", "--json"});
    CHECK(nlohmann::json::parse(js.out) == nlohmann::json::parse(slurp(root / "out" / "eval" / "table.json")));

    const auto grid = nlohmann::json::parse(std::ifstream(root / "out" / "finetune" / "grid.json"));
    CHECK(grid["grid"].size() == 2);

    // detector fits are deterministic
    const std::string md_before = slurp(root / "out" / "detectors" / "ce" / "md" / "manifest.json");
    REQUIRE(invoke({"--config", cfg, "--out", out, "fit-detector", "--detector", "md"}).code == 0);
    CHECK(slurp(root / "out" / "detectors" / "ce" / "md" / "manifest.json") == md_before);
    CHECK(harness::content_hash(root / "out" / "detectors" / "ce" / "fcgm").size() == 64);
}
