#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "cdam/cli.hpp"
#include "cdam/csv_io.hpp"
#include "cdam/vtw.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace cdam;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

// Temp dir with a tiny model (seed 0) and a 16 px noise image.
struct Workspace {
    fs::path dir;
    std::string model, image;

    explicit Workspace(const std::string& name) : dir(testing::temp_dir("cli_" + name)) {
        model = (dir / "model.vtw").string();
        image = (dir / "img.png").string();
        REQUIRE(run({"synth-model", "--out", model, "--seed", "0"}).code == kExitOk);
        REQUIRE(run({"synth-image", "--out", image, "--size", "16", "--seed", "1"}).code == kExitOk);
    }

    std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::vector<double> scores(const std::string& path) {
    return testing::vec(read_scoremap(path, 4, 4).grid);
}

double cell(const std::string& path, const std::string& column, std::size_t row = 0) {
    const CsvTable t = read_csv(path);
    return parse_number(t.rows.at(row)[t.column(column)], path, row + 2, column);
}

}  // namespace

TEST_CASE("usage errors exit 2 with help text") {
    Workspace w("usage");
    const Run r = run({"explain", "--model", w.model, "--image", w.image, "--out-csv", w.path("x.csv")});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("--concept-dir") != std::string::npos);

    CHECK(run({"explain", "--model", w.model, "--image", w.image, "--class", "0", "--concept-dir", w.dir.string(),
               "--out-csv", w.path("x.csv")})
              .code == kExitUsage);
    CHECK(run({"explain", "--model", w.model, "--image", w.image, "--class", "0", "--sigma", "0.1", "--out-csv",
               w.path("x.csv")})
              .code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("smooth with zero noise reproduces vanilla at the block input") {
    Workspace w("smooth0");
    const std::vector<std::string> base{"explain", "--model", w.model, "--image", w.image, "--class", "2"};
    auto with = [&](std::vector<std::string> extra) {
        auto a = base;
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    };
    REQUIRE(run(with({"--method", "smooth", "--sigma", "0", "--out-csv", w.path("s.csv")})).code == kExitOk);
    REQUIRE(run(with({"--method", "vanilla", "--site", "block-input", "--out-csv", w.path("v.csv")})).code == kExitOk);
    const auto s = scores(w.path("s.csv")), v = scores(w.path("v.csv"));
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - v[i]) <= 1e-9);
}

TEST_CASE("explain is deterministic, replayable and independent of --jobs") {
    Workspace w("determinism");
    const std::vector<std::string> args{"explain", "--model", w.model, "--image", w.image, "--class", "1",
                                        "--method", "smooth", "--steps", "12", "--seed", "5"};
    auto out_to = [&](const std::string& name, std::vector<std::string> extra = {}) {
        auto a = args;
        a.insert(a.end(), {"--out-csv", w.path(name), "--out-png", w.path(name + ".png")});
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    };
    REQUIRE(run(out_to("a.csv")).code == kExitOk);
    const std::string first = read_text_file(w.path("a.csv"));
    const std::string png = read_text_file(w.path("a.csv.png"));
    const std::string manifest = read_text_file(w.path("a.csv.manifest.json"));

    REQUIRE(run(out_to("a.csv")).code == kExitOk);
    CHECK(read_text_file(w.path("a.csv")) == first);
    CHECK(read_text_file(w.path("a.csv.manifest.json")) == manifest);

    fs::remove(w.path("a.csv"));
    fs::remove(w.path("a.csv.png"));
    REQUIRE(run({"replay", w.path("a.csv.manifest.json")}).code == kExitOk);
    CHECK(read_text_file(w.path("a.csv")) == first);
    CHECK(read_text_file(w.path("a.csv.png")) == png);

    REQUIRE(run(out_to("b.csv", {"--jobs", "3"})).code == kExitOk);
    CHECK(read_text_file(w.path("b.csv")) == first);

    const auto j = nlohmann::json::parse(manifest);
    CHECK(j["tool"] == "cdam");
    CHECK(j["parameters"]["seed"] == 5);
    CHECK(j["precision"] == "f32");
}

TEST_CASE("every method and site runs") {
    Workspace w("methods");
    for (const std::string method : {"vanilla", "smooth", "integrated", "attention"}) {
        std::vector<std::string> a{"explain", "--model", w.model, "--image", w.image, "--method", method,
                                   "--out-csv", w.path(method + ".csv")};
        if (method != "attention") a.insert(a.end(), {"--class", "0"});
        if (method == "smooth" || method == "integrated") a.insert(a.end(), {"--steps", "4"});
        CAPTURE(method);
        CHECK(run(a).code == kExitOk);
        CHECK(scores(w.path(method + ".csv")).size() == 16);
    }
    const Run cls = run({"explain", "--model", w.model, "--image", w.image, "--class", "0", "--print-cls",
                         "--out-csv", w.path("c.csv"), "--precision", "f64"});
    CHECK(cls.code == kExitOk);
    CHECK(cls.out.find("cls") != std::string::npos);
}

TEST_CASE("concept targets from a directory") {
    Workspace w("concept");
    const fs::path cdir = w.dir / "concept";
    fs::create_directories(cdir);
    for (int i = 0; i < 3; ++i)
        REQUIRE(run({"synth-image", "--out", (cdir / ("c" + std::to_string(i) + ".png")).string(), "--size", "16",
                     "--seed", std::to_string(10 + i)})
                    .code == kExitOk);
    REQUIRE(run({"concept", "--model", w.model, "--concept-dir", cdir.string(), "--out", w.path("lc.csv")}).code ==
            kExitOk);
    CHECK(read_csv(w.path("lc.csv")).rows.size() == 16);
    for (const std::string metric : {"dot", "cosine", "l2"}) {
        CHECK(run({"explain", "--model", w.model, "--image", w.image, "--concept-dir", cdir.string(), "--metric", metric,
                   "--n-examples", "2", "--out-csv", w.path(metric + ".csv")})
                  .code == kExitOk);
    }
    REQUIRE(run({"explain", "--model", w.model, "--image", w.image, "--concept-vector", w.path("lc.csv"),
                 "--out-csv", w.path("vec.csv")})
                .code == kExitOk);
    REQUIRE(run({"explain", "--model", w.model, "--image", w.image, "--concept-dir", cdir.string(), "--out-csv",
                 w.path("dir.csv")})
                .code == kExitOk);
    CHECK(read_text_file(w.path("vec.csv")) == read_text_file(w.path("dir.csv")));
}

TEST_CASE("eval commands") {
    Workspace w("eval");
    REQUIRE(run({"explain", "--model", w.model, "--image", w.image, "--class", "0", "--out-csv", w.path("m.csv")})
                .code == kExitOk);
    REQUIRE(run({"explain", "--model", w.model, "--image", w.image, "--class", "3", "--out-csv", w.path("w.csv")})
                .code == kExitOk);
    const std::vector<std::string> common{"--model", w.model, "--image", w.image, "--target-class", "0"};
    auto eval = [&](const std::string& sub, std::vector<std::string> extra) {
        std::vector<std::string> a{"eval", sub};
        a.insert(a.end(), common.begin(), common.end());
        a.insert(a.end(), extra.begin(), extra.end());
        return run(a);
    };

    REQUIRE(eval("fidelity", {"--map", w.path("m.csv"), "--out", w.path("fid")}).code == kExitOk);
    CHECK(cell(w.path("fid.summary.csv"), "endpoint_equal") == 1.0);
    CHECK(cell(w.path("fid.summary.csv"), "f_mif_100") == cell(w.path("fid.summary.csv"), "f_lif_100"));
    CHECK(read_csv(w.path("fid.curve.csv")).rows.size() == 51);

    REQUIRE(eval("box", {"--map", w.path("m.csv"), "--trials", "10", "--out", w.path("box")}).code == kExitOk);
    CHECK(read_csv(w.path("box.curve.csv")).rows.size() == 7);

    REQUIRE(eval("classdisc", {"--map", w.path("m.csv"), "--map-wrong", w.path("m.csv"), "--trials", "10", "--out",
                               w.path("same")})
                .code == kExitOk);
    CHECK(cell(w.path("same.summary.csv"), "delta_lif_mif") == 0.0);
    CHECK(cell(w.path("same.summary.csv"), "delta_box") == 0.0);

    REQUIRE(eval("classdisc", {"--map", w.path("m.csv"), "--map-wrong", w.path("w.csv"), "--trials", "10", "--jobs",
                               "2", "--out", w.path("diff")})
                .code == kExitOk);

    REQUIRE(run({"eval", "compact", "--model", w.model, "--map", w.path("m.csv"), "--out", w.path("cmp")}).code ==
            kExitOk);
    const double frac = cell(w.path("cmp.summary.csv"), "compactness");
    CHECK(frac >= 0.0);
    CHECK(frac <= 1.0);

    // Aggregating a single file reproduces its values.
    REQUIRE(run({"aggregate", w.path("fid.curve.csv"), "--out", w.path("agg.csv")}).code == kExitOk);
    const CsvTable orig = read_csv(w.path("fid.curve.csv")), agg = read_csv(w.path("agg.csv"));
    REQUIRE(agg.rows.size() == orig.rows.size());
    for (std::size_t r = 0; r < orig.rows.size(); ++r)
        for (const std::string col : {"percent", "mif", "lif"})
            CHECK(agg.rows[r][agg.column(col)] == orig.rows[r][orig.column(col)]);
    REQUIRE(run({"aggregate", w.path("fid.summary.csv"), "--out", w.path("aggs.csv")}).code == kExitOk);
    CHECK(cell(w.path("aggs.csv"), "a_lif_mif") == cell(w.path("fid.summary.csv"), "a_lif_mif"));
    CHECK(cell(w.path("aggs.csv"), "count") == 1.0);

    REQUIRE(run({"aggregate", w.path("fid.summary.csv"), w.path("fid.summary.csv"), "--out", w.path("agg2.csv")})
                .code == kExitOk);
    CHECK(cell(w.path("agg2.csv"), "count") == 2.0);

    CHECK(eval("fidelity", {"--map", w.path("m.csv"), "--grid", "0,60,50,100", "--out", w.path("bad")}).code ==
          kExitUsage);
    CHECK(eval("box", {"--map", w.path("m.csv"), "--sizes", "4,32", "--out", w.path("bad")}).code == kExitUsage);
    write_text_file(w.path("short.csv"), "row,col,score\n0,0,1\n");
    CHECK(eval("fidelity", {"--map", w.path("short.csv"), "--out", w.path("bad")}).code == kExitIo);
}

TEST_CASE("render") {
    Workspace w("render");
    REQUIRE(run({"explain", "--model", w.model, "--image", w.image, "--class", "0", "--out-csv", w.path("m.csv")})
                .code == kExitOk);
    REQUIRE(run({"render", "--map", w.path("m.csv"), "--model", w.model, "--out", w.path("a.png")}).code == kExitOk);
    REQUIRE(run({"render", "--map", w.path("m.csv"), "--grid", "4", "--size", "16", "--out", w.path("b.png")}).code ==
            kExitOk);
    CHECK(read_text_file(w.path("a.png")) == read_text_file(w.path("b.png")));
    CHECK(run({"render", "--map", w.path("m.csv"), "--out", w.path("c.png")}).code == kExitUsage);
}

TEST_CASE("verify") {
    Workspace w("verify");
    const Run r = run({"verify", "--model", w.model});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("FAIL") == std::string::npos);

    auto bytes = read_file_bytes(w.model);
    bytes[0] = 'X';
    write_file_bytes(w.path("corrupt.vtw"), bytes);
    CHECK(run({"verify", "--model", w.path("corrupt.vtw")}).code == kExitModel);

    bytes = read_file_bytes(w.model);
    write_file_bytes(w.path("short.vtw"), {bytes.begin(), bytes.end() - 100});
    CHECK(run({"verify", "--model", w.path("short.vtw")}).code == kExitModel);

    write_file_bytes(w.path("nan.vtw"), testing::weights_with_nan(load_weights(w.model), 1));
    CHECK(run({"explain", "--model", w.path("nan.vtw"), "--image", w.image, "--class", "0", "--out-csv",
               w.path("n.csv")})
              .code == kExitNumeric);

    CHECK(run({"verify", "--model", w.path("absent.vtw")}).code == kExitIo);
}

TEST_CASE("headless models reject class targets") {
    Workspace w("headless");
    const std::string headless = w.path("headless.vtw");
    REQUIRE(run({"synth-model", "--out", headless, "--classes", "0"}).code == kExitOk);
    CHECK(run({"explain", "--model", headless, "--image", w.image, "--class", "0", "--out-csv", w.path("h.csv")})
              .code == kExitModel);
}
