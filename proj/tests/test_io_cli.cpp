#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rdet/checkpoint.hpp"
#include "rdet/cli.hpp"
#include "rdet/io.hpp"
#include "rdet/model.hpp"
#include "rdet/train.hpp"

using namespace rdet;
namespace fs = std::filesystem;

#ifndef RDET_SOURCE_DIR
#define RDET_SOURCE_DIR "."
#endif

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("rdet_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    os << content;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

const std::string kFixtures = std::string(RDET_SOURCE_DIR) + "/tests/fixtures";

}  // namespace

TEST_CASE("scene file round-trip preserves records") {
    TempDir tmp("scene_roundtrip");
    const std::string p1 = tmp.file("a.txt");
    write_file(p1,
               "100.5 200 300 200 300 250.25 100.5 250.25 plane 0\n"
               "10 10 20 10 20 15 10 15 ship 1\n");
    const auto d1 = io::read_scene_file(p1);
    REQUIRE(d1.records.size() == 2);
    CHECK(d1.id == "a");
    CHECK(d1.records[0].category == "plane");
    CHECK(d1.records[1].difficult);
    const std::string p2 = tmp.file("b.txt");
    io::write_scene_file(p2, d1);
    const auto d2 = io::read_scene_file(p2);
    REQUIRE(d2.records.size() == 2);
    for (int i = 0; i < 2; ++i) {
        CHECK(d2.records[i].corners == d1.records[i].corners);
        CHECK(d2.records[i].category == d1.records[i].category);
        CHECK(d2.records[i].difficult == d1.records[i].difficult);
    }
    // and a second cycle is byte-stable
    const std::string p3 = tmp.file("c.txt");
    io::write_scene_file(p3, d2);
    CHECK(read_file(p2) == read_file(p3));
}

TEST_CASE("scene parser skips DOTA headers and reports file/line/field") {
    TempDir tmp("scene_errors");
    const std::string p = tmp.file("gt.txt");
    write_file(p,
               "imagesource:GoogleEarth\n"
               "gsd:0.146\n"
               "0 0 1 0 1 1 0 1 car 0\n");
    CHECK(io::read_scene_file(p).records.size() == 1);

    write_file(p, "0 0 1 0 1 1 0 1 car\n");
    try {
        io::read_scene_file(p);
        FAIL("expected ParseError");
    } catch (const io::ParseError& e) {
        CHECK(e.line() == 1);
        CHECK(std::string(e.what()).find("expected 10 fields") != std::string::npos);
    }

    write_file(p, "0 0 1 zap 1 1 0 1 car 0\n");
    try {
        io::read_scene_file(p);
        FAIL("expected ParseError");
    } catch (const io::ParseError& e) {
        CHECK(e.field() == "y2");
    }

    write_file(p, "0 0 1 0 1 1 0 1 car 7\n");
    CHECK_THROWS_AS((void)io::read_scene_file(p), io::ParseError);
}

TEST_CASE("prediction records parse in box and point forms") {
    TempDir tmp("pred_parse");
    const std::string p = tmp.file("pred.txt");
    write_file(p,
               "s0 car 0.9 10 10 4 2 0.3\n"
               "s1 ship 0.5 1 1 2 1 0.1\n");
    const auto boxes = io::read_predictions(p);
    REQUIRE(boxes.size() == 2);
    CHECK(boxes[0].is_box);
    CHECK(boxes[0].box.w == 4.0);

    write_file(p,
               "s0 car 0.9 0 0 1 0 1 1 0 1\n"
               "s0 car 0.8 2 2 3 2 3 3 2 3\n");
    const auto pts = io::read_predictions(p);
    REQUIRE(pts.size() == 2);
    CHECK(!pts[0].is_box);
    CHECK(pts[0].points.size() == 4);

    SUBCASE("inconsistent K fails") {
        write_file(p,
                   "s0 car 0.9 0 0 1 0 1 1 0 1\n"
                   "s0 car 0.8 0 0 1 0 1 1\n");
        CHECK_THROWS_AS((void)io::read_predictions(p), io::ParseError);
    }
    SUBCASE("score outside [0,1] fails") {
        write_file(p, "s0 car 1.5 0 0 1 0 1 1 0 1\n");
        CHECK_THROWS_AS((void)io::read_predictions(p), io::ParseError);
    }
}

TEST_CASE("cmd_synth is reproducible byte-for-byte and parses back") {
    TempDir tmp("synth");
    const auto r1 = run_cli({"synth", tmp.file("a"), "--seed", "9", "--scenes", "5"});
    const auto r2 = run_cli({"synth", tmp.file("b"), "--seed", "9", "--scenes", "5"});
    CHECK(r1.code == 0);
    CHECK(r2.code == 0);
    int files = 0;
    for (const auto& e : fs::directory_iterator(tmp.file("a"))) {
        const auto name = e.path().filename().string();
        CHECK(read_file(tmp.file("a") + "/" + name) == read_file(tmp.file("b") + "/" + name));
        ++files;
    }
    CHECK(files == 6);  // 5 scenes + dataset.json

    const auto scenes = io::read_scene_inputs(tmp.file("a"));
    CHECK(scenes.size() == 5);
    for (const auto& s : scenes) {
        CHECK(s.records.size() >= 1);
        CHECK(s.records.size() <= 8);
    }
    const auto meta = io::read_dataset_meta(tmp.file("a"), {});
    CHECK(meta.size == 256.0);
    CHECK(meta.classes == std::vector<std::string>{"c0", "c1", "c2"});
}

TEST_CASE("cmd_hull matches the committed brute-force fixture byte-for-byte") {
    const auto r = run_cli({"hull", kFixtures + "/hull50_input.txt"});
    CHECK(r.code == 0);
    CHECK(r.out == read_file(kFixtures + "/hull50_expected.txt"));
}

TEST_CASE("cmd_giou and cmd_minrect fixtures") {
    TempDir tmp("gm");
    write_file(tmp.file("sq.txt"), "0 0\n1 0\n1 1\n0 1\n");
    SUBCASE("identical squares print zero loss") {
        const auto r = run_cli({"giou", tmp.file("sq.txt"), tmp.file("sq.txt")});
        CHECK(r.code == 0);
        CHECK(r.out.substr(0, 2) == "0\n");
        CHECK(r.out.find("iou 1") != std::string::npos);
    }
    SUBCASE("minrect prints the unit square") {
        const auto r = run_cli({"minrect", tmp.file("sq.txt")});
        CHECK(r.code == 0);
        CHECK(r.out == "0.5 0.5 1 1 -1.5707963267948966\n");
    }
}

TEST_CASE("cmd_schedule prints the evaluated counts") {
    const auto r = run_cli({"schedule", "300", "100", "0.5", "6"});
    CHECK(r.code == 0);
    CHECK(r.out == "300 200 150 125 113 106\n");
    const auto flat = run_cli({"schedule", "50", "50", "0.5", "3"});
    CHECK(flat.out == "50 50 50\n");
}

TEST_CASE("cmd_match reports pairs, labels, and the loss breakdown") {
    TempDir tmp("match");
    // ground truth: [1,3]^2 as corner quad, class car
    write_file(tmp.file("gt.txt"), "1 1 3 1 3 3 1 3 car 0\n");
    // prediction: [0,2]^2 (convex-hull IoU 1/7 with the target)
    write_file(tmp.file("pred.txt"), "s car 0.9 0 0 2 0 2 2 0 2\n");
    const auto r = run_cli({"match", tmp.file("pred.txt"), tmp.file("gt.txt"), "--tau", "0.5"});
    CHECK(r.code == 0);
    CHECK(r.out.find("pair query=0 target=0") != std::string::npos);
    CHECK(r.out.find("iou=0.14285714285714285") != std::string::npos);
    CHECK(r.out.find("label=background") != std::string::npos);  // 1/7 < tau
    CHECK(r.out.find("n_pos 1") != std::string::npos);

    SUBCASE("lower tau keeps the label") {
        const auto keep =
            run_cli({"match", tmp.file("pred.txt"), tmp.file("gt.txt"), "--tau", "0.1"});
        CHECK(keep.out.find("label=car") != std::string::npos);
    }
    SUBCASE("empty ground truth: all background, zero regression losses") {
        write_file(tmp.file("empty.txt"), "");
        const auto r2 = run_cli({"match", tmp.file("pred.txt"), tmp.file("empty.txt")});
        CHECK(r2.code == 0);
        CHECK(r2.out.find("n_pos 0") != std::string::npos);
        CHECK(r2.out.find("loss_l1 0\n") != std::string::npos);
        CHECK(r2.out.find("loss_iou 0\n") != std::string::npos);
    }
}

TEST_CASE("cmd_cdf emits a plot-ready table") {
    TempDir tmp("cdf");
    write_file(tmp.file("gt.txt"),
               "0 0 1 0 1 1 0 1 car 0\n"
               "5 0 6 0 6 1 5 1 car 0\n");
    write_file(tmp.file("pred.txt"),
               "s car 0.9 0 0 1 0 1 1 0 1\n"
               "s car 0.8 5.5 0 6.5 0 6.5 1 5.5 1\n");
    const auto r = run_cli({"cdf", tmp.file("pred.txt"), tmp.file("gt.txt")});
    CHECK(r.code == 0);
    std::istringstream lines(r.out);
    double iou, frac;
    REQUIRE((lines >> iou >> frac));
    CHECK(iou == doctest::Approx(1.0 / 3.0).epsilon(1e-9));  // shifted square
    CHECK(frac == 0.5);
    REQUIRE((lines >> iou >> frac));
    CHECK(iou == 1.0);
    CHECK(frac == 1.0);
}

TEST_CASE("cmd_eval on perfect predictions prints mAP 1") {
    TempDir tmp("eval");
    write_file(tmp.file("gt.txt"),
               "0 0 10 0 10 4 0 4 car 0\n"
               "20 20 30 20 30 24 20 24 ship 0\n");
    write_file(tmp.file("pred.txt"),
               "gt car 0.9 5 2 10 4 0\n"
               "gt ship 0.8 25 22 10 4 0\n");
    const auto r = run_cli({"eval", tmp.file("pred.txt"), tmp.file("gt.txt")});
    CHECK(r.code == 0);
    CHECK(r.out.find("AP car 1\n") != std::string::npos);
    CHECK(r.out.find("AP ship 1\n") != std::string::npos);
    CHECK(r.out.find("mAP 1\n") != std::string::npos);
}

TEST_CASE("exit codes distinguish usage, parse, and domain errors") {
    TempDir tmp("codes");
    CHECK(run_cli({"no-such-command"}).code == 2);
    CHECK(run_cli({"schedule", "300"}).code == 2);

    write_file(tmp.file("bad.txt"), "0 0 1\n");  // odd coordinate count
    CHECK(run_cli({"hull", tmp.file("bad.txt")}).code == 3);
    CHECK(run_cli({"hull", tmp.file("missing.txt")}).code == 3);

    // domain error: schedule with rho >= 1
    CHECK(run_cli({"schedule", "300", "100", "1.5", "6"}).code == 4);

    const auto help = run_cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("hull") != std::string::npos);
}

TEST_CASE("checkpoint round-trips parameters and predictions") {
    TempDir tmp("ckpt");
    model::DecoderConfig cfg;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.classes = 2;
    cfg.ffn = 32;
    cfg.grid = 4;
    cfg.n_queries = 6;
    model::Decoder dec(cfg, 31);
    const std::string path = tmp.file("m.ckpt");
    model::save_checkpoint(path, dec);
    const model::Decoder loaded = model::load_checkpoint(path);
    REQUIRE(loaded.params().size() == dec.params().size());
    for (size_t i = 0; i < dec.params().size(); ++i) {
        CHECK(loaded.params().names[i] == dec.params().names[i]);
        CHECK(loaded.params().values[i].d == dec.params().values[i].d);  // bitwise
    }
    CHECK_THROWS(model::load_checkpoint(tmp.file("nope.ckpt")));
}

TEST_CASE("cmd_train with zero steps writes the initialization checkpoint") {
    TempDir tmp("train0");
    run_cli({"synth", tmp.file("data"), "--seed", "3", "--scenes", "3", "--classes", "2"});
    const std::string cfg_json = std::string("{\n") +
                                 "  \"data_dir\": \"" + tmp.file("data") + "\",\n" +
                                 "  \"seed\": 5,\n" +
                                 "  \"model\": {\"d\": 16, \"heads\": 2, \"layers\": 2, " +
                                 "\"ffn\": 32, \"grid\": 4},\n" +
                                 "  \"schedule\": {\"n_first\": 6, \"n_last\": 3, \"rho\": 0.5},\n" +
                                 "  \"train\": {\"steps\": 0, \"batch\": 2},\n" +
                                 "  \"checkpoint\": \"" + tmp.file("m.ckpt") + "\",\n" +
                                 "  \"log\": \"" + tmp.file("log.jsonl") + "\"\n}\n";
    write_file(tmp.file("cfg.json"), cfg_json);
    const auto r = run_cli({"train", tmp.file("cfg.json")});
    CHECK(r.code == 0);

    model::DecoderConfig cfg;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.classes = 2;
    cfg.ffn = 32;
    cfg.grid = 4;
    cfg.n_queries = 6;
    const model::Decoder fresh(cfg, 5);
    const model::Decoder loaded = model::load_checkpoint(tmp.file("m.ckpt"));
    for (size_t i = 0; i < fresh.params().size(); ++i)
        CHECK(loaded.params().values[i].d == fresh.params().values[i].d);
}

TEST_CASE("train/predict/eval pipeline runs end to end") {
    TempDir tmp("pipeline");
    run_cli({"synth", tmp.file("data"), "--seed", "4", "--scenes", "4", "--classes", "2",
             "--max-objects", "3"});
    const std::string cfg_json = std::string("{\n") +
                                 "  \"data_dir\": \"" + tmp.file("data") + "\",\n" +
                                 "  \"seed\": 6,\n" +
                                 "  \"model\": {\"d\": 16, \"heads\": 2, \"layers\": 2, " +
                                 "\"ffn\": 32, \"grid\": 4},\n" +
                                 "  \"schedule\": {\"n_first\": 8, \"n_last\": 4, \"rho\": 0.5},\n" +
                                 "  \"train\": {\"steps\": 5, \"batch\": 2, \"log_every\": 2},\n" +
                                 "  \"checkpoint\": \"" + tmp.file("m.ckpt") + "\",\n" +
                                 "  \"log\": \"" + tmp.file("log.jsonl") + "\"\n}\n";
    write_file(tmp.file("cfg.json"), cfg_json);
    const auto tr = run_cli({"train", tmp.file("cfg.json")});
    CHECK(tr.code == 0);
    CHECK(tr.out.find("final_total") != std::string::npos);
    CHECK(fs::exists(tmp.file("log.jsonl")));

    const auto pr = run_cli({"predict", tmp.file("m.ckpt"), tmp.file("data"), "-o",
                             tmp.file("preds.txt"), "--n-last", "4", "--rho", "0.5"});
    CHECK(pr.code == 0);
    CHECK(fs::exists(tmp.file("preds.txt")));

    const auto ev = run_cli({"eval", tmp.file("preds.txt"), tmp.file("data")});
    CHECK(ev.code == 0);
    CHECK(ev.out.find("mAP") != std::string::npos);
}
