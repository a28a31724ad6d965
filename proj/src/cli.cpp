#include "rdet/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rdet/checkpoint.hpp"
#include "rdet/io.hpp"
#include "rdet/matching.hpp"
#include "rdet/model.hpp"
#include "rdet/train.hpp"

namespace fs = std::filesystem;

namespace rdet::cli {

namespace {

std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

// Point list file: whitespace-separated x y pairs, any line structure.
geom::PointSet read_point_list(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io::ParseError(path, 0, "-", "cannot open file");
    std::vector<double> vals;
    double v;
    while (is >> v) vals.push_back(v);
    if (!is.eof()) throw io::ParseError(path, 0, "coordinate", "not a number");
    if (vals.empty() || vals.size() % 2 != 0)
        throw io::ParseError(path, 0, "coordinate", "expected an even number of coordinates");
    geom::PointSet ps;
    for (size_t i = 0; i + 1 < vals.size(); i += 2)
        ps.push_back(geom::Point2{vals[i], vals[i + 1]});
    if (!geom::all_finite(ps)) throw io::ParseError(path, 0, "coordinate", "non-finite value");
    return ps;
}

void cmd_hull(const std::string& file, std::ostream& out) {
    const auto hull = geom::convex_hull(read_point_list(file));
    for (const auto& p : hull.verts) out << fmt(p.x) << ' ' << fmt(p.y) << '\n';
}

void cmd_giou(const std::string& fa, const std::string& fb, std::ostream& out) {
    const geom::PointSet a = read_point_list(fa), b = read_point_list(fb);
    const auto ha = geom::convex_hull(a), hb = geom::convex_hull(b);
    const double inter = geom::polygon_area(geom::convex_intersection(ha, hb));
    const double uni = geom::polygon_area(ha) + geom::polygon_area(hb) - inter;
    const double enc = geom::polygon_area(geom::enclosing_hull(ha, hb));
    out << fmt(loss::giou_loss(a, b)) << '\n';
    out << "iou " << fmt(geom::convex_hull_iou(ha, hb)) << '\n';
    out << "intersection_area " << fmt(inter) << '\n';
    out << "union_area " << fmt(uni) << '\n';
    out << "enclosing_area " << fmt(enc) << '\n';
}

void cmd_minrect(const std::string& file, std::ostream& out) {
    const auto b = geom::min_area_rect(read_point_list(file));
    out << fmt(b.cx) << ' ' << fmt(b.cy) << ' ' << fmt(b.w) << ' ' << fmt(b.h) << ' '
        << fmt(b.theta) << '\n';
}

void cmd_schedule(int n_first, int n_last, double rho, int layers, std::ostream& out) {
    model::QuerySchedule s;
    s.n_first = n_first;
    s.n_last = n_last;
    s.rho = rho;
    s.layers = layers;
    const auto counts = model::schedule_counts(s);
    for (size_t i = 0; i < counts.size(); ++i) out << (i ? " " : "") << counts[i];
    out << '\n';
}

struct MatchInputs {
    std::vector<loss::ClassLogits> logits;
    std::vector<geom::PointSet> points;
    std::vector<loss::Target> targets;
    io::ClassMap classes;
    std::vector<io::PredRecord> preds;
};

// Queries from a prediction file against the ground truths of one scene
// file. Class scores become one-vs-all logits on the ground-truth class set.
MatchInputs load_match_inputs(const std::string& pred_file, const std::string& gt_file) {
    MatchInputs in;
    const auto gt = io::read_scene_file(gt_file);
    in.classes = io::ClassMap::from_scenes({gt});
    for (const auto& r : gt.records) {
        geom::PointSet corners;
        for (int i = 0; i < 4; ++i)
            corners.push_back(geom::Point2{r.corners[2 * i], r.corners[2 * i + 1]});
        in.targets.push_back(loss::Target{in.classes.id(r.category), geom::min_area_rect(corners)});
    }
    in.preds = io::read_predictions(pred_file);
    const int c = std::max<int>(1, static_cast<int>(in.classes.names.size()));
    for (const auto& p : in.preds) {
        const double prob = std::clamp(p.score, 1e-6, 1.0 - 1e-6);
        const double logit = std::log(prob / (1.0 - prob));
        loss::ClassLogits lg(c, -30.0);
        const int id = in.classes.id(p.category);
        if (id >= 0) lg[id] = logit;
        in.logits.push_back(std::move(lg));
        in.points.push_back(p.is_box ? geom::box_to_corners(p.box) : p.points);
    }
    return in;
}

void cmd_match(const std::string& pred_file, const std::string& gt_file, double tau,
               const loss::LossWeights& w, double diag, std::ostream& out) {
    MatchInputs in = load_match_inputs(pred_file, gt_file);
    match::MatchConfig mcfg;
    mcfg.tau = tau;
    mcfg.weights = w;
    mcfg.diag = diag;

    std::vector<std::pair<int, int>> pairs;
    std::vector<loss::Label> labels(in.points.size(), std::nullopt);
    if (!in.targets.empty()) {
        const auto cost = match::matching_cost(in.logits, in.points, in.targets, w, diag);
        pairs = match::hungarian(cost);
        labels = match::reassign_labels(in.points, pairs, in.targets, mcfg).labels;
    }
    for (const auto& [qi, tj] : pairs) {
        const double iou = geom::convex_hull_iou(in.points[qi],
                                                 geom::box_to_corners(in.targets[tj].box));
        out << "pair query=" << qi << " target=" << tj << " iou=" << fmt(iou) << " label="
            << (labels[qi] ? in.classes.names[*labels[qi]] : std::string("background")) << '\n';
    }
    const auto b = loss::total_loss(in.logits, in.points, pairs, labels, in.targets, w, diag);
    out << "n_pos " << b.n_pos << '\n';
    out << "loss_cls " << fmt(b.cls) << '\n';
    out << "loss_l1 " << fmt(b.l1) << '\n';
    out << "loss_iou " << fmt(b.iou) << '\n';
    out << "loss_total " << fmt(b.total) << '\n';
}

void cmd_cdf(const std::string& pred_file, const std::string& gt_file,
             const loss::LossWeights& w, double diag, std::ostream& out) {
    MatchInputs in = load_match_inputs(pred_file, gt_file);
    if (in.targets.empty()) return;
    const auto cost = match::matching_cost(in.logits, in.points, in.targets, w, diag);
    const auto pairs = match::hungarian(cost);
    for (const auto& [iou, frac] : match::iou_cdf(in.points, pairs, in.targets))
        out << fmt(iou) << ' ' << fmt(frac) << '\n';
}

void cmd_synth(const std::string& out_dir, const synth::SynthConfig& cfg, std::ostream& out) {
    fs::create_directories(out_dir);
    const auto scenes = synth::generate_scenes(cfg);
    for (const auto& scene : scenes) {
        io::SceneFileData data;
        data.id = scene.id;
        for (const auto& obj : scene.objects) {
            io::SceneRecord rec;
            const auto corners = geom::box_to_corners(obj.box);
            for (int i = 0; i < 4; ++i) {
                rec.corners[2 * i] = corners[i].x;
                rec.corners[2 * i + 1] = corners[i].y;
            }
            rec.category = "c" + std::to_string(obj.cls);
            rec.difficult = obj.difficult;
            data.records.push_back(std::move(rec));
        }
        io::write_scene_file((fs::path(out_dir) / (scene.id + ".txt")).string(), data);
    }
    io::DatasetMeta meta;
    meta.size = cfg.size;
    for (int c = 0; c < cfg.classes; ++c) meta.classes.push_back("c" + std::to_string(c));
    io::write_dataset_meta(out_dir, meta);
    out << "wrote " << scenes.size() << " scenes to " << out_dir << '\n';
}

std::vector<synth::Scene> load_scene_dir(const std::string& dir, io::ClassMap& classes,
                                         double& size) {
    const auto files = io::read_scene_inputs(dir);
    io::DatasetMeta fallback;
    fallback.size = size;
    const auto meta = io::read_dataset_meta(fs::is_directory(dir) ? dir : ".", fallback);
    size = meta.size;
    if (!meta.classes.empty()) {
        classes.names = meta.classes;
    } else {
        classes = io::ClassMap::from_scenes(files);
    }
    std::vector<synth::Scene> scenes;
    scenes.reserve(files.size());
    for (const auto& f : files) scenes.push_back(io::to_scene(f, classes, size));
    return scenes;
}

void cmd_train(const std::string& config_path, std::ostream& out) {
    std::ifstream is(config_path);
    if (!is) throw io::ParseError(config_path, 0, "-", "cannot open config");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io::ParseError(config_path, 0, "json", e.what());
    }

    const std::string data_dir = j.at("data_dir");
    io::ClassMap classes;
    double size = 256.0;
    auto scenes = load_scene_dir(data_dir, classes, size);
    if (scenes.empty()) throw std::invalid_argument("train: no scenes in " + data_dir);

    model::DecoderConfig mc;
    const auto jm = j.value("model", nlohmann::json::object());
    mc.d = jm.value("d", 64);
    mc.heads = jm.value("heads", 4);
    mc.layers = jm.value("layers", 4);
    mc.k_points = jm.value("k_points", 9);
    mc.ffn = jm.value("ffn", 2 * mc.d);
    mc.grid = jm.value("grid", 12);
    mc.classes = static_cast<int>(classes.names.size());

    model::QuerySchedule sched;
    const auto js = j.value("schedule", nlohmann::json::object());
    sched.n_first = js.value("n_first", 60);
    sched.n_last = js.value("n_last", 20);
    sched.rho = js.value("rho", 0.6);
    sched.layers = mc.layers;
    mc.n_queries = sched.n_first;

    loss::LossWeights w;
    const auto jw = j.value("weights", nlohmann::json::object());
    w.lambda_cls = jw.value("lambda_cls", w.lambda_cls);
    w.lambda_l1 = jw.value("lambda_l1", w.lambda_l1);
    w.lambda_iou = jw.value("lambda_iou", w.lambda_iou);
    w.focal_alpha = jw.value("focal_alpha", w.focal_alpha);
    w.focal_gamma = jw.value("focal_gamma", w.focal_gamma);

    match::MatchConfig mcfg;
    mcfg.tau = j.value("tau", 0.5);
    mcfg.weights = w;

    model::TrainConfig tc;
    const auto jt = j.value("train", nlohmann::json::object());
    tc.steps = jt.value("steps", 2000);
    tc.batch = jt.value("batch", 4);
    tc.lr = jt.value("lr", 2e-4);
    tc.weight_decay = jt.value("weight_decay", 1e-4);
    tc.grad_clip = jt.value("grad_clip", 1.0);
    tc.reassign = jt.value("reassign", true);
    tc.reassign_per_layer = jt.value("reassign_per_layer", true);
    tc.log_every = jt.value("log_every", 20);
    tc.lr_drop_frac = jt.value("lr_drop_frac", 0.8);
    tc.seed = j.value("seed", 1);

    const double val_fraction = j.value("val_fraction", 0.0);
    std::vector<synth::Scene> val_scenes;
    if (val_fraction > 0.0) {
        const size_t n_val = static_cast<size_t>(val_fraction * scenes.size());
        val_scenes.assign(scenes.end() - n_val, scenes.end());
        scenes.resize(scenes.size() - n_val);
    }

    model::Decoder dec(mc, j.value("init_seed", tc.seed));
    const auto result = model::train_toy(dec, scenes, sched, w, mcfg, tc);

    const std::string log_path = j.value("log", std::string("train_log.jsonl"));
    {
        std::ofstream lo(log_path);
        for (const auto& rec : result.log) {
            nlohmann::json lj{{"step", rec.step},   {"cls", rec.cls},
                              {"l1", rec.l1},       {"iou", rec.iou},
                              {"total", rec.total}, {"query_counts", rec.query_counts}};
            lo << lj.dump() << '\n';
        }
    }
    const std::string ckpt = j.value("checkpoint", std::string("model.ckpt"));
    model::save_checkpoint(ckpt, dec);
    out << "final_total " << fmt(result.final_total) << '\n';
    out << "checkpoint " << ckpt << '\n';
    out << "log " << log_path << '\n';
    if (!val_scenes.empty()) {
        out << "val_map " << fmt(model::evaluate_scenes(dec, val_scenes, sched, 0.5)) << '\n';
    }
}

void cmd_predict(const std::string& ckpt, const std::string& scene_path,
                 const std::string& out_file, double score_thresh, int n_last, double rho,
                 std::ostream& out) {
    const model::Decoder dec = model::load_checkpoint(ckpt);
    io::ClassMap classes;
    double size = 256.0;
    const auto scenes = load_scene_dir(scene_path, classes, size);
    model::QuerySchedule sched;
    sched.n_first = dec.config().n_queries;
    sched.n_last = n_last > 0 ? n_last : dec.config().n_queries;
    sched.rho = rho;
    sched.layers = dec.config().layers;

    std::vector<io::PredRecord> records;
    for (const auto& scene : scenes) {
        for (const auto& d : model::predict(dec, scene, sched, score_thresh)) {
            io::PredRecord r;
            r.scene = d.scene;
            r.category = d.cls < static_cast<int>(classes.names.size())
                             ? classes.names[d.cls]
                             : "c" + std::to_string(d.cls);
            r.score = d.score;
            r.is_box = true;
            r.box = d.box;
            records.push_back(std::move(r));
        }
    }
    io::write_predictions(out_file, records);
    out << "wrote " << records.size() << " detections to " << out_file << '\n';
}

void cmd_eval(const std::string& pred_file, const std::string& gt_path, double thresh,
              std::ostream& out) {
    const auto gt_files = io::read_scene_inputs(gt_path);
    io::ClassMap classes = io::ClassMap::from_scenes(gt_files);
    const auto gts = io::to_ground_truth(gt_files, classes);
    const auto preds = io::read_predictions(pred_file);
    const auto dets = io::to_detections(preds, classes);
    const auto result = eval::evaluate(dets, gts, thresh);
    for (const auto& c : result.per_class)
        out << "AP " << classes.names[c.cls] << ' ' << fmt(c.ap) << '\n';
    out << "mAP " << fmt(result.map) << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"rdet: oriented object detection toolkit"};
    app.require_subcommand(1);

    std::string file_a, file_b, out_file = "predictions.txt", config_path, ckpt_path;
    double tau = 0.5, diag = 1.0, thresh = 0.5, score_thresh = 0.0;
    loss::LossWeights weights;
    int n_first = 300, n_last = 100, layers = 6;
    double rho = 0.5;
    synth::SynthConfig synth_cfg;
    std::string synth_dir;
    int predict_n_last = 0;
    double predict_rho = 0.6;

    auto* hull = app.add_subcommand("hull", "Convex hull of a point list (x y pairs)");
    hull->add_option("points", file_a, "point list file")->required();

    auto* giou = app.add_subcommand("giou", "Convex-hull GIoU loss between two point lists");
    giou->add_option("a", file_a, "first point list")->required();
    giou->add_option("b", file_b, "second point list")->required();

    auto* minrect = app.add_subcommand("minrect", "Minimum-area enclosing rotated box");
    minrect->add_option("points", file_a, "point list file")->required();

    auto* sched = app.add_subcommand("schedule", "Per-layer dynamic query counts");
    sched->add_option("n_first", n_first)->required();
    sched->add_option("n_last", n_last)->required();
    sched->add_option("rho", rho)->required();
    sched->add_option("layers", layers)->required();

    auto* match_cmd = app.add_subcommand("match", "Match predictions to ground truth");
    match_cmd->add_option("pred", file_a, "prediction file")->required();
    match_cmd->add_option("gt", file_b, "scene annotation file")->required();
    match_cmd->add_option("--tau", tau, "re-assignment IoU threshold");
    match_cmd->add_option("--diag", diag, "image diagonal for the L1 term");
    match_cmd->add_option("--lambda-cls", weights.lambda_cls);
    match_cmd->add_option("--lambda-l1", weights.lambda_l1);
    match_cmd->add_option("--lambda-iou", weights.lambda_iou);

    auto* cdf = app.add_subcommand("cdf", "Convex-hull IoU CDF over matched pairs");
    cdf->add_option("pred", file_a, "prediction file")->required();
    cdf->add_option("gt", file_b, "scene annotation file")->required();
    cdf->add_option("--diag", diag);

    auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic scenes");
    synth_cmd->add_option("out_dir", synth_dir, "output directory")->required();
    synth_cmd->add_option("--seed", synth_cfg.seed);
    synth_cmd->add_option("--scenes", synth_cfg.scenes);
    synth_cmd->add_option("--min-objects", synth_cfg.min_objects);
    synth_cmd->add_option("--max-objects", synth_cfg.max_objects);
    synth_cmd->add_option("--size", synth_cfg.size);
    synth_cmd->add_option("--classes", synth_cfg.classes);

    auto* train = app.add_subcommand("train", "Train the toy detector from a JSON config");
    train->add_option("config", config_path, "JSON config file")->required();

    auto* predict = app.add_subcommand("predict", "Run a checkpoint over scenes");
    predict->add_option("checkpoint", ckpt_path)->required();
    predict->add_option("scenes", file_a, "scene file or directory")->required();
    predict->add_option("-o,--out", out_file, "output prediction file");
    predict->add_option("--score-thresh", score_thresh);
    predict->add_option("--n-last", predict_n_last, "schedule n_last (0: no pruning)");
    predict->add_option("--rho", predict_rho, "schedule rho");

    auto* eval_cmd = app.add_subcommand("eval", "Per-class AP and mAP");
    eval_cmd->add_option("pred", file_a, "prediction file")->required();
    eval_cmd->add_option("gt", file_b, "scene file or directory")->required();
    eval_cmd->add_option("--thresh", thresh, "IoU threshold");

    std::vector<const char*> argv;
    argv.push_back("rdet");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (hull->parsed()) cmd_hull(file_a, out);
        else if (giou->parsed()) cmd_giou(file_a, file_b, out);
        else if (minrect->parsed()) cmd_minrect(file_a, out);
        else if (sched->parsed()) cmd_schedule(n_first, n_last, rho, layers, out);
        else if (match_cmd->parsed()) cmd_match(file_a, file_b, tau, weights, diag, out);
        else if (cdf->parsed()) cmd_cdf(file_a, file_b, weights, diag, out);
        else if (synth_cmd->parsed()) cmd_synth(synth_dir, synth_cfg, out);
        else if (train->parsed()) cmd_train(config_path, out);
        else if (predict->parsed())
            cmd_predict(ckpt_path, file_a, out_file, score_thresh, predict_n_last, predict_rho,
                        out);
        else if (eval_cmd->parsed()) cmd_eval(file_a, file_b, thresh, out);
    } catch (const io::ParseError& e) {
        err << "parse error: " << e.what() << '\n';
        return 3;
    } catch (const std::invalid_argument& e) {
        err << "domain error: " << e.what() << '\n';
        return 4;
    } catch (const std::out_of_range& e) {
        err << "domain error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace rdet::cli
