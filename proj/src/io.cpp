#include "rdet/io.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace rdet::io {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream iss(line);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

double parse_double(const std::string& tok, const std::string& file, int line,
                    const std::string& field) {
    double v = 0.0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size())
        throw ParseError(file, line, field, "not a number: '" + tok + "'");
    if (!std::isfinite(v)) throw ParseError(file, line, field, "non-finite value");
    return v;
}

std::string fmt_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

bool is_header_line(const std::vector<std::string>& toks) {
    if (toks.empty()) return false;
    return toks[0].rfind("imagesource:", 0) == 0 || toks[0].rfind("gsd:", 0) == 0;
}

}  // namespace

std::string path_stem(const std::string& path) { return fs::path(path).stem().string(); }

SceneFileData read_scene_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError(path, 0, "-", "cannot open file");
    SceneFileData data;
    data.id = path_stem(path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (is_header_line(toks)) continue;  // DOTA metadata lines
        if (toks.size() != 10)
            throw ParseError(path, lineno, "record",
                             "expected 10 fields, got " + std::to_string(toks.size()));
        SceneRecord rec;
        static const char* kFieldNames[8] = {"x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4"};
        for (int i = 0; i < 8; ++i)
            rec.corners[i] = parse_double(toks[i], path, lineno, kFieldNames[i]);
        rec.category = toks[8];
        if (rec.category.empty()) throw ParseError(path, lineno, "category", "empty token");
        if (toks[9] == "0")
            rec.difficult = false;
        else if (toks[9] == "1")
            rec.difficult = true;
        else
            throw ParseError(path, lineno, "difficult", "expected 0 or 1, got '" + toks[9] + "'");
        data.records.push_back(std::move(rec));
    }
    return data;
}

void write_scene_file(const std::string& path, const SceneFileData& data) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& rec : data.records) {
        for (double c : rec.corners) os << fmt_double(c) << ' ';
        os << rec.category << ' ' << (rec.difficult ? 1 : 0) << '\n';
    }
}

std::vector<SceneFileData> read_scene_inputs(const std::string& path) {
    std::vector<SceneFileData> out;
    if (fs::is_directory(path)) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(path)) {
            if (e.is_regular_file() && e.path().extension() == ".txt")
                files.push_back(e.path().string());
        }
        std::sort(files.begin(), files.end());
        out.reserve(files.size());
        for (const auto& f : files) out.push_back(read_scene_file(f));
    } else {
        out.push_back(read_scene_file(path));
    }
    return out;
}

int ClassMap::id(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

int ClassMap::id_or_add(const std::string& name) {
    const int existing = id(name);
    if (existing >= 0) return existing;
    names.push_back(name);
    return static_cast<int>(names.size()) - 1;
}

ClassMap ClassMap::from_scenes(const std::vector<SceneFileData>& scenes) {
    std::set<std::string> uniq;
    for (const auto& s : scenes)
        for (const auto& r : s.records) uniq.insert(r.category);
    ClassMap m;
    m.names.assign(uniq.begin(), uniq.end());  // set iteration is sorted
    return m;
}

std::vector<PredRecord> read_predictions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError(path, 0, "-", "cannot open file");
    std::vector<PredRecord> out;
    std::string line;
    int lineno = 0;
    int k_points = -1;  // enforced consistent across the file
    while (std::getline(is, line)) {
        ++lineno;
        const auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() < 4) throw ParseError(path, lineno, "record", "too few fields");
        PredRecord rec;
        rec.scene = toks[0];
        rec.category = toks[1];
        rec.score = parse_double(toks[2], path, lineno, "score");
        if (rec.score < 0.0 || rec.score > 1.0)
            throw ParseError(path, lineno, "score", "outside [0,1]");
        const size_t rest = toks.size() - 3;
        if (rest == 5) {
            rec.is_box = true;
            rec.box.cx = parse_double(toks[3], path, lineno, "cx");
            rec.box.cy = parse_double(toks[4], path, lineno, "cy");
            rec.box.w = parse_double(toks[5], path, lineno, "w");
            rec.box.h = parse_double(toks[6], path, lineno, "h");
            rec.box.theta = parse_double(toks[7], path, lineno, "theta");
            if (rec.box.w <= 0.0 || rec.box.h <= 0.0)
                throw ParseError(path, lineno, "w/h", "box sides must be positive");
        } else if (rest % 2 == 0 && rest >= 6) {
            const int k = static_cast<int>(rest / 2);
            if (k_points >= 0 && k != k_points)
                throw ParseError(path, lineno, "points",
                                 "inconsistent point count (" + std::to_string(k) + " vs " +
                                     std::to_string(k_points) + ")");
            k_points = k;
            for (int p = 0; p < k; ++p) {
                const double x = parse_double(toks[3 + 2 * p], path, lineno, "x");
                const double y = parse_double(toks[4 + 2 * p], path, lineno, "y");
                rec.points.push_back(geom::Point2{x, y});
            }
        } else {
            throw ParseError(path, lineno, "record",
                             "expected 5 box fields or an even number (>=6) of coordinates");
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void write_predictions(const std::string& path, const std::vector<PredRecord>& records) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& r : records) {
        os << r.scene << ' ' << r.category << ' ' << fmt_double(r.score);
        if (r.is_box) {
            os << ' ' << fmt_double(r.box.cx) << ' ' << fmt_double(r.box.cy) << ' '
               << fmt_double(r.box.w) << ' ' << fmt_double(r.box.h) << ' '
               << fmt_double(r.box.theta);
        } else {
            for (const auto& p : r.points) os << ' ' << fmt_double(p.x) << ' ' << fmt_double(p.y);
        }
        os << '\n';
    }
}

std::vector<eval::GroundTruth> to_ground_truth(const std::vector<SceneFileData>& scenes,
                                               const ClassMap& classes) {
    std::vector<eval::GroundTruth> out;
    for (const auto& s : scenes) {
        for (const auto& r : s.records) {
            geom::PointSet corners;
            for (int i = 0; i < 4; ++i)
                corners.push_back(geom::Point2{r.corners[2 * i], r.corners[2 * i + 1]});
            eval::GroundTruth g;
            g.scene = s.id;
            g.cls = classes.id(r.category);
            g.box = geom::min_area_rect(corners);
            g.difficult = r.difficult;
            out.push_back(std::move(g));
        }
    }
    return out;
}

std::vector<eval::Detection> to_detections(const std::vector<PredRecord>& preds,
                                           ClassMap& classes) {
    std::vector<eval::Detection> out;
    out.reserve(preds.size());
    for (const auto& p : preds) {
        eval::Detection d;
        d.scene = p.scene;
        d.cls = classes.id_or_add(p.category);
        d.score = p.score;
        d.box = p.is_box ? p.box : geom::min_area_rect(p.points);
        out.push_back(std::move(d));
    }
    return out;
}

void write_dataset_meta(const std::string& dir, const DatasetMeta& meta) {
    nlohmann::json j{{"size", meta.size}, {"classes", meta.classes}};
    std::ofstream os(fs::path(dir) / "dataset.json");
    if (!os) throw std::runtime_error("cannot write dataset.json in " + dir);
    os << j.dump(2) << '\n';
}

DatasetMeta read_dataset_meta(const std::string& dir, const DatasetMeta& fallback) {
    const fs::path p = fs::path(dir) / "dataset.json";
    std::ifstream is(p);
    if (!is) return fallback;
    nlohmann::json j;
    is >> j;
    DatasetMeta meta;
    meta.size = j.value("size", fallback.size);
    meta.classes = j.value("classes", fallback.classes);
    return meta;
}

synth::Scene to_scene(const SceneFileData& data, const ClassMap& classes, double size) {
    synth::Scene scene;
    scene.id = data.id;
    scene.size = size;
    for (const auto& r : data.records) {
        geom::PointSet corners;
        for (int i = 0; i < 4; ++i)
            corners.push_back(geom::Point2{r.corners[2 * i], r.corners[2 * i + 1]});
        synth::SceneObject obj;
        obj.cls = classes.id(r.category);
        obj.box = geom::min_area_rect(corners);
        obj.difficult = r.difficult;
        scene.objects.push_back(std::move(obj));
    }
    return scene;
}

}  // namespace rdet::io
