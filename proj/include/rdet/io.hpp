#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdet/eval.hpp"
#include "rdet/synth.hpp"

namespace rdet::io {

// Parse failure carrying file / line / field context. The CLI maps this to
// exit code 3.
class ParseError : public std::runtime_error {
  public:
    ParseError(std::string file, int line, std::string field, const std::string& message)
        : std::runtime_error(file + ":" + std::to_string(line) + ": field '" + field +
                             "': " + message),
          file_(std::move(file)),
          line_(line),
          field_(std::move(field)) {}
    const std::string& file() const { return file_; }
    int line() const { return line_; }
    const std::string& field() const { return field_; }

  private:
    std::string file_;
    int line_;
    std::string field_;
};

// One annotation line: 8 corner coordinates, category token, difficulty flag.
struct SceneRecord {
    std::array<double, 8> corners{};
    std::string category;
    bool difficult = false;
};

struct SceneFileData {
    std::string id;  // file stem
    std::vector<SceneRecord> records;
};

// DOTA-format annotation file: whitespace-separated
//   x1 y1 x2 y2 x3 y3 x4 y4 category difficult
// one object per line. The optional DOTA header lines ("imagesource:...",
// "gsd:...") are skipped so stock files parse unmodified. Doubles are written
// with shortest-round-trip formatting, so read -> write -> read is identity.
SceneFileData read_scene_file(const std::string& path);
void write_scene_file(const std::string& path, const SceneFileData& data);

// A single file, or every *.txt inside a directory (sorted by name).
std::vector<SceneFileData> read_scene_inputs(const std::string& path);

// Deterministic category registry: sorted unique names, index = class id.
struct ClassMap {
    std::vector<std::string> names;
    int id(const std::string& name) const;           // -1 when unknown
    int id_or_add(const std::string& name);          // appends unknown names
    static ClassMap from_scenes(const std::vector<SceneFileData>& scenes);
};

// Detection record: scene-id category score, then either 2K point
// coordinates (x1 y1 ... xK yK; K fixed within a file) or a 5-tuple
// cx cy w h theta.
struct PredRecord {
    std::string scene;
    std::string category;
    double score = 0.0;
    bool is_box = false;
    geom::RotatedBox box;
    std::vector<geom::Point2> points;
};

std::vector<PredRecord> read_predictions(const std::string& path);
void write_predictions(const std::string& path, const std::vector<PredRecord>& records);

// Conversions into the evaluator's types. Prediction point sets are collapsed
// through min_area_rect, mirroring inference.
std::vector<eval::GroundTruth> to_ground_truth(const std::vector<SceneFileData>& scenes,
                                               const ClassMap& classes);
std::vector<eval::Detection> to_detections(const std::vector<PredRecord>& preds,
                                           ClassMap& classes);

// Scene-set manifest ("dataset.json"): image size and class names.
struct DatasetMeta {
    double size = 256.0;
    std::vector<std::string> classes;
};
void write_dataset_meta(const std::string& dir, const DatasetMeta& meta);
// Falls back to the given defaults when the manifest is absent.
DatasetMeta read_dataset_meta(const std::string& dir, const DatasetMeta& fallback);

// Scene assembled from records: corner quads collapse to rotated boxes via
// min_area_rect.
synth::Scene to_scene(const SceneFileData& data, const ClassMap& classes, double size);

std::string path_stem(const std::string& path);

}  // namespace rdet::io
