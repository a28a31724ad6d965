#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdet/geom.hpp"

namespace rdet::synth {

struct SceneObject {
    int cls = 0;
    geom::RotatedBox box;
    bool difficult = false;
};

// One annotated image-worth of oriented boxes. There are no pixels anywhere
// in this toolkit; the scene is its annotation.
struct Scene {
    std::string id;
    double size = 256.0;  // square image side, pixels
    std::vector<SceneObject> objects;
};

// Synthetic rotated-rectangle scenes: dense-ish, high aspect ratio, arbitrary
// orientation. Reproducible for a given seed (mt19937_64 + 53-bit mapping,
// see rng.hpp).
struct SynthConfig {
    std::uint64_t seed = 1;
    int scenes = 200;
    int min_objects = 1;
    int max_objects = 8;
    double size = 256.0;
    int classes = 3;
    double min_w = 0.10;      // fraction of image side
    double max_w = 0.35;
    double max_aspect = 4.0;  // w/h upper bound
    double min_h = 0.06;      // fraction of image side
    double max_pair_iou = 0.05;   // rejection threshold between objects
    double min_center_dist = 0.09;  // fraction of image side
    int max_tries = 60;
};

std::vector<Scene> generate_scenes(const SynthConfig& cfg);

}  // namespace rdet::synth
