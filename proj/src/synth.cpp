#include "rdet/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "rdet/rng.hpp"

namespace rdet::synth {

namespace {

bool fits_inside(const geom::RotatedBox& b, double size) {
    for (const auto& c : geom::box_to_corners(b)) {
        if (c.x < 0.0 || c.y < 0.0 || c.x > size || c.y > size) return false;
    }
    return true;
}

}  // namespace

std::vector<Scene> generate_scenes(const SynthConfig& cfg) {
    if (cfg.scenes < 0 || cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects)
        throw std::invalid_argument("generate_scenes: bad object-count range");
    if (cfg.classes < 1) throw std::invalid_argument("generate_scenes: classes < 1");
    Rng rng(cfg.seed);
    std::vector<Scene> scenes;
    scenes.reserve(cfg.scenes);
    char idbuf[32];
    for (int s = 0; s < cfg.scenes; ++s) {
        Scene scene;
        std::snprintf(idbuf, sizeof(idbuf), "scene_%05d", s);
        scene.id = idbuf;
        scene.size = cfg.size;
        const int want = cfg.min_objects + rng.uniform_int(0, cfg.max_objects - cfg.min_objects);
        for (int o = 0; o < want; ++o) {
            bool placed = false;
            for (int attempt = 0; attempt < cfg.max_tries && !placed; ++attempt) {
                geom::RotatedBox b;
                b.w = rng.uniform(cfg.min_w, cfg.max_w) * cfg.size;
                const double min_h = cfg.min_h * cfg.size;
                b.h = std::max(min_h, b.w / rng.uniform(1.0, cfg.max_aspect));
                if (b.h > b.w) b.h = b.w;
                b.theta = rng.uniform(-M_PI_2, M_PI_2);
                const double margin = 0.5 * std::hypot(b.w, b.h);
                b.cx = rng.uniform(margin, cfg.size - margin);
                b.cy = rng.uniform(margin, cfg.size - margin);
                if (!fits_inside(b, cfg.size)) continue;
                bool ok = true;
                for (const auto& other : scene.objects) {
                    const double cd = std::hypot(b.cx - other.box.cx, b.cy - other.box.cy);
                    if (cd < cfg.min_center_dist * cfg.size) {
                        ok = false;
                        break;
                    }
                    if (geom::convex_hull_iou(geom::box_to_corners(b),
                                              geom::box_to_corners(other.box)) >
                        cfg.max_pair_iou) {
                        ok = false;
                        break;
                    }
                }
                if (!ok) continue;
                SceneObject obj;
                obj.cls = rng.uniform_int(0, cfg.classes - 1);
                obj.box = geom::canonicalized(b);
                scene.objects.push_back(obj);
                placed = true;
            }
            // Crowded scene: drop the object rather than loop forever.
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

}  // namespace rdet::synth
