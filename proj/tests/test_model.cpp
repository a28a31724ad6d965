#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rdet/model.hpp"
#include "rdet/train.hpp"
#include "support/oracles.hpp"

using namespace rdet;
using model::Decoder;
using model::DecoderConfig;
using model::QuerySchedule;
using nn::Graph;
using nn::Mat;
using nn::Var;

namespace {

DecoderConfig tiny_config() {
    DecoderConfig cfg;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.k_points = 9;
    cfg.classes = 2;
    cfg.ffn = 32;
    cfg.grid = 4;
    cfg.n_queries = 8;
    return cfg;
}

QuerySchedule flat_schedule(int n, int layers) {
    QuerySchedule s;
    s.n_first = n;
    s.n_last = n;
    s.rho = 0.5;
    s.layers = layers;
    return s;
}

synth::Scene tiny_scene(std::uint64_t seed = 3) {
    synth::SynthConfig sc;
    sc.seed = seed;
    sc.scenes = 1;
    sc.min_objects = 2;
    sc.max_objects = 3;
    sc.classes = 2;
    return synth::generate_scenes(sc)[0];
}

}  // namespace

TEST_CASE("query_count evaluates the schedule") {
    QuerySchedule s;
    s.n_first = 300;
    s.n_last = 100;
    s.rho = 0.5;
    s.layers = 6;
    CHECK(model::schedule_counts(s) == std::vector<int>{300, 200, 150, 125, 113, 106});
    CHECK(model::query_count(s, 0) == 300);

    SUBCASE("rho small converges to n_last") {
        s.rho = 0.01;
        CHECK(model::query_count(s, 3) == 100);
    }
    SUBCASE("layer index out of range throws") {
        CHECK_THROWS_AS((void)model::query_count(s, 6), std::out_of_range);
        CHECK_THROWS_AS((void)model::query_count(s, -1), std::out_of_range);
    }
    SUBCASE("constant schedule") {
        CHECK(model::schedule_counts(flat_schedule(42, 4)) ==
              std::vector<int>{42, 42, 42, 42});
    }
    SUBCASE("monotone non-increasing and bounded on random draws") {
        oracle::Rng rng(61);
        for (int trial = 0; trial < 1000; ++trial) {
            QuerySchedule r;
            r.n_last = 1 + rng.uniform_int(0, 199);
            r.n_first = r.n_last + rng.uniform_int(0, 400);
            r.rho = rng.uniform(0.05, 0.95);
            r.layers = 1 + rng.uniform_int(0, 7);
            const auto counts = model::schedule_counts(r);
            CHECK(counts[0] == r.n_first);
            for (size_t i = 0; i < counts.size(); ++i) {
                if (i > 0) CHECK(counts[i] <= counts[i - 1]);
                CHECK(counts[i] >= r.n_last);
                CHECK(counts[i] <= r.n_first);
            }
        }
    }
    SUBCASE("invalid parameters throw") {
        QuerySchedule bad = s;
        bad.rho = 1.0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = s;
        bad.n_last = 400;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}

TEST_CASE("topk_indices") {
    CHECK(model::topk_indices({0.9, 0.1, 0.5}, 2) == std::vector<int>{0, 2});
    CHECK(model::topk_indices({0.4, 0.2, 0.6}, 3) == std::vector<int>{0, 1, 2});  // identity
    CHECK_THROWS_AS((void)model::topk_indices({0.5}, 2), std::invalid_argument);
    // ties prefer the lower index
    CHECK(model::topk_indices({0.5, 0.7, 0.5, 0.5}, 2) == std::vector<int>{0, 1});

    oracle::Rng rng(62);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> probs;
        const int n = 5 + rng.uniform_int(0, 40);
        for (int i = 0; i < n; ++i) probs.push_back(rng.uniform());
        const int k = 1 + rng.uniform_int(0, n - 1);
        const auto got = model::topk_indices(probs, k);
        // full-sort oracle
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
        });
        order.resize(k);
        std::sort(order.begin(), order.end());
        CHECK(got == order);
        CHECK(std::is_sorted(got.begin(), got.end()));  // survivor order is stable
    }
}

TEST_CASE("zero-weight decoder outputs zero logits and centered points") {
    const DecoderConfig cfg = tiny_config();
    Decoder dec(cfg, 1);
    for (auto& t : dec.params().values)
        for (double& v : t.d) v = 0.0;
    Graph g;
    const synth::Scene scene = tiny_scene();
    const auto out = dec.forward(g, model::scene_memory_features(scene, cfg),
                                 flat_schedule(cfg.n_queries, cfg.layers));
    for (const auto& lo : out.layers) {
        for (double v : lo.logits->val.d) CHECK(v == 0.0);
        for (double v : lo.points->val.d) CHECK(v == 0.5);
    }
}

TEST_CASE("single query, single memory token: attention weights are exactly 1") {
    DecoderConfig cfg = tiny_config();
    cfg.n_queries = 1;
    cfg.grid = 1;
    Decoder dec(cfg, 2);
    Graph g;
    const synth::Scene scene = tiny_scene();
    const auto out = dec.forward(g, model::scene_memory_features(scene, cfg),
                                 flat_schedule(1, cfg.layers));
    int checked = 0;
    for (const auto& lo : out.layers)
        for (const auto& a : lo.attn)
            for (double v : a->val.d) {
                CHECK(v == 1.0);
                ++checked;
            }
    CHECK(checked > 0);
}

TEST_CASE("forward shapes, finiteness, attention normalization") {
    const DecoderConfig cfg = tiny_config();
    Decoder dec(cfg, 3);
    Graph g;
    const synth::Scene scene = tiny_scene();
    const auto out = dec.forward(g, model::scene_memory_features(scene, cfg),
                                 flat_schedule(cfg.n_queries, cfg.layers));
    REQUIRE(out.layers.size() == 2);
    for (const auto& lo : out.layers) {
        CHECK(lo.class_feat->val.rows == cfg.n_queries);
        CHECK(lo.class_feat->val.cols == cfg.d);
        CHECK(lo.box_feat->val.rows == cfg.n_queries);
        CHECK(lo.logits->val.cols == cfg.classes);
        CHECK(lo.points->val.cols == 2 * cfg.k_points);
        for (double v : lo.logits->val.d) CHECK(std::isfinite(v));
        for (double v : lo.points->val.d) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);  // squashed into the image
        }
        for (const auto& a : lo.attn) {
            for (int i = 0; i < a->val.rows; ++i) {
                double s = 0.0;
                for (int j = 0; j < a->val.cols; ++j) s += a->val.at(i, j);
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("fuse_features is element-wise addition") {
    Graph g;
    oracle::Rng rng(63);
    Mat a(3, 5), b(3, 5);
    for (double& v : a.d) v = rng.uniform(-1, 1);
    for (double& v : b.d) v = rng.uniform(-1, 1);
    const Var va = g.leaf(a), vb = g.leaf(b), vz = g.leaf(Mat(3, 5));
    const Var ab = Decoder::fuse_features(g, va, vb);
    const Var ba = Decoder::fuse_features(g, vb, va);
    for (size_t i = 0; i < ab->val.d.size(); ++i) {
        CHECK(ab->val.d[i] == a.d[i] + b.d[i]);
        CHECK(ab->val.d[i] == ba->val.d[i]);  // commutative
    }
    const Var az = Decoder::fuse_features(g, va, vz);
    CHECK(az->val.d == a.d);  // additive identity
}

TEST_CASE("pruning selects without mutating: survivor rows are bitwise identical") {
    DecoderConfig cfg = tiny_config();
    Decoder dec(cfg, 4);
    QuerySchedule sched;
    sched.n_first = cfg.n_queries;
    sched.n_last = 3;
    sched.rho = 0.4;
    sched.layers = cfg.layers;

    Graph g;
    const synth::Scene scene = tiny_scene();
    const Mat feats = model::scene_memory_features(scene, cfg);
    const auto pruned = dec.forward(g, feats, sched, nullptr);

    Graph g2;
    const auto full = dec.forward(g2, feats, flat_schedule(cfg.n_queries, cfg.layers));

    // Layer 0 is identical in both runs; layer-1 survivors of the pruned run
    // must carry exactly the layer-0 fused features of the full run, which is
    // what gather_rows selected. Verify via the query id map and logits of
    // layer 0 (same rows, same values).
    const auto& ids = pruned.layers[1].query_ids;
    CHECK(ids.size() == 5);  // round((8-3)*0.4 + 3) = 5
    for (size_t r = 0; r < ids.size(); ++r) {
        for (int c = 0; c < cfg.classes; ++c) {
            CHECK(pruned.layers[0].logits->val.at(ids[r], c) ==
                  full.layers[0].logits->val.at(ids[r], c));
        }
    }
    // ids are a subset in original order
    CHECK(std::is_sorted(ids.begin(), ids.end()));

    // survivors are the top-k by class probability of layer 0
    const auto probs = Decoder::class_probs(pruned.layers[0].logits->val);
    CHECK(ids == model::topk_indices(probs, 5));
}

TEST_CASE("decoupling: class-branch parameters do not move the same layer's points") {
    const DecoderConfig cfg = tiny_config();
    Decoder dec(cfg, 5);
    const synth::Scene scene = tiny_scene();
    const Mat feats = model::scene_memory_features(scene, cfg);
    const auto sched = flat_schedule(cfg.n_queries, cfg.layers);

    Graph g;
    const auto base = dec.forward(g, feats, sched);

    // Perturb every class-branch parameter of layer 0 plus the class head.
    auto& store = dec.params();
    for (size_t i = 0; i < store.size(); ++i) {
        const std::string& n = store.names[i];
        if (n.find("layer0.cls") != std::string::npos || n.find("cls_head") != std::string::npos)
            for (double& v : store.values[i].d) v += 0.37;
    }
    Graph g2;
    const auto bumped = dec.forward(g2, feats, sched);

    CHECK(bumped.layers[0].points->val.d == base.layers[0].points->val.d);      // bitwise
    CHECK(bumped.layers[0].box_feat->val.d == base.layers[0].box_feat->val.d);  // bitwise
    CHECK(bumped.layers[0].logits->val.d != base.layers[0].logits->val.d);
    // cross-layer flow exists: the next layer's points do change
    CHECK(bumped.layers[1].points->val.d != base.layers[1].points->val.d);
}

TEST_CASE("self-attention quadratic MACs scale as the squared query ratio") {
    DecoderConfig cfg = tiny_config();
    cfg.n_queries = 32;
    Decoder dec(cfg, 6);
    const synth::Scene scene = tiny_scene();
    const Mat feats = model::scene_memory_features(scene, cfg);

    QuerySchedule sched;
    sched.n_first = 32;
    sched.n_last = 8;
    sched.rho = 0.5;
    sched.layers = cfg.layers;

    nn::OpCount pruned, baseline;
    {
        Graph g;
        dec.forward(g, feats, sched, &pruned);
    }
    {
        Graph g;
        dec.forward(g, feats, flat_schedule(32, cfg.layers), &baseline);
    }
    const auto counts = model::schedule_counts(sched);
    REQUIRE(pruned.layers.size() == baseline.layers.size());
    for (size_t l = 1; l < pruned.layers.size(); ++l) {
        const double got = static_cast<double>(pruned.layers[l].self_attn_quadratic) /
                           static_cast<double>(baseline.layers[l].self_attn_quadratic);
        const double expect = std::pow(static_cast<double>(counts[l]) / 32.0, 2.0);
        CHECK(got == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(pruned.total() < baseline.total());
}

TEST_CASE("training gradients pass finite-difference spot checks") {
    DecoderConfig cfg = tiny_config();
    Decoder dec(cfg, 7);
    const synth::Scene scene = tiny_scene(11);
    QuerySchedule sched;
    sched.n_first = cfg.n_queries;
    sched.n_last = 4;
    sched.rho = 0.6;
    sched.layers = cfg.layers;
    loss::LossWeights w;
    match::MatchConfig mcfg;
    const double worst = model::gradient_spot_check(dec, scene, sched, w, mcfg, 20, 99);
    CHECK(worst < 1e-3);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    DecoderConfig cfg = tiny_config();
    Decoder dec(cfg, 8);
    const auto before = dec.params().values;
    synth::SynthConfig sc;
    sc.scenes = 4;
    sc.classes = cfg.classes;
    const auto scenes = synth::generate_scenes(sc);
    model::TrainConfig tcfg;
    tcfg.steps = 3;
    tcfg.batch = 2;
    tcfg.lr = 0.0;
    const auto r = model::train_toy(dec, scenes, flat_schedule(cfg.n_queries, cfg.layers),
                                    loss::LossWeights{}, match::MatchConfig{}, tcfg);
    for (size_t i = 0; i < before.size(); ++i) CHECK(dec.params().values[i].d == before[i].d);
    CHECK(std::isfinite(r.final_total));
}

TEST_CASE("a short training run decreases the loss") {
    DecoderConfig cfg = tiny_config();
    cfg.n_queries = 12;
    Decoder dec(cfg, 9);
    synth::SynthConfig sc;
    sc.scenes = 2;
    sc.classes = cfg.classes;
    sc.max_objects = 3;
    const auto scenes = synth::generate_scenes(sc);
    model::TrainConfig tcfg;
    tcfg.steps = 60;
    tcfg.batch = 2;
    tcfg.lr = 1e-3;
    tcfg.log_every = 1;
    const auto r = model::train_toy(dec, scenes, flat_schedule(cfg.n_queries, cfg.layers),
                                    loss::LossWeights{}, match::MatchConfig{}, tcfg);
    REQUIRE(!r.log.empty());
    double first_mean = 0.0, last_mean = 0.0;
    for (int i = 0; i < 5; ++i) {
        first_mean += r.log[i].total / 5.0;
        last_mean += r.log[r.log.size() - 1 - i].total / 5.0;
    }
    CHECK(last_mean < first_mean);
}

TEST_CASE("predict emits scored rotated boxes in pixel coordinates") {
    DecoderConfig cfg = tiny_config();
    Decoder dec(cfg, 10);
    const synth::Scene scene = tiny_scene(17);
    const auto dets = model::predict(dec, scene, flat_schedule(cfg.n_queries, cfg.layers));
    CHECK(dets.size() == static_cast<size_t>(cfg.n_queries));
    for (const auto& d : dets) {
        CHECK(d.scene == scene.id);
        CHECK(d.score >= 0.0);
        CHECK(d.score <= 1.0);
        CHECK(d.cls >= 0);
        CHECK(d.cls < cfg.classes);
        CHECK(std::isfinite(d.box.cx));
        CHECK(d.box.cx >= 0.0);
        CHECK(d.box.cx <= scene.size);
    }
}

TEST_CASE("synthetic scenes are reproducible and in bounds") {
    synth::SynthConfig sc;
    sc.seed = 42;
    sc.scenes = 10;
    const auto a = synth::generate_scenes(sc);
    const auto b = synth::generate_scenes(sc);
    REQUIRE(a.size() == b.size());
    for (size_t s = 0; s < a.size(); ++s) {
        REQUIRE(a[s].objects.size() == b[s].objects.size());
        CHECK(a[s].objects.size() >= static_cast<size_t>(sc.min_objects));
        CHECK(a[s].objects.size() <= static_cast<size_t>(sc.max_objects));
        for (size_t o = 0; o < a[s].objects.size(); ++o) {
            CHECK(a[s].objects[o].box.cx == b[s].objects[o].box.cx);
            CHECK(a[s].objects[o].box.theta == b[s].objects[o].box.theta);
            for (const auto& c : geom::box_to_corners(a[s].objects[o].box)) {
                CHECK(c.x >= 0.0);
                CHECK(c.x <= sc.size);
                CHECK(c.y >= 0.0);
                CHECK(c.y <= sc.size);
            }
        }
    }
}
