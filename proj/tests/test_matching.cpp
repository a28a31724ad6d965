#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rdet/matching.hpp"
#include "support/oracles.hpp"

using namespace rdet;
using geom::Point2;
using geom::PointSet;

namespace {

PointSet square(double x0, double y0, double x1, double y1) {
    return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
}

match::CostMatrix random_cost(oracle::Rng& rng, int n, int m, double lo = -5.0, double hi = 5.0) {
    match::CostMatrix c(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) c.at(i, j) = rng.uniform(lo, hi);
    return c;
}

double total_cost(const match::CostMatrix& c, const std::vector<std::pair<int, int>>& pairs) {
    double t = 0.0;
    for (auto [i, j] : pairs) t += c.at(i, j);
    return t;
}

loss::Target make_target(int cls, double cx, double cy, double w, double h, double theta) {
    loss::Target t;
    t.cls = cls;
    t.box = geom::RotatedBox{cx, cy, w, h, theta};
    return t;
}

}  // namespace

TEST_CASE("matching_cost composes the three terms") {
    loss::LossWeights w;
    oracle::Rng rng(21);
    std::vector<loss::ClassLogits> logits;
    std::vector<PointSet> points;
    for (int i = 0; i < 4; ++i) {
        logits.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});
        PointSet ps;
        for (int k = 0; k < 9; ++k) ps.push_back({rng.uniform(), rng.uniform()});
        points.push_back(ps);
    }
    std::vector<loss::Target> targets;
    for (int j = 0; j < 3; ++j)
        targets.push_back(make_target(j, rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7),
                                      rng.uniform(0.2, 0.4), rng.uniform(0.1, 0.2),
                                      rng.uniform(-1.0, 1.0)));

    const auto c = match::matching_cost(logits, points, targets, w, 1.4);
    REQUIRE(c.rows == 4);
    REQUIRE(c.cols == 3);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) {
            const double p = 1.0 / (1.0 + std::exp(-logits[i][targets[j].cls]));
            const auto corners = geom::box_to_corners(targets[j].box);
            const double expect = w.lambda_cls * (-p) +
                                  w.lambda_l1 * loss::center_l1_loss(points[i], corners, 1.4) +
                                  w.lambda_iou * loss::giou_loss(points[i], corners);
            CHECK(c.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    // serial and parallel paths agree bitwise
    const auto cs = match::matching_cost(logits, points, targets, w, 1.4, kern::Exec::Serial);
    const auto cp = match::matching_cost(logits, points, targets, w, 1.4, kern::Exec::Parallel);
    CHECK(cs.v == cp.v);

    SUBCASE("perfect prediction costs -lambda_cls") {
        std::vector<loss::ClassLogits> lg{{50.0}};
        std::vector<PointSet> pts{geom::box_to_corners(targets[0].box)};
        std::vector<loss::Target> tg{make_target(0, targets[0].box.cx, targets[0].box.cy,
                                                 targets[0].box.w, targets[0].box.h,
                                                 targets[0].box.theta)};
        const auto cm = match::matching_cost(lg, pts, tg, w);
        CHECK(cm.at(0, 0) == doctest::Approx(-w.lambda_cls).epsilon(1e-9));
    }
}

TEST_CASE("hungarian basics") {
    SUBCASE("2x2") {
        match::CostMatrix c(2, 2);
        c.at(0, 0) = 1;
        c.at(0, 1) = 2;
        c.at(1, 0) = 2;
        c.at(1, 1) = 1;
        const auto pairs = match::hungarian(c);
        REQUIRE(pairs.size() == 2);
        CHECK(pairs[0] == std::pair<int, int>{0, 0});
        CHECK(pairs[1] == std::pair<int, int>{1, 1});
        CHECK(total_cost(c, pairs) == 2.0);
    }
    SUBCASE("diagonal-dominant 3x3 picks the diagonal") {
        match::CostMatrix c(3, 3);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) c.at(i, j) = (i == j) ? -10.0 : 5.0;
        const auto pairs = match::hungarian(c);
        for (int i = 0; i < 3; ++i) CHECK(pairs[i] == std::pair<int, int>{i, i});
    }
    SUBCASE("empty matrix") { CHECK(match::hungarian(match::CostMatrix()).empty()); }
    SUBCASE("identical entries resolve to the identity (documented tie rule)") {
        match::CostMatrix c(3, 3);
        for (auto& v : c.v) v = 1.0;
        const auto pairs = match::hungarian(c);
        for (int i = 0; i < 3; ++i) CHECK(pairs[i] == std::pair<int, int>{i, i});
    }
    SUBCASE("non-finite cost throws") {
        match::CostMatrix c(1, 1);
        c.at(0, 0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS((void)match::hungarian(c), std::invalid_argument);
    }
}

TEST_CASE("hungarian equals exhaustive search on random rectangular instances") {
    oracle::Rng rng(22);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + rng.uniform_int(0, 6);
        const int m = 1 + rng.uniform_int(0, 6);
        const auto c = random_cost(rng, n, m);
        const auto pairs = match::hungarian(c);
        CHECK(static_cast<int>(pairs.size()) == std::min(n, m));
        // one-to-one
        std::vector<int> rows, cols;
        for (auto [i, j] : pairs) {
            rows.push_back(i);
            cols.push_back(j);
        }
        std::sort(rows.begin(), rows.end());
        std::sort(cols.begin(), cols.end());
        CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());
        CHECK(std::adjacent_find(cols.begin(), cols.end()) == cols.end());
        CHECK(total_cost(c, pairs) == doctest::Approx(oracle::brute_force_assignment_cost(c))
                                          .epsilon(1e-12));
    }
}

TEST_CASE("hungarian permutation equivariance and scale invariance") {
    oracle::Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 5, m = 4;
        const auto c = random_cost(rng, n, m);
        const auto base = match::hungarian(c);

        // permute columns
        std::vector<int> perm{2, 0, 3, 1};
        match::CostMatrix cp(n, m);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) cp.at(i, perm[j]) = c.at(i, j);
        auto permuted = match::hungarian(cp);
        CHECK(total_cost(cp, permuted) == doctest::Approx(total_cost(c, base)).epsilon(1e-12));

        // positive scaling preserves the argmin set
        match::CostMatrix cs(n, m);
        for (size_t k = 0; k < c.v.size(); ++k) cs.v[k] = 3.7 * c.v[k];
        CHECK(match::hungarian(cs) == base);
    }
}

TEST_CASE("reassign_labels applies the strict IoU threshold") {
    match::MatchConfig cfg;  // tau 0.5
    std::vector<loss::Target> targets{make_target(2, 0.5, 0.5, 1.0, 1.0, 0.0)};

    SUBCASE("exact overlap keeps the label") {
        std::vector<PointSet> points{square(0, 0, 1, 1)};
        const auto a = match::reassign_labels(points, {{0, 0}}, targets, cfg);
        REQUIRE(a.labels.size() == 1);
        CHECK(a.labels[0] == loss::Label{2});
        CHECK(a.pairs == std::vector<std::pair<int, int>>{{0, 0}});
    }
    SUBCASE("IoU 1/7 pair drops to background at tau 0.5") {
        std::vector<loss::Target> t2{make_target(1, 2.0, 2.0, 2.0, 2.0, 0.0)};  // [1,3]^2
        std::vector<PointSet> points{square(0, 0, 2, 2)};
        const auto a = match::reassign_labels(points, {{0, 0}}, t2, cfg);
        CHECK(!a.labels[0].has_value());
        CHECK(a.pairs == std::vector<std::pair<int, int>>{{0, 0}});  // pair list unchanged
    }
    SUBCASE("IoU exactly tau re-assigns; tau + eps keeps") {
        // pred [0,1]x[0,1] vs target [0,1]x[0,0.5] -> IoU exactly 0.5
        std::vector<loss::Target> t2{make_target(0, 0.5, 0.25, 1.0, 0.5, 0.0)};
        std::vector<PointSet> points{square(0, 0, 1, 1)};
        match::MatchConfig boundary = cfg;
        boundary.tau = 0.5;
        auto a = match::reassign_labels(points, {{0, 0}}, t2, boundary);
        CHECK(!a.labels[0].has_value());
        boundary.tau = 0.5 - 1e-9;
        a = match::reassign_labels(points, {{0, 0}}, t2, boundary);
        CHECK(a.labels[0] == loss::Label{0});
    }
    SUBCASE("unmatched queries stay background; raising tau is monotone") {
        oracle::Rng rng(31);
        std::vector<PointSet> points;
        for (int i = 0; i < 6; ++i) {
            PointSet ps;
            for (int k = 0; k < 9; ++k) ps.push_back({rng.uniform(), rng.uniform()});
            points.push_back(ps);
        }
        std::vector<loss::Target> tg{make_target(0, 0.5, 0.5, 0.6, 0.3, 0.2),
                                     make_target(1, 0.3, 0.7, 0.4, 0.2, -0.4)};
        std::vector<std::pair<int, int>> pairs{{1, 0}, {4, 1}};
        std::vector<int> labelled_counts;
        for (double tau : {0.0, 0.1, 0.3, 0.6, 0.9, 1.0}) {
            match::MatchConfig c2;
            c2.tau = tau;
            const auto a = match::reassign_labels(points, pairs, tg, c2);
            int count = 0;
            for (size_t q = 0; q < a.labels.size(); ++q) {
                if (a.labels[q]) {
                    ++count;
                    CHECK((q == 1 || q == 4));  // only matched queries can keep labels
                }
            }
            labelled_counts.push_back(count);
            if (tau == 1.0) CHECK(count == 0);
        }
        CHECK(std::is_sorted(labelled_counts.rbegin(), labelled_counts.rend()));
    }
}

TEST_CASE("iou_cdf is a sorted empirical CDF") {
    std::vector<loss::Target> targets{
        make_target(0, 0.5, 0.5, 1.0, 1.0, 0.0), make_target(0, 5.5, 0.5, 1.0, 1.0, 0.0),
        make_target(0, 10.5, 0.5, 1.0, 1.0, 0.0), make_target(0, 15.5, 0.5, 1.0, 1.0, 0.0)};
    // Construct pairs with known IoUs by shifting unit squares horizontally.
    // shift s against a unit square: inter = 1-s, union = 1+s, iou = (1-s)/(1+s)
    auto shifted = [](double cx, double s) { return square(cx - 0.5 + s, 0, cx + 0.5 + s, 1); };
    std::vector<PointSet> points{shifted(0.5, 2.0 / 3.0), shifted(5.5, 0.25), shifted(10.5, 0.25),
                                 shifted(15.5, 1.0 / 19.0)};
    // ious: 0.2, 0.6, 0.6, 0.9
    std::vector<std::pair<int, int>> pairs{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    const auto cdf = match::iou_cdf(points, pairs, targets);
    REQUIRE(cdf.size() == 4);
    CHECK(cdf[0].first == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(cdf[0].second == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(cdf[1].first == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(cdf[2].first == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(cdf[3].first == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(cdf[3].second == 1.0);
    // fraction at 0.5 (values <= 0.5) is 0.25
    double frac = 0.0;
    for (const auto& [v, f] : cdf)
        if (v <= 0.5) frac = f;
    CHECK(frac == doctest::Approx(0.25).epsilon(1e-12));

    SUBCASE("single pair") {
        const auto one = match::iou_cdf({shifted(0.5, 1.0 / 19.0)}, {{0, 0}}, targets);
        REQUIRE(one.size() == 1);
        CHECK(one[0].first == doctest::Approx(0.9).epsilon(1e-9));
        CHECK(one[0].second == 1.0);
    }
    SUBCASE("no pairs -> empty") { CHECK(match::iou_cdf({}, {}, targets).empty()); }
}
