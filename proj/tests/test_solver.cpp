#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "elastreg/image_ops.hpp"
#include "elastreg/solver.hpp"
#include "helpers.hpp"

using namespace elastreg;

namespace {

double mean_abs(const DisplacementField& u) {
    double s = 0.0;
    for (std::size_t x = 0; x < u.points(); ++x) {
        double n2 = 0.0;
        for (int j = 0; j < u.ndim(); ++j) n2 += u.component(j)[x] * u.component(j)[x];
        s += std::sqrt(n2);
    }
    return s / static_cast<double>(u.points());
}

// Smooth blob pattern sampled at an arbitrary offset, so shifted copies are exact.
ScalarImage blobs(const Grid& g, double dr, double dc) {
    ScalarImage img(g);
    const std::size_t s0 = g.stride(0);
    for (std::size_t x = 0; x < g.size(); ++x) {
        const double r = static_cast<double>(x / s0) + dr, c = static_cast<double>(x % s0) + dc;
        img.data[x] = std::sin(0.31 * r) * std::cos(0.23 * c) + 0.5 * std::sin(0.17 * r + 0.29 * c);
    }
    return img;
}

SolverConfig quick(int levels, int iters) {
    SolverConfig cfg;
    cfg.levels = levels;
    cfg.iters_per_level = {iters};
    return cfg;
}

} // namespace

TEST_CASE("identical images stay near the identity") {
    std::mt19937_64 rng(1);
    const Grid g = Grid::make({32, 32});
    const auto img = testutil::smooth_texture(g, rng);
    SolverConfig cfg = quick(2, 200);
    const auto reg = register_global(img, img, 0.2, 0.2, cfg);
    CHECK(mean_abs(reg.field) < 0.1);
    const auto maps = ParamMaps::constant(g, 0.2, 0.2);
    const NccConfig ncc = NccConfig::defaults_for(2);
    CHECK(total_loss(img, img, reg.field, maps, ncc) <= total_loss(img, img, DisplacementField(g), maps, ncc));
}

TEST_CASE("zero iterations return the zero field") {
    std::mt19937_64 rng(2);
    const Grid g = Grid::make({16, 16});
    const auto reg = register_global(testutil::random_image(g, rng), testutil::random_image(g, rng), 0.1, 0.1,
                                     quick(2, 0));
    for (double v : reg.field.data) CHECK(v == 0.0);
    CHECK(reg.field.grid.dims[0] == 16);
    CHECK(reg.trace.records.empty());
}

TEST_CASE("maps at one leave only the elastic term, minimized by u = 0") {
    std::mt19937_64 rng(3);
    const Grid g = Grid::make({32, 32});
    const auto reg = register_global(testutil::random_image(g, rng), testutil::random_image(g, rng), 1.0, 1.0,
                                     SolverConfig{});
    CHECK(mean_abs(reg.field) < 1e-3);
}

TEST_CASE("a smooth translation is recovered") {
    const Grid g = Grid::make({64, 64});
    const auto fixed = blobs(g, 0.0, 0.0);
    // fixed(x) = moving(x + t) with t = (1.5, -2): moving is the pattern shifted back.
    const auto moving = blobs(g, -1.5, 2.0);
    const auto reg = register_global(moving, fixed, 0.05, 0.05, SolverConfig{});
    double err = 0.0;
    int n = 0;
    for (int r = 12; r < 52; ++r)
        for (int c = 12; c < 52; ++c) {
            const std::size_t x = testutil::idx2(g, r, c);
            err += std::hypot(reg.field.component(0)[x] - 1.5, reg.field.component(1)[x] + 2.0);
            ++n;
        }
    CHECK(err / n < 0.25);
}

TEST_CASE("trace bookkeeping") {
    std::mt19937_64 rng(5);
    const Grid g = Grid::make({32, 32});
    const auto f = testutil::smooth_texture(g, rng);
    const auto m = warp_image(f, testutil::random_field(g, rng, 0.8));
    SolverConfig cfg = quick(3, 40);
    cfg.iters_per_level = {40, 30, 20};
    const auto reg = register_global(m, f, 0.1, 0.1, cfg);
    const auto& t = reg.trace;
    REQUIRE(t.level_final_loss.size() == 3);
    int counts[3] = {0, 0, 0};
    for (const auto& r : t.records) {
        REQUIRE(r.level >= 0);
        REQUIRE(r.level < 3);
        ++counts[r.level];
        CHECK(std::isfinite(r.loss));
        CHECK(r.loss == doctest::Approx(r.sim + r.elastic));
        CHECK(r.step_norm >= 0.0);
    }
    CHECK(counts[0] <= 40);
    CHECK(counts[1] <= 30);
    CHECK(counts[2] <= 20);
    for (int lvl = 0; lvl < 3; ++lvl) {
        for (const auto& r : t.records) {
            if (r.level != lvl) continue;
            CHECK(t.level_final_loss[lvl] <= r.loss);
        }
    }

    std::ostringstream csv;
    t.write_csv(csv);
    const std::string text = csv.str();
    CHECK(text.rfind("level,iter,loss,sim,elastic,step_norm\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) == t.records.size() + 1);
}

TEST_CASE("register is deterministic") {
    std::mt19937_64 rng(6);
    const Grid g = Grid::make({32, 32});
    const auto f = testutil::smooth_texture(g, rng);
    const auto m = warp_image(f, testutil::random_field(g, rng, 0.8));
    const auto a = register_global(m, f, 0.3, 0.1, quick(2, 60));
    const auto b = register_global(m, f, 0.3, 0.1, quick(2, 60));
    CHECK(a.field.data == b.field.data);
}

TEST_CASE("spatially varying maps and 3D inputs") {
    std::mt19937_64 rng(7);
    const Grid g = Grid::make({16, 16, 16});
    const auto f = testutil::random_image(g, rng);
    const auto m = warp_image(f, testutil::random_field(g, rng, 0.5));
    ParamMaps maps = ParamMaps::constant(g, 0.1, 0.1);
    for (std::size_t x = 0; x < g.size() / 2; ++x) maps.mu_map[x] = 0.9;
    SolverConfig cfg = quick(2, 20);
    cfg.ncc = NccConfig::defaults_for(3);
    const auto reg = register_images(m, f, maps, cfg);
    CHECK(reg.field.ndim() == 3);
    CHECK(reg.field.data.size() == 3 * g.size());
    reg.field.require_finite();
    for (const auto& r : reg.trace.records) {
        if (r.level == 1) CHECK(reg.trace.level_final_loss[1] <= r.loss);
    }
}

TEST_CASE("solver errors") {
    const Grid g = Grid::make({16, 16});
    const ScalarImage a(g, 0.0);
    CHECK_THROWS_AS(register_global(a, ScalarImage(Grid::make({16, 12})), 0.1, 0.1, SolverConfig{}), ValidationError);
    CHECK_THROWS_AS(register_global(a, a, 1.5, 0.1, SolverConfig{}), ValidationError);

    SolverConfig bad;
    bad.levels = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = SolverConfig{};
    bad.step_size = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = SolverConfig{};
    bad.beta2 = 1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = SolverConfig{};
    bad.iters_per_level = {10, -1};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = SolverConfig{};
    bad.convergence_tol = -1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = SolverConfig{};
    bad.levels = 6;
    CHECK_THROWS_AS(register_global(a, a, 0.1, 0.1, bad), ValidationError);

    std::mt19937_64 rng(9);
    auto m = testutil::random_image(g, rng);
    m[17] = std::numeric_limits<double>::quiet_NaN();
    try {
        register_global(m, testutil::random_image(g, rng), 0.1, 0.1, quick(1, 5));
        FAIL("expected divergence");
    } catch (const SolverDivergence& e) {
        CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
        CHECK(e.trace().records.empty());
    }
}

TEST_CASE("iteration schedule repeats its last entry") {
    SolverConfig cfg;
    cfg.iters_per_level = {7, 5};
    CHECK(cfg.iterations_for_level(0) == 7);
    CHECK(cfg.iterations_for_level(1) == 5);
    CHECK(cfg.iterations_for_level(4) == 5);
}
