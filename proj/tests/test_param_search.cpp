#include <random>
#include <sstream>

#include <json.hpp>

#include "doctest.h"
#include "elastreg/image_ops.hpp"
#include "elastreg/param_search.hpp"
#include "elastreg/phantom.hpp"
#include "helpers.hpp"

using namespace elastreg;

namespace {

// Dice by explicit counting, independent of the metrics module.
double count_dice(const SegmentationMap& a, const SegmentationMap& b, int c) {
    int na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a.labels[i] == c;
        nb += b.labels[i] == c;
        both += a.labels[i] == c && b.labels[i] == c;
    }
    return na + nb == 0 ? 1.0 : 2.0 * both / static_cast<double>(na + nb);
}

SolverConfig small_cfg() {
    SolverConfig cfg;
    cfg.levels = 2;
    cfg.iters_per_level = {60, 40};
    return cfg;
}

const PhantomSample& small_phantom(int index) {
    static const auto cohort = [] {
        PhantomSpec spec;
        spec.dims = {40, 40};
        spec.spacing = 1.0 / 16.0;
        return generate_cohort(spec, 3, 77);
    }();
    return cohort.at(static_cast<std::size_t>(index));
}

GridScore row(double l, double m, std::vector<double> dice) {
    GridScore g{l, m, dice, 0.0};
    g.mean_dice = (dice[1] + dice[2]) / 2.0;
    return g;
}

} // namespace

TEST_CASE("search grid parsing") {
    const auto d = SearchGrid::default_grid();
    REQUIRE(d.values.size() == 11);
    CHECK(d.values.front() == 0.0);
    CHECK(d.values.back() == 1.0);
    CHECK(d.values[3] == 0.3);

    const auto p = SearchGrid::parse("0:1:0.1");
    CHECK(p.values == d.values);
    CHECK(SearchGrid::parse("0.2:0.5:0.1").values == std::vector<double>{0.2, 0.3, 0.4, 0.5});
    CHECK(SearchGrid::parse("0:1:0.25").values.size() == 5);
    CHECK(SearchGrid::parse("0:0.5:0.2").values == std::vector<double>{0.0, 0.2, 0.4});
    CHECK(SearchGrid::parse("0.5:0.5:0.1").values == std::vector<double>{0.5});

    for (const char* bad : {"", "0:1", "0:1:0", "1:0:0.1", "a:1:0.1", "0:1.5:0.5", "0:1:0.1:2", "-0.1:1:0.1"}) {
        CHECK_THROWS_AS(SearchGrid::parse(bad), ValidationError);
    }
    CHECK_THROWS_AS((SearchGrid{{0.2, 0.1}}.validate()), ValidationError);
    CHECK_THROWS_AS(SearchGrid{}.validate(), ValidationError);
}

TEST_CASE("tissue elasticity") {
    const auto u = TissueElasticity::uniform(2, 0.3, 0.7);
    REQUIRE(u.entries.size() == 3);
    REQUIRE(u.find(2) != nullptr);
    CHECK(u.find(2)->mu == 0.7);
    CHECK(u.find(3) == nullptr);

    TissueElasticity t{{{0, 0.1, 0.2}, {1, 0.0, 1.0}, {2, 0.55, 0.25}}};
    const auto back = TissueElasticity::from_json(t.to_json());
    REQUIRE(back.entries.size() == 3);
    for (int c = 0; c < 3; ++c) {
        CHECK(back.entries[c].label == t.entries[c].label);
        CHECK(back.entries[c].lambda == t.entries[c].lambda);
        CHECK(back.entries[c].mu == t.entries[c].mu);
    }

    CHECK_THROWS_AS((TissueElasticity{{{0, 1.2, 0.0}}}.validate()), ValidationError);
    CHECK_THROWS_AS((TissueElasticity{{{0, 0.1, 0.1}, {0, 0.2, 0.2}}}.validate()), ValidationError);
    CHECK_THROWS_AS((TissueElasticity{{{-1, 0.1, 0.1}}}.validate()), ValidationError);
    CHECK_THROWS_AS(TissueElasticity::from_json("{\"classes\": [{\"label\": 0}]}"), ValidationError);
    CHECK_THROWS_AS(TissueElasticity::from_json("not json"), ValidationError);
}

TEST_CASE("parameter maps hold the per-tissue values") {
    const Grid g = Grid::make({5, 7});
    std::vector<std::int32_t> v(g.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::int32_t>(i % 3);
    const SegmentationMap seg(g, v, 2);
    const TissueElasticity t{{{0, 0.1, 0.9}, {1, 0.4, 0.5}, {2, 1.0, 0.0}}};
    const auto maps = build_param_maps(seg, t);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(maps.lambda_map[i] == t.find(v[i])->lambda);
        CHECK(maps.mu_map[i] == t.find(v[i])->mu);
    }
    CHECK_THROWS_AS(build_param_maps(seg, TissueElasticity{{{0, 0.1, 0.1}, {1, 0.1, 0.1}}}), ValidationError);
}

TEST_CASE("selection re-reads the table with first-row tie breaking") {
    SearchResult r;
    r.class_count = 2;
    r.table = {row(0.0, 0.0, {0.9, 0.5, 0.7}), row(0.0, 0.5, {0.95, 0.8, 0.7}), row(0.5, 0.0, {0.95, 0.6, 0.9}),
               row(0.5, 0.5, {0.8, 0.8, 0.6})};
    select_best(r, {true, true, true});
    REQUIRE(r.per_class.size() == 3);
    CHECK(r.per_class[0].lambda == 0.0);
    CHECK(r.per_class[0].mu == 0.5);
    CHECK(r.per_class[1].mu == 0.5);
    CHECK(r.per_class[1].lambda == 0.0);
    CHECK(r.per_class[2].lambda == 0.5);
    CHECK(r.per_class[2].mu == 0.0);
    CHECK(r.per_class[2].dice == 0.9);
    // Means 0.6, 0.75, 0.75, 0.7: the first of the tied pair wins.
    CHECK(r.global_lambda == 0.0);
    CHECK(r.global_mu == 0.5);
    CHECK(r.global_mean_dice == 0.75);
    CHECK(r.parameter_count() == 6);

    select_best(r, {true, true, false});
    CHECK_FALSE(r.per_class[2].defined);
    const auto t = r.tissue_elasticity();
    CHECK(t.find(2)->lambda == r.global_lambda);
    CHECK(t.find(2)->mu == r.global_mu);

    SearchResult empty;
    CHECK_THROWS_AS(select_best(empty, {}), ValidationError);
}

TEST_CASE("perfect-match degeneracy") {
    std::mt19937_64 rng(2);
    const Grid g = Grid::make({32, 32});
    const auto img = testutil::smooth_texture(g, rng);
    std::vector<std::int32_t> v(g.size(), 0);
    for (int r = 8; r < 20; ++r)
        for (int c = 6; c < 16; ++c) v[testutil::idx2(g, r, c)] = 1;
    for (int r = 18; r < 28; ++r)
        for (int c = 20; c < 28; ++c) v[testutil::idx2(g, r, c)] = 2;
    const SegmentationMap seg(g, v, 2);
    const Subject s{3, img, img, seg, seg};
    const auto r = grid_search_subject(s, SearchGrid{{0.1, 0.5}}, small_cfg(), 1);
    CHECK(r.subject == 3);
    REQUIRE(r.table.size() == 4);
    for (const auto& row : r.table)
        for (double d : row.dice) CHECK(d == 1.0);
    for (const auto& b : r.per_class) {
        CHECK(b.lambda == 0.1);
        CHECK(b.mu == 0.1);
    }
    CHECK(r.global_lambda == 0.1);
    CHECK(r.global_mean_dice == 1.0);
    CHECK(r.warnings.empty());
}

TEST_CASE("two-tissue phantom: argmax equals an exhaustive recomputation") {
    const auto p = small_phantom(0);
    const SearchGrid grid{{0.05, 0.3, 0.7}};
    const auto cfg = small_cfg();
    const auto r = grid_search_subject(p.subject(), grid, cfg, 1);
    REQUIRE(r.table.size() == 9);

    std::vector<std::vector<double>> dice(9, std::vector<double>(3));
    for (int k = 0; k < 9; ++k) {
        const double l = grid.values[k / 3], m = grid.values[k % 3];
        CHECK(r.table[k].lambda == l);
        CHECK(r.table[k].mu == m);
        const auto reg = register_global(p.moving, p.fixed, l, m, cfg);
        const auto warped = warp_labels(p.seg_moving, reg.field);
        for (int c = 0; c < 3; ++c) {
            dice[k][c] = count_dice(warped, p.seg_fixed, c);
            CHECK(r.table[k].dice[c] == doctest::Approx(dice[k][c]).epsilon(1e-12));
        }
    }
    for (int c = 0; c < 3; ++c) {
        int best = 0;
        for (int k = 1; k < 9; ++k)
            if (dice[k][c] > dice[best][c]) best = k;
        CHECK(r.per_class[c].lambda == grid.values[best / 3]);
        CHECK(r.per_class[c].mu == grid.values[best % 3]);
    }
    int gbest = 0;
    for (int k = 1; k < 9; ++k)
        if (dice[k][1] + dice[k][2] > dice[gbest][1] + dice[gbest][2]) gbest = k;
    CHECK(r.global_lambda == grid.values[gbest / 3]);
    CHECK(r.global_mu == grid.values[gbest % 3]);
    for (const auto& row : r.table) CHECK(r.global_mean_dice >= row.mean_dice);
}

TEST_CASE("absent class is flagged undefined") {
    const auto p = small_phantom(1);
    Subject s = p.subject();
    for (auto& l : s.seg_fixed.labels)
        if (l == 2) l = 0;
    const auto r = grid_search_subject(s, SearchGrid{{0.2}}, small_cfg(), 1);
    CHECK(r.per_class[1].defined);
    CHECK_FALSE(r.per_class[2].defined);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("label 2") != std::string::npos);
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["per_class"][2]["defined"] == false);
    CHECK(j["per_class"][2]["mu"].is_null());
}

TEST_CASE("batch search: ordering, parallel agreement, failures and outputs") {
    std::vector<Subject> subjects{small_phantom(0).subject(), small_phantom(1).subject(), small_phantom(2).subject()};
    subjects[1].id = 1;
    subjects[2].id = 2;
    Subject broken = subjects[0];
    broken.id = 9;
    broken.fixed = ScalarImage(Grid::make({40, 41}));
    subjects.push_back(broken);

    const SearchGrid grid{{0.1, 0.6}};
    const auto serial = run_search_batch(subjects, grid, small_cfg(), 1);
    const auto parallel = run_search_batch(subjects, grid, small_cfg(), 3);
    REQUIRE(serial.size() == 4);
    for (int s = 0; s < 3; ++s) {
        CHECK(serial[s].subject == s);
        REQUIRE(serial[s].result.has_value());
        REQUIRE(parallel[s].result.has_value());
        for (std::size_t k = 0; k < 4; ++k) CHECK(serial[s].result->table[k].dice == parallel[s].result->table[k].dice);
        const auto single = grid_search_subject(subjects[s], grid, small_cfg(), 1);
        CHECK(single.global_mean_dice == serial[s].result->global_mean_dice);
    }
    CHECK(serial[3].subject == 9);
    CHECK_FALSE(serial[3].result.has_value());
    CHECK(serial[3].error.find("40x41") != std::string::npos);

    // Three labels, two values each, three successful subjects.
    CHECK(estimated_parameter_count(serial) == 2 * 3 * 3);

    std::ostringstream scatter;
    write_scatter_csv(scatter, serial);
    std::istringstream lines(scatter.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "class,subject,lambda,mu");
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 9);

    std::ostringstream table;
    serial[0].result->write_table_csv(table);
    CHECK(table.str().rfind("subject,lambda,mu,dice_class_0,dice_class_1,dice_class_2,dice_mean\n", 0) == 0);

    CHECK_THROWS_AS(run_search_batch({}, grid, small_cfg(), 1), ValidationError);
}
