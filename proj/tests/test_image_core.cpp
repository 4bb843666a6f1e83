#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "elastreg/error.hpp"
#include "elastreg/image_ops.hpp"
#include "elastreg/tensor_io.hpp"
#include "helpers.hpp"

using namespace elastreg;
using testutil::idx2;

TEST_CASE("grid validation and shape errors") {
    CHECK_THROWS_AS(Grid::make({4}), ValidationError);
    CHECK_THROWS_AS(Grid::make({4, 0}), ValidationError);
    CHECK_THROWS_AS(Grid::make({4, 4}, -1.0), ValidationError);
    CHECK_THROWS_AS(ScalarImage(Grid::make({2, 2}), std::vector<double>(3)), ValidationError);

    const auto a = ScalarImage(Grid::make({4, 5}));
    const auto b = ScalarImage(Grid::make({5, 4}));
    try {
        warp_image(a, DisplacementField(b.grid));
        FAIL("expected a shape error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("4x5") != std::string::npos);
        CHECK(msg.find("5x4") != std::string::npos);
    }
    ScalarImage bad(Grid::make({2, 2}));
    bad.data[1] = std::nan("");
    CHECK_THROWS_AS(bad.require_finite(), ValidationError);

    CHECK_THROWS_AS(SegmentationMap(Grid::make({2, 2}), {0, 1, 3, 0}, 2), ValidationError);
    CHECK_THROWS_AS(SegmentationMap(Grid::make({2, 2}), {0, -1, 0, 0}, 2), ValidationError);
    CHECK(SegmentationMap(Grid::make({2, 2}), {0, 1, 3, 0}).class_count == 3);
}

TEST_CASE("warp_image with zero field is byte-identical") {
    std::mt19937_64 rng(1);
    for (auto dims : {std::vector<int>{13, 17}, std::vector<int>{5, 6, 7}}) {
        const auto img = testutil::random_image(Grid::make(dims), rng, -3.0, 3.0);
        const auto out = warp_image(img, DisplacementField(img.grid));
        REQUIRE(out.data.size() == img.data.size());
        CHECK(std::memcmp(out.data.data(), img.data.data(), img.data.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("half-pixel shift gives neighbour means") {
    const Grid g = Grid::make({2, 4});
    ScalarImage row(g, {0, 1, 2, 3, 0, 1, 2, 3});
    DisplacementField u(g);
    for (auto& v : u.component(1)) v = 0.5;
    const auto out = warp_image(row, u);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(1.5));
    CHECK(out[2] == doctest::Approx(2.5));
    CHECK(out[3] == doctest::Approx(3.0)); // clamped at the border
}

TEST_CASE("integer shift matches index arithmetic") {
    const Grid g = Grid::make({16, 16});
    ScalarImage ramp(g);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) ramp[idx2(g, r, c)] = 3.0 * r + 0.25 * c;
    DisplacementField u(g);
    for (auto& v : u.component(0)) v = 2.0;
    const auto out = warp_image(ramp, u);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) CHECK(out[idx2(g, r, c)] == ramp[idx2(g, std::min(r + 2, 15), c)]);
}

TEST_CASE("warp_labels: identity, integer shift, no invented labels") {
    const Grid g = Grid::make({12, 12});
    std::vector<std::int32_t> lab(g.size(), 0);
    for (int r = 3; r < 7; ++r)
        for (int c = 4; c < 9; ++c) lab[idx2(g, r, c)] = 1;
    const SegmentationMap seg(g, lab, 1);
    CHECK(warp_labels(seg, DisplacementField(g)).labels == seg.labels);

    DisplacementField shift(g);
    for (auto& v : shift.component(1)) v = -2.0;
    const auto moved = warp_labels(seg, shift);
    for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 12; ++c) CHECK(moved.labels[idx2(g, r, c)] == lab[idx2(g, r, std::max(c - 2, 0))]);

    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> pick(0, 2);
    std::vector<std::int32_t> three(g.size());
    for (auto& v : three) v = pick(rng);
    const SegmentationMap s3(g, three, 2);
    DisplacementField frac(g);
    for (auto& v : frac.data) v = 0.4;
    for (auto v : warp_labels(s3, frac).labels) CHECK((v >= 0 && v <= 2));
    auto field = testutil::random_field(g, rng, 3.0);
    std::set<int> seen(three.begin(), three.end());
    for (auto v : warp_labels(s3, field).labels) CHECK(seen.count(v) == 1);
}

TEST_CASE("forward_diff") {
    const Grid g = Grid::make({8, 8});
    DisplacementField cst(g);
    for (auto& v : cst.data) v = 4.2;
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i)
            for (double v : forward_diff(cst, j, i).data) CHECK(v == 0.0);

    DisplacementField ramp(g);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) ramp.component(1)[idx2(g, r, c)] = 0.1 * c;
    const auto d = forward_diff(ramp, 1, 1);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) CHECK(d[idx2(g, r, c)] == doctest::Approx(c == 7 ? 0.0 : 0.1));

    std::mt19937_64 rng(11);
    const Grid gs = Grid::make({8, 8}, std::vector<double>{0.5, 2.0});
    const auto u = testutil::random_field(gs, rng, 1.0);
    const auto w = testutil::random_field(gs, rng, 1.0);
    for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 2; ++i) {
            const auto out = forward_diff(u, j, i);
            for (int r = 0; r < 8; ++r) {
                for (int c = 0; c < 8; ++c) {
                    const int r2 = r + (i == 0), c2 = c + (i == 1);
                    double expect = 0.0;
                    if (r2 < 8 && c2 < 8) {
                        expect = (u.component(j)[idx2(gs, r2, c2)] - u.component(j)[idx2(gs, r, c)]) / gs.spacing[i];
                    }
                    CHECK(out[idx2(gs, r, c)] == doctest::Approx(expect).epsilon(1e-14));
                }
            }
            // Linearity.
            DisplacementField mix(gs);
            for (std::size_t k = 0; k < mix.data.size(); ++k) mix.data[k] = 2.5 * u.data[k] - 0.75 * w.data[k];
            const auto dm = forward_diff(mix, j, i);
            const auto du = forward_diff(u, j, i);
            const auto dw = forward_diff(w, j, i);
            for (std::size_t k = 0; k < dm.size(); ++k) {
                CHECK(dm[k] == doctest::Approx(2.5 * du[k] - 0.75 * dw[k]).epsilon(1e-12));
            }
        }
    }
    CHECK_THROWS_AS(forward_diff(u, 2, 0), ValidationError);
    CHECK_THROWS_AS(forward_diff(u, 0, -1), ValidationError);
}

TEST_CASE("forward difference adjoint is the transpose") {
    std::mt19937_64 rng(3);
    const Grid g = Grid::make({6, 7, 5}, std::vector<double>{1.0, 0.5, 2.0});
    const auto a = testutil::random_image(g, rng, -1, 1);
    const auto b = testutil::random_image(g, rng, -1, 1);
    for (int axis = 0; axis < 3; ++axis) {
        std::vector<double> da(g.size()), adj(g.size(), 0.0);
        forward_difference(g, a.data, axis, da);
        forward_difference_adjoint_add(g, b.data, axis, adj);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
            lhs += da[k] * b.data[k];
            rhs += a.data[k] * adj[k];
        }
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("jacobian determinant closed forms") {
    const Grid g = Grid::make({8, 8});
    for (double v : jacobian_determinant_map(DisplacementField(g)).data) CHECK(v == 1.0);

    for (double slope : {-0.5, -2.0}) {
        DisplacementField u(g);
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) u.component(1)[idx2(g, r, c)] = slope * c;
        const auto det = jacobian_determinant_map(u);
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) CHECK(det[idx2(g, r, c)] == doctest::Approx(c == 7 ? 1.0 : 1.0 + slope));
    }

    // Shear in 3D: det of a unit upper-triangular matrix is 1.
    const Grid g3 = Grid::make({4, 4, 4});
    DisplacementField s(g3);
    const std::size_t st0 = g3.stride(0);
    for (std::size_t x = 0; x < g3.size(); ++x) s.component(2)[x] = 0.7 * static_cast<double>(x / st0);
    for (double v : jacobian_determinant_map(s).data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("pyramid") {
    const Grid g = Grid::make({128, 128});
    const auto pyr = build_pyramid(ScalarImage(g, 0.3), 3);
    REQUIRE(pyr.size() == 3);
    CHECK(pyr[1].grid.dims[0] == 64);
    CHECK(pyr[2].grid.dims[1] == 32);
    CHECK(pyr[2].grid.spacing[0] == 4.0);
    for (const auto& lvl : pyr)
        for (double v : lvl.data) CHECK(v == doctest::Approx(0.3));

    const Grid c = Grid::make({8, 8});
    ScalarImage checker(c);
    for (int r = 0; r < 8; ++r)
        for (int k = 0; k < 8; ++k) checker[idx2(c, r, k)] = (r + k) % 2 ? 1.0 : 3.0;
    for (double v : downsample(checker).data) CHECK(v == doctest::Approx(2.0));

    std::mt19937_64 rng(9);
    const auto img = testutil::random_image(Grid::make({32, 16}), rng);
    double mean0 = 0.0;
    for (double v : img.data) mean0 += v;
    mean0 /= static_cast<double>(img.size());
    for (const auto& lvl : build_pyramid(img, 4)) {
        double m = 0.0;
        for (double v : lvl.data) m += v;
        CHECK(m / static_cast<double>(lvl.size()) == doctest::Approx(mean0).epsilon(1e-5));
    }
    CHECK(build_pyramid(ScalarImage(Grid::make({9, 9})), 2)[1].grid.dims[0] == 4);
    CHECK_THROWS_AS(build_pyramid(ScalarImage(Grid::make({8, 8})), 5), ValidationError);
    CHECK_THROWS_AS(build_pyramid(ScalarImage(Grid::make({8, 8})), 0), ValidationError);
}

TEST_CASE("upsample_field") {
    const Grid g = Grid::make({8, 8});
    for (double v : upsample_field(DisplacementField(g), {16, 17}).data) CHECK(v == 0.0);

    DisplacementField cst(g);
    for (auto& v : cst.component(0)) v = 1.0;
    const auto up = upsample_field(cst, {16, 16});
    for (auto v : up.component(0)) CHECK(v == doctest::Approx(2.0));
    for (auto v : up.component(1)) CHECK(v == 0.0);

    // Linear field: u_0 = a r + b, u_1 = c k.
    DisplacementField lin(g);
    for (int r = 0; r < 8; ++r) {
        for (int k = 0; k < 8; ++k) {
            lin.component(0)[idx2(g, r, k)] = 0.3 * r - 0.4;
            lin.component(1)[idx2(g, r, k)] = -0.2 * k;
        }
    }
    const auto lu = upsample_field(lin, {16, 16});
    const Grid t = lu.grid;
    for (int r = 0; r < 15; ++r) {
        for (int k = 0; k < 15; ++k) {
            CHECK(lu.component(0)[idx2(t, r, k)] == doctest::Approx(2.0 * (0.3 * (r / 2.0) - 0.4)));
            CHECK(lu.component(1)[idx2(t, r, k)] == doctest::Approx(2.0 * (-0.2 * (k / 2.0))));
        }
    }

    std::mt19937_64 rng(2);
    const auto src = testutil::random_field(Grid::make({6, 10}), rng, 2.0);
    const auto dst = upsample_field(src, {12, 20});
    for (int r = 0; r < 6; ++r)
        for (int k = 0; k < 10; ++k)
            for (int j = 0; j < 2; ++j)
                CHECK(dst.component(j)[idx2(dst.grid, 2 * r, 2 * k)] ==
                      doctest::Approx(2.0 * src.component(j)[idx2(src.grid, r, k)]).epsilon(1e-6));

    CHECK_THROWS_AS(upsample_field(cst, {7, 16}), ValidationError);
    CHECK_THROWS_AS(upsample_field(cst, {16, 19}), ValidationError);
    CHECK_THROWS_AS(upsample_field(cst, {16}), ValidationError);
}

TEST_CASE("tensor files are bit-exact") {
    const auto dir = std::filesystem::temp_directory_path() / "elastreg_tensor_test";
    std::filesystem::create_directories(dir);
    const Grid g = Grid::make({2, 3});
    ScalarImage img(g, {0.0, 1.5, -2.0, 3.25, 4.0, 5.5});
    write_tensor(dir / "img.ten", img);

    std::ifstream is(dir / "img.ten", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 8 + 4 + 2 * 4 + 1 + 6 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "TENSOR01");
    CHECK(bytes[8] == 2);
    CHECK(bytes[9] == 0);
    CHECK(bytes[12] == 2);
    CHECK(bytes[16] == 3);
    CHECK(bytes[20] == 0);
    float second;
    std::memcpy(&second, bytes.data() + 21 + 4, 4);
    CHECK(second == 1.5f);

    const auto back = read_image(dir / "img.ten");
    CHECK(back.data == img.data);

    DisplacementField f(g);
    for (std::size_t k = 0; k < f.data.size(); ++k) f.data[k] = 0.5 * static_cast<double>(k);
    write_tensor(dir / "f.ten", f);
    const auto raw = read_tensor(dir / "f.ten");
    CHECK(raw.dims == std::vector<std::uint32_t>{2, 2, 3});
    CHECK(read_field(dir / "f.ten").data == f.data);

    const SegmentationMap seg(g, {0, 1, 2, 2, 1, 0});
    write_tensor(dir / "s.ten", seg);
    CHECK(read_tensor(dir / "s.ten").dtype == RawTensor::DType::Int32);
    CHECK(read_labels(dir / "s.ten").labels == seg.labels);

    {
        std::ofstream bad(dir / "bad.ten", std::ios::binary);
        bad << "NOTATENSOR";
    }
    CHECK_THROWS_AS(read_tensor(dir / "bad.ten"), IoError);
    CHECK_THROWS_AS(read_tensor(dir / "missing.ten"), IoError);
    CHECK_THROWS_AS(read_labels(dir / "img.ten"), IoError);
    std::filesystem::remove_all(dir);
}
