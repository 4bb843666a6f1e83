#include "elastreg/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "elastreg/error.hpp"
#include "elastreg/image_ops.hpp"

namespace elastreg {

namespace {

struct Plane {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
};

// 2D images pass through; 3D images yield their middle slice along axis 0.
Plane plane_of(const Grid& g, std::span<const double> data) {
    Plane p;
    std::size_t offset = 0;
    if (g.ndim == 2) {
        p.rows = g.dims[0];
        p.cols = g.dims[1];
    } else {
        p.rows = g.dims[1];
        p.cols = g.dims[2];
        offset = static_cast<std::size_t>(g.dims[0] / 2) * g.stride(0);
    }
    const std::size_t n = static_cast<std::size_t>(p.rows) * p.cols;
    p.values.assign(data.begin() + static_cast<std::ptrdiff_t>(offset),
                    data.begin() + static_cast<std::ptrdiff_t>(offset + n));
    return p;
}

unsigned char to_byte(double v, double lo, double hi) {
    if (!(hi > lo)) return 0;
    const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(t * 255.0));
}

void write_binary(const std::filesystem::path& path, const std::string& header, const std::vector<unsigned char>& px) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << header;
    os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

void write_plane_pgm(const std::filesystem::path& path, const Plane& p, double lo, double hi) {
    std::vector<unsigned char> px(p.values.size());
    std::transform(p.values.begin(), p.values.end(), px.begin(), [&](double v) { return to_byte(v, lo, hi); });
    write_binary(path, "P5\n" + std::to_string(p.cols) + " " + std::to_string(p.rows) + "\n255\n", px);
}

} // namespace

void write_pgm(const std::filesystem::path& path, const ScalarImage& image, double lo, double hi) {
    write_plane_pgm(path, plane_of(image.grid, image.data), lo, hi);
}

void write_pgm(const std::filesystem::path& path, const ScalarImage& image) {
    const Plane p = plane_of(image.grid, image.data);
    const auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
    write_plane_pgm(path, p, *lo, *hi);
}

void write_jacobian_panels(const std::filesystem::path& positive_pgm, const std::filesystem::path& negative_pgm,
                           const std::filesystem::path& combined_ppm, const ScalarImage& jacobian) {
    Plane p = plane_of(jacobian.grid, jacobian.data);
    double pos_max = 0.0, neg_max = 0.0;
    for (double v : p.values) {
        pos_max = std::max(pos_max, v);
        neg_max = std::max(neg_max, -v);
    }
    Plane pos = p, neg = p;
    for (std::size_t k = 0; k < p.values.size(); ++k) {
        pos.values[k] = std::max(p.values[k], 0.0);
        neg.values[k] = std::max(-p.values[k], 0.0);
    }
    write_plane_pgm(positive_pgm, pos, 0.0, pos_max);
    write_plane_pgm(negative_pgm, neg, 0.0, neg_max);

    std::vector<unsigned char> rgb(3 * p.values.size(), 0);
    for (std::size_t k = 0; k < p.values.size(); ++k) {
        rgb[3 * k + 0] = to_byte(neg.values[k], 0.0, neg_max);
        rgb[3 * k + 2] = to_byte(pos.values[k], 0.0, pos_max);
    }
    write_binary(combined_ppm, "P6\n" + std::to_string(p.cols) + " " + std::to_string(p.rows) + "\n255\n", rgb);
}

void write_difference_pgm(const std::filesystem::path& path, const ScalarImage& fixed, const ScalarImage& warped) {
    require_same_shape(fixed.grid, warped.grid, "write_difference_pgm");
    ScalarImage diff(fixed.grid);
    double amax = 0.0;
    for (std::size_t k = 0; k < diff.size(); ++k) {
        diff[k] = fixed[k] - warped[k];
        amax = std::max(amax, std::abs(diff[k]));
    }
    if (amax == 0.0) amax = 1.0;
    write_pgm(path, diff, -amax, amax);
}

void write_deformation_grid(const std::filesystem::path& path, const DisplacementField& field, int line_step) {
    if (line_step < 1) throw ValidationError("grid line step must be positive");
    const Grid& g = field.grid;
    const int d = g.ndim;
    // The two in-plane axes of the rendered slice.
    const int a0 = d - 2, a1 = d - 1;
    const Plane u0 = plane_of(g, field.component(a0));
    const Plane u1 = plane_of(g, field.component(a1));
    const int rows = u0.rows, cols = u0.cols;
    std::vector<unsigned char> px(static_cast<std::size_t>(rows) * cols, 255);
    auto cell = [&](double coord) { return static_cast<long>(std::floor(coord / line_step)); };
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * cols + c;
            const double pr = r + u0.values[k], pc = c + u1.values[k];
            bool line = false;
            if (r + 1 < rows) line |= cell(pr) != cell(r + 1 + u0.values[k + cols]);
            if (c + 1 < cols) line |= cell(pc) != cell(c + 1 + u1.values[k + 1]);
            if (line) px[k] = 0;
        }
    }
    write_binary(path, "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n", px);
}

} // namespace elastreg
