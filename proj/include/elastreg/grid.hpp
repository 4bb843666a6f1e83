#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace elastreg {

/// Regular 2D or 3D lattice. Axis 0 varies slowest (row-major); vector
/// component j of a field always refers to axis j.
struct Grid {
    int ndim = 2;
    std::array<int, 3> dims{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    static Grid make(const std::vector<int>& dims, double spacing = 1.0);
    static Grid make(const std::vector<int>& dims, const std::vector<double>& spacing);

    std::size_t size() const;
    std::size_t stride(int axis) const;
    double voxel_volume() const;
    std::vector<int> dim_vector() const;

    /// Same dimensionality and extents; spacing is not compared.
    bool same_shape(const Grid& other) const;
    std::string shape_string() const;

    void validate() const;
};

/// Throws ValidationError naming both shapes unless `a` and `b` agree.
void require_same_shape(const Grid& a, const Grid& b, const char* what);

struct ScalarImage {
    Grid grid;
    std::vector<double> data;

    ScalarImage() = default;
    explicit ScalarImage(const Grid& g, double fill = 0.0);
    ScalarImage(const Grid& g, std::vector<double> values);

    std::size_t size() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    /// Throws if any sample is NaN or infinite.
    void require_finite() const;
};

/// Displacements u in pixel units, stored component-major: all of u_0, then u_1, ...
struct DisplacementField {
    Grid grid;
    std::vector<double> data;

    DisplacementField() = default;
    explicit DisplacementField(const Grid& g);
    DisplacementField(const Grid& g, std::vector<double> values);

    int ndim() const { return grid.ndim; }
    std::size_t points() const { return grid.size(); }
    std::span<double> component(int j);
    std::span<const double> component(int j) const;

    void require_finite() const;
};

struct SegmentationMap {
    Grid grid;
    std::vector<std::int32_t> labels;
    /// Number of foreground classes C; labels live in {0, ..., C}.
    int class_count = 0;

    SegmentationMap() = default;
    /// class_count < 0 means "infer from the largest label".
    SegmentationMap(const Grid& g, std::vector<std::int32_t> values, int class_count = -1);

    std::size_t size() const { return labels.size(); }
    void validate() const;
};

using Point = std::array<double, 3>;

struct Keypoints {
    int ndim = 2;
    std::vector<Point> points;

    std::size_t size() const { return points.size(); }
    /// Throws unless every coordinate lies in [0, dims-1].
    void require_inside(const Grid& g) const;
};

} // namespace elastreg
