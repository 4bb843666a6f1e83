#include "elastreg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "elastreg/error.hpp"

namespace elastreg {

Grid Grid::make(const std::vector<int>& dims, double spacing) {
    return make(dims, std::vector<double>(dims.size(), spacing));
}

Grid Grid::make(const std::vector<int>& dims, const std::vector<double>& spacing) {
    if (dims.size() != 2 && dims.size() != 3) {
        throw ValidationError("grid must be 2D or 3D, got " + std::to_string(dims.size()) + " axes");
    }
    if (spacing.size() != dims.size()) {
        throw ValidationError("spacing has " + std::to_string(spacing.size()) + " entries for " +
                              std::to_string(dims.size()) + " axes");
    }
    Grid g;
    g.ndim = static_cast<int>(dims.size());
    for (int a = 0; a < g.ndim; ++a) {
        g.dims[a] = dims[a];
        g.spacing[a] = spacing[a];
    }
    g.validate();
    return g;
}

std::size_t Grid::size() const {
    std::size_t n = 1;
    for (int a = 0; a < ndim; ++a) n *= static_cast<std::size_t>(dims[a]);
    return n;
}

std::size_t Grid::stride(int axis) const {
    std::size_t s = 1;
    for (int a = ndim - 1; a > axis; --a) s *= static_cast<std::size_t>(dims[a]);
    return s;
}

double Grid::voxel_volume() const {
    double v = 1.0;
    for (int a = 0; a < ndim; ++a) v *= spacing[a];
    return v;
}

std::vector<int> Grid::dim_vector() const { return {dims.begin(), dims.begin() + ndim}; }

bool Grid::same_shape(const Grid& other) const {
    if (ndim != other.ndim) return false;
    for (int a = 0; a < ndim; ++a) {
        if (dims[a] != other.dims[a]) return false;
    }
    return true;
}

std::string Grid::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (int a = 0; a < ndim; ++a) os << (a ? "x" : "") << dims[a];
    os << ']';
    return os.str();
}

void Grid::validate() const {
    if (ndim != 2 && ndim != 3) throw ValidationError("grid must be 2D or 3D");
    for (int a = 0; a < ndim; ++a) {
        if (dims[a] < 1) throw ValidationError("grid extent must be positive, got " + shape_string());
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw ValidationError("grid spacing must be positive and finite");
        }
    }
}

void require_same_shape(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ValidationError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                              b.shape_string());
    }
}

ScalarImage::ScalarImage(const Grid& g, double fill) : grid(g), data(g.size(), fill) {}

ScalarImage::ScalarImage(const Grid& g, std::vector<double> values) : grid(g), data(std::move(values)) {
    if (data.size() != grid.size()) {
        throw ValidationError("image data has " + std::to_string(data.size()) + " samples for grid " +
                              grid.shape_string());
    }
}

void ScalarImage::require_finite() const {
    if (!std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); })) {
        throw ValidationError("image contains non-finite intensities");
    }
}

DisplacementField::DisplacementField(const Grid& g)
    : grid(g), data(static_cast<std::size_t>(g.ndim) * g.size(), 0.0) {}

DisplacementField::DisplacementField(const Grid& g, std::vector<double> values)
    : grid(g), data(std::move(values)) {
    if (data.size() != static_cast<std::size_t>(grid.ndim) * grid.size()) {
        throw ValidationError("field data has " + std::to_string(data.size()) + " components for grid " +
                              grid.shape_string());
    }
}

std::span<double> DisplacementField::component(int j) {
    return {data.data() + static_cast<std::size_t>(j) * points(), points()};
}

std::span<const double> DisplacementField::component(int j) const {
    return {data.data() + static_cast<std::size_t>(j) * points(), points()};
}

void DisplacementField::require_finite() const {
    if (!std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); })) {
        throw ValidationError("displacement field contains non-finite components");
    }
}

SegmentationMap::SegmentationMap(const Grid& g, std::vector<std::int32_t> values, int classes)
    : grid(g), labels(std::move(values)), class_count(classes) {
    if (labels.size() != grid.size()) {
        throw ValidationError("label data has " + std::to_string(labels.size()) + " entries for grid " +
                              grid.shape_string());
    }
    if (class_count < 0) {
        class_count = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
        class_count = std::max(class_count, 0);
    }
    validate();
}

void SegmentationMap::validate() const {
    for (auto l : labels) {
        if (l < 0 || l > class_count) {
            throw ValidationError("label " + std::to_string(l) + " outside {0.." + std::to_string(class_count) +
                                  "}");
        }
    }
}

void Keypoints::require_inside(const Grid& g) const {
    if (ndim != g.ndim) throw ValidationError("keypoint dimensionality does not match grid");
    for (std::size_t k = 0; k < points.size(); ++k) {
        for (int a = 0; a < ndim; ++a) {
            const double c = points[k][a];
            if (!(c >= 0.0 && c <= g.dims[a] - 1)) {
                throw ValidationError("keypoint " + std::to_string(k) + " lies outside grid " + g.shape_string());
            }
        }
    }
}

} // namespace elastreg
