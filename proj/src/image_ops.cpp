#include "elastreg/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "elastreg/error.hpp"

namespace elastreg {

namespace {

// Interpolation cell for one sample position.
template <int D>
struct Cell {
    std::array<std::size_t, D> offset0;
    std::array<std::size_t, D> offset1;
    std::array<double, D> t;
    std::array<bool, D> active;
};

template <int D>
inline Cell<D> locate(const Grid& g, const double* p) {
    Cell<D> c;
    for (int a = 0; a < D; ++a) {
        const int n = g.dims[a];
        const double top = static_cast<double>(n - 1);
        const double q = std::clamp(p[a], 0.0, top);
        int i0 = static_cast<int>(std::floor(q));
        if (n >= 2) i0 = std::min(i0, n - 2);
        else i0 = 0;
        const int i1 = (n >= 2) ? i0 + 1 : i0;
        const std::size_t s = g.stride(a);
        c.offset0[a] = static_cast<std::size_t>(i0) * s;
        c.offset1[a] = static_cast<std::size_t>(i1) * s;
        c.t[a] = (n >= 2) ? q - i0 : 0.0;
        c.active[a] = n >= 2 && p[a] >= 0.0 && p[a] < top;
    }
    return c;
}

template <int D>
inline double sample(const Cell<D>& c, const double* data, double* grad) {
    bool on_node = true;
    std::size_t node = 0;
    for (int a = 0; a < D; ++a) {
        if (c.t[a] == 0.0) node += c.offset0[a];
        else if (c.t[a] == 1.0) node += c.offset1[a];
        else on_node = false;
    }
    if (on_node && !grad) return data[node];
    double value = 0.0;
    if (grad) std::fill(grad, grad + D, 0.0);
    for (int corner = 0; corner < (1 << D); ++corner) {
        std::size_t off = 0;
        double w = 1.0;
        for (int a = 0; a < D; ++a) {
            const bool hi = (corner >> a) & 1;
            off += hi ? c.offset1[a] : c.offset0[a];
            w *= hi ? c.t[a] : 1.0 - c.t[a];
        }
        const double v = data[off];
        value += w * v;
        if (grad) {
            for (int a = 0; a < D; ++a) {
                if (!c.active[a]) continue;
                double wa = ((corner >> a) & 1) ? 1.0 : -1.0;
                for (int b = 0; b < D; ++b) {
                    if (b == a) continue;
                    wa *= ((corner >> b) & 1) ? c.t[b] : 1.0 - c.t[b];
                }
                grad[a] += wa * v;
            }
        }
    }
    // Exact grid nodes return the stored sample untouched.
    return on_node ? data[node] : value;
}

// Calls fn(flat_index, coords) for every grid point in row-major order.
template <int D, class Fn>
inline void for_each_point(const Grid& g, Fn&& fn) {
    std::array<int, D> x{};
    std::size_t idx = 0;
    if constexpr (D == 2) {
        for (x[0] = 0; x[0] < g.dims[0]; ++x[0])
            for (x[1] = 0; x[1] < g.dims[1]; ++x[1]) fn(idx++, x);
    } else {
        for (x[0] = 0; x[0] < g.dims[0]; ++x[0])
            for (x[1] = 0; x[1] < g.dims[1]; ++x[1])
                for (x[2] = 0; x[2] < g.dims[2]; ++x[2]) fn(idx++, x);
    }
}

template <int D>
void warp_impl(const ScalarImage& image, const DisplacementField& field, ScalarImage& out,
               DisplacementField* d_out) {
    const Grid& g = image.grid;
    const std::size_t n = g.size();
    const double* src = image.data.data();
    const double* u = field.data.data();
    double* grad_out = d_out ? d_out->data.data() : nullptr;
    for_each_point<D>(g, [&](std::size_t idx, const std::array<int, D>& x) {
        double p[D];
        for (int a = 0; a < D; ++a) p[a] = x[a] + u[a * n + idx];
        const auto cell = locate<D>(g, p);
        if (grad_out) {
            double gr[D];
            out.data[idx] = sample<D>(cell, src, gr);
            for (int a = 0; a < D; ++a) grad_out[a * n + idx] = gr[a];
        } else {
            out.data[idx] = sample<D>(cell, src, nullptr);
        }
    });
}

template <int D>
void warp_labels_impl(const SegmentationMap& seg, const DisplacementField& field, SegmentationMap& out) {
    const Grid& g = seg.grid;
    const std::size_t n = g.size();
    const double* u = field.data.data();
    for_each_point<D>(g, [&](std::size_t idx, const std::array<int, D>& x) {
        std::size_t off = 0;
        for (int a = 0; a < D; ++a) {
            const double q = std::clamp(x[a] + u[a * n + idx], 0.0, static_cast<double>(g.dims[a] - 1));
            const int k = std::min(static_cast<int>(std::floor(q + 0.5)), g.dims[a] - 1);
            off += static_cast<std::size_t>(k) * g.stride(a);
        }
        out.labels[idx] = seg.labels[off];
    });
}

void check_axis(int axis, int ndim, const char* what) {
    if (axis < 0 || axis >= ndim) {
        throw ValidationError(std::string(what) + " " + std::to_string(axis) + " out of range for " +
                              std::to_string(ndim) + "D data");
    }
}

} // namespace

double interpolate(const Grid& grid, std::span<const double> data, const Point& p) {
    if (grid.ndim == 2) return sample<2>(locate<2>(grid, p.data()), data.data(), nullptr);
    return sample<3>(locate<3>(grid, p.data()), data.data(), nullptr);
}

ScalarImage warp_image(const ScalarImage& image, const DisplacementField& field) {
    require_same_shape(image.grid, field.grid, "warp_image");
    ScalarImage out(image.grid);
    if (image.grid.ndim == 2) warp_impl<2>(image, field, out, nullptr);
    else warp_impl<3>(image, field, out, nullptr);
    return out;
}

ScalarImage warp_image_with_gradient(const ScalarImage& image, const DisplacementField& field,
                                     DisplacementField& d_output_d_u) {
    require_same_shape(image.grid, field.grid, "warp_image");
    ScalarImage out(image.grid);
    if (!d_output_d_u.grid.same_shape(image.grid) || d_output_d_u.data.size() != field.data.size()) {
        d_output_d_u = DisplacementField(image.grid);
    }
    if (image.grid.ndim == 2) warp_impl<2>(image, field, out, &d_output_d_u);
    else warp_impl<3>(image, field, out, &d_output_d_u);
    return out;
}

SegmentationMap warp_labels(const SegmentationMap& seg, const DisplacementField& field) {
    require_same_shape(seg.grid, field.grid, "warp_labels");
    SegmentationMap out;
    out.grid = seg.grid;
    out.class_count = seg.class_count;
    out.labels.resize(seg.labels.size());
    if (seg.grid.ndim == 2) warp_labels_impl<2>(seg, field, out);
    else warp_labels_impl<3>(seg, field, out);
    return out;
}

void forward_difference(const Grid& grid, std::span<const double> in, int axis, std::span<double> out) {
    const int n = grid.dims[axis];
    const std::size_t inner = grid.stride(axis);
    const std::size_t outer = grid.size() / (inner * static_cast<std::size_t>(n));
    const double inv_h = 1.0 / grid.spacing[axis];
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * static_cast<std::size_t>(n) * inner;
        for (int k = 0; k < n; ++k) {
            const std::size_t row = base + static_cast<std::size_t>(k) * inner;
            if (k == n - 1) {
                std::fill(out.begin() + row, out.begin() + row + inner, 0.0);
                continue;
            }
            for (std::size_t i = 0; i < inner; ++i) {
                out[row + i] = (in[row + inner + i] - in[row + i]) * inv_h;
            }
        }
    }
}

void forward_difference_adjoint_add(const Grid& grid, std::span<const double> in, int axis,
                                    std::span<double> accum) {
    const int n = grid.dims[axis];
    const std::size_t inner = grid.stride(axis);
    const std::size_t outer = grid.size() / (inner * static_cast<std::size_t>(n));
    const double inv_h = 1.0 / grid.spacing[axis];
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * static_cast<std::size_t>(n) * inner;
        for (int k = 0; k < n; ++k) {
            const std::size_t row = base + static_cast<std::size_t>(k) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                double v = 0.0;
                if (k >= 1) v += in[row - inner + i];
                if (k < n - 1) v -= in[row + i];
                accum[row + i] += v * inv_h;
            }
        }
    }
}

ScalarImage forward_diff(const DisplacementField& field, int component, int axis) {
    check_axis(component, field.ndim(), "component");
    check_axis(axis, field.ndim(), "axis");
    ScalarImage out(field.grid);
    forward_difference(field.grid, field.component(component), axis, out.data);
    return out;
}

DisplacementField physical_displacement(const DisplacementField& field) {
    DisplacementField out = field;
    for (int j = 0; j < field.ndim(); ++j) {
        const double s = field.grid.spacing[j];
        if (s == 1.0) continue;
        for (auto& v : out.component(j)) v *= s;
    }
    return out;
}

ScalarImage jacobian_determinant_map(const DisplacementField& field) {
    const Grid& g = field.grid;
    const int d = g.ndim;
    const std::size_t n = g.size();
    const DisplacementField phys = physical_displacement(field);
    // grad[i][j] = d u_i / d x_j
    std::vector<std::vector<double>> grad(static_cast<std::size_t>(d * d), std::vector<double>(n));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) forward_difference(g, phys.component(i), j, grad[i * d + j]);
    }
    ScalarImage out(g);
    for (std::size_t x = 0; x < n; ++x) {
        auto J = [&](int i, int j) { return (i == j ? 1.0 : 0.0) + grad[i * d + j][x]; };
        if (d == 2) {
            out.data[x] = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
        } else {
            out.data[x] = J(0, 0) * (J(1, 1) * J(2, 2) - J(1, 2) * J(2, 1)) -
                          J(0, 1) * (J(1, 0) * J(2, 2) - J(1, 2) * J(2, 0)) +
                          J(0, 2) * (J(1, 0) * J(2, 1) - J(1, 1) * J(2, 0));
        }
    }
    return out;
}

ScalarImage downsample(const ScalarImage& image) {
    const Grid& g = image.grid;
    Grid c = g;
    for (int a = 0; a < g.ndim; ++a) {
        if (g.dims[a] < 2) throw ValidationError("cannot downsample extent 1 in " + g.shape_string());
        c.dims[a] = g.dims[a] / 2;
        c.spacing[a] = 2.0 * g.spacing[a];
    }
    ScalarImage out(c);
    const int d = g.ndim;
    const double inv = 1.0 / static_cast<double>(1 << d);
    std::size_t idx = 0;
    std::array<int, 3> x{0, 0, 0};
    const int n0 = c.dims[0], n1 = c.dims[1], n2 = d == 3 ? c.dims[2] : 1;
    for (x[0] = 0; x[0] < n0; ++x[0]) {
        for (x[1] = 0; x[1] < n1; ++x[1]) {
            for (x[2] = 0; x[2] < n2; ++x[2]) {
                double sum = 0.0;
                for (int corner = 0; corner < (1 << d); ++corner) {
                    std::size_t off = 0;
                    for (int a = 0; a < d; ++a) {
                        const int k = std::min(2 * x[a] + ((corner >> a) & 1), g.dims[a] - 1);
                        off += static_cast<std::size_t>(k) * g.stride(a);
                    }
                    sum += image.data[off];
                }
                out.data[idx++] = sum * inv;
            }
        }
    }
    return out;
}

std::vector<ScalarImage> build_pyramid(const ScalarImage& image, int levels) {
    if (levels < 1) throw ValidationError("pyramid needs at least one level");
    const int need = 1 << (levels - 1);
    for (int a = 0; a < image.grid.ndim; ++a) {
        if (image.grid.dims[a] < need) {
            throw ValidationError(std::to_string(levels) + " pyramid levels need every extent >= " +
                                  std::to_string(need) + ", got " + image.grid.shape_string());
        }
    }
    std::vector<ScalarImage> out;
    out.reserve(static_cast<std::size_t>(levels));
    out.push_back(image);
    for (int l = 1; l < levels; ++l) out.push_back(downsample(out.back()));
    return out;
}

DisplacementField upsample_field(const DisplacementField& field, const std::vector<int>& target_dims) {
    const Grid& s = field.grid;
    if (static_cast<int>(target_dims.size()) != s.ndim) {
        throw ValidationError("upsample_field: target has " + std::to_string(target_dims.size()) +
                              " axes, field has " + std::to_string(s.ndim));
    }
    Grid t = s;
    std::array<double, 3> ratio{1.0, 1.0, 1.0};
    for (int a = 0; a < s.ndim; ++a) {
        if (target_dims[a] < s.dims[a]) {
            throw ValidationError("upsample_field: target extent smaller than source " + s.shape_string());
        }
        if (std::abs(target_dims[a] - 2 * s.dims[a]) > 1) {
            throw ValidationError("upsample_field: target extent must be within 1 of twice the source " +
                                  s.shape_string());
        }
        t.dims[a] = target_dims[a];
        ratio[a] = static_cast<double>(target_dims[a]) / s.dims[a];
        t.spacing[a] = s.spacing[a] / ratio[a];
    }
    DisplacementField out(t);
    const std::size_t n = t.size();
    std::array<int, 3> x{0, 0, 0};
    std::size_t idx = 0;
    const int n2 = s.ndim == 3 ? t.dims[2] : 1;
    for (x[0] = 0; x[0] < t.dims[0]; ++x[0]) {
        for (x[1] = 0; x[1] < t.dims[1]; ++x[1]) {
            for (x[2] = 0; x[2] < n2; ++x[2]) {
                Point p{0.0, 0.0, 0.0};
                for (int a = 0; a < s.ndim; ++a) p[a] = x[a] / ratio[a];
                for (int j = 0; j < s.ndim; ++j) {
                    out.data[j * n + idx] = ratio[j] * interpolate(s, field.component(j), p);
                }
                ++idx;
            }
        }
    }
    return out;
}

} // namespace elastreg
