#pragma once

#include <span>
#include <vector>

#include "elastreg/grid.hpp"

namespace elastreg {

/// Multilinear sample of `data` (laid out on `grid`) at continuous index
/// coordinates `p`. Coordinates outside the grid are clamped to the border.
double interpolate(const Grid& grid, std::span<const double> data, const Point& p);

/// output(x) = image(x + u(x)), multilinear, border-clamped.
ScalarImage warp_image(const ScalarImage& image, const DisplacementField& field);

/// Same as warp_image, and also returns d output(x) / d u_j(x) for every j,
/// component-major like a DisplacementField. Along a clamped axis the
/// derivative is zero; at integer coordinates it is the right-sided slope.
ScalarImage warp_image_with_gradient(const ScalarImage& image, const DisplacementField& field,
                                     DisplacementField& d_output_d_u);

/// Nearest-neighbor label resampling at x + u(x), border-clamped.
SegmentationMap warp_labels(const SegmentationMap& seg, const DisplacementField& field);

/// (u_j(x + e_i) - u_j(x)) / spacing_i, zero on the last index along axis i.
ScalarImage forward_diff(const DisplacementField& field, int component, int axis);

/// Raw forward-difference kernel on one scalar plane, same convention as forward_diff.
void forward_difference(const Grid& grid, std::span<const double> in, int axis, std::span<double> out);

/// Adds the adjoint of forward_difference applied to `in` into `accum`.
void forward_difference_adjoint_add(const Grid& grid, std::span<const double> in, int axis,
                                    std::span<double> accum);

/// u with component j scaled by spacing_j (displacement in physical length).
DisplacementField physical_displacement(const DisplacementField& field);

/// det(I + grad u) from forward differences; 1 wherever all differences vanish.
ScalarImage jacobian_determinant_map(const DisplacementField& field);

/// Halves every extent (floor) by averaging 2^D blocks; spacing doubles.
ScalarImage downsample(const ScalarImage& image);

/// Level 0 is the input; each further level is downsample() of the previous.
std::vector<ScalarImage> build_pyramid(const ScalarImage& image, int levels);

/// Resamples every component onto a grid with extents `target_dims`
/// (each within ±1 of twice the source extent) and rescales component j by
/// target_j / source_j so that displacements stay in pixels of the new grid.
DisplacementField upsample_field(const DisplacementField& field, const std::vector<int>& target_dims);

} // namespace elastreg
