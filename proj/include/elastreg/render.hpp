#pragma once

#include <filesystem>

#include "elastreg/grid.hpp"

namespace elastreg {

// Visualization exports. 3D inputs are rendered as the middle slice along axis 0.

/// Binary PGM (P5, maxval 255), linear map of [lo, hi] to [0, 255].
void write_pgm(const std::filesystem::path& path, const ScalarImage& image, double lo, double hi);
/// Same, with [lo, hi] taken from the image range.
void write_pgm(const std::filesystem::path& path, const ScalarImage& image);

/// Jacobian determinant panels: positive part and negative part as two PGMs
/// plus one PPM (P6) with positive values in blue and negative values in red.
void write_jacobian_panels(const std::filesystem::path& positive_pgm, const std::filesystem::path& negative_pgm,
                           const std::filesystem::path& combined_ppm, const ScalarImage& jacobian);

/// fixed - warped, symmetric gray scale centered at 128.
void write_difference_pgm(const std::filesystem::path& path, const ScalarImage& fixed, const ScalarImage& warped);

/// Deformed grid lines of phi(x) = x + u(x) drawn every `line_step` pixels.
void write_deformation_grid(const std::filesystem::path& path, const DisplacementField& field, int line_step = 8);

} // namespace elastreg
