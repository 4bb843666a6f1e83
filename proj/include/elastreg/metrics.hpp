#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "elastreg/grid.hpp"

namespace elastreg {

/// Dice for every label 0..C (C = max class count of the two maps).
/// Labels absent from both maps score 1, absent from exactly one score 0.
std::vector<double> dice_per_label(const SegmentationMap& a, const SegmentationMap& b);

/// Foreground classes 1..C of dice_per_label.
std::vector<double> dice_classwise(const SegmentationMap& a, const SegmentationMap& b);

/// Binary mask on a grid, nonzero = foreground.
struct Mask {
    Grid grid;
    std::vector<std::uint8_t> on;
};

Mask foreground_mask(const SegmentationMap& seg);

/// Boundary of a mask: foreground points with a face-adjacent background
/// neighbor or lying on the grid edge.
std::vector<std::size_t> boundary_points(const Mask& m);

/// 95th percentile of the pooled nearest-boundary distances a->b and b->a,
/// in physical units, linearly interpolated between order statistics.
double hd95(const Mask& a, const Mask& b);

/// Linear-interpolated percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

/// Mean Euclidean distance between matched points, in physical units.
double tre(const Keypoints& warped, const Keypoints& reference, const Grid& grid);

/// p + u(p), with u sampled multilinearly.
Keypoints warp_keypoints(const Keypoints& points, const DisplacementField& field);

double neg_jacobian_fraction(const DisplacementField& field);

struct EvalReport {
    std::string subject;
    std::vector<double> class_dice; ///< classes 1..C
    double mean_dice = 0.0;
    double hd95 = 0.0;
    std::optional<double> tre;
    double neg_jacobian_fraction = 0.0;

    std::string to_json() const;
    static std::string csv_header(int class_count);
    std::string csv_row() const;
};

/// Scores a registration: `field` maps fixed-grid points into the moving image.
/// Dice and HD95 compare warp_labels(seg_moving) to seg_fixed (HD95 on the
/// union of all foreground classes); TRE compares warped fixed keypoints to
/// the moving keypoints.
EvalReport evaluate(const std::string& subject, const DisplacementField& field, const SegmentationMap& seg_moving,
                    const SegmentationMap& seg_fixed, const Keypoints* keypoints_fixed = nullptr,
                    const Keypoints* keypoints_moving = nullptr);

} // namespace elastreg
