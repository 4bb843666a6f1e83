#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "elastreg/grid.hpp"
#include "elastreg/param_search.hpp"

namespace elastreg {

/// Three-label synthetic layout: background (0), a "soft" ellipsoid (1) that
/// deforms with a smooth radial/swirl bump, and a "stiff" box (2) that moves
/// as a rigid translation. Positions and sizes are fractions of the extents.
struct PhantomSpec {
    std::vector<int> dims{128, 128};
    /// Physical pixel size; 1/48 keeps the elastic weight comparable to the similarity term.
    double spacing = 1.0 / 48.0;

    std::vector<double> soft_center{0.5, 0.3};
    std::vector<double> soft_radii{0.18, 0.18};
    std::vector<double> stiff_center{0.5, 0.72};
    std::vector<double> stiff_half_extent{0.1, 0.1};
    /// In-plane rotation of the stiff rectangle, radians (plane of the last two axes).
    double stiff_rotation = 0.4;

    /// Peak bump displacement inside the soft class, pixels (sign flips expansion/contraction).
    double soft_magnitude = 3.0;
    /// Share of the soft bump that is rotational (swirl) rather than radial, in [-1, 1].
    double soft_swirl = 0.3;
    /// Translation length of the stiff class, pixels.
    double stiff_magnitude = 3.0;
    /// Translation direction, radians in the plane of the last two axes.
    double stiff_angle = 0.6;

    /// Lattice spacing of the value-noise texture, pixels.
    double texture_scale = 4.0;
    /// Mean intensity of background, soft and stiff tissue.
    std::vector<double> class_means{0.2, 0.8, 0.45};
    double texture_amplitude = 0.12;
    /// The stiff class is nearly flat, so only its outline constrains the solve.
    double stiff_texture_amplitude = 0.02;
    /// Standard deviation of i.i.d. Gaussian noise added to the fixed image.
    double noise_level = 0.15;
    int keypoints_per_class = 6;
    std::uint64_t seed = 0;
    int subject = 0;

    /// Default layout for 2D (128x128) or 3D (48x32x48; the slowest axis is prepended).
    static PhantomSpec defaults(int ndim);

    void validate() const;
    std::string to_json() const;
    static PhantomSpec from_json(const std::string& text);
};

struct PhantomSample {
    PhantomSpec spec;
    ScalarImage moving;
    ScalarImage fixed;
    SegmentationMap seg_moving;
    SegmentationMap seg_fixed;
    Keypoints keypoints_moving;
    Keypoints keypoints_fixed;
    DisplacementField true_field;

    Subject subject() const;
};

PhantomSample generate_phantom(const PhantomSpec& spec);

/// Per-subject seed for cohort member `index`.
std::uint64_t cohort_seed(std::uint64_t seed, int index);

/// The PhantomSpec generate_cohort uses for member `index`: randomized magnitudes,
/// directions and layout jitter around `base`.
PhantomSpec cohort_member_spec(const PhantomSpec& base, std::uint64_t seed, int index);

std::vector<PhantomSample> generate_cohort(const PhantomSpec& base, int n, std::uint64_t seed, int jobs = 1);

/// moving.ten, fixed.ten, seg_m.ten, seg_f.ten, field.ten, keypoints.csv, spec.json
void save_sample(const std::filesystem::path& dir, const PhantomSample& sample);
PhantomSample load_sample(const std::filesystem::path& dir);

void write_keypoints_csv(const std::filesystem::path& path, const Keypoints& fixed, const Keypoints& moving);
/// Returns {fixed, moving}.
std::pair<Keypoints, Keypoints> read_keypoints_csv(const std::filesystem::path& path, int ndim);

} // namespace elastreg
