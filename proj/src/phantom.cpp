#include "elastreg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "elastreg/error.hpp"
#include "elastreg/image_ops.hpp"
#include "elastreg/metrics.hpp"
#include "elastreg/parallel.hpp"
#include "elastreg/tensor_io.hpp"

namespace elastreg {

namespace {

// Stiff-class translation holds exactly within this many pixels of the box.
constexpr double kStiffMargin = 2.0;
// Width over which the stiff translation hands over to the soft bump.
constexpr double kStiffTransition = 14.0;
// Width of the zero-displacement blend at the image border.
constexpr double kBorderBlend = 10.0;
// Soft bump Gaussian width relative to the ellipsoid radii.
constexpr double kBumpWidth = 0.6;
// Cohort draws: soft bump peak and stiff translation length, pixels.
constexpr double kSoftMagnitudeRange[2] = {4.0, 6.0};
constexpr double kStiffMagnitudeRange[2] = {0.5, 1.5};
constexpr int kMaxCohortAttempts = 64;

// Platform-independent draws on top of mt19937_64.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

template <class Fn>
void for_each_coord(const Grid& g, Fn&& fn) {
    std::array<int, 3> x{0, 0, 0};
    std::size_t idx = 0;
    const int n2 = g.ndim == 3 ? g.dims[2] : 1;
    for (x[0] = 0; x[0] < g.dims[0]; ++x[0])
        for (x[1] = 0; x[1] < g.dims[1]; ++x[1])
            for (x[2] = 0; x[2] < n2; ++x[2]) fn(idx++, x);
}

struct Layout {
    int d = 2;
    std::array<double, 3> soft_c{}, soft_r{}, stiff_c{}, stiff_h{};
    double cos_r = 1.0, sin_r = 0.0;

    // Offset from `center` expressed in the rectangle's rotated frame.
    std::array<double, 3> to_stiff_frame(const std::array<double, 3>& x, const std::array<double, 3>& center) const {
        std::array<double, 3> v{0.0, 0.0, 0.0};
        for (int a = 0; a < d; ++a) v[a] = x[a] - center[a];
        const int p0 = d - 2, p1 = d - 1;
        const double a0 = v[p0], a1 = v[p1];
        v[p0] = cos_r * a0 + sin_r * a1;
        v[p1] = -sin_r * a0 + cos_r * a1;
        return v;
    }
};

Layout layout_of(const PhantomSpec& s) {
    Layout l;
    l.d = static_cast<int>(s.dims.size());
    for (int a = 0; a < l.d; ++a) {
        const double n = s.dims[a];
        l.soft_c[a] = s.soft_center[a] * (n - 1);
        l.soft_r[a] = s.soft_radii[a] * n;
        l.stiff_c[a] = s.stiff_center[a] * (n - 1);
        l.stiff_h[a] = s.stiff_half_extent[a] * n;
    }
    l.cos_r = std::cos(s.stiff_rotation);
    l.sin_r = std::sin(s.stiff_rotation);
    return l;
}

bool in_soft(const Layout& l, const std::array<int, 3>& x) {
    double r2 = 0.0;
    for (int a = 0; a < l.d; ++a) {
        const double y = (x[a] - l.soft_c[a]) / l.soft_r[a];
        r2 += y * y;
    }
    return r2 <= 1.0;
}

bool in_stiff(const Layout& l, const std::array<int, 3>& x) {
    const auto v = l.to_stiff_frame({double(x[0]), double(x[1]), double(x[2])}, l.stiff_c);
    for (int a = 0; a < l.d; ++a) {
        if (std::abs(v[a]) > l.stiff_h[a]) return false;
    }
    return true;
}

// Value noise in [-1, 1] on a lattice of `scale` pixels with smoothstep blending.
std::vector<double> value_noise(const Grid& g, double scale, Rng& rng) {
    const int d = g.ndim;
    std::array<int, 3> lat{1, 1, 1};
    for (int a = 0; a < d; ++a) lat[a] = static_cast<int>(std::ceil((g.dims[a] - 1) / scale)) + 2;
    const std::size_t lat_size = static_cast<std::size_t>(lat[0]) * lat[1] * lat[2];
    std::vector<double> nodes(lat_size);
    for (auto& v : nodes) v = rng.uniform(-1.0, 1.0);
    auto node = [&](const std::array<int, 3>& k) {
        return nodes[(static_cast<std::size_t>(k[0]) * lat[1] + k[1]) * lat[2] + k[2]];
    };
    std::vector<double> out(g.size());
    for_each_coord(g, [&](std::size_t idx, const std::array<int, 3>& x) {
        std::array<int, 3> base{0, 0, 0};
        std::array<double, 3> t{0.0, 0.0, 0.0};
        for (int a = 0; a < d; ++a) {
            const double q = x[a] / scale;
            base[a] = static_cast<int>(std::floor(q));
            t[a] = smoothstep(q - base[a]);
        }
        double v = 0.0;
        for (int corner = 0; corner < (1 << d); ++corner) {
            std::array<int, 3> k = base;
            double w = 1.0;
            for (int a = 0; a < d; ++a) {
                const bool hi = (corner >> a) & 1;
                k[a] += hi;
                w *= hi ? t[a] : 1.0 - t[a];
            }
            v += w * node(k);
        }
        out[idx] = v;
    });
    return out;
}

// One pass of the [1 2 1] / 4 kernel along every axis, border-clamped.
void smooth121(const Grid& g, std::vector<double>& data) {
    std::vector<double> tmp(data.size());
    for (int a = 0; a < g.ndim; ++a) {
        const std::size_t s = g.stride(a);
        const int n = g.dims[a];
        for (std::size_t x = 0; x < data.size(); ++x) {
            const int k = static_cast<int>((x / s) % static_cast<std::size_t>(n));
            const double lo = data[k > 0 ? x - s : x];
            const double hi = data[k < n - 1 ? x + s : x];
            tmp[x] = 0.25 * lo + 0.5 * data[x] + 0.25 * hi;
        }
        data.swap(tmp);
    }
}

DisplacementField build_true_field(const PhantomSpec& s, const Grid& g, const Layout& l) {
    const int d = l.d;
    const int p0 = d - 2, p1 = d - 1; // in-plane axes for translation direction and swirl
    std::array<double, 3> t{0.0, 0.0, 0.0};
    t[p0] = s.stiff_magnitude * std::cos(s.stiff_angle);
    t[p1] = s.stiff_magnitude * std::sin(s.stiff_angle);
    const double swirl = s.soft_swirl;
    const double radial = 1.0 - std::abs(swirl);

    DisplacementField u(g);
    const std::size_t n = g.size();
    for_each_coord(g, [&](std::size_t idx, const std::array<int, 3>& x) {
        // Distance to the fixed-frame stiff box (moving box shifted by -t).
        std::array<double, 3> moved_center{};
        for (int a = 0; a < d; ++a) moved_center[a] = l.stiff_c[a] - t[a];
        const auto v = l.to_stiff_frame({double(x[0]), double(x[1]), double(x[2])}, moved_center);
        double dist2 = 0.0;
        for (int a = 0; a < d; ++a) {
            const double over = std::abs(v[a]) - l.stiff_h[a];
            if (over > 0.0) dist2 += over * over;
        }
        const double w_stiff = 1.0 - smoothstep((std::sqrt(dist2) - kStiffMargin) / kStiffTransition);

        std::array<double, 3> y{0.0, 0.0, 0.0};
        double rho2 = 0.0;
        for (int a = 0; a < d; ++a) {
            y[a] = (x[a] - l.soft_c[a]) / (kBumpWidth * l.soft_r[a]);
            rho2 += y[a] * y[a];
        }
        const double bump = s.soft_magnitude * std::exp(0.5 * (1.0 - rho2));
        std::array<double, 3> b{0.0, 0.0, 0.0};
        for (int a = 0; a < d; ++a) b[a] = radial * bump * y[a];
        b[p0] += -swirl * bump * y[p1];
        b[p1] += swirl * bump * y[p0];

        double border = 1.0;
        for (int a = 0; a < d; ++a) {
            const int to_edge = std::min(x[a], g.dims[a] - 1 - x[a]);
            border *= smoothstep(to_edge / kBorderBlend);
        }
        for (int a = 0; a < d; ++a) u.data[a * n + idx] = border * (w_stiff * t[a] + (1.0 - w_stiff) * b[a]);
    });
    return u;
}

std::vector<double> vec_from(const nlohmann::json& j, const char* key, const std::vector<double>& fallback) {
    return j.contains(key) ? j.at(key).get<std::vector<double>>() : fallback;
}

} // namespace

PhantomSpec PhantomSpec::defaults(int ndim) {
    PhantomSpec s;
    if (ndim == 3) {
        s.dims = {48, 32, 48};
        s.soft_center.insert(s.soft_center.begin(), 0.5);
        s.soft_radii.insert(s.soft_radii.begin(), 0.3);
        s.stiff_center.insert(s.stiff_center.begin(), 0.5);
        s.stiff_half_extent.insert(s.stiff_half_extent.begin(), 0.2);
    } else if (ndim != 2) {
        throw ValidationError("phantom must be 2D or 3D");
    }
    return s;
}

void PhantomSpec::validate() const {
    const std::size_t d = dims.size();
    if (d != 2 && d != 3) throw ValidationError("phantom must be 2D or 3D");
    for (int n : dims) {
        if (n < 32) throw ValidationError("phantom extents must be >= 32");
    }
    for (const auto* v : {&soft_center, &soft_radii, &stiff_center, &stiff_half_extent}) {
        if (v->size() != d) throw ValidationError("phantom layout vectors must have one entry per axis");
    }
    for (std::size_t a = 0; a < d; ++a) {
        if (!(soft_radii[a] > 0.0) || !(stiff_half_extent[a] > 0.0)) {
            throw ValidationError("phantom shapes need positive extents");
        }
    }
    if (!(spacing > 0.0)) throw ValidationError("phantom spacing must be positive");
    if (!(std::abs(soft_magnitude) >= 0.0) || !(stiff_magnitude >= 0.0)) {
        throw ValidationError("deformation magnitudes must be finite and >= 0");
    }
    if (!(std::abs(soft_swirl) <= 1.0)) throw ValidationError("soft_swirl must lie in [-1, 1]");
    if (!(texture_scale >= 1.0)) throw ValidationError("texture scale must be >= 1 pixel");
    if (class_means.size() != 3) throw ValidationError("class_means needs one entry per label (3)");
    for (double m : class_means) {
        if (!std::isfinite(m)) throw ValidationError("class means must be finite");
    }
    if (!(noise_level >= 0.0) || !(texture_amplitude >= 0.0) || !(stiff_texture_amplitude >= 0.0)) {
        throw ValidationError("noise level and texture amplitude must be >= 0");
    }
    if (keypoints_per_class < 0) throw ValidationError("keypoint count must be >= 0");
}

std::string PhantomSpec::to_json() const {
    nlohmann::ordered_json j;
    j["dims"] = dims;
    j["spacing"] = spacing;
    j["soft_center"] = soft_center;
    j["soft_radii"] = soft_radii;
    j["stiff_center"] = stiff_center;
    j["stiff_half_extent"] = stiff_half_extent;
    j["stiff_rotation"] = stiff_rotation;
    j["soft_magnitude"] = soft_magnitude;
    j["soft_swirl"] = soft_swirl;
    j["stiff_magnitude"] = stiff_magnitude;
    j["stiff_angle"] = stiff_angle;
    j["texture_scale"] = texture_scale;
    j["class_means"] = class_means;
    j["texture_amplitude"] = texture_amplitude;
    j["stiff_texture_amplitude"] = stiff_texture_amplitude;
    j["noise_level"] = noise_level;
    j["keypoints_per_class"] = keypoints_per_class;
    j["seed"] = seed;
    j["subject"] = subject;
    return j.dump(2);
}

PhantomSpec PhantomSpec::from_json(const std::string& text) {
    PhantomSpec s;
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.contains("dims")) {
            const auto dims = j.at("dims").get<std::vector<int>>();
            if (dims.size() == 3) s = defaults(3);
            s.dims = dims;
        }
        s.spacing = j.value("spacing", s.spacing);
        s.soft_center = vec_from(j, "soft_center", s.soft_center);
        s.soft_radii = vec_from(j, "soft_radii", s.soft_radii);
        s.stiff_center = vec_from(j, "stiff_center", s.stiff_center);
        s.stiff_half_extent = vec_from(j, "stiff_half_extent", s.stiff_half_extent);
        s.stiff_rotation = j.value("stiff_rotation", s.stiff_rotation);
        s.soft_magnitude = j.value("soft_magnitude", s.soft_magnitude);
        s.soft_swirl = j.value("soft_swirl", s.soft_swirl);
        s.stiff_magnitude = j.value("stiff_magnitude", s.stiff_magnitude);
        s.stiff_angle = j.value("stiff_angle", s.stiff_angle);
        s.texture_scale = j.value("texture_scale", s.texture_scale);
        s.class_means = vec_from(j, "class_means", s.class_means);
        s.texture_amplitude = j.value("texture_amplitude", s.texture_amplitude);
        s.stiff_texture_amplitude = j.value("stiff_texture_amplitude", s.stiff_texture_amplitude);
        s.noise_level = j.value("noise_level", s.noise_level);
        s.keypoints_per_class = j.value("keypoints_per_class", s.keypoints_per_class);
        s.seed = j.value("seed", s.seed);
        s.subject = j.value("subject", s.subject);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed phantom spec: ") + e.what());
    }
    return s;
}

Subject PhantomSample::subject() const { return {spec.subject, moving, fixed, seg_moving, seg_fixed}; }

PhantomSample generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const Grid g = Grid::make(spec.dims, spec.spacing);
    const Layout l = layout_of(spec);
    Rng rng(spec.seed);

    std::vector<std::int32_t> labels(g.size(), 0);
    bool overlap = false;
    for_each_coord(g, [&](std::size_t idx, const std::array<int, 3>& x) {
        const bool soft = in_soft(l, x), stiff = in_stiff(l, x);
        overlap |= soft && stiff;
        labels[idx] = stiff ? 2 : (soft ? 1 : 0);
    });
    if (overlap) throw ValidationError("phantom classes overlap");

    PhantomSample s;
    s.spec = spec;
    s.seg_moving = SegmentationMap(g, std::move(labels), 2);

    std::vector<std::vector<double>> textures;
    for (int c = 0; c < 3; ++c) textures.push_back(value_noise(g, spec.texture_scale, rng));
    std::vector<double> intensity(g.size());
    for (std::size_t x = 0; x < g.size(); ++x) {
        const int c = s.seg_moving.labels[x];
        const double amp = c == 2 ? spec.stiff_texture_amplitude : spec.texture_amplitude;
        intensity[x] = spec.class_means[static_cast<std::size_t>(c)] + amp * textures[c][x];
    }
    smooth121(g, intensity);
    s.moving = ScalarImage(g, std::move(intensity));

    s.true_field = build_true_field(spec, g, l);
    const ScalarImage det = jacobian_determinant_map(s.true_field);
    if (*std::min_element(det.data.begin(), det.data.end()) <= 0.0) {
        throw ValidationError("phantom deformation folds; reduce the deformation magnitudes");
    }

    s.fixed = warp_image(s.moving, s.true_field);
    for (auto& v : s.fixed.data) v += spec.noise_level * rng.normal();
    s.seg_fixed = warp_labels(s.seg_moving, s.true_field);

    // Keypoints inside each foreground class of the fixed image, away from the border.
    s.keypoints_fixed.ndim = s.keypoints_moving.ndim = g.ndim;
    const int margin = 5;
    for (int c = 1; c <= 2; ++c) {
        std::vector<std::size_t> candidates;
        for_each_coord(g, [&](std::size_t idx, const std::array<int, 3>& x) {
            if (s.seg_fixed.labels[idx] != c) return;
            for (int a = 0; a < g.ndim; ++a) {
                if (x[a] < margin || x[a] > g.dims[a] - 1 - margin) return;
            }
            candidates.push_back(idx);
        });
        for (int k = 0; k < spec.keypoints_per_class && !candidates.empty(); ++k) {
            const auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(candidates.size()));
            std::size_t idx = candidates[std::min(pick, candidates.size() - 1)];
            Point p{0.0, 0.0, 0.0};
            for (int a = 0; a < g.ndim; ++a) {
                const std::size_t st = g.stride(a);
                p[a] = static_cast<double>((idx / st) % static_cast<std::size_t>(g.dims[a])) + 0.5 * rng.uniform();
            }
            s.keypoints_fixed.points.push_back(p);
        }
    }
    s.keypoints_moving = warp_keypoints(s.keypoints_fixed, s.true_field);
    s.keypoints_moving.require_inside(g);
    return s;
}

std::uint64_t cohort_seed(std::uint64_t seed, int index) {
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

PhantomSpec cohort_member_spec(const PhantomSpec& base, std::uint64_t seed, int index) {
    PhantomSpec s = base;
    s.subject = index;
    s.seed = cohort_seed(seed, index);
    Rng rng(splitmix64(s.seed));
    s.soft_magnitude = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(kSoftMagnitudeRange[0], kSoftMagnitudeRange[1]);
    s.soft_swirl = rng.uniform(-0.6, 0.6);
    s.stiff_magnitude = rng.uniform(kStiffMagnitudeRange[0], kStiffMagnitudeRange[1]);
    s.stiff_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t a = 0; a < s.dims.size(); ++a) {
        s.soft_center[a] = base.soft_center[a] + rng.uniform(-0.03, 0.03);
        s.stiff_center[a] = base.stiff_center[a] + rng.uniform(-0.03, 0.03);
        s.soft_radii[a] = base.soft_radii[a] * rng.uniform(0.9, 1.1);
        s.stiff_half_extent[a] = base.stiff_half_extent[a] * rng.uniform(0.9, 1.1);
    }
    s.stiff_rotation = base.stiff_rotation + rng.uniform(-0.3, 0.3);
    return s;
}

std::vector<PhantomSample> generate_cohort(const PhantomSpec& base, int n, std::uint64_t seed, int jobs) {
    if (n < 1) throw ValidationError("cohort size must be >= 1");
    std::vector<PhantomSample> out(static_cast<std::size_t>(n));
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        // Redraw the member spec (deterministically) if a draw folds or overlaps.
        for (int attempt = 0;; ++attempt) {
            PhantomSpec s = cohort_member_spec(base, seed + static_cast<std::uint64_t>(attempt) * 0x10001ull,
                                               static_cast<int>(i));
            try {
                out[i] = generate_phantom(s);
                return;
            } catch (const ValidationError&) {
                if (attempt + 1 >= kMaxCohortAttempts) throw;
            }
        }
    });
    return out;
}

void write_keypoints_csv(const std::filesystem::path& path, const Keypoints& fixed, const Keypoints& moving) {
    if (fixed.size() != moving.size()) throw ValidationError("keypoint sets differ in size");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "id";
    for (int a = 0; a < fixed.ndim; ++a) os << ",fixed_" << a;
    for (int a = 0; a < fixed.ndim; ++a) os << ",moving_" << a;
    os << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < fixed.size(); ++k) {
        os << k;
        for (int a = 0; a < fixed.ndim; ++a) os << ',' << fixed.points[k][a];
        for (int a = 0; a < fixed.ndim; ++a) os << ',' << moving.points[k][a];
        os << '\n';
    }
    if (!os) throw IoError("failed writing " + path.string());
}

std::pair<Keypoints, Keypoints> read_keypoints_csv(const std::filesystem::path& path, int ndim) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::pair<Keypoints, Keypoints> kp;
    kp.first.ndim = kp.second.ndim = ndim;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(ss, cell, ',')) {
            try {
                v.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError(path.string() + ": malformed keypoint row '" + line + "'");
            }
        }
        if (v.size() != static_cast<std::size_t>(1 + 2 * ndim)) {
            throw IoError(path.string() + ": expected " + std::to_string(1 + 2 * ndim) + " columns");
        }
        Point f{0, 0, 0}, m{0, 0, 0};
        for (int a = 0; a < ndim; ++a) {
            f[a] = v[1 + a];
            m[a] = v[1 + ndim + a];
        }
        kp.first.points.push_back(f);
        kp.second.points.push_back(m);
    }
    return kp;
}

void save_sample(const std::filesystem::path& dir, const PhantomSample& s) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_tensor(dir / "moving.ten", s.moving);
    write_tensor(dir / "fixed.ten", s.fixed);
    write_tensor(dir / "seg_m.ten", s.seg_moving);
    write_tensor(dir / "seg_f.ten", s.seg_fixed);
    write_tensor(dir / "field.ten", s.true_field);
    write_keypoints_csv(dir / "keypoints.csv", s.keypoints_fixed, s.keypoints_moving);
    std::ofstream os(dir / "spec.json", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / "spec.json").string());
    os << s.spec.to_json() << '\n';
}

PhantomSample load_sample(const std::filesystem::path& dir) {
    PhantomSample s;
    std::ifstream is(dir / "spec.json");
    if (!is) throw IoError("missing " + (dir / "spec.json").string());
    std::stringstream buf;
    buf << is.rdbuf();
    s.spec = PhantomSpec::from_json(buf.str());
    const double h = s.spec.spacing;
    s.moving = read_image(dir / "moving.ten", h);
    s.fixed = read_image(dir / "fixed.ten", h);
    s.seg_moving = read_labels(dir / "seg_m.ten", h, 2);
    s.seg_fixed = read_labels(dir / "seg_f.ten", h, 2);
    s.true_field = read_field(dir / "field.ten", h);
    std::tie(s.keypoints_fixed, s.keypoints_moving) = read_keypoints_csv(dir / "keypoints.csv", s.moving.grid.ndim);
    return s;
}

} // namespace elastreg
