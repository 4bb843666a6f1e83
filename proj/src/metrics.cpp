#include "elastreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "elastreg/error.hpp"
#include "elastreg/image_ops.hpp"

namespace elastreg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Exact squared distance transform along one line (lower envelope of parabolas).
void edt_line(std::vector<double>& f, double h, std::vector<double>& out, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    out.assign(static_cast<std::size_t>(n), kInf);
    v.assign(static_cast<std::size_t>(n), 0);
    z.assign(static_cast<std::size_t>(n) + 1, 0.0);
    int k = -1;
    const double h2 = h * h;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + h2 * q * q) - (f[p] + h2 * p * p)) / (2.0 * h2 * (q - p));
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (s <= z[k]) {
            // k == 0 and the new parabola dominates the first one everywhere.
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    if (k < 0) return;
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double dq = h * (q - v[j]);
        out[q] = dq * dq + f[v[j]];
    }
}

// Squared physical distance from every grid point to the nearest seed.
std::vector<double> squared_distance_to(const Grid& g, const std::vector<std::size_t>& seeds) {
    std::vector<double> dist(g.size(), kInf);
    for (auto s : seeds) dist[s] = 0.0;
    std::vector<double> line, out, z;
    std::vector<int> v;
    for (int a = 0; a < g.ndim; ++a) {
        const int n = g.dims[a];
        const std::size_t inner = g.stride(a);
        const std::size_t outer = g.size() / (inner * static_cast<std::size_t>(n));
        line.resize(static_cast<std::size_t>(n));
        for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base = o * static_cast<std::size_t>(n) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                for (int k = 0; k < n; ++k) line[k] = dist[base + k * inner + i];
                edt_line(line, g.spacing[a], out, v, z);
                for (int k = 0; k < n; ++k) dist[base + k * inner + i] = out[k];
            }
        }
    }
    return dist;
}

std::string fmt_num(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

} // namespace

std::vector<double> dice_per_label(const SegmentationMap& a, const SegmentationMap& b) {
    require_same_shape(a.grid, b.grid, "dice");
    const int classes = std::max(a.class_count, b.class_count);
    std::vector<std::size_t> ca(classes + 1, 0), cb(classes + 1, 0), both(classes + 1, 0);
    for (std::size_t x = 0; x < a.labels.size(); ++x) {
        const auto la = a.labels[x], lb = b.labels[x];
        ++ca[la];
        ++cb[lb];
        if (la == lb) ++both[la];
    }
    std::vector<double> dice(classes + 1);
    for (int c = 0; c <= classes; ++c) {
        const std::size_t denom = ca[c] + cb[c];
        dice[c] = denom == 0 ? 1.0 : 2.0 * static_cast<double>(both[c]) / static_cast<double>(denom);
    }
    return dice;
}

std::vector<double> dice_classwise(const SegmentationMap& a, const SegmentationMap& b) {
    auto all = dice_per_label(a, b);
    return {all.begin() + 1, all.end()};
}

Mask foreground_mask(const SegmentationMap& seg) {
    Mask m{seg.grid, std::vector<std::uint8_t>(seg.size())};
    for (std::size_t x = 0; x < seg.size(); ++x) m.on[x] = seg.labels[x] > 0;
    return m;
}

std::vector<std::size_t> boundary_points(const Mask& m) {
    const Grid& g = m.grid;
    std::vector<std::size_t> out;
    for (std::size_t x = 0; x < g.size(); ++x) {
        if (!m.on[x]) continue;
        bool edge = false;
        for (int a = 0; a < g.ndim && !edge; ++a) {
            const std::size_t s = g.stride(a);
            const int k = static_cast<int>((x / s) % static_cast<std::size_t>(g.dims[a]));
            if (k == 0 || k == g.dims[a] - 1) edge = true;
            else if (!m.on[x - s] || !m.on[x + s]) edge = true;
        }
        if (edge) out.push_back(x);
    }
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw ValidationError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const Mask& a, const Mask& b) {
    require_same_shape(a.grid, b.grid, "hd95");
    const auto ba = boundary_points(a);
    const auto bb = boundary_points(b);
    if (ba.empty() || bb.empty()) throw ValidationError("hd95 is undefined for an empty mask");
    const auto to_b = squared_distance_to(b.grid, bb);
    const auto to_a = squared_distance_to(a.grid, ba);
    std::vector<double> pooled;
    pooled.reserve(ba.size() + bb.size());
    for (auto x : ba) pooled.push_back(std::sqrt(to_b[x]));
    for (auto x : bb) pooled.push_back(std::sqrt(to_a[x]));
    return percentile(std::move(pooled), 95.0);
}

double tre(const Keypoints& warped, const Keypoints& reference, const Grid& grid) {
    if (warped.size() != reference.size()) {
        throw ValidationError("tre: " + std::to_string(warped.size()) + " warped points vs " +
                              std::to_string(reference.size()) + " reference points");
    }
    if (warped.size() == 0) throw ValidationError("tre of an empty point set");
    double sum = 0.0;
    for (std::size_t k = 0; k < warped.size(); ++k) {
        double d2 = 0.0;
        for (int a = 0; a < grid.ndim; ++a) {
            const double d = (warped.points[k][a] - reference.points[k][a]) * grid.spacing[a];
            d2 += d * d;
        }
        sum += std::sqrt(d2);
    }
    return sum / static_cast<double>(warped.size());
}

Keypoints warp_keypoints(const Keypoints& points, const DisplacementField& field) {
    points.require_inside(field.grid);
    Keypoints out{points.ndim, {}};
    out.points.reserve(points.size());
    for (const auto& p : points.points) {
        Point q = p;
        for (int j = 0; j < field.ndim(); ++j) q[j] = p[j] + interpolate(field.grid, field.component(j), p);
        out.points.push_back(q);
    }
    return out;
}

double neg_jacobian_fraction(const DisplacementField& field) {
    const ScalarImage det = jacobian_determinant_map(field);
    const auto neg = std::count_if(det.data.begin(), det.data.end(), [](double v) { return v < 0.0; });
    return static_cast<double>(neg) / static_cast<double>(det.size());
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["subject"] = subject;
    j["class_dice"] = class_dice;
    j["mean_dice"] = mean_dice;
    j["hd95"] = hd95;
    j["tre"] = tre ? nlohmann::ordered_json(*tre) : nlohmann::ordered_json(nullptr);
    j["neg_jac_frac"] = neg_jacobian_fraction;
    return j.dump(2);
}

std::string EvalReport::csv_header(int class_count) {
    std::string h = "subject";
    for (int c = 1; c <= class_count; ++c) h += ",dice_c" + std::to_string(c);
    return h + ",dice_mean,hd95,tre,neg_jac_frac";
}

std::string EvalReport::csv_row() const {
    std::string row = subject;
    for (double d : class_dice) row += "," + fmt_num(d);
    row += "," + fmt_num(mean_dice) + "," + fmt_num(hd95) + "," + (tre ? fmt_num(*tre) : std::string()) + "," +
           fmt_num(neg_jacobian_fraction);
    return row;
}

EvalReport evaluate(const std::string& subject, const DisplacementField& field, const SegmentationMap& seg_moving,
                    const SegmentationMap& seg_fixed, const Keypoints* keypoints_fixed,
                    const Keypoints* keypoints_moving) {
    require_same_shape(field.grid, seg_moving.grid, "evaluate field/seg_moving");
    require_same_shape(field.grid, seg_fixed.grid, "evaluate field/seg_fixed");
    EvalReport r;
    r.subject = subject;
    const SegmentationMap warped = warp_labels(seg_moving, field);
    r.class_dice = dice_classwise(warped, seg_fixed);
    r.mean_dice = r.class_dice.empty()
                      ? 0.0
                      : std::accumulate(r.class_dice.begin(), r.class_dice.end(), 0.0) /
                            static_cast<double>(r.class_dice.size());
    r.hd95 = hd95(foreground_mask(warped), foreground_mask(seg_fixed));
    if (keypoints_fixed && keypoints_moving) {
        r.tre = tre(warp_keypoints(*keypoints_fixed, field), *keypoints_moving, field.grid);
    }
    r.neg_jacobian_fraction = neg_jacobian_fraction(field);
    return r;
}

} // namespace elastreg
