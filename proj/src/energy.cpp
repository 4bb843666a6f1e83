#include "elastreg/energy.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "elastreg/error.hpp"
#include "elastreg/image_ops.hpp"

namespace elastreg {

namespace {

// In-place clipped window sum along one axis: out[k] = sum in[max(k-r,0) .. min(k+r,n-1)].
void box_sum_axis(const Grid& g, std::vector<double>& data, int axis, int r, std::vector<double>& line) {
    const int n = g.dims[axis];
    const std::size_t inner = g.stride(axis);
    const std::size_t outer = g.size() / (inner * static_cast<std::size_t>(n));
    line.resize(static_cast<std::size_t>(n) + 1);
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * static_cast<std::size_t>(n) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
            line[0] = 0.0;
            for (int k = 0; k < n; ++k) line[k + 1] = line[k] + data[base + k * inner + i];
            for (int k = 0; k < n; ++k) {
                const int lo = std::max(k - r, 0);
                const int hi = std::min(k + r, n - 1);
                data[base + k * inner + i] = line[hi + 1] - line[lo];
            }
        }
    }
}

std::vector<double> box_sum(const Grid& g, std::vector<double> data, int r) {
    std::vector<double> line;
    for (int a = 0; a < g.ndim; ++a) box_sum_axis(g, data, a, r, line);
    return data;
}

std::vector<double> window_counts(const Grid& g, int r) {
    std::vector<double> counts(g.size(), 1.0);
    for (int a = 0; a < g.ndim; ++a) {
        const int n = g.dims[a];
        const std::size_t s = g.stride(a);
        for (std::size_t x = 0; x < counts.size(); ++x) {
            const int k = static_cast<int>((x / s) % static_cast<std::size_t>(n));
            counts[x] *= std::min(k + r, n - 1) - std::max(k - r, 0) + 1;
        }
    }
    return counts;
}

struct NccState {
    std::vector<double> cc;
    // dcc(x)/dW(y) = 2 [alpha(x) (F(y) - meanF(x)) - beta(x) (W(y) - meanW(x))] for y in window(x)
    std::vector<double> alpha, beta, mean_f, mean_w;
};

NccState compute_ncc(const ScalarImage& fixed, const ScalarImage& warped, const NccConfig& cfg, bool want_grad) {
    const Grid& g = fixed.grid;
    const std::size_t n = g.size();
    const int r = cfg.window_radius;
    const double eps = cfg.epsilon;
    std::vector<double> ff(n), ww(n), fw(n);
    for (std::size_t x = 0; x < n; ++x) {
        ff[x] = fixed[x] * fixed[x];
        ww[x] = warped[x] * warped[x];
        fw[x] = fixed[x] * warped[x];
    }
    const auto sf = box_sum(g, fixed.data, r);
    const auto sw = box_sum(g, warped.data, r);
    const auto sff = box_sum(g, std::move(ff), r);
    const auto sww = box_sum(g, std::move(ww), r);
    const auto sfw = box_sum(g, std::move(fw), r);
    const auto count = window_counts(g, r);

    NccState st;
    st.cc.resize(n);
    if (want_grad) {
        st.alpha.assign(n, 0.0);
        st.beta.assign(n, 0.0);
        st.mean_f.resize(n);
        st.mean_w.resize(n);
    }
    for (std::size_t x = 0; x < n; ++x) {
        const double m_f = sf[x] / count[x];
        const double m_w = sw[x] / count[x];
        const double cross = sfw[x] - sf[x] * m_w;
        const double var_f = sff[x] - sf[x] * m_f;
        const double var_w = sww[x] - sw[x] * m_w;
        if (want_grad) {
            st.mean_f[x] = m_f;
            st.mean_w[x] = m_w;
        }
        if (var_f < eps && var_w < eps) {
            st.cc[x] = 1.0;
            continue;
        }
        const double denom = var_f * var_w + eps;
        const double cc = cross * cross / denom;
        if (cc >= 1.0) {
            st.cc[x] = 1.0;
            continue;
        }
        st.cc[x] = std::max(cc, 0.0);
        if (want_grad) {
            st.alpha[x] = cross / denom;
            st.beta[x] = cross * cross * var_f / (denom * denom);
        }
    }
    return st;
}

// Similarity weight 2 - lambda - mu per pixel.
std::vector<double> similarity_weights(const ParamMaps& params) {
    std::vector<double> w(params.lambda_map.size());
    for (std::size_t x = 0; x < w.size(); ++x) w[x] = 2.0 - params.lambda_map[x] - params.mu_map[x];
    return w;
}

// Forward differences of the physical displacement: diffs[i * D + j] = d_i P_j.
std::vector<std::vector<double>> displacement_gradients(const DisplacementField& field) {
    const Grid& g = field.grid;
    const int d = g.ndim;
    const DisplacementField phys = physical_displacement(field);
    std::vector<std::vector<double>> diffs(static_cast<std::size_t>(d * d), std::vector<double>(g.size()));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) forward_difference(g, phys.component(j), i, diffs[i * d + j]);
    }
    return diffs;
}

// Energy density at one pixel; shared by the map and constant-coefficient paths.
inline double elastic_density(const std::vector<std::vector<double>>& diffs, int d, std::size_t x, double lambda,
                              double mu) {
    double shear = 0.0;
    double div = 0.0;
    for (int i = 0; i < d; ++i) {
        div += diffs[i * d + i][x];
        for (int j = 0; j < d; ++j) {
            const double s = diffs[i * d + j][x] + diffs[j * d + i][x];
            shear += s * s;
        }
    }
    return 0.25 * mu * shear + 0.5 * lambda * div * div;
}

template <class Coeff>
double elastic_sum(const DisplacementField& field, Coeff&& coeff) {
    const auto diffs = displacement_gradients(field);
    const int d = field.ndim();
    double sum = 0.0;
    for (std::size_t x = 0; x < field.points(); ++x) {
        const auto [lambda, mu] = coeff(x);
        sum += elastic_density(diffs, d, x, lambda, mu);
    }
    return sum * field.grid.voxel_volume();
}

// Adds dE/du into `grad`.
void add_elastic_gradient(const DisplacementField& field, const ParamMaps& params,
                          const std::vector<std::vector<double>>& diffs, DisplacementField& grad) {
    const Grid& g = field.grid;
    const int d = g.ndim;
    const std::size_t n = g.size();
    const double vol = g.voxel_volume();
    std::vector<double> stress(n);
    std::vector<double> accum(n);
    for (int j = 0; j < d; ++j) {
        std::fill(accum.begin(), accum.end(), 0.0);
        for (int i = 0; i < d; ++i) {
            // stress_ij = mu * (d_i P_j + d_j P_i) + lambda * div * delta_ij
            for (std::size_t x = 0; x < n; ++x) {
                double s = params.mu_map[x] * (diffs[i * d + j][x] + diffs[j * d + i][x]);
                if (i == j) {
                    double div = 0.0;
                    for (int k = 0; k < d; ++k) div += diffs[k * d + k][x];
                    s += params.lambda_map[x] * div;
                }
                stress[x] = vol * s;
            }
            forward_difference_adjoint_add(g, stress, i, accum);
        }
        const double sj = g.spacing[j];
        auto gj = grad.component(j);
        for (std::size_t x = 0; x < n; ++x) gj[x] += sj * accum[x];
    }
}

void check_inputs(const ScalarImage& moving, const ScalarImage& fixed, const DisplacementField& field,
                  const ParamMaps& params, const NccConfig& cfg) {
    require_same_shape(moving.grid, fixed.grid, "moving/fixed");
    require_same_shape(fixed.grid, field.grid, "fixed/field");
    params.validate(fixed.grid);
    cfg.validate();
}

} // namespace

ParamMaps ParamMaps::constant(const Grid& grid, double lambda, double mu) {
    if (!(lambda >= 0.0 && lambda <= 1.0) || !(mu >= 0.0 && mu <= 1.0)) {
        throw ValidationError("Lame parameters must lie in [0, 1], got lambda=" + std::to_string(lambda) +
                              " mu=" + std::to_string(mu));
    }
    return {ScalarImage(grid, lambda), ScalarImage(grid, mu)};
}

void ParamMaps::validate(const Grid& grid) const {
    require_same_shape(grid, lambda_map.grid, "lambda map");
    require_same_shape(grid, mu_map.grid, "mu map");
    auto in_range = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!std::all_of(lambda_map.data.begin(), lambda_map.data.end(), in_range)) {
        throw ValidationError("lambda map has values outside [0, 1]");
    }
    if (!std::all_of(mu_map.data.begin(), mu_map.data.end(), in_range)) {
        throw ValidationError("mu map has values outside [0, 1]");
    }
}

NccConfig NccConfig::defaults_for(int ndim) {
    NccConfig cfg;
    cfg.window_radius = ndim == 3 ? 3 : 4;
    return cfg;
}

void NccConfig::validate() const {
    if (window_radius < 1) throw ValidationError("NCC window radius must be >= 1");
    if (!(epsilon > 0.0)) throw ValidationError("NCC epsilon must be positive");
}

ScalarImage local_ncc_map(const ScalarImage& fixed, const ScalarImage& warped, const NccConfig& cfg) {
    require_same_shape(fixed.grid, warped.grid, "local_ncc_map");
    cfg.validate();
    return ScalarImage(fixed.grid, compute_ncc(fixed, warped, cfg, false).cc);
}

double similarity_loss(const ScalarImage& fixed, const ScalarImage& moving, const DisplacementField& field,
                       const ParamMaps& params, const NccConfig& cfg) {
    check_inputs(moving, fixed, field, params, cfg);
    const ScalarImage warped = warp_image(moving, field);
    const auto st = compute_ncc(fixed, warped, cfg, false);
    double sum = 0.0;
    for (std::size_t x = 0; x < st.cc.size(); ++x) {
        sum += (2.0 - params.lambda_map[x] - params.mu_map[x]) * (1.0 - st.cc[x]);
    }
    return sum / static_cast<double>(st.cc.size());
}

double elastic_energy(const DisplacementField& field, const ParamMaps& params) {
    params.validate(field.grid);
    return elastic_sum(field, [&](std::size_t x) {
        return std::pair{params.lambda_map[x], params.mu_map[x]};
    });
}

double elastic_energy_global(const DisplacementField& field, double lambda, double mu) {
    if (!(lambda >= 0.0 && lambda <= 1.0) || !(mu >= 0.0 && mu <= 1.0)) {
        throw ValidationError("Lame parameters must lie in [0, 1]");
    }
    return elastic_sum(field, [&](std::size_t) { return std::pair{lambda, mu}; });
}

double total_loss(const ScalarImage& moving, const ScalarImage& fixed, const DisplacementField& field,
                  const ParamMaps& params, const NccConfig& cfg) {
    return similarity_loss(fixed, moving, field, params, cfg) + elastic_energy(field, params);
}

double total_loss_global(const ScalarImage& moving, const ScalarImage& fixed, const DisplacementField& field,
                         double lambda, double mu, const NccConfig& cfg) {
    require_same_shape(moving.grid, fixed.grid, "moving/fixed");
    require_same_shape(fixed.grid, field.grid, "fixed/field");
    cfg.validate();
    const double elastic = elastic_energy_global(field, lambda, mu);
    const ScalarImage warped = warp_image(moving, field);
    const auto st = compute_ncc(fixed, warped, cfg, false);
    double sum = 0.0;
    for (std::size_t x = 0; x < st.cc.size(); ++x) sum += (2.0 - lambda - mu) * (1.0 - st.cc[x]);
    return sum / static_cast<double>(st.cc.size()) + elastic;
}

LossParts evaluate_loss(const ScalarImage& moving, const ScalarImage& fixed, const DisplacementField& field,
                        const ParamMaps& params, const NccConfig& cfg, DisplacementField* gradient) {
    check_inputs(moving, fixed, field, params, cfg);
    const Grid& g = fixed.grid;
    const std::size_t n = g.size();
    const int d = g.ndim;

    DisplacementField d_warp;
    const ScalarImage warped = gradient ? warp_image_with_gradient(moving, field, d_warp) : warp_image(moving, field);
    const NccState st = compute_ncc(fixed, warped, cfg, gradient != nullptr);
    const auto weight = similarity_weights(params);

    LossParts parts;
    double sum = 0.0;
    for (std::size_t x = 0; x < n; ++x) sum += weight[x] * (1.0 - st.cc[x]);
    parts.similarity = sum / static_cast<double>(n);

    const auto diffs = displacement_gradients(field);
    double esum = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
        esum += elastic_density(diffs, d, x, params.lambda_map[x], params.mu_map[x]);
    }
    parts.elastic = esum * g.voxel_volume();
    parts.total = parts.similarity + parts.elastic;

    if (!gradient) return parts;

    // dS/dW(y) = -2/N [F(y) box(w a) - box(w a mF) - W(y) box(w b) + box(w b mW)]
    std::vector<double> wa(n), wam(n), wb(n), wbm(n);
    for (std::size_t x = 0; x < n; ++x) {
        wa[x] = weight[x] * st.alpha[x];
        wam[x] = wa[x] * st.mean_f[x];
        wb[x] = weight[x] * st.beta[x];
        wbm[x] = wb[x] * st.mean_w[x];
    }
    const int r = cfg.window_radius;
    wa = box_sum(g, std::move(wa), r);
    wam = box_sum(g, std::move(wam), r);
    wb = box_sum(g, std::move(wb), r);
    wbm = box_sum(g, std::move(wbm), r);

    if (!gradient->grid.same_shape(g) || gradient->data.size() != field.data.size()) {
        *gradient = DisplacementField(g);
    }
    gradient->grid = g;
    const double scale = -2.0 / static_cast<double>(n);
    for (std::size_t x = 0; x < n; ++x) {
        const double d_sim = scale * (fixed[x] * wa[x] - wam[x] - warped[x] * wb[x] + wbm[x]);
        for (int j = 0; j < d; ++j) gradient->data[j * n + x] = d_sim * d_warp.data[j * n + x];
    }
    add_elastic_gradient(field, params, diffs, *gradient);
    return parts;
}

DisplacementField loss_gradient(const ScalarImage& moving, const ScalarImage& fixed, const DisplacementField& field,
                                const ParamMaps& params, const NccConfig& cfg) {
    DisplacementField grad(field.grid);
    evaluate_loss(moving, fixed, field, params, cfg, &grad);
    return grad;
}

} // namespace elastreg
