#include "elastreg/solver.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "elastreg/image_ops.hpp"

namespace elastreg {

namespace {

constexpr int kConvergenceWindow = 10;
// Fraction of the initial step still applied on the last iteration of a level.
constexpr double kFinalStepFraction = 0.1;
// Step multiplier after a rejected (loss-increasing) trial, and its recovery per accepted step.
constexpr double kStepShrink = 0.5;
constexpr double kStepGrowth = 1.2;

double step_at(const SolverConfig& cfg, int it, int iters) {
    const double phase = iters > 1 ? static_cast<double>(it) / (iters - 1) : 0.0;
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
    return cfg.step_size * (kFinalStepFraction + (1.0 - kFinalStepFraction) * cosine);
}

} // namespace

int SolverConfig::iterations_for_level(int level_from_coarsest) const {
    if (iters_per_level.empty()) return 0;
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(level_from_coarsest), iters_per_level.size() - 1);
    return iters_per_level[k];
}

void SolverConfig::validate() const {
    if (levels < 1) throw ValidationError("solver needs at least one level");
    for (int it : iters_per_level) {
        if (it < 0) throw ValidationError("iteration counts must be >= 0");
    }
    if (!(step_size > 0.0)) throw ValidationError("step size must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ValidationError("moment decay factors must lie in (0, 1)");
    }
    if (!(grad_epsilon > 0.0)) throw ValidationError("gradient epsilon must be positive");
    if (!(convergence_tol >= 0.0)) throw ValidationError("convergence tolerance must be >= 0");
    ncc.validate();
}

void SolveTrace::write_csv(std::ostream& os) const {
    std::ostringstream out;
    out << "level,iter,loss,sim,elastic,step_norm\n";
    out << std::setprecision(17);
    for (const auto& r : records) {
        out << r.level << ',' << r.iter << ',' << r.loss << ',' << r.sim << ',' << r.elastic << ',' << r.step_norm
            << '\n';
    }
    os << out.str();
}

Registration register_images(const ScalarImage& moving, const ScalarImage& fixed, const ParamMaps& params,
                             const SolverConfig& cfg) {
    require_same_shape(moving.grid, fixed.grid, "register moving/fixed");
    params.validate(fixed.grid);
    cfg.validate();

    const auto moving_pyr = build_pyramid(moving, cfg.levels);
    const auto fixed_pyr = build_pyramid(fixed, cfg.levels);
    const auto lambda_pyr = build_pyramid(params.lambda_map, cfg.levels);
    const auto mu_pyr = build_pyramid(params.mu_map, cfg.levels);

    Registration result;
    SolveTrace& trace = result.trace;
    DisplacementField u;
    DisplacementField grad;

    for (int coarse = 0; coarse < cfg.levels; ++coarse) {
        const int level = cfg.levels - 1 - coarse;
        const ScalarImage& m = moving_pyr[level];
        const ScalarImage& f = fixed_pyr[level];
        const ParamMaps maps{lambda_pyr[level], mu_pyr[level]};
        u = coarse == 0 ? DisplacementField(f.grid) : upsample_field(u, f.grid.dim_vector());
        u.grid = f.grid;

        const int iters = cfg.iterations_for_level(coarse);
        if (iters == 0) continue;

        const std::size_t count = u.data.size();
        const std::size_t points = u.points();
        const int d = u.ndim();
        std::vector<double> m1(count, 0.0), m2(count, 0.0), step(count, 0.0);
        std::vector<double> accepted = u.data;
        std::vector<double> accepted_history;
        double accepted_loss = std::numeric_limits<double>::infinity();
        double scale = 1.0;
        double b1_pow = 1.0, b2_pow = 1.0;

        for (int it = 0; it < iters; ++it) {
            const LossParts parts = evaluate_loss(m, f, u, maps, cfg.ncc, &grad);
            if (!std::isfinite(parts.total)) {
                throw SolverDivergence("non-finite loss at level " + std::to_string(coarse) + " iteration " +
                                           std::to_string(it),
                                       trace);
            }
            TraceRecord rec{coarse, it, parts.total, parts.similarity, parts.elastic, 0.0};

            if (parts.total <= accepted_loss) {
                accepted_loss = parts.total;
                accepted = u.data;
                accepted_history.push_back(parts.total);
                scale = std::min(1.0, scale * kStepGrowth);
                // Adam moments with bias correction, updated at accepted points only.
                b1_pow *= cfg.beta1;
                b2_pow *= cfg.beta2;
                for (std::size_t k = 0; k < count; ++k) {
                    const double g = grad.data[k];
                    m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * g;
                    m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * g * g;
                }
            } else {
                // Rejected: retry from the last accepted point with a shorter step.
                scale *= kStepShrink;
                accepted_history.push_back(accepted_loss);
            }

            const std::size_t n_hist = accepted_history.size();
            if (n_hist > kConvergenceWindow) {
                const double ref = accepted_history[n_hist - 1 - kConvergenceWindow];
                if (ref - accepted_loss <= cfg.convergence_tol * std::abs(ref)) {
                    trace.records.push_back(rec);
                    break;
                }
            }

            const double lr = scale * step_at(cfg, it, iters);
            for (std::size_t k = 0; k < count; ++k) {
                const double mhat = m1[k] / (1.0 - b1_pow);
                const double vhat = m2[k] / (1.0 - b2_pow);
                step[k] = -lr * mhat / (std::sqrt(vhat) + cfg.grad_epsilon);
                u.data[k] = accepted[k] + step[k];
            }
            double max_norm2 = 0.0;
            for (std::size_t x = 0; x < points; ++x) {
                double n2 = 0.0;
                for (int j = 0; j < d; ++j) n2 += step[j * points + x] * step[j * points + x];
                max_norm2 = std::max(max_norm2, n2);
            }
            rec.step_norm = std::sqrt(max_norm2);
            trace.records.push_back(rec);
        }
        u.data = std::move(accepted);
        const double best_loss = accepted_loss;
        trace.level_final_loss.push_back(best_loss);
    }
    result.field = std::move(u);
    return result;
}

Registration register_global(const ScalarImage& moving, const ScalarImage& fixed, double lambda, double mu,
                             const SolverConfig& cfg) {
    return register_images(moving, fixed, ParamMaps::constant(fixed.grid, lambda, mu), cfg);
}

} // namespace elastreg
