#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "elastreg/energy.hpp"
#include "elastreg/error.hpp"
#include "elastreg/grid.hpp"

namespace elastreg {

struct SolverConfig {
    int levels = 3;
    /// Iteration caps ordered coarse to fine; the last entry repeats if the
    /// list is shorter than `levels`.
    std::vector<int> iters_per_level{300, 150, 100};
    /// Initial step in pixels of the current level; decays over each level.
    double step_size = 0.5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double grad_epsilon = 1e-8;
    /// Stop a level once the loss drops by less than this fraction over 10 iterations.
    double convergence_tol = 1e-4;
    std::uint64_t rng_seed = 0;
    NccConfig ncc;

    int iterations_for_level(int level_from_coarsest) const;
    void validate() const;
};

struct TraceRecord {
    int level = 0; ///< 0 = coarsest
    int iter = 0;
    double loss = 0.0;
    double sim = 0.0;
    double elastic = 0.0;
    double step_norm = 0.0; ///< largest per-pixel update length in pixels
};

struct SolveTrace {
    std::vector<TraceRecord> records;
    /// Loss of the field handed on from each level (the best iterate seen there).
    std::vector<double> level_final_loss;

    void write_csv(std::ostream& os) const;
};

/// Thrown when the loss turns non-finite; carries the trace so far.
class SolverDivergence : public NumericalError {
public:
    SolverDivergence(const std::string& what, SolveTrace trace)
        : NumericalError(what), trace_(std::move(trace)) {}
    const SolveTrace& trace() const { return trace_; }

private:
    SolveTrace trace_;
};

struct Registration {
    DisplacementField field;
    SolveTrace trace;
};

/// Coarse-to-fine minimization of total_loss over u.
Registration register_images(const ScalarImage& moving, const ScalarImage& fixed, const ParamMaps& params,
                             const SolverConfig& cfg);

/// register_images with constant maps lambda, mu.
Registration register_global(const ScalarImage& moving, const ScalarImage& fixed, double lambda, double mu,
                             const SolverConfig& cfg);

} // namespace elastreg
