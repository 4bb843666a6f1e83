#pragma once

#include "elastreg/grid.hpp"

namespace elastreg {

/// Per-pixel Lamé coefficient maps, both dimensionless and within [0, 1].
struct ParamMaps {
    ScalarImage lambda_map;
    ScalarImage mu_map;

    static ParamMaps constant(const Grid& grid, double lambda, double mu);
    /// Throws ValidationError unless both maps match `grid` and lie in [0, 1].
    void validate(const Grid& grid) const;
};

struct NccConfig {
    int window_radius = 4;
    double epsilon = 1e-5;

    /// Radius 4 in 2D, 3 in 3D.
    static NccConfig defaults_for(int ndim);
    void validate() const;
};

/// Squared local correlation coefficient over clipped (2r+1)^D windows,
/// cross^2 / (varF * varW + eps) with window-summed (not averaged) moments.
/// Windows where both variances are below eps score 1.
ScalarImage local_ncc_map(const ScalarImage& fixed, const ScalarImage& warped, const NccConfig& cfg);

/// mean over x of (2 - lambda(x) - mu(x)) * (1 - lncc(x)), in [0, 2].
double similarity_loss(const ScalarImage& fixed, const ScalarImage& moving, const DisplacementField& field,
                       const ParamMaps& params, const NccConfig& cfg);

/// Integral of 1/4 mu sum_ij (d_i u_j + d_j u_i)^2 + 1/2 lambda (div u)^2
/// with forward differences of the physical displacement (u_j * spacing_j).
double elastic_energy(const DisplacementField& field, const ParamMaps& params);

/// Constant-coefficient evaluation of the same energy.
double elastic_energy_global(const DisplacementField& field, double lambda, double mu);

struct LossParts {
    double similarity = 0.0;
    double elastic = 0.0;
    double total = 0.0;
};

/// similarity_loss + elastic_energy.
double total_loss(const ScalarImage& moving, const ScalarImage& fixed, const DisplacementField& field,
                  const ParamMaps& params, const NccConfig& cfg);

/// Same loss for constant coefficients, without materializing maps.
double total_loss_global(const ScalarImage& moving, const ScalarImage& fixed, const DisplacementField& field,
                         double lambda, double mu, const NccConfig& cfg);

/// dL/du for every grid point and component.
DisplacementField loss_gradient(const ScalarImage& moving, const ScalarImage& fixed, const DisplacementField& field,
                                const ParamMaps& params, const NccConfig& cfg);

/// Loss terms and gradient in one pass; `gradient` is resized as needed.
/// This is the solver's inner evaluation.
LossParts evaluate_loss(const ScalarImage& moving, const ScalarImage& fixed, const DisplacementField& field,
                        const ParamMaps& params, const NccConfig& cfg, DisplacementField* gradient);

} // namespace elastreg
