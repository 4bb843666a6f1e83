#pragma once

#include <exception>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "elastreg/energy.hpp"
#include "elastreg/grid.hpp"
#include "elastreg/solver.hpp"

namespace elastreg {

/// Per-label Lamé parameters, one entry per label 0..C.
struct TissueElasticity {
    struct Entry {
        int label = 0;
        double lambda = 0.0;
        double mu = 0.0;
    };
    std::vector<Entry> entries;

    static TissueElasticity uniform(int class_count, double lambda, double mu);
    const Entry* find(int label) const;
    /// Exactly one entry per label, all values in [0, 1].
    void validate() const;

    std::string to_json() const;
    static TissueElasticity from_json(const std::string& text);
};

/// Parameter axis shared by lambda and mu.
struct SearchGrid {
    std::vector<double> values;

    /// {0.0, 0.1, ..., 1.0}
    static SearchGrid default_grid();
    /// "start:end:step", inclusive of `end` when the step divides the range.
    static SearchGrid parse(const std::string& spec);
    void validate() const;
};

struct GridScore {
    double lambda = 0.0;
    double mu = 0.0;
    std::vector<double> dice; ///< labels 0..C
    double mean_dice = 0.0;   ///< mean over foreground labels 1..C
};

struct ClassBest {
    int label = 0;
    bool defined = true; ///< false when the label is absent from seg_fixed
    double lambda = 0.0;
    double mu = 0.0;
    double dice = 0.0;
};

struct SearchResult {
    int subject = 0;
    int class_count = 0;
    std::vector<ClassBest> per_class; ///< labels 0..C
    std::vector<GridScore> table;     ///< row-major, lambda outer, mu inner
    double global_lambda = 0.0;
    double global_mu = 0.0;
    double global_mean_dice = 0.0;
    std::vector<std::string> warnings;

    /// Per-label parameters; undefined labels fall back to the global best.
    TissueElasticity tissue_elasticity() const;
    /// Per-label (lambda, mu) values, two per label.
    std::size_t parameter_count() const { return 2 * per_class.size(); }

    std::string to_json() const;
    static std::string table_csv_header(int class_count);
    void write_table_csv(std::ostream& os, bool header = true) const;
};

/// Lambda(x) = lambda_c, Gamma(x) = mu_c where seg(x) = c.
ParamMaps build_param_maps(const SegmentationMap& seg, const TissueElasticity& params);

struct Subject {
    int id = 0;
    ScalarImage moving;
    ScalarImage fixed;
    SegmentationMap seg_moving;
    SegmentationMap seg_fixed;
};

/// Re-reads a score table: per-label argmax (first row wins ties) and the
/// mean-Dice argmax. Used by grid_search_subject and exposed for auditing.
void select_best(SearchResult& result, const std::vector<bool>& label_present);

/// Exhaustive (lambda, mu) sweep with register_global, scored by class-wise Dice.
SearchResult grid_search_subject(const Subject& subject, const SearchGrid& grid, const SolverConfig& cfg,
                                 int jobs = 1);

struct SubjectOutcome {
    int subject = 0;
    std::optional<SearchResult> result;
    std::string error;
    std::exception_ptr failure; ///< set together with `error`
};

/// Independent searches; output order matches input order and failures are
/// recorded per subject.
std::vector<SubjectOutcome> run_search_batch(const std::vector<Subject>& subjects, const SearchGrid& grid,
                                             const SolverConfig& cfg, int jobs = 1);

/// Total per-label parameter values across successful results (2 (C+1) N).
std::size_t estimated_parameter_count(const std::vector<SubjectOutcome>& outcomes);

/// One row per (label, subject): class, subject, lambda, mu.
void write_scatter_csv(std::ostream& os, const std::vector<SubjectOutcome>& outcomes);

} // namespace elastreg
