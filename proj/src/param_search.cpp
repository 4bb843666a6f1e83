#include "elastreg/param_search.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "elastreg/error.hpp"
#include "elastreg/image_ops.hpp"
#include "elastreg/metrics.hpp"
#include "elastreg/parallel.hpp"

namespace elastreg {

namespace {

bool unit_interval(double v) { return v >= 0.0 && v <= 1.0; }

double snap(double v) { return std::round(v * 1e12) / 1e12; }

std::string fmt_num(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

} // namespace

TissueElasticity TissueElasticity::uniform(int class_count, double lambda, double mu) {
    TissueElasticity t;
    for (int c = 0; c <= class_count; ++c) t.entries.push_back({c, lambda, mu});
    t.validate();
    return t;
}

const TissueElasticity::Entry* TissueElasticity::find(int label) const {
    for (const auto& e : entries) {
        if (e.label == label) return &e;
    }
    return nullptr;
}

void TissueElasticity::validate() const {
    std::vector<int> seen;
    for (const auto& e : entries) {
        if (e.label < 0) throw ValidationError("tissue label must be >= 0");
        if (std::find(seen.begin(), seen.end(), e.label) != seen.end()) {
            throw ValidationError("duplicate parameters for label " + std::to_string(e.label));
        }
        seen.push_back(e.label);
        if (!unit_interval(e.lambda) || !unit_interval(e.mu)) {
            throw ValidationError("parameters for label " + std::to_string(e.label) + " outside [0, 1]");
        }
    }
}

std::string TissueElasticity::to_json() const {
    nlohmann::ordered_json j;
    j["classes"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) j["classes"].push_back({{"label", e.label}, {"lambda", e.lambda}, {"mu", e.mu}});
    return j.dump(2);
}

TissueElasticity TissueElasticity::from_json(const std::string& text) {
    TissueElasticity t;
    try {
        const auto j = nlohmann::json::parse(text);
        for (const auto& c : j.at("classes")) {
            t.entries.push_back({c.at("label").get<int>(), c.at("lambda").get<double>(), c.at("mu").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed tissue parameter JSON: ") + e.what());
    }
    t.validate();
    return t;
}

SearchGrid SearchGrid::default_grid() {
    SearchGrid g;
    for (int k = 0; k <= 10; ++k) g.values.push_back(k / 10.0);
    return g;
}

SearchGrid SearchGrid::parse(const std::string& spec) {
    std::vector<double> parts;
    std::stringstream ss(spec);
    std::string item;
    try {
        while (std::getline(ss, item, ':')) {
            std::size_t used = 0;
            parts.push_back(std::stod(item, &used));
            if (used != item.size()) throw ValidationError("");
        }
    } catch (const std::exception&) {
        throw ValidationError("grid must be start:end:step, got '" + spec + "'");
    }
    if (parts.size() != 3) throw ValidationError("grid must be start:end:step, got '" + spec + "'");
    const double start = parts[0], end = parts[1], step = parts[2];
    if (!(step > 0.0) || end < start) throw ValidationError("grid needs step > 0 and end >= start");
    SearchGrid g;
    const auto steps = static_cast<long>(std::floor((end - start) / step + 1e-9));
    for (long k = 0; k <= steps; ++k) g.values.push_back(snap(start + static_cast<double>(k) * step));
    g.validate();
    return g;
}

void SearchGrid::validate() const {
    if (values.empty()) throw ValidationError("search grid is empty");
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (!unit_interval(values[k])) throw ValidationError("search grid values must lie in [0, 1]");
        if (k > 0 && !(values[k] > values[k - 1])) throw ValidationError("search grid must be strictly increasing");
    }
}

ParamMaps build_param_maps(const SegmentationMap& seg, const TissueElasticity& params) {
    params.validate();
    const int top = std::max(seg.class_count, 0);
    std::vector<const TissueElasticity::Entry*> lut(static_cast<std::size_t>(top) + 1, nullptr);
    for (int c = 0; c <= top; ++c) lut[c] = params.find(c);
    ParamMaps maps{ScalarImage(seg.grid), ScalarImage(seg.grid)};
    for (std::size_t x = 0; x < seg.size(); ++x) {
        const auto* e = lut[seg.labels[x]];
        if (!e) throw ValidationError("no elasticity parameters for label " + std::to_string(seg.labels[x]));
        maps.lambda_map[x] = e->lambda;
        maps.mu_map[x] = e->mu;
    }
    return maps;
}

TissueElasticity SearchResult::tissue_elasticity() const {
    TissueElasticity t;
    for (const auto& b : per_class) {
        if (b.defined) t.entries.push_back({b.label, b.lambda, b.mu});
        else t.entries.push_back({b.label, global_lambda, global_mu});
    }
    return t;
}

std::string SearchResult::to_json() const {
    nlohmann::ordered_json j;
    j["subject"] = subject;
    j["class_count"] = class_count;
    j["per_class"] = nlohmann::ordered_json::array();
    for (const auto& b : per_class) {
        nlohmann::ordered_json e;
        e["label"] = b.label;
        e["defined"] = b.defined;
        if (b.defined) {
            e["lambda"] = b.lambda;
            e["mu"] = b.mu;
            e["dice"] = b.dice;
        } else {
            e["lambda"] = nullptr;
            e["mu"] = nullptr;
            e["dice"] = nullptr;
        }
        j["per_class"].push_back(e);
    }
    j["global"] = {{"lambda", global_lambda}, {"mu", global_mu}, {"mean_dice", global_mean_dice}};
    j["parameter_count"] = parameter_count();
    j["grid_points"] = table.size();
    j["warnings"] = warnings;
    return j.dump(2);
}

std::string SearchResult::table_csv_header(int class_count) {
    std::string h = "subject,lambda,mu";
    for (int c = 0; c <= class_count; ++c) h += ",dice_class_" + std::to_string(c);
    return h + ",dice_mean";
}

void SearchResult::write_table_csv(std::ostream& os, bool header) const {
    if (header) os << table_csv_header(class_count) << '\n';
    for (const auto& row : table) {
        os << subject << ',' << fmt_num(row.lambda) << ',' << fmt_num(row.mu);
        for (double d : row.dice) os << ',' << fmt_num(d);
        os << ',' << fmt_num(row.mean_dice) << '\n';
    }
}

void select_best(SearchResult& result, const std::vector<bool>& label_present) {
    if (result.table.empty()) throw ValidationError("empty score table");
    result.per_class.clear();
    for (int c = 0; c <= result.class_count; ++c) {
        ClassBest best;
        best.label = c;
        best.defined = c < static_cast<int>(label_present.size()) && label_present[c];
        if (best.defined) {
            std::size_t arg = 0;
            for (std::size_t k = 1; k < result.table.size(); ++k) {
                if (result.table[k].dice[c] > result.table[arg].dice[c]) arg = k;
            }
            best.lambda = result.table[arg].lambda;
            best.mu = result.table[arg].mu;
            best.dice = result.table[arg].dice[c];
        }
        result.per_class.push_back(best);
    }
    std::size_t arg = 0;
    for (std::size_t k = 1; k < result.table.size(); ++k) {
        if (result.table[k].mean_dice > result.table[arg].mean_dice) arg = k;
    }
    result.global_lambda = result.table[arg].lambda;
    result.global_mu = result.table[arg].mu;
    result.global_mean_dice = result.table[arg].mean_dice;
}

namespace {

GridScore score_point(const Subject& s, double lambda, double mu, const SolverConfig& cfg, int class_count) {
    const Registration reg = register_global(s.moving, s.fixed, lambda, mu, cfg);
    const SegmentationMap warped = warp_labels(s.seg_moving, reg.field);
    GridScore row{lambda, mu, dice_per_label(warped, s.seg_fixed), 0.0};
    row.dice.resize(static_cast<std::size_t>(class_count) + 1, 1.0);
    double sum = 0.0;
    for (int c = 1; c <= class_count; ++c) sum += row.dice[c];
    row.mean_dice = class_count > 0 ? sum / class_count : row.dice[0];
    return row;
}

void check_subject(const Subject& s) {
    require_same_shape(s.moving.grid, s.fixed.grid, "subject moving/fixed");
    require_same_shape(s.fixed.grid, s.seg_moving.grid, "subject fixed/seg_moving");
    require_same_shape(s.fixed.grid, s.seg_fixed.grid, "subject fixed/seg_fixed");
}

SearchResult assemble(const Subject& s, std::vector<GridScore> table) {
    SearchResult r;
    r.subject = s.id;
    r.class_count = std::max(s.seg_moving.class_count, s.seg_fixed.class_count);
    r.table = std::move(table);
    std::vector<bool> present(static_cast<std::size_t>(r.class_count) + 1, false);
    for (auto l : s.seg_fixed.labels) present[l] = true;
    for (int c = 0; c <= r.class_count; ++c) {
        if (!present[c]) {
            r.warnings.push_back("label " + std::to_string(c) +
                                 " is absent from the fixed segmentation; its best parameters are undefined");
        }
    }
    select_best(r, present);
    return r;
}

} // namespace

SearchResult grid_search_subject(const Subject& subject, const SearchGrid& grid, const SolverConfig& cfg, int jobs) {
    check_subject(subject);
    grid.validate();
    cfg.validate();
    const std::size_t side = grid.values.size();
    const int classes = std::max(subject.seg_moving.class_count, subject.seg_fixed.class_count);
    std::vector<GridScore> table(side * side);
    parallel_for(table.size(), jobs, [&](std::size_t k) {
        table[k] = score_point(subject, grid.values[k / side], grid.values[k % side], cfg, classes);
    });
    return assemble(subject, std::move(table));
}

std::vector<SubjectOutcome> run_search_batch(const std::vector<Subject>& subjects, const SearchGrid& grid,
                                             const SolverConfig& cfg, int jobs) {
    if (subjects.empty()) throw ValidationError("search batch is empty");
    grid.validate();
    cfg.validate();
    const std::size_t side = grid.values.size();
    const std::size_t per_subject = side * side;

    std::vector<SubjectOutcome> outcomes(subjects.size());
    std::vector<std::vector<GridScore>> tables(subjects.size(), std::vector<GridScore>(per_subject));
    std::vector<std::exception_ptr> errors(subjects.size() * per_subject);
    std::vector<bool> valid(subjects.size(), true);
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        outcomes[s].subject = subjects[s].id;
        try {
            check_subject(subjects[s]);
        } catch (const std::exception& e) {
            valid[s] = false;
            outcomes[s].error = e.what();
            outcomes[s].failure = std::current_exception();
        }
    }

    // One flat task list so every worker stays busy regardless of N.
    parallel_for(subjects.size() * per_subject, jobs, [&](std::size_t task) {
        const std::size_t s = task / per_subject, k = task % per_subject;
        if (!valid[s]) return;
        const Subject& subj = subjects[s];
        const int classes = std::max(subj.seg_moving.class_count, subj.seg_fixed.class_count);
        try {
            tables[s][k] = score_point(subj, grid.values[k / side], grid.values[k % side], cfg, classes);
        } catch (...) {
            errors[task] = std::current_exception();
        }
    });

    for (std::size_t s = 0; s < subjects.size(); ++s) {
        if (!valid[s]) continue;
        for (std::size_t k = 0; k < per_subject && !outcomes[s].failure; ++k) {
            outcomes[s].failure = errors[s * per_subject + k];
        }
        if (outcomes[s].failure) {
            try {
                std::rethrow_exception(outcomes[s].failure);
            } catch (const std::exception& e) {
                outcomes[s].error = e.what();
            } catch (...) {
                outcomes[s].error = "unknown failure";
            }
        } else {
            outcomes[s].result = assemble(subjects[s], std::move(tables[s]));
        }
    }
    return outcomes;
}

std::size_t estimated_parameter_count(const std::vector<SubjectOutcome>& outcomes) {
    std::size_t n = 0;
    for (const auto& o : outcomes) {
        if (o.result) n += o.result->parameter_count();
    }
    return n;
}

void write_scatter_csv(std::ostream& os, const std::vector<SubjectOutcome>& outcomes) {
    os << "class,subject,lambda,mu\n";
    int classes = 0;
    for (const auto& o : outcomes) {
        if (o.result) classes = std::max(classes, o.result->class_count);
    }
    for (int c = 0; c <= classes; ++c) {
        for (const auto& o : outcomes) {
            if (!o.result || c >= static_cast<int>(o.result->per_class.size())) continue;
            const auto& b = o.result->per_class[c];
            os << c << ',' << o.subject << ',';
            if (b.defined) os << fmt_num(b.lambda) << ',' << fmt_num(b.mu);
            else os << ',';
            os << '\n';
        }
    }
}

} // namespace elastreg
