#include "elastreg/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "elastreg/error.hpp"
#include "elastreg/image_ops.hpp"
#include "elastreg/metrics.hpp"
#include "elastreg/parallel.hpp"
#include "elastreg/param_search.hpp"
#include "elastreg/phantom.hpp"
#include "elastreg/render.hpp"
#include "elastreg/solver.hpp"
#include "elastreg/stats.hpp"
#include "elastreg/tensor_io.hpp"

namespace elastreg {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

// Expands `--config FILE` into flags. Keys are long flag names without dashes,
// arrays become repeated values and `true` becomes a bare flag. Flags already on
// the command line win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    auto it = std::find_if(args.begin(), args.end(),
                           [](const std::string& a) { return a == "--config" || a.rfind("--config=", 0) == 0; });
    if (it == args.end()) return args;
    std::string file;
    if (*it == "--config") {
        if (std::next(it) == args.end()) throw ValidationError("--config needs a file name");
        file = *std::next(it);
        args.erase(it, it + 2);
    } else {
        file = it->substr(9);
        args.erase(it);
    }
    ojson j;
    try {
        j = ojson::parse(read_text(file));
    } catch (const ojson::parse_error& e) {
        throw ValidationError("config file " + file + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ValidationError("config file " + file + " must hold a JSON object");

    auto given = [&](const std::string& flag) {
        return std::any_of(args.begin(), args.end(),
                           [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    };
    auto scalar = [](const std::string& key, const ojson& v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number()) return v.dump();
        throw ValidationError("config key '" + key + "' must hold numbers, strings or arrays of them");
    };
    std::vector<std::string> extra;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = "--" + key;
        if (given(flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) extra.push_back(flag);
            continue;
        }
        extra.push_back(flag);
        if (value.is_array()) {
            if (value.empty()) throw ValidationError("config key '" + key + "' is an empty array");
            for (const auto& v : value) extra.push_back(scalar(key, v));
        } else {
            extra.push_back(scalar(key, value));
        }
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void require_exists(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("missing input " + path.string());
}

std::string subject_name(int index) {
    std::ostringstream os;
    os << 's' << std::setw(3) << std::setfill('0') << index;
    return os.str();
}

struct SolverFlags {
    int levels = 3;
    std::vector<int> iters{300, 150, 100};
    double step = 0.5;
    double tol = 1e-4;
    int ncc_radius = 0;

    void attach(CLI::App* app) {
        app->add_option("--levels", levels, "Pyramid levels")->capture_default_str();
        app->add_option("--iters", iters, "Iteration caps per level, coarse to fine")->capture_default_str();
        app->add_option("--step", step, "Initial step in pixels")->capture_default_str();
        app->add_option("--tol", tol, "Relative loss decrease over 10 iterations that ends a level")
            ->capture_default_str();
        app->add_option("--ncc-radius", ncc_radius, "Local NCC window radius (0: 4 in 2D, 3 in 3D)");
    }

    SolverConfig config(int ndim) const {
        SolverConfig cfg;
        cfg.levels = levels;
        cfg.iters_per_level = iters;
        cfg.step_size = step;
        cfg.convergence_tol = tol;
        cfg.ncc = NccConfig::defaults_for(ndim);
        if (ncc_radius != 0) cfg.ncc.window_radius = ncc_radius;
        cfg.validate();
        return cfg;
    }
};

// Images, segmentations and keypoints for one pair, from a phantom directory or from individual files.
struct PairFlags {
    std::string sample, moving, fixed, seg_moving, seg_fixed, keypoints;
    double spacing = 1.0;

    void attach(CLI::App* app, bool segs, bool images = true) {
        app->add_option("--sample", sample, "Phantom sample directory (supplies every input)");
        if (images) {
            app->add_option("--moving", moving, "Moving image (.ten)");
            app->add_option("--fixed", fixed, "Fixed image (.ten)");
        }
        if (segs) {
            app->add_option("--seg-moving", seg_moving, "Moving segmentation (.ten)");
            app->add_option("--seg-fixed", seg_fixed, "Fixed segmentation (.ten)");
        }
        app->add_option("--spacing", spacing, "Isotropic pixel spacing of raw inputs")->capture_default_str();
    }
};

struct LoadedPair {
    std::string name;
    ScalarImage moving, fixed;
    std::optional<SegmentationMap> seg_moving, seg_fixed;
    std::optional<std::pair<Keypoints, Keypoints>> keypoints; // fixed, moving
};

LoadedPair load_pair(const PairFlags& f, bool need_images, bool need_segs) {
    LoadedPair p;
    if (!f.sample.empty()) {
        require_exists(f.sample);
        PhantomSample s = load_sample(f.sample);
        p.name = fs::path(f.sample).filename().string();
        if (p.name.empty()) p.name = fs::path(f.sample).parent_path().filename().string();
        p.moving = std::move(s.moving);
        p.fixed = std::move(s.fixed);
        p.seg_moving = std::move(s.seg_moving);
        p.seg_fixed = std::move(s.seg_fixed);
        p.keypoints = std::make_pair(std::move(s.keypoints_fixed), std::move(s.keypoints_moving));
        return p;
    }
    if (!(f.spacing > 0.0)) throw ValidationError("--spacing must be positive");
    if (need_images) {
        if (f.moving.empty() || f.fixed.empty()) throw ValidationError("need --moving and --fixed, or --sample");
        require_exists(f.moving);
        require_exists(f.fixed);
        p.moving = read_image(f.moving, f.spacing);
        p.fixed = read_image(f.fixed, f.spacing);
        require_same_shape(p.moving.grid, p.fixed.grid, "moving/fixed");
    }
    if (need_segs) {
        if (f.seg_moving.empty() || f.seg_fixed.empty()) {
            throw ValidationError("need --seg-moving and --seg-fixed, or --sample");
        }
        require_exists(f.seg_moving);
        require_exists(f.seg_fixed);
        p.seg_moving = read_labels(f.seg_moving, f.spacing);
        p.seg_fixed = read_labels(f.seg_fixed, f.spacing);
        const int c = std::max(p.seg_moving->class_count, p.seg_fixed->class_count);
        p.seg_moving->class_count = p.seg_fixed->class_count = c;
    }
    return p;
}

Subject to_subject(const LoadedPair& p, int id) {
    Subject s{id, p.moving, p.fixed, *p.seg_moving, *p.seg_fixed};
    return s;
}

void write_registration(const fs::path& dir, const Registration& reg, const ScalarImage& moving,
                        const ScalarImage& fixed) {
    ensure_dir(dir);
    write_tensor(dir / "field.ten", reg.field);
    {
        std::ostringstream trace;
        reg.trace.write_csv(trace);
        write_text(dir / "trace.csv", trace.str());
    }
    const ScalarImage warped = warp_image(moving, reg.field);
    write_tensor(dir / "warped.ten", warped);
    const auto [lo, hi] = std::minmax_element(fixed.data.begin(), fixed.data.end());
    write_pgm(dir / "warped.pgm", warped, *lo, *hi);
    write_jacobian_panels(dir / "jac_pos.pgm", dir / "jac_neg.pgm", dir / "jacobian.ppm",
                          jacobian_determinant_map(reg.field));
    write_difference_pgm(dir / "diff.pgm", fixed, warped);
    write_deformation_grid(dir / "grid.pgm", reg.field);
}

// Runs a solve and keeps the partial trace on divergence.
Registration solve(const fs::path& dir, const ScalarImage& moving, const ScalarImage& fixed, const ParamMaps& maps,
                   const SolverConfig& cfg) {
    try {
        return register_images(moving, fixed, maps, cfg);
    } catch (const SolverDivergence& e) {
        ensure_dir(dir);
        std::ostringstream trace;
        e.trace().write_csv(trace);
        write_text(dir / "trace.csv", trace.str());
        throw;
    }
}

void append_csv_row(const fs::path& table, const std::string& header, const std::string& row) {
    const bool fresh = !fs::exists(table) || fs::file_size(table) == 0;
    if (!fresh) {
        std::ifstream is(table);
        std::string first;
        std::getline(is, first);
        if (first != header) throw ValidationError(table.string() + " has a different column layout");
    }
    std::ofstream os(table, std::ios::app);
    if (!os) throw IoError("cannot open " + table.string() + " for appending");
    if (fresh) os << header << '\n';
    os << row << '\n';
    if (!os) throw IoError("failed writing " + table.string());
}

// ---- search outputs ----

ojson cohort_summary(const std::vector<SubjectOutcome>& outcomes) {
    ojson j;
    j["subjects"] = ojson::array();
    j["failures"] = ojson::array();
    int classes = 0;
    for (const auto& o : outcomes) {
        if (o.result) {
            j["subjects"].push_back(o.subject);
            classes = std::max(classes, o.result->class_count);
        } else {
            j["failures"].push_back({{"subject", o.subject}, {"error", o.error}});
        }
    }
    j["parameter_count"] = estimated_parameter_count(outcomes);

    std::vector<std::vector<double>> mus(static_cast<std::size_t>(classes) + 1);
    j["per_class"] = ojson::array();
    for (int c = 0; c <= classes; ++c) {
        std::vector<double> lambdas;
        for (const auto& o : outcomes) {
            if (!o.result || c >= static_cast<int>(o.result->per_class.size())) continue;
            const auto& b = o.result->per_class[c];
            if (!b.defined) continue;
            lambdas.push_back(b.lambda);
            mus[c].push_back(b.mu);
        }
        ojson e;
        e["label"] = c;
        e["lambda"] = lambdas;
        e["mu"] = mus[c];
        e["lambda_variance"] = sample_variance(lambdas);
        e["mu_variance"] = sample_variance(mus[c]);
        j["per_class"].push_back(e);
    }
    if (classes >= 2 && !mus[1].empty() && !mus[2].empty()) {
        const RankTest t = mann_whitney(mus[1], mus[2]);
        j["mu_rank_test"] = {{"classes", {1, 2}},   {"u", t.u}, {"z", t.z},
                             {"p_value", t.p_value}, {"identical", t.identical}};
    }
    return j;
}

void write_cohort_search(const fs::path& out, const std::vector<SubjectOutcome>& outcomes,
                         const std::vector<std::string>& names) {
    ensure_dir(out);
    std::ostringstream scores;
    bool header = true;
    for (std::size_t s = 0; s < outcomes.size(); ++s) {
        const auto& o = outcomes[s];
        if (!o.result) continue;
        const fs::path dir = out / names[s];
        ensure_dir(dir);
        write_text(dir / "search.json", o.result->to_json() + "\n");
        write_text(dir / "tissue.json", o.result->tissue_elasticity().to_json() + "\n");
        o.result->write_table_csv(scores, header);
        header = false;
    }
    write_text(out / "scores.csv", scores.str());
    std::ostringstream scatter;
    write_scatter_csv(scatter, outcomes);
    write_text(out / "scatter.csv", scatter.str());
    write_text(out / "summary.json", cohort_summary(outcomes).dump(2) + "\n");
}

void rethrow_first_failure(const std::vector<SubjectOutcome>& outcomes) {
    for (const auto& o : outcomes) {
        if (o.failure) std::rethrow_exception(o.failure);
    }
}

std::vector<fs::path> cohort_dirs(const fs::path& root) {
    require_exists(root);
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::exists(e.path() / "spec.json")) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ValidationError("no phantom samples under " + root.string());
    return dirs;
}

// ---- compare ----

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

CsvTable read_csv(const fs::path& path) {
    std::istringstream is(read_text(path));
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw ValidationError(path.string() + " is empty");
    t.columns = split_csv(line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != t.columns.size()) throw ValidationError(path.string() + ": ragged row '" + line + "'");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

std::string compare_tables(const std::vector<fs::path>& files) {
    std::vector<CsvTable> tables;
    for (const auto& f : files) tables.push_back(read_csv(f));
    std::vector<std::string> columns;
    for (const auto& t : tables)
        for (const auto& c : t.columns)
            if (c != "subject" && std::find(columns.begin(), columns.end(), c) == columns.end()) columns.push_back(c);

    std::ostringstream os;
    os << "model";
    for (const auto& c : columns) os << ',' << c;
    os << '\n';
    for (std::size_t k = 0; k < files.size(); ++k) {
        os << files[k].stem().string();
        for (const auto& c : columns) {
            const auto it = std::find(tables[k].columns.begin(), tables[k].columns.end(), c);
            std::vector<double> v;
            if (it != tables[k].columns.end()) {
                const auto col = static_cast<std::size_t>(it - tables[k].columns.begin());
                for (const auto& row : tables[k].rows) {
                    if (row[col].empty()) continue;
                    try {
                        v.push_back(std::stod(row[col]));
                    } catch (const std::exception&) {
                        throw ValidationError(files[k].string() + ": non-numeric value '" + row[col] + "' in " + c);
                    }
                }
            }
            os << ',';
            if (v.empty()) os << "n/a";
            else os << fmt(mean(v)) << '(' << fmt(sample_std(v)) << ')';
        }
        os << '\n';
    }
    return os.str();
}

// ---- commands ----

struct PhantomFlags {
    std::string out, spec;
    std::uint64_t seed = 0;
    int cohort = 0;
    std::vector<int> dims;
    double spacing = 0.0;
    double noise = -1.0;
    int jobs = 1;

    PhantomSpec base() const {
        PhantomSpec s;
        if (!dims.empty()) s = PhantomSpec::defaults(static_cast<int>(dims.size()));
        if (!spec.empty()) {
            require_exists(spec);
            s = PhantomSpec::from_json(read_text(spec));
        }
        if (!dims.empty()) s.dims = dims;
        if (spacing > 0.0) s.spacing = spacing;
        if (noise >= 0.0) s.noise_level = noise;
        s.validate();
        return s;
    }
};

int cmd_phantom(const PhantomFlags& f, std::ostream& out) {
    const PhantomSpec base = f.base();
    ensure_dir(f.out);
    int written = 0;
    if (f.cohort > 0) {
        const auto cohort = generate_cohort(base, f.cohort, f.seed, f.jobs);
        for (const auto& s : cohort) save_sample(fs::path(f.out) / subject_name(s.spec.subject), s);
        written = f.cohort;
    } else {
        PhantomSpec s = base;
        s.seed = f.seed;
        save_sample(f.out, generate_phantom(s));
        written = 1;
    }
    ojson j{{"command", "phantom"}, {"out", f.out}, {"samples", written}, {"seed", f.seed}};
    out << j.dump() << '\n';
    return kExitOk;
}

struct RegisterFlags {
    PairFlags pair;
    SolverFlags solver;
    std::string out, params, seg;
    double lambda = 0.1, mu = 0.1;
};

int cmd_register(const RegisterFlags& f, std::ostream& out) {
    const LoadedPair p = load_pair(f.pair, true, false);
    const SolverConfig cfg = f.solver.config(p.fixed.grid.ndim);
    ParamMaps maps;
    std::string mode = "global";
    if (!f.params.empty()) {
        require_exists(f.params);
        const TissueElasticity t = TissueElasticity::from_json(read_text(f.params));
        SegmentationMap seg;
        if (!f.seg.empty()) {
            require_exists(f.seg);
            seg = read_labels(f.seg, p.fixed.grid.spacing[0]);
        } else if (p.seg_fixed) {
            seg = *p.seg_fixed;
        } else {
            throw ValidationError("--params needs --seg (fixed-image segmentation) or --sample");
        }
        require_same_shape(seg.grid, p.fixed.grid, "segmentation/fixed");
        seg.grid = p.fixed.grid;
        maps = build_param_maps(seg, t);
        mode = "adaptive";
    } else {
        maps = ParamMaps::constant(p.fixed.grid, f.lambda, f.mu);
    }
    const Registration reg = solve(f.out, p.moving, p.fixed, maps, cfg);
    write_registration(f.out, reg, p.moving, p.fixed);
    ojson j{{"command", "register"},
            {"out", f.out},
            {"mode", mode},
            {"final_loss", reg.trace.level_final_loss.empty() ? 0.0 : reg.trace.level_final_loss.back()},
            {"iterations", reg.trace.records.size()},
            {"neg_jac_frac", neg_jacobian_fraction(reg.field)}};
    out << j.dump() << '\n';
    return kExitOk;
}

struct SearchFlags {
    PairFlags pair;
    SolverFlags solver;
    std::string out, grid = "0:1:0.1", cohort;
    int jobs = 1;
};

int cmd_search(const SearchFlags& f, std::ostream& out) {
    const SearchGrid grid = SearchGrid::parse(f.grid);
    ensure_dir(f.out);
    if (!f.cohort.empty()) {
        const auto dirs = cohort_dirs(f.cohort);
        std::vector<Subject> subjects;
        std::vector<std::string> names;
        for (const auto& d : dirs) {
            PairFlags pf;
            pf.sample = d.string();
            const LoadedPair p = load_pair(pf, true, true);
            subjects.push_back(to_subject(p, static_cast<int>(subjects.size())));
            names.push_back(d.filename().string());
        }
        const SolverConfig cfg = f.solver.config(subjects.front().fixed.grid.ndim);
        const auto outcomes = run_search_batch(subjects, grid, cfg, f.jobs);
        write_cohort_search(f.out, outcomes, names);
        ojson j{{"command", "search"},
                {"out", f.out},
                {"subjects", subjects.size()},
                {"grid_points", grid.values.size() * grid.values.size()},
                {"parameter_count", estimated_parameter_count(outcomes)}};
        out << j.dump() << '\n';
        rethrow_first_failure(outcomes);
        return kExitOk;
    }
    const LoadedPair p = load_pair(f.pair, true, true);
    const SolverConfig cfg = f.solver.config(p.fixed.grid.ndim);
    const SearchResult r = grid_search_subject(to_subject(p, 0), grid, cfg, f.jobs);
    write_text(fs::path(f.out) / "search.json", r.to_json() + "\n");
    write_text(fs::path(f.out) / "tissue.json", r.tissue_elasticity().to_json() + "\n");
    std::ostringstream scores;
    r.write_table_csv(scores);
    write_text(fs::path(f.out) / "scores.csv", scores.str());
    ojson j{{"command", "search"},
            {"out", f.out},
            {"grid_points", r.table.size()},
            {"global", {{"lambda", r.global_lambda}, {"mu", r.global_mu}, {"mean_dice", r.global_mean_dice}}},
            {"warnings", r.warnings}};
    out << j.dump() << '\n';
    return kExitOk;
}

struct EvalFlags {
    PairFlags pair;
    std::string field, subject, out, append;
    std::vector<std::string> compare;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
    if (!f.compare.empty()) {
        if (f.compare.size() < 2) throw ValidationError("--compare needs at least two CSV tables");
        std::vector<fs::path> files;
        for (const auto& c : f.compare) {
            require_exists(c);
            files.emplace_back(c);
        }
        const std::string table = compare_tables(files);
        if (!f.out.empty()) write_text(f.out, table);
        out << table;
        return kExitOk;
    }
    if (f.field.empty()) throw ValidationError("need --field (or --compare)");
    require_exists(f.field);
    const LoadedPair p = load_pair(f.pair, false, true);
    const double h = p.seg_fixed->grid.spacing[0];
    const DisplacementField field = read_field(f.field, h);
    std::optional<Keypoints> kf, km;
    if (!f.pair.keypoints.empty()) {
        require_exists(f.pair.keypoints);
        auto kp = read_keypoints_csv(f.pair.keypoints, field.ndim());
        kf = std::move(kp.first);
        km = std::move(kp.second);
    } else if (p.keypoints) {
        kf = p.keypoints->first;
        km = p.keypoints->second;
    }
    const std::string name = !f.subject.empty() ? f.subject : (!p.name.empty() ? p.name : std::string("subject"));
    const EvalReport rep = evaluate(name, field, *p.seg_moving, *p.seg_fixed, kf ? &*kf : nullptr, km ? &*km : nullptr);
    if (!f.out.empty()) write_text(f.out, rep.to_json() + "\n");
    if (!f.append.empty()) {
        append_csv_row(f.append, EvalReport::csv_header(static_cast<int>(rep.class_dice.size())), rep.csv_row());
    }
    out << ojson::parse(rep.to_json()).dump() << '\n';
    return kExitOk;
}

struct PipelineFlags {
    SolverFlags solver;
    std::string out, spec, grid = "0:1:0.25";
    int subjects = 4;
    std::uint64_t seed = 0;
    int jobs = 1;
};

int cmd_pipeline(const PipelineFlags& f, std::ostream& out) {
    const fs::path root(f.out);
    const SearchGrid grid = SearchGrid::parse(f.grid);
    PhantomFlags pf;
    pf.spec = f.spec;
    const PhantomSpec base = pf.base();
    if (f.subjects < 1) throw ValidationError("--subjects must be >= 1");

    // i) data
    const auto cohort = generate_cohort(base, f.subjects, f.seed, f.jobs);
    std::vector<std::string> names;
    for (const auto& s : cohort) {
        names.push_back(subject_name(s.spec.subject));
        save_sample(root / "phantoms" / names.back(), s);
    }
    std::vector<PhantomSample> samples;
    for (const auto& n : names) samples.push_back(load_sample(root / "phantoms" / n));
    const SolverConfig cfg = f.solver.config(samples.front().fixed.grid.ndim);

    // ii) per-class parameter search
    std::vector<Subject> subjects;
    for (const auto& s : samples) subjects.push_back(s.subject());
    const auto outcomes = run_search_batch(subjects, grid, cfg, f.jobs);
    write_cohort_search(root / "search", outcomes, names);
    rethrow_first_failure(outcomes);

    // iii) spatially adaptive and global registrations, then evaluation
    std::vector<EvalReport> sas(samples.size()), global(samples.size());
    parallel_for(samples.size(), f.jobs, [&](std::size_t k) {
        const auto& s = samples[k];
        const auto& r = *outcomes[k].result;
        const fs::path dir = root / "register" / names[k];
        const ParamMaps adaptive = build_param_maps(s.seg_fixed, r.tissue_elasticity());
        const Registration a = solve(dir / "sas", s.moving, s.fixed, adaptive, cfg);
        write_registration(dir / "sas", a, s.moving, s.fixed);
        const Registration g =
            solve(dir / "global", s.moving, s.fixed, ParamMaps::constant(s.fixed.grid, r.global_lambda, r.global_mu), cfg);
        write_registration(dir / "global", g, s.moving, s.fixed);
        sas[k] = evaluate(names[k], a.field, s.seg_moving, s.seg_fixed, &s.keypoints_fixed, &s.keypoints_moving);
        global[k] = evaluate(names[k], g.field, s.seg_moving, s.seg_fixed, &s.keypoints_fixed, &s.keypoints_moving);
    });

    const fs::path eval = root / "eval";
    ensure_dir(eval);
    const std::string header = EvalReport::csv_header(static_cast<int>(sas.front().class_dice.size()));
    std::string sas_csv = header + "\n", global_csv = header + "\n";
    for (std::size_t k = 0; k < samples.size(); ++k) {
        write_text(eval / (names[k] + "_sas.json"), sas[k].to_json() + "\n");
        write_text(eval / (names[k] + "_global.json"), global[k].to_json() + "\n");
        sas_csv += sas[k].csv_row() + "\n";
        global_csv += global[k].csv_row() + "\n";
    }
    write_text(eval / "sas.csv", sas_csv);
    write_text(eval / "global.csv", global_csv);
    const std::string table = compare_tables({eval / "sas.csv", eval / "global.csv"});
    write_text(root / "compare.csv", table);

    std::vector<double> ms, mg;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        ms.push_back(sas[k].mean_dice);
        mg.push_back(global[k].mean_dice);
    }
    ojson j{{"command", "pipeline"},
            {"out", f.out},
            {"subjects", samples.size()},
            {"mean_dice_sas", mean(ms)},
            {"mean_dice_global", mean(mg)}};
    out << j.dump() << '\n';
    out << table;
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spatially adaptive elastic registration: phantoms, solves, parameter search, evaluation", "elastreg"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    const int env_jobs = default_jobs();
    auto add_config = [](CLI::App* sub) {
        sub->add_option("--config", "JSON file with flag values; command-line flags take precedence")->type_name("FILE");
    };
    auto add_jobs = [&](CLI::App* sub, int& jobs) {
        jobs = env_jobs;
        sub->add_option("--jobs", jobs, "Worker threads (default: ELASTREG_JOBS or 1)")->check(CLI::PositiveNumber);
    };

    PhantomFlags phantom;
    auto* ph = app.add_subcommand("phantom", "Generate a synthetic two-tissue phantom or a cohort");
    add_config(ph);
    ph->add_option("--out", phantom.out, "Output directory")->required();
    ph->add_option("--seed", phantom.seed, "Random seed");
    ph->add_option("--cohort", phantom.cohort, "Number of subjects (writes s000, s001, ...; default: one sample)")
        ->check(CLI::PositiveNumber)
        ->default_str("");
    ph->add_option("--spec", phantom.spec, "PhantomSpec JSON");
    ph->add_option("--dims", phantom.dims, "Grid extents, e.g. 128,128 or 48,32,48 (default: from --spec or 128,128)")
        ->delimiter(',')
        ->default_str("");
    ph->add_option("--spacing", phantom.spacing, "Pixel spacing (default: from --spec or 1/48)")->default_str("");
    ph->add_option("--noise", phantom.noise, "Noise standard deviation (default: from --spec or 0.15)")->default_str("");
    add_jobs(ph, phantom.jobs);

    RegisterFlags reg;
    auto* rg = app.add_subcommand("register", "Register one image pair");
    add_config(rg);
    reg.pair.attach(rg, false);
    reg.solver.attach(rg);
    rg->add_option("--out", reg.out, "Output directory")->required();
    rg->add_option("--lambda", reg.lambda, "Constant lambda in [0, 1]");
    rg->add_option("--mu", reg.mu, "Constant mu in [0, 1]");
    auto* params_opt = rg->add_option("--params", reg.params, "Per-class parameter JSON (spatially adaptive solve)");
    rg->add_option("--seg", reg.seg, "Fixed-image segmentation for --params")->needs(params_opt);

    SearchFlags search;
    auto* se = app.add_subcommand("search", "Per-class grid search over (lambda, mu)");
    add_config(se);
    search.pair.attach(se, true);
    search.solver.attach(se);
    se->add_option("--out", search.out, "Output directory")->required();
    se->add_option("--grid", search.grid, "Parameter axis start:end:step");
    se->add_option("--cohort", search.cohort, "Directory of phantom samples to search jointly");
    add_jobs(se, search.jobs);

    EvalFlags ev;
    auto* evc = app.add_subcommand("eval", "Score a displacement field, or compare result tables");
    add_config(evc);
    ev.pair.attach(evc, true, false);
    evc->add_option("--field", ev.field, "Displacement field (.ten)");
    evc->add_option("--keypoints", ev.pair.keypoints, "Keypoint CSV (id, fixed coords, moving coords)");
    evc->add_option("--subject", ev.subject, "Subject name for the report");
    evc->add_option("--out", ev.out, "Report JSON (or comparison table with --compare)");
    evc->add_option("--append", ev.append, "CSV results table to append a row to");
    evc->add_option("--compare", ev.compare, "Result tables to summarize side by side")->expected(2, 16)->default_str("");

    PipelineFlags pipe;
    auto* pp = app.add_subcommand("pipeline", "phantom -> search -> adaptive and global register -> eval -> compare");
    add_config(pp);
    pipe.solver.attach(pp);
    pp->add_option("--out", pipe.out, "Output directory")->required();
    pp->add_option("--subjects", pipe.subjects, "Cohort size");
    pp->add_option("--seed", pipe.seed, "Random seed");
    pp->add_option("--grid", pipe.grid, "Parameter axis start:end:step");
    pp->add_option("--spec", pipe.spec, "PhantomSpec JSON");
    add_jobs(pp, pipe.jobs);

    try {
        const auto expanded = expand_config(args);
        std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
        app.parse(reversed);
        if (ph->parsed()) return cmd_phantom(phantom, out);
        if (rg->parsed()) return cmd_register(reg, out);
        if (se->parsed()) return cmd_search(search, out);
        if (evc->parsed()) return cmd_eval(ev, out);
        if (pp->parsed()) return cmd_pipeline(pipe, out);
        return kExitUsage;
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

} // namespace elastreg
