#pragma once

// Experiment orchestration: run configuration, scenario -> tracks -> metrics
// pipeline, predictor training from simulated trajectories, and the
// {horizon x association x noise mode} sweep.

#include "radtrack/io.hpp"
#include "radtrack/metrics.hpp"
#include "radtrack/motion.hpp"
#include "radtrack/sim.hpp"
#include "radtrack/tracking.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace radtrack {

enum class AssociationMode { mahalanobis_only, two_stage };

inline std::string to_string(AssociationMode m) { return m == AssociationMode::two_stage ? "two_stage" : "mahalanobis_only"; }

inline AssociationMode parse_association_mode(const std::string& s) {
    if (s == "two_stage") return AssociationMode::two_stage;
    if (s == "mahalanobis_only" || s == "mahalanobis") return AssociationMode::mahalanobis_only;
    throw InvalidArgument("unknown association mode '" + s + "'");
}

struct RunConfig {
    std::string preset = "crossing_doppler";
    std::string scenario;  // scenario spec JSON; replaces the preset when set
    std::string model;     // predictor weights; auto-trained into model_dir when empty
    std::string model_dir = "models";
    MotionMode motion = MotionMode::cv;
    int horizon = 3;
    AssociationMode association = AssociationMode::two_stage;
    int n_d = 10;
    TrackerConfig tracker;  // noise, association weights and gates, life-cycle, fusion, n_p
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds;  // evaluation seeds for sweeps; empty means {seed}

    TrainConfig train;
    std::string train_preset;  // empty: same family as the evaluation preset
    int train_scenarios = 8;
    std::uint64_t train_seed_base = 1000;
    double train_noise_scale = 0.5;  // history jitter as a fraction of the preset pose noise
    double train_truncate = 0.2;

    EvalConfig eval;
    std::string out = "out";
    int parallelism = 1;
    bool svg = true;

    std::vector<std::uint64_t> eval_seeds() const { return seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds; }

    std::vector<std::uint64_t> train_seeds() const {
        std::vector<std::uint64_t> s;
        for (int i = 0; i < train_scenarios; ++i) s.push_back(train_seed_base + static_cast<std::uint64_t>(i));
        return s;
    }

    void validate() const {
        if (scenario.empty()) {
            const auto& names = preset_names();
            if (std::find(names.begin(), names.end(), preset) == names.end()) {
                throw InvalidArgument("unknown preset '" + preset + "'");
            }
        } else if (!std::filesystem::exists(scenario)) {
            throw InvalidArgument("scenario file '" + scenario + "' does not exist");
        }
        if (!model.empty() && !std::filesystem::exists(model)) {
            throw InvalidArgument("model file '" + model + "' does not exist");
        }
        if (horizon < 2) throw InvalidArgument("horizon must be >= 2");
        if (n_d < 1) throw InvalidArgument("n_d must be >= 1");
        if (tracker.n_p < 1) throw InvalidArgument("n_p must be >= 1");
        if (train_scenarios < 1) throw InvalidArgument("train_scenarios must be >= 1");
        if (parallelism < 1) throw InvalidArgument("parallelism must be >= 1");
        for (auto s : eval_seeds()) {
            if (s >= train_seed_base && s < train_seed_base + static_cast<std::uint64_t>(train_scenarios)) {
                throw InvalidArgument("evaluation seed " + std::to_string(s) + " overlaps the training seeds");
            }
        }
        tracker.noise.validate();
        tracker.association.validate();
        tracker.lifecycle.validate();
    }
};

inline json run_config_to_json(const RunConfig& c) {
    const auto& t = c.tracker;
    return {{"preset", c.preset},
            {"scenario", c.scenario},
            {"model", c.model},
            {"motion", to_string(c.motion)},
            {"horizon", c.horizon},
            {"association", to_string(c.association)},
            {"n_d", c.n_d},
            {"n_p", t.n_p},
            {"process_noise", to_string(t.noise.process)},
            {"measurement_noise", to_string(t.noise.measurement)},
            {"floor_variances", t.noise.floor_variances},
            {"q0", vec_json(t.noise.q0)},
            {"r0", vec_json(t.noise.r0)},
            {"p0_velocity", vec_json(t.noise.p0_velocity)},
            {"w1", t.association.w1},
            {"w2", t.association.w2},
            {"sigma_v", t.association.sigma_v},
            {"gate1", t.association.gate1},
            {"gate2", t.association.gate2},
            {"min_hits", t.lifecycle.min_hits},
            {"max_age", t.lifecycle.max_age},
            {"init_score_min", t.lifecycle.init_score_min},
            {"tau_iou", t.fusion.tau_iou},
            {"min_support", t.fusion.min_support},
            {"drop_low_support", t.fusion.drop_low_support},
            {"seed", c.seed},
            {"seeds", c.eval_seeds()},
            {"train",
             {{"epochs", c.train.epochs},
              {"learning_rate", c.train.learning_rate},
              {"momentum", c.train.momentum},
              {"batch_size", c.train.batch_size},
              {"seed", c.train.seed},
              {"d_model", c.train.d_model},
              {"d_ff", c.train.d_ff},
              {"dropout_rate", c.train.dropout_rate},
              {"grad_clip", c.train.grad_clip},
              {"preset", c.train_preset.empty() ? c.preset : c.train_preset},
              {"scenarios", c.train_scenarios},
              {"seed_base", c.train_seed_base},
              {"noise_scale", c.train_noise_scale},
              {"truncate", c.train_truncate}}},
            {"recall_points", c.eval.recall_points},
            {"dist_threshold", c.eval.dist_threshold}};
}

inline Manifest make_manifest(const std::string& command, const RunConfig& c) {
    Manifest m;
    m.command = command;
    m.config = run_config_to_json(c);
    m.seeds = c.eval_seeds();
    return m;
}

// ---------------------------------------------------------------------------
// Pipeline pieces
// ---------------------------------------------------------------------------

inline ScenarioSpec scenario_spec(const RunConfig& cfg, std::uint64_t seed) {
    ScenarioSpec s = cfg.scenario.empty() ? preset(cfg.preset, seed) : scenario_spec_from_json(read_json_file(cfg.scenario));
    s.seed = seed;
    s.n_d = cfg.n_d;
    s.validate();
    return s;
}

inline TrackerConfig tracker_config(const RunConfig& cfg, const ScenarioSpec& spec, std::uint64_t seed) {
    TrackerConfig t = cfg.tracker;
    t.motion = cfg.motion;
    t.horizon = cfg.horizon;
    t.association.two_stage = cfg.association == AssociationMode::two_stage;
    t.sensor_origin = spec.sensor_origin;
    t.seed = derive_seed(seed, "mc");
    return t;
}

/// Ground-truth windows from the training seeds, with jittered and partially
/// truncated histories so the model sees inputs like a tracker's.
inline std::vector<TrainingSample> build_training_set(const RunConfig& cfg, int horizon) {
    RunConfig tc = cfg;
    if (!cfg.train_preset.empty()) {
        tc.preset = cfg.train_preset;
        tc.scenario.clear();
    }
    std::vector<TrainingSample> data;
    for (auto seed : cfg.train_seeds()) {
        const ScenarioSpec spec = scenario_spec(tc, seed);
        auto windows = export_training_set(generate_ground_truth(spec), horizon);
        windows = augment_training_set(std::move(windows), cfg.train_noise_scale * spec.noise.pose_sigma,
                                       cfg.train_truncate, derive_seed(seed, "augment"));
        for (auto& w : windows) data.push_back(std::move(w));
    }
    return data;
}

inline TrainConfig train_config_for(const RunConfig& cfg, int horizon, const ScenarioSpec& spec) {
    TrainConfig t = cfg.train;
    t.horizon = horizon;
    t.step_dt = 1.0 / spec.frame_rate;
    return t;
}

inline TrainResult train_for_horizon(const RunConfig& cfg, int horizon) {
    const auto data = build_training_set(cfg, horizon);
    if (data.empty()) throw InvalidArgument("training set is empty; scenarios too short for the horizon");
    const ScenarioSpec spec = scenario_spec(cfg, cfg.train_seed_base);
    return train_predictor(data, train_config_for(cfg, horizon, spec));
}

/// Cache location keyed by the training-relevant configuration.
inline std::filesystem::path cached_model_path(const RunConfig& cfg, int horizon) {
    json key = run_config_to_json(cfg)["train"];
    key["horizon"] = horizon;
    key["scenario"] = cfg.scenario.empty() ? json(nullptr) : read_json_file(cfg.scenario);
    key["n_d"] = cfg.n_d;
    return std::filesystem::path(cfg.model_dir) /
           ("predictor_h" + std::to_string(horizon) + "_" + hex64(fnv1a(key.dump())).substr(0, 12) + ".json");
}

inline PredictorModel obtain_model(const RunConfig& cfg, int horizon) {
    if (!cfg.model.empty()) {
        PredictorModel m = load_model(cfg.model);
        if (m.horizon != horizon) {
            throw InvalidArgument("model horizon " + std::to_string(m.horizon) + " does not match requested " +
                                  std::to_string(horizon));
        }
        return m;
    }
    const auto path = cached_model_path(cfg, horizon);
    if (std::filesystem::exists(path)) return load_model(path);
    PredictorModel m = train_for_horizon(cfg, horizon).model;
    // Write to a unique temporary then rename so concurrent writers never
    // leave a partial file behind.
    std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    save_model(tmp, m);
    std::filesystem::rename(tmp, path);
    return m;
}

struct SequenceOutcome {
    Scenario scenario;
    std::vector<FrameResult> results;
    MetricsReport report;
};

inline std::vector<FrameResult> run_tracker(const RunConfig& cfg, const ScenarioSpec& spec,
                                            const std::vector<SampleSet>& samples, std::uint64_t seed,
                                            const PredictorModel* model) {
    return track_sequence(samples, tracker_config(cfg, spec, seed), cfg.motion == MotionMode::predictor ? model : nullptr);
}

inline SequenceOutcome run_sequence(const RunConfig& cfg, std::uint64_t seed, const PredictorModel* model) {
    SequenceOutcome o;
    const ScenarioSpec spec = scenario_spec(cfg, seed);
    o.scenario = generate(spec);
    o.results = run_tracker(cfg, spec, o.scenario.samples, seed, model);
    const EvalSequence seq = make_eval_sequence(o.results, o.scenario.ground_truth);
    o.report = evaluate_amota(std::span<const EvalSequence>(&seq, 1), cfg.eval);
    return o;
}

/// Per-seed reports and their mean AMOTA/AMOTP; tallies are summed.
struct AggregateResult {
    std::vector<MetricsReport> per_seed;
    double amota = 0.0, amotp = 0.0;
    int tp = 0, fp = 0, fn = 0, ids = 0;
};

inline AggregateResult run_seeds(const RunConfig& cfg, const PredictorModel* model) {
    AggregateResult a;
    for (auto seed : cfg.eval_seeds()) {
        a.per_seed.push_back(run_sequence(cfg, seed, model).report);
        const auto& r = a.per_seed.back();
        a.amota += r.amota;
        a.amotp += r.amotp;
        a.tp += r.tp;
        a.fp += r.fp;
        a.fn += r.fn;
        a.ids += r.ids;
    }
    a.amota /= static_cast<double>(a.per_seed.size());
    a.amotp /= static_cast<double>(a.per_seed.size());
    return a;
}

// ---------------------------------------------------------------------------
// Uncertainty calibration
// ---------------------------------------------------------------------------

inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
        i = j + 1;
    }
    return rank;
}

/// Spearman rank correlation (Pearson on average ranks).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("spearman: need two equal-length series");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

struct CalibrationResult {
    std::vector<double> variance;       // BEV (x + y) MC variance per sample
    std::vector<double> squared_error;  // BEV squared error of the MC mean
    double spearman = 0.0;
};

inline CalibrationResult uncertainty_calibration(const PredictorModel& model, std::span<const TrainingSample> data,
                                                 int n_p, std::uint64_t seed) {
    CalibrationResult c;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto d = mc_predict(model, data[i].history, n_p, derive_seed(seed, static_cast<std::uint64_t>(i)));
        c.variance.push_back(d.variance(0) + d.variance(1));
        const double ex = d.mean(0) - data[i].target(0);
        const double ey = d.mean(1) - data[i].target(1);
        c.squared_error.push_back(ex * ex + ey * ey);
    }
    c.spearman = spearman(c.variance, c.squared_error);
    return c;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepGrid {
    std::vector<std::string> horizons{"cv", "2", "3", "4", "5"};  // "cv" = constant-velocity motion
    std::vector<AssociationMode> associations{AssociationMode::mahalanobis_only, AssociationMode::two_stage};
    std::vector<ProcessNoiseMode> process_modes{ProcessNoiseMode::fixed};
    std::vector<MeasurementNoiseMode> measurement_modes{MeasurementNoiseMode::fixed};
};

struct SweepCell {
    std::string horizon;
    AssociationMode association = AssociationMode::two_stage;
    ProcessNoiseMode process = ProcessNoiseMode::fixed;
    MeasurementNoiseMode measurement = MeasurementNoiseMode::fixed;

    std::string key() const {
        return "h=" + horizon + "|assoc=" + to_string(association) + "|q=" + to_string(process) +
               "|r=" + to_string(measurement);
    }
};

struct SweepRow {
    SweepCell cell;
    AggregateResult result;
    std::string error;  // non-empty when the cell failed
};

inline int parse_horizon(const std::string& h) {
    try {
        std::size_t pos = 0;
        const int n = std::stoi(h, &pos);
        if (pos != h.size() || n < 2) throw InvalidArgument("");
        return n;
    } catch (const std::exception&) {
        throw InvalidArgument("horizon '" + h + "' must be 'cv' or an integer >= 2");
    }
}

/// The configuration a sweep cell runs with; also what a standalone run with
/// the same settings would use.
inline RunConfig cell_config(const RunConfig& base, const SweepCell& cell) {
    RunConfig c = base;
    if (cell.horizon == "cv") {
        c.motion = MotionMode::cv;
    } else {
        c.motion = MotionMode::predictor;
        c.horizon = parse_horizon(cell.horizon);
    }
    c.association = cell.association;
    c.tracker.noise.process = cell.process;
    c.tracker.noise.measurement = cell.measurement;
    return c;
}

inline std::vector<SweepCell> enumerate_cells(const SweepGrid& grid) {
    std::vector<SweepCell> cells;
    for (const auto& h : grid.horizons) {
        if (h != "cv") parse_horizon(h);
        for (auto a : grid.associations)
            for (auto q : grid.process_modes)
                for (auto r : grid.measurement_modes) cells.push_back({h, a, q, r});
    }
    if (cells.empty()) throw InvalidArgument("sweep: empty grid");
    std::sort(cells.begin(), cells.end(), [](const SweepCell& a, const SweepCell& b) { return a.key() < b.key(); });
    for (std::size_t i = 1; i < cells.size(); ++i) {
        if (cells[i].key() == cells[i - 1].key()) throw InvalidArgument("sweep: duplicate cell " + cells[i].key());
    }
    return cells;
}

/// Runs jobs 0..n-1 on up to `workers` threads.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& job) {
    const std::size_t count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (count <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < count; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) job(i);
        });
    }
    for (auto& t : pool) t.join();
}

/// Rows come back sorted by cell key. A failing cell records its error and
/// the others still run.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, const SweepGrid& grid) {
    const auto cells = enumerate_cells(grid);

    std::vector<int> horizons;
    for (const auto& c : cells)
        if (c.horizon != "cv") horizons.push_back(parse_horizon(c.horizon));
    std::sort(horizons.begin(), horizons.end());
    horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());

    std::map<int, std::optional<PredictorModel>> models;
    std::map<int, std::string> model_errors;
    for (int h : horizons) models[h];
    std::mutex mu;
    parallel_for(horizons.size(), base.parallelism, [&](std::size_t i) {
        const int h = horizons[i];
        try {
            RunConfig c = base;
            if (!base.model.empty()) c.model.clear();  // a single model file cannot serve several horizons
            auto m = obtain_model(c, h);
            std::lock_guard<std::mutex> lock(mu);
            models[h] = std::move(m);
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(mu);
            model_errors[h] = e.what();
        }
    });

    std::vector<SweepRow> rows(cells.size());
    parallel_for(cells.size(), base.parallelism, [&](std::size_t i) {
        rows[i].cell = cells[i];
        try {
            const RunConfig c = cell_config(base, cells[i]);
            const PredictorModel* model = nullptr;
            if (c.motion == MotionMode::predictor) {
                if (model_errors.count(c.horizon)) throw Error("training failed: " + model_errors.at(c.horizon));
                model = &*models.at(c.horizon);
            }
            rows[i].result = run_seeds(c, model);
        } catch (const std::exception& e) {
            rows[i].error = e.what();
        }
    });
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows, const Manifest& m) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << csv_manifest_line(m);
    os << "cell,horizon,association,process_noise,measurement_noise,amota,amotp,tp,fp,fn,ids,error\n";
    for (const auto& r : rows) {
        os << r.cell.key() << ',' << r.cell.horizon << ',' << to_string(r.cell.association) << ','
           << to_string(r.cell.process) << ',' << to_string(r.cell.measurement) << ',';
        if (r.error.empty()) {
            os << r.result.amota << ',' << r.result.amotp << ',' << r.result.tp << ',' << r.result.fp << ','
               << r.result.fn << ',' << r.result.ids << ",\n";
        } else {
            std::string err = r.error;
            std::replace(err.begin(), err.end(), ',', ';');
            std::replace(err.begin(), err.end(), '\n', ' ');
            os << ",,,,,," << err << '\n';
        }
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// SVG line charts
// ---------------------------------------------------------------------------

struct ChartSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

inline std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  const std::vector<ChartSeries>& series) {
    constexpr double width = 640, height = 400, left = 70, right = 150, top = 40, bottom = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
    std::ostringstream os;
    os << std::setprecision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << svg_escape(title)
       << "</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << sx(fx) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
           << fx << "</text>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << sy(fy) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << fy
           << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\" font-size=\"13\">"
       << svg_escape(x_label) << "</text>\n";
    os << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
       << top + ph / 2 << ")\">" << svg_escape(y_label) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = colors[k % 8];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : series[k].points) {
            if (std::isfinite(x) && std::isfinite(y)) os << sx(x) << ',' << sy(y) << ' ';
        }
        os << "\"/>\n";
        const double ly = top + 16.0 * static_cast<double>(k);
        os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << left + pw + 34 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
           << svg_escape(series[k].label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

/// AMOTA against horizon, one line per (association, noise) combination;
/// the CV cells are drawn at horizon 1.
inline std::string sweep_chart(const std::vector<SweepRow>& rows) {
    std::map<std::string, ChartSeries> by_label;
    for (const auto& r : rows) {
        if (!r.error.empty()) continue;
        const std::string label = to_string(r.cell.association) + "/" + to_string(r.cell.process) + "/" +
                                  to_string(r.cell.measurement);
        auto& s = by_label[label];
        s.label = label;
        const double x = r.cell.horizon == "cv" ? 1.0 : static_cast<double>(parse_horizon(r.cell.horizon));
        s.points.emplace_back(x, r.result.amota);
    }
    std::vector<ChartSeries> series;
    for (auto& [label, s] : by_label) {
        std::sort(s.points.begin(), s.points.end());
        series.push_back(std::move(s));
    }
    return svg_line_chart("AMOTA vs horizon (1 = CV)", "horizon", "AMOTA", series);
}

inline std::string loss_csv(const TrainResult& r, const Manifest& m) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << csv_manifest_line(m);
    os << "epoch,loss,best_loss\n";
    double best = INFINITY;
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
        best = std::min(best, r.epoch_loss[e]);
        os << e << ',' << r.epoch_loss[e] << ',' << best << '\n';
    }
    return os.str();
}

inline std::string loss_chart(const TrainResult& r) {
    ChartSeries s{"training loss", {}};
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) s.points.emplace_back(static_cast<double>(e), r.epoch_loss[e]);
    return svg_line_chart("Attenuated loss per epoch", "epoch", "loss", {s});
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace radtrack
