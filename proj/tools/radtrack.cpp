// radtrack command-line interface: simulate | train | track | evaluate | sweep.
//
// Every tuning option lives on the top-level command so one config file
// (--config, TOML key = value with # comments) drives all subcommands.
// Failures print a single JSON object on stderr and exit nonzero.

#include "radtrack/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace radtrack;

namespace {

struct CliState {
    RunConfig cfg;
    std::string motion = "cv";
    std::string association = "two_stage";
    std::string process = "fixed";
    std::string measurement = "fixed";
    std::vector<double> q0, r0, p0_velocity;

    // subcommand inputs
    std::string dataset;
    std::string samples;
    std::string tracks;
    std::string ground_truth;
    std::vector<std::string> horizons{"cv", "2", "3", "4", "5"};
    std::vector<std::string> associations{"mahalanobis_only", "two_stage"};
    std::vector<std::string> process_modes{"fixed"};
    std::vector<std::string> measurement_modes{"fixed"};
};

template <int N>
Eigen::Matrix<double, N, 1> to_vec(const std::vector<double>& v, const char* name) {
    if (static_cast<int>(v.size()) != N) {
        throw InvalidArgument(std::string(name) + " needs " + std::to_string(N) + " values");
    }
    Eigen::Matrix<double, N, 1> out;
    for (int i = 0; i < N; ++i) out(i) = v[static_cast<std::size_t>(i)];
    return out;
}

void add_options(CLI::App& app, CliState& st) {
    RunConfig& c = st.cfg;
    TrackerConfig& t = c.tracker;
    const auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    st.q0 = vec(t.noise.q0);
    st.r0 = vec(t.noise.r0);
    st.p0_velocity = vec(t.noise.p0_velocity);

    app.set_config("--config", "", "TOML config file (key = value, # comments)");
    app.add_option("--seed", c.seed, "Scenario / run seed")->capture_default_str();
    app.add_option("--seeds", c.seeds, "Evaluation seeds for sweep (default: --seed)");
    app.add_option("--out", c.out, "Output directory")->capture_default_str();
    app.add_option("--preset", c.preset, "Scenario preset")->capture_default_str()->check(CLI::IsMember(preset_names()));
    app.add_option("--parallelism", c.parallelism, "Sweep worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--scenario", c.scenario, "Scenario spec JSON (replaces --preset)");
    app.add_option("--model", c.model, "Predictor model JSON");
    app.add_option("--model_dir", c.model_dir, "Cache directory for auto-trained models")->capture_default_str();
    app.add_option("--svg", c.svg, "Write SVG charts")->capture_default_str();

    app.add_option("--motion", st.motion, "Motion model")->capture_default_str()->check(CLI::IsMember({"cv", "predictor"}));
    app.add_option("--horizon", c.horizon, "Predictor input horizon")->capture_default_str();
    app.add_option("--association", st.association, "Association mode")
        ->capture_default_str()
        ->check(CLI::IsMember({"mahalanobis_only", "two_stage"}));
    app.add_option("--process_noise", st.process, "Process noise mode")
        ->capture_default_str()
        ->check(CLI::IsMember({"fixed", "mc_variance"}));
    app.add_option("--measurement_noise", st.measurement, "Measurement noise mode")
        ->capture_default_str()
        ->check(CLI::IsMember({"fixed", "detection_variance"}));
    app.add_option("--floor_variances", t.noise.floor_variances, "Floor estimated variances at q0/r0")->capture_default_str();
    app.add_option("--q0", st.q0, "Process noise diagonal (7)")->expected(7);
    app.add_option("--r0", st.r0, "Measurement noise diagonal (4)")->expected(4);
    app.add_option("--p0_velocity", st.p0_velocity, "Initial velocity variance (3)")->expected(3);
    app.add_option("--n_d", c.n_d, "Detector sampling passes")->capture_default_str();
    app.add_option("--n_p", t.n_p, "MC-dropout predictor passes")->capture_default_str();
    app.add_option("--w1", t.association.w1, "Stage-2 Mahalanobis weight")->capture_default_str();
    app.add_option("--w2", t.association.w2, "Stage-2 velocity weight")->capture_default_str();
    app.add_option("--sigma_v", t.association.sigma_v, "Doppler affinity scale (m/s)")->capture_default_str();
    app.add_option("--gate1", t.association.gate1, "Stage-1 Mahalanobis gate")->capture_default_str();
    app.add_option("--gate2", t.association.gate2, "Stage-2 cost gate")->capture_default_str();
    app.add_option("--min_hits", t.lifecycle.min_hits, "Hits to confirm a track")->capture_default_str();
    app.add_option("--max_age", t.lifecycle.max_age, "Misses before deletion")->capture_default_str();
    app.add_option("--init_score_min", t.lifecycle.init_score_min, "Birth confidence threshold")->capture_default_str();
    app.add_option("--tau_iou", t.fusion.tau_iou, "Fusion BEV IoU threshold")->capture_default_str();
    app.add_option("--min_support", t.fusion.min_support, "Minimum cluster support fraction")->capture_default_str();
    app.add_option("--drop_low_support", t.fusion.drop_low_support, "Drop low-support clusters")->capture_default_str();
    app.add_option("--recall_points", c.eval.recall_points, "AMOTA recall grid size")->capture_default_str();
    app.add_option("--dist_threshold", c.eval.dist_threshold, "Match distance (m)")->capture_default_str();

    app.add_option("--epochs", c.train.epochs, "Training epochs")->capture_default_str();
    app.add_option("--learning_rate", c.train.learning_rate, "SGD learning rate")->capture_default_str();
    app.add_option("--momentum", c.train.momentum, "SGD momentum")->capture_default_str();
    app.add_option("--batch_size", c.train.batch_size, "Mini-batch size")->capture_default_str();
    app.add_option("--train_seed", c.train.seed, "Initialisation / shuffling seed")->capture_default_str();
    app.add_option("--d_model", c.train.d_model, "Model width")->capture_default_str();
    app.add_option("--d_ff", c.train.d_ff, "Feed-forward width")->capture_default_str();
    app.add_option("--dropout", c.train.dropout_rate, "Dropout rate")->capture_default_str();
    app.add_option("--grad_clip", c.train.grad_clip, "Gradient norm clip")->capture_default_str();
    app.add_option("--train_preset", c.train_preset, "Preset for training trajectories (default: --preset)");
    app.add_option("--train_scenarios", c.train_scenarios, "Number of training scenarios")->capture_default_str();
    app.add_option("--train_seed_base", c.train_seed_base, "First training scenario seed")->capture_default_str();
    app.add_option("--train_noise_scale", c.train_noise_scale, "History jitter / preset pose noise")->capture_default_str();
    app.add_option("--train_truncate", c.train_truncate, "Fraction of truncated histories")->capture_default_str();
}

void finalize(CliState& st) {
    RunConfig& c = st.cfg;
    c.motion = parse_motion_mode(st.motion);
    c.association = parse_association_mode(st.association);
    c.tracker.noise.process = parse_process_noise(st.process);
    c.tracker.noise.measurement = parse_measurement_noise(st.measurement);
    c.tracker.noise.q0 = to_vec<7>(st.q0, "q0");
    c.tracker.noise.r0 = to_vec<4>(st.r0, "r0");
    c.tracker.noise.p0_velocity = to_vec<3>(st.p0_velocity, "p0_velocity");
    c.validate();
}

fs::path out_file(const RunConfig& c, const char* name) { return fs::path(c.out) / name; }

void cmd_simulate(const CliState& st) {
    const RunConfig& c = st.cfg;
    const ScenarioSpec spec = scenario_spec(c, c.seed);
    const Scenario sc = generate(spec);
    const Manifest m = make_manifest("simulate", c);
    write_ground_truth(out_file(c, "ground_truth.jsonl"), sc.ground_truth, m);
    write_samples(out_file(c, "samples.jsonl"), sc.samples, m);
}

void cmd_train(const CliState& st) {
    const RunConfig& c = st.cfg;
    std::vector<TrainingSample> data =
        st.dataset.empty() ? build_training_set(c, c.horizon) : read_training_set(st.dataset);
    const ScenarioSpec spec = scenario_spec(c, c.train_seed_base);
    const TrainResult r = train_predictor(data, train_config_for(c, c.horizon, spec));
    const Manifest m = make_manifest("train", c);
    save_model(out_file(c, "model.json"), r.model);
    write_text_file(out_file(c, "loss.csv"), loss_csv(r, m));
    if (c.svg) write_text_file(out_file(c, "loss.svg"), loss_chart(r));
}

void cmd_track(const CliState& st) {
    const RunConfig& c = st.cfg;
    const fs::path samples_path = st.samples.empty() ? out_file(c, "samples.jsonl") : fs::path(st.samples);
    const auto samples = read_samples(samples_path);
    const ScenarioSpec spec = scenario_spec(c, c.seed);
    std::optional<PredictorModel> model;
    if (c.motion == MotionMode::predictor) model = obtain_model(c, c.horizon);
    const auto results = run_tracker(c, spec, samples, c.seed, model ? &*model : nullptr);
    write_tracks(out_file(c, "tracks.jsonl"), results, make_manifest("track", c));
}

void cmd_evaluate(const CliState& st) {
    const RunConfig& c = st.cfg;
    const auto tracks = read_tracks(st.tracks.empty() ? out_file(c, "tracks.jsonl") : fs::path(st.tracks));
    const auto gt = read_ground_truth(st.ground_truth.empty() ? out_file(c, "ground_truth.jsonl") : fs::path(st.ground_truth));
    const EvalSequence seq = make_eval_sequence(tracks, gt);
    const MetricsReport rep = evaluate_amota(std::span<const EvalSequence>(&seq, 1), c.eval);
    const Manifest m = make_manifest("evaluate", c);
    json j = metrics_to_json(rep);
    j["schema_version"] = kSchemaVersion;
    j["manifest"] = m.to_json();
    write_json_file(out_file(c, "metrics.json"), j);
    write_text_file(out_file(c, "metrics.csv"), metrics_csv(rep, m));
}

void cmd_sweep(const CliState& st) {
    const RunConfig& c = st.cfg;
    SweepGrid grid;
    grid.horizons = st.horizons;
    grid.associations.clear();
    for (const auto& a : st.associations) grid.associations.push_back(parse_association_mode(a));
    grid.process_modes.clear();
    for (const auto& q : st.process_modes) grid.process_modes.push_back(parse_process_noise(q));
    grid.measurement_modes.clear();
    for (const auto& r : st.measurement_modes) grid.measurement_modes.push_back(parse_measurement_noise(r));
    const auto rows = run_sweep(c, grid);
    Manifest m = make_manifest("sweep", c);
    m.config["grid"] = {{"horizons", st.horizons},
                        {"associations", st.associations},
                        {"process_modes", st.process_modes},
                        {"measurement_modes", st.measurement_modes}};
    write_text_file(out_file(c, "sweep.csv"), sweep_csv(rows, m));
    if (c.svg) write_text_file(out_file(c, "sweep.svg"), sweep_chart(rows));
    for (const auto& r : rows) {
        if (!r.error.empty()) std::cerr << json{{"warning", "cell failed"}, {"cell", r.cell.key()}, {"error", r.error}}.dump() << '\n';
    }
}

int fail(const std::string& type, const std::string& message, std::optional<int> frame = std::nullopt) {
    json j = {{"error", {{"type", type}, {"message", message}}}};
    if (frame) j["error"]["frame"] = *frame;
    std::cerr << j.dump() << '\n';
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"radtrack: radar 3D multi-object tracking experiments"};
    app.require_subcommand(1);
    app.allow_config_extras(CLI::config_extras_mode::error);
    CliState st;
    add_options(app, st);

    auto* simulate = app.add_subcommand("simulate", "Generate ground-truth and sample-set files");
    auto* train = app.add_subcommand("train", "Train the motion predictor");
    train->add_option("--dataset", st.dataset, "Training set JSON-lines (default: generated from the preset)");
    auto* track = app.add_subcommand("track", "Run the tracker over a sample-set file");
    track->add_option("--samples", st.samples, "Sample-set file (default: <out>/samples.jsonl)");
    auto* evaluate = app.add_subcommand("evaluate", "Score a track file against ground truth");
    evaluate->add_option("--tracks", st.tracks, "Track file (default: <out>/tracks.jsonl)");
    evaluate->add_option("--ground_truth", st.ground_truth, "Ground truth (default: <out>/ground_truth.jsonl)");
    auto* sweep = app.add_subcommand("sweep", "Run the horizon x association x noise-mode grid");
    sweep->add_option("--horizons", st.horizons, "Horizons ('cv' or integers)")->capture_default_str();
    sweep->add_option("--associations", st.associations, "Association modes")->capture_default_str();
    sweep->add_option("--process_modes", st.process_modes, "Process noise modes")->capture_default_str();
    sweep->add_option("--measurement_modes", st.measurement_modes, "Measurement noise modes")->capture_default_str();
    for (auto* sub : {simulate, train, track, evaluate, sweep}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        finalize(st);
        if (*simulate) cmd_simulate(st);
        if (*train) cmd_train(st);
        if (*track) cmd_track(st);
        if (*evaluate) cmd_evaluate(st);
        if (*sweep) cmd_sweep(st);
    } catch (const FrameError& e) {
        return fail("frame", e.what(), e.frame());
    } catch (const IoError& e) {
        return fail("io", e.what());
    } catch (const InvalidArgument& e) {
        return fail("invalid_argument", e.what());
    } catch (const Error& e) {
        return fail("runtime", e.what());
    } catch (const fs::filesystem_error& e) {
        return fail("io", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
