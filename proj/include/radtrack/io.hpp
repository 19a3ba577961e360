#pragma once

// File formats: JSON-lines scenario/sample/track files (one frame per line,
// schema_version on every line, run manifest on the first line), scenario
// spec and model JSON, metrics JSON/CSV.

#include "radtrack/core.hpp"
#include "radtrack/fusion.hpp"
#include "radtrack/metrics.hpp"
#include "radtrack/motion.hpp"
#include "radtrack/sim.hpp"
#include "radtrack/tracking.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace radtrack {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kToolVersion = "radtrack 1.0.0";

class IoError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Enum names
// ---------------------------------------------------------------------------

inline std::string to_string(MotionMode m) { return m == MotionMode::cv ? "cv" : "predictor"; }
inline std::string to_string(ProcessNoiseMode m) { return m == ProcessNoiseMode::fixed ? "fixed" : "mc_variance"; }
inline std::string to_string(MeasurementNoiseMode m) {
    return m == MeasurementNoiseMode::fixed ? "fixed" : "detection_variance";
}
inline std::string to_string(SegmentKind k) {
    switch (k) {
        case SegmentKind::cv: return "cv";
        case SegmentKind::turn: return "turn";
        case SegmentKind::stopgo: return "stopgo";
    }
    return "cv";
}

inline MotionMode parse_motion_mode(const std::string& s) {
    if (s == "cv") return MotionMode::cv;
    if (s == "predictor") return MotionMode::predictor;
    throw InvalidArgument("unknown motion mode '" + s + "'");
}
inline ProcessNoiseMode parse_process_noise(const std::string& s) {
    if (s == "fixed") return ProcessNoiseMode::fixed;
    if (s == "mc_variance") return ProcessNoiseMode::mc_variance;
    throw InvalidArgument("unknown process noise mode '" + s + "'");
}
inline MeasurementNoiseMode parse_measurement_noise(const std::string& s) {
    if (s == "fixed") return MeasurementNoiseMode::fixed;
    if (s == "detection_variance") return MeasurementNoiseMode::detection_variance;
    throw InvalidArgument("unknown measurement noise mode '" + s + "'");
}
inline SegmentKind parse_segment_kind(const std::string& s) {
    if (s == "cv") return SegmentKind::cv;
    if (s == "turn") return SegmentKind::turn;
    if (s == "stopgo") return SegmentKind::stopgo;
    throw InvalidArgument("unknown segment kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

struct Manifest {
    std::string command;
    json config = json::object();
    std::vector<std::uint64_t> seeds;

    json to_json() const {
        return {{"tool", kToolVersion},
                {"schema_version", kSchemaVersion},
                {"command", command},
                {"config_hash", hex64(fnv1a(config.dump()))},
                {"seeds", seeds}};
    }
};

// ---------------------------------------------------------------------------
// Generic helpers
// ---------------------------------------------------------------------------

inline std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<json> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            if (!j.contains("schema_version") || j["schema_version"].get<int>() != kSchemaVersion) {
                throw IoError("unsupported or missing schema_version");
            }
            out.push_back(std::move(j));
        } catch (const json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const IoError& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

/// One record per line; the first line also carries the manifest.
inline void write_jsonl(const std::filesystem::path& path, std::vector<json> records, const Manifest& manifest) {
    auto out = open_out(path);
    for (std::size_t i = 0; i < records.size(); ++i) {
        json& r = records[i];
        json line = {{"schema_version", kSchemaVersion}};
        if (i == 0) line["manifest"] = manifest.to_json();
        for (auto it = r.begin(); it != r.end(); ++it) line[it.key()] = std::move(it.value());
        out << line.dump() << '\n';
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

inline std::string csv_manifest_line(const Manifest& m) { return "# manifest " + m.to_json().dump() + "\n"; }

// ---------------------------------------------------------------------------
// Boxes and detections
// ---------------------------------------------------------------------------

inline json box_to_json(const Box3D& b) {
    return {{"x", b.x}, {"y", b.y}, {"z", b.z}, {"l", b.l}, {"w", b.w}, {"h", b.h}, {"yaw", b.yaw}};
}

inline Box3D box_from_json(const json& j) {
    return Box3D(j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>(), j.at("l").get<double>(),
                 j.at("w").get<double>(), j.at("h").get<double>(), j.at("yaw").get<double>());
}

inline json detection_to_json(const Detection& d) {
    json j = box_to_json(d.box);
    j["doppler"] = d.doppler;
    j["confidence"] = d.confidence;
    return j;
}

inline Detection detection_from_json(const json& j) {
    Detection d;
    d.box = box_from_json(j);
    d.doppler = j.at("doppler").get<double>();
    d.confidence = j.at("confidence").get<double>();
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

inline json ground_truth_record(const GroundTruthFrame& f) {
    json objs = json::array();
    for (const auto& o : f.objects) {
        json j = box_to_json(o.box);
        j["id"] = o.id;
        j["vx"] = o.velocity(0);
        j["vy"] = o.velocity(1);
        j["vz"] = o.velocity(2);
        objs.push_back(std::move(j));
    }
    return {{"frame", f.frame}, {"timestamp", f.timestamp}, {"objects", std::move(objs)}};
}

inline GroundTruthFrame ground_truth_from_record(const json& j) {
    GroundTruthFrame f;
    f.frame = j.at("frame").get<int>();
    f.timestamp = j.at("timestamp").get<double>();
    for (const auto& o : j.at("objects")) {
        f.objects.push_back({o.at("id").get<int>(), box_from_json(o),
                             Vec3(o.at("vx").get<double>(), o.at("vy").get<double>(), o.at("vz").get<double>())});
    }
    return f;
}

inline json samples_record(const SampleSet& s) {
    json passes = json::array();
    for (const auto& pass : s.passes) {
        json p = json::array();
        for (const auto& d : pass) p.push_back(detection_to_json(d));
        passes.push_back(std::move(p));
    }
    return {{"frame", s.frame}, {"timestamp", s.timestamp}, {"n_d", s.n_d()}, {"passes", std::move(passes)}};
}

inline SampleSet samples_from_record(const json& j) {
    SampleSet s;
    s.frame = j.at("frame").get<int>();
    s.timestamp = j.at("timestamp").get<double>();
    for (const auto& p : j.at("passes")) {
        std::vector<Detection> pass;
        for (const auto& d : p) pass.push_back(detection_from_json(d));
        s.passes.push_back(std::move(pass));
    }
    if (s.n_d() != j.at("n_d").get<int>()) throw IoError("samples: n_d does not match pass count");
    return s;
}

inline void write_ground_truth(const std::filesystem::path& path, const std::vector<GroundTruthFrame>& gt,
                               const Manifest& m) {
    std::vector<json> recs;
    for (const auto& f : gt) recs.push_back(ground_truth_record(f));
    write_jsonl(path, std::move(recs), m);
}

inline std::vector<GroundTruthFrame> read_ground_truth(const std::filesystem::path& path) {
    std::vector<GroundTruthFrame> out;
    for (const auto& j : read_jsonl(path)) out.push_back(ground_truth_from_record(j));
    return out;
}

inline void write_samples(const std::filesystem::path& path, const std::vector<SampleSet>& samples, const Manifest& m) {
    std::vector<json> recs;
    for (const auto& s : samples) recs.push_back(samples_record(s));
    write_jsonl(path, std::move(recs), m);
}

inline std::vector<SampleSet> read_samples(const std::filesystem::path& path) {
    std::vector<SampleSet> out;
    for (const auto& j : read_jsonl(path)) {
        try {
            out.push_back(samples_from_record(j));
        } catch (const IoError&) {
            throw;
        } catch (const json::exception& e) {
            throw IoError(path.string() + ": " + e.what());
        } catch (const Error& e) {
            // a malformed detection is a data error in that frame
            throw FrameError(j.value("frame", -1), e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Track output
// ---------------------------------------------------------------------------

inline json track_record(const FrameResult& r) {
    json tracks = json::array();
    for (const auto& t : r.tracks) {
        json j = box_to_json(t.box);
        j["id"] = t.id;
        j["vx"] = t.velocity(0);
        j["vy"] = t.velocity(1);
        j["vz"] = t.velocity(2);
        j["score"] = t.score;
        tracks.push_back(std::move(j));
    }
    return {{"frame", r.frame}, {"timestamp", r.timestamp}, {"stage2_matches", r.stage2_matches},
            {"tracks", std::move(tracks)}};
}

inline FrameResult track_from_record(const json& j) {
    FrameResult r;
    r.frame = j.at("frame").get<int>();
    r.timestamp = j.at("timestamp").get<double>();
    r.stage2_matches = j.value("stage2_matches", 0);
    for (const auto& t : j.at("tracks")) {
        r.tracks.push_back({t.at("id").get<int>(), box_from_json(t),
                            Vec3(t.at("vx").get<double>(), t.at("vy").get<double>(), t.at("vz").get<double>()),
                            t.at("score").get<double>()});
    }
    return r;
}

inline void write_tracks(const std::filesystem::path& path, const std::vector<FrameResult>& results, const Manifest& m) {
    std::vector<json> recs;
    for (const auto& r : results) recs.push_back(track_record(r));
    write_jsonl(path, std::move(recs), m);
}

inline std::vector<FrameResult> read_tracks(const std::filesystem::path& path) {
    std::vector<FrameResult> out;
    for (const auto& j : read_jsonl(path)) out.push_back(track_from_record(j));
    return out;
}

/// Pairs track output with ground truth frame by frame (by frame index).
inline EvalSequence make_eval_sequence(const std::vector<FrameResult>& tracks, const std::vector<GroundTruthFrame>& gt) {
    std::map<int, const FrameResult*> by_frame;
    for (const auto& r : tracks) by_frame[r.frame] = &r;
    EvalSequence seq;
    for (const auto& g : gt) {
        EvalFrame f;
        for (const auto& o : g.objects) f.ground_truth.push_back({o.id, o.box.x, o.box.y});
        auto it = by_frame.find(g.frame);
        if (it != by_frame.end()) {
            for (const auto& t : it->second->tracks) f.predictions.push_back({t.id, t.box.x, t.box.y, t.score});
        }
        seq.push_back(std::move(f));
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline json metrics_to_json(const MetricsReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"recall_target", row.recall_target}, {"achieved", row.achieved}, {"recall", row.recall},
                        {"threshold", row.threshold}, {"tp", row.tp}, {"fp", row.fp}, {"fn", row.fn},
                        {"ids", row.ids}, {"motar", row.motar}, {"motp", row.motp}});
    }
    return {{"amota", r.amota}, {"amotp", r.amotp}, {"gt_count", r.gt_count}, {"tp", r.tp},
            {"fp", r.fp},       {"fn", r.fn},       {"ids", r.ids},           {"rows", std::move(rows)}};
}

inline std::string metrics_csv(const MetricsReport& r, const Manifest& m) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << csv_manifest_line(m);
    os << "recall_target,achieved,recall,threshold,tp,fp,fn,ids,motar,motp\n";
    for (const auto& row : r.rows) {
        os << row.recall_target << ',' << (row.achieved ? 1 : 0) << ',' << row.recall << ',' << row.threshold << ','
           << row.tp << ',' << row.fp << ',' << row.fn << ',' << row.ids << ',' << row.motar << ',' << row.motp
           << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Scenario spec
// ---------------------------------------------------------------------------

inline json vec_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from_json(const json& j) {
    if (!j.is_array() || static_cast<int>(j.size()) != N) throw IoError("expected array of length " + std::to_string(N));
    Eigen::Matrix<double, N, 1> v;
    for (int i = 0; i < N; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

inline json scenario_spec_to_json(const ScenarioSpec& s) {
    json objs = json::array();
    for (const auto& o : s.objects) {
        json segs = json::array();
        for (const auto& sg : o.segments) {
            segs.push_back({{"kind", to_string(sg.kind)}, {"frames", sg.frames}, {"yaw_rate", sg.yaw_rate},
                            {"accel", sg.accel}, {"hold_frames", sg.hold_frames}});
        }
        objs.push_back({{"id", o.id}, {"x", o.x}, {"y", o.y}, {"z", o.z}, {"yaw", o.yaw}, {"speed", o.speed},
                        {"l", o.l}, {"w", o.w}, {"h", o.h}, {"start_frame", o.start_frame},
                        {"end_frame", o.end_frame}, {"confidence", o.confidence}, {"segments", std::move(segs)}});
    }
    return {{"name", s.name},
            {"duration_frames", s.duration_frames},
            {"frame_rate", s.frame_rate},
            {"sensor_origin", vec_json(s.sensor_origin)},
            {"noise",
             {{"pose_sigma", vec_json(s.noise.pose_sigma)},
              {"jitter_sigma", vec_json(s.noise.jitter_sigma)},
              {"size_jitter", s.noise.size_jitter},
              {"doppler_sigma", s.noise.doppler_sigma},
              {"doppler_jitter", s.noise.doppler_jitter},
              {"confidence_sigma", s.noise.confidence_sigma}}},
            {"clutter_rate", s.clutter_rate},
            {"p_d", s.p_d},
            {"frame_miss_prob", s.frame_miss_prob},
            {"n_d", s.n_d},
            {"seed", s.seed},
            {"clutter_region", {s.clutter_x_min, s.clutter_x_max, s.clutter_y_min, s.clutter_y_max}},
            {"clutter_confidence", {s.clutter_conf_min, s.clutter_conf_max}},
            {"objects", std::move(objs)}};
}

/// Missing keys keep their defaults so hand-written specs can stay short.
inline ScenarioSpec scenario_spec_from_json(const json& j) {
    ScenarioSpec s;
    try {
        s.name = j.value("name", s.name);
        s.duration_frames = j.value("duration_frames", s.duration_frames);
        s.frame_rate = j.value("frame_rate", s.frame_rate);
        if (j.contains("sensor_origin")) s.sensor_origin = vec_from_json<3>(j["sensor_origin"]);
        if (j.contains("noise")) {
            const auto& n = j["noise"];
            if (n.contains("pose_sigma")) s.noise.pose_sigma = vec_from_json<4>(n["pose_sigma"]);
            if (n.contains("jitter_sigma")) s.noise.jitter_sigma = vec_from_json<4>(n["jitter_sigma"]);
            s.noise.size_jitter = n.value("size_jitter", s.noise.size_jitter);
            s.noise.doppler_sigma = n.value("doppler_sigma", s.noise.doppler_sigma);
            s.noise.doppler_jitter = n.value("doppler_jitter", s.noise.doppler_jitter);
            s.noise.confidence_sigma = n.value("confidence_sigma", s.noise.confidence_sigma);
        }
        s.clutter_rate = j.value("clutter_rate", s.clutter_rate);
        s.p_d = j.value("p_d", s.p_d);
        s.frame_miss_prob = j.value("frame_miss_prob", s.frame_miss_prob);
        s.n_d = j.value("n_d", s.n_d);
        s.seed = j.value("seed", s.seed);
        if (j.contains("clutter_region")) {
            const auto r = vec_from_json<4>(j["clutter_region"]);
            s.clutter_x_min = r(0);
            s.clutter_x_max = r(1);
            s.clutter_y_min = r(2);
            s.clutter_y_max = r(3);
        }
        if (j.contains("clutter_confidence")) {
            const auto c = vec_from_json<2>(j["clutter_confidence"]);
            s.clutter_conf_min = c(0);
            s.clutter_conf_max = c(1);
        }
        for (const auto& o : j.value("objects", json::array())) {
            ObjectSpec os;
            os.id = o.at("id").get<int>();
            os.x = o.value("x", os.x);
            os.y = o.value("y", os.y);
            os.z = o.value("z", os.z);
            os.yaw = o.value("yaw", os.yaw);
            os.speed = o.value("speed", os.speed);
            os.l = o.value("l", os.l);
            os.w = o.value("w", os.w);
            os.h = o.value("h", os.h);
            os.start_frame = o.value("start_frame", os.start_frame);
            os.end_frame = o.value("end_frame", os.end_frame);
            os.confidence = o.value("confidence", os.confidence);
            for (const auto& sg : o.value("segments", json::array())) {
                Segment seg;
                seg.kind = parse_segment_kind(sg.value("kind", std::string("cv")));
                seg.frames = sg.value("frames", seg.frames);
                seg.yaw_rate = sg.value("yaw_rate", seg.yaw_rate);
                seg.accel = sg.value("accel", seg.accel);
                seg.hold_frames = sg.value("hold_frames", seg.hold_frames);
                os.segments.push_back(seg);
            }
            s.objects.push_back(std::move(os));
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("scenario spec: ") + e.what());
    }
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Predictor model
// ---------------------------------------------------------------------------

inline json model_to_json(const PredictorModel& m) {
    json tensors = json::object();
    const auto ts = m.weights.tensors();
    for (std::size_t i = 0; i < PredictorWeights::kCount; ++i) {
        const auto& t = *ts[i];
        json data = json::array();
        for (Eigen::Index r = 0; r < t.rows(); ++r)
            for (Eigen::Index c = 0; c < t.cols(); ++c) data.push_back(t(r, c));
        tensors[PredictorWeights::kNames[i]] = {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::move(data)}};
    }
    return {{"format", "radtrack-predictor"},
            {"format_version", kModelFormatVersion},
            {"horizon", m.horizon},
            {"d_model", m.d_model},
            {"d_ff", m.d_ff},
            {"dropout_rate", m.dropout_rate},
            {"step_dt", m.step_dt},
            {"input_scale", vec_json(m.input_scale)},
            {"tensors", std::move(tensors)}};
}

inline PredictorModel model_from_json(const json& j) {
    if (j.value("format", std::string()) != "radtrack-predictor") throw IoError("model: unrecognised format");
    if (j.value("format_version", -1) != kModelFormatVersion) throw IoError("model: unsupported format_version");
    PredictorModel m;
    try {
        m.horizon = j.at("horizon").get<int>();
        m.d_model = j.at("d_model").get<int>();
        m.d_ff = j.at("d_ff").get<int>();
        m.dropout_rate = j.at("dropout_rate").get<double>();
        m.step_dt = j.at("step_dt").get<double>();
        m.input_scale = vec_from_json<4>(j.at("input_scale"));
        auto ts = m.weights.tensors();
        for (std::size_t i = 0; i < PredictorWeights::kCount; ++i) {
            const auto& tj = j.at("tensors").at(PredictorWeights::kNames[i]);
            const auto rows = tj.at("rows").get<Eigen::Index>();
            const auto cols = tj.at("cols").get<Eigen::Index>();
            const auto& data = tj.at("data");
            if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw IoError("model: tensor size mismatch");
            ts[i]->resize(rows, cols);
            std::size_t k = 0;
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c) (*ts[i])(r, c) = data[k++].get<double>();
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("model: ") + e.what());
    }
    m.validate();
    return m;
}

inline void save_model(const std::filesystem::path& path, const PredictorModel& m) { write_json_file(path, model_to_json(m)); }
inline PredictorModel load_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Training set
// ---------------------------------------------------------------------------

inline json training_sample_record(const TrainingSample& s) {
    json poses = json::array();
    for (const auto& p : s.history.poses) poses.push_back(vec_json(p));
    return {{"horizon", s.history.horizon},
            {"timestamps", s.history.timestamps},
            {"poses", std::move(poses)},
            {"target", vec_json(s.target)}};
}

inline TrainingSample training_sample_from_record(const json& j) {
    TrainingSample s;
    s.history = History(j.at("horizon").get<int>());
    const auto ts = j.at("timestamps").get<std::vector<double>>();
    const auto& poses = j.at("poses");
    if (ts.size() != poses.size()) throw IoError("training sample: timestamp/pose mismatch");
    for (std::size_t i = 0; i < ts.size(); ++i) s.history.push(ts[i], vec_from_json<4>(poses[i]));
    s.target = vec_from_json<4>(j.at("target"));
    return s;
}

inline void write_training_set(const std::filesystem::path& path, const std::vector<TrainingSample>& data,
                               const Manifest& m) {
    std::vector<json> recs;
    for (const auto& s : data) recs.push_back(training_sample_record(s));
    write_jsonl(path, std::move(recs), m);
}

inline std::vector<TrainingSample> read_training_set(const std::filesystem::path& path) {
    std::vector<TrainingSample> out;
    for (const auto& j : read_jsonl(path)) out.push_back(training_sample_from_record(j));
    return out;
}

}  // namespace radtrack
