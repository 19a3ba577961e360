#pragma once

// Per-frame tracking pipeline: fuse -> predict -> associate -> update ->
// life-cycle. The Kalman prior can take its pose from either the CV model
// or the MC-dropout predictor, and its process/measurement noise can be
// fixed or taken from the estimated variances.

#include "radtrack/association.hpp"
#include "radtrack/core.hpp"
#include "radtrack/fusion.hpp"
#include "radtrack/motion.hpp"
#include "radtrack/random.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace radtrack {

enum class TrackStatus { tentative, confirmed, dead };
enum class MotionMode { cv, predictor };
enum class ProcessNoiseMode { fixed, mc_variance };
enum class MeasurementNoiseMode { fixed, detection_variance };

struct NoiseConfig {
    ProcessNoiseMode process = ProcessNoiseMode::fixed;
    MeasurementNoiseMode measurement = MeasurementNoiseMode::fixed;
    // Per-frame process noise on [x, y, z, yaw, vx, vy, vz].
    Vec7 q0 = (Vec7() << 0.02, 0.02, 0.005, 0.005, 0.5, 0.5, 0.05).finished();
    // Measurement noise on [x, y, z, yaw].
    Vec4 r0{0.09, 0.09, 0.04, 0.01};
    // Initial velocity variance for new tracks (pose variance comes from R).
    Vec3 p0_velocity{25.0, 25.0, 1.0};
    // When false the estimated variances replace Q0/R0 outright.
    bool floor_variances = true;

    void validate() const {
        if (!(q0.array() > 0.0).all() || !(r0.array() > 0.0).all() || !(p0_velocity.array() > 0.0).all()) {
            throw InvalidArgument("NoiseConfig: diagonals must be positive");
        }
    }
};

struct Track {
    int id = -1;
    KinematicState state;
    Covariance7 cov = Covariance7::Identity();
    History history;
    double l = 1.0, w = 1.0, h = 1.0;
    int hits = 0;
    int misses = 0;
    TrackStatus status = TrackStatus::tentative;
    double score = 0.0;

    Box3D box() const { return Box3D(state.x, state.y, state.z, l, w, h, state.yaw); }
};

struct TrackSnapshot {
    int id = -1;
    Box3D box;
    Vec3 velocity = Vec3::Zero();
    double score = 0.0;
};

struct FrameResult {
    int frame = 0;
    double timestamp = 0.0;
    std::vector<TrackSnapshot> tracks;
    int stage2_matches = 0;
};

inline Mat7 cv_transition(double dt) {
    Mat7 f = Mat7::Identity();
    f.block<3, 3>(0, 4) = dt * Eigen::Matrix3d::Identity();
    return f;
}

inline Eigen::Matrix<double, 4, 7> measurement_matrix() {
    Eigen::Matrix<double, 4, 7> h = Eigen::Matrix<double, 4, 7>::Zero();
    h.block<4, 4>(0, 0).setIdentity();
    return h;
}

/// Zero-variance distribution at the CV-extrapolated pose.
inline PredictionDistribution cv_distribution(const KinematicState& s, double dt) {
    PredictionDistribution d;
    d.mean = cv_predict(s, dt).pose();
    d.samples = {d.mean};
    return d;
}

inline Mat7 process_noise(const PredictionDistribution& prediction, const NoiseConfig& noise) {
    Vec7 q = noise.q0;
    if (noise.process == ProcessNoiseMode::mc_variance) {
        for (int k = 0; k < 4; ++k) {
            q(k) = noise.floor_variances ? std::max(prediction.variance(k), noise.q0(k)) : prediction.variance(k);
        }
    }
    return q.asDiagonal();
}

inline Mat4 measurement_noise(const Detection& det, const NoiseConfig& noise) {
    Vec4 r = noise.r0;
    if (noise.measurement == MeasurementNoiseMode::detection_variance) {
        constexpr std::array<std::size_t, 4> idx{0, 1, 2, 6};
        for (int k = 0; k < 4; ++k) {
            const double s = det.box_std[idx[static_cast<std::size_t>(k)]];
            r(k) = noise.floor_variances ? std::max(s * s, noise.r0(k)) : s * s;
        }
    }
    return r.asDiagonal();
}

/// A priori step. The pose comes from the prediction mean and velocity is
/// re-derived from the pose displacement; P <- F P F^T + Q.
inline Track kf_predict(const Track& track, const PredictionDistribution& prediction, const NoiseConfig& noise,
                        double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("kf_predict: dt must be positive");
    Track out = track;
    const Vec3 old_pos = track.state.position();
    out.state.x = prediction.mean(0);
    out.state.y = prediction.mean(1);
    out.state.z = prediction.mean(2);
    out.state.yaw = yaw_normalize(prediction.mean(3));
    const Vec3 vel = (out.state.position() - old_pos) / dt;
    out.state.vx = vel(0);
    out.state.vy = vel(1);
    out.state.vz = vel(2);
    const Mat7 f = cv_transition(dt);
    Mat7 p = f * track.cov * f.transpose() + process_noise(prediction, noise);
    out.cov = 0.5 * (p + p.transpose());
    return out;
}

/// EMA weight on the previous track score.
inline constexpr double kScoreAlpha = 0.7;
/// EMA weight on the previous box size.
inline constexpr double kSizeAlpha = 0.5;

/// A posteriori step over the [x, y, z, yaw] measurement (Joseph form).
inline Track kf_update(const Track& track, const Detection& det, const NoiseConfig& noise) {
    const auto hm = measurement_matrix();
    const Mat4 r = measurement_noise(det, noise);
    Vec4 innov = det.box.pose() - hm * track.state.to_vector();
    innov(3) = yaw_normalize(innov(3));
    Mat4 s = hm * track.cov * hm.transpose() + r;
    s = 0.5 * (s + s.transpose());
    Eigen::LLT<Mat4> llt(s);
    if (llt.info() != Eigen::Success || !s.allFinite()) {
        throw NumericalError("kf_update: innovation covariance is not positive definite");
    }
    const Eigen::Matrix<double, 7, 4> pht = track.cov * hm.transpose();
    const Eigen::Matrix<double, 7, 4> gain = llt.solve(pht.transpose()).transpose();

    Track out = track;
    Vec7 x = track.state.to_vector() + gain * innov;
    out.state = KinematicState::from_vector(x);
    const Mat7 ikh = Mat7::Identity() - gain * hm;
    const Mat7 p = ikh * track.cov * ikh.transpose() + gain * r * gain.transpose();
    out.cov = 0.5 * (p + p.transpose());

    out.l = kSizeAlpha * track.l + (1.0 - kSizeAlpha) * det.box.l;
    out.w = kSizeAlpha * track.w + (1.0 - kSizeAlpha) * det.box.w;
    out.h = kSizeAlpha * track.h + (1.0 - kSizeAlpha) * det.box.h;
    out.hits = track.hits + 1;
    out.misses = 0;
    out.score = kScoreAlpha * track.score + (1.0 - kScoreAlpha) * det.confidence;
    return out;
}

struct LifecycleParams {
    int min_hits = 2;
    int max_age = 3;
    double init_score_min = 0.3;

    void validate() const {
        if (min_hits < 1 || max_age < 0) throw InvalidArgument("LifecycleParams: invalid counts");
    }
};

/// New tentative track at a detection. The velocity prior is the Doppler
/// measurement along the line of sight.
inline Track spawn_track(int id, const Detection& det, const NoiseConfig& noise, double timestamp, int horizon,
                         const Vec3& sensor_origin) {
    Track t;
    t.id = id;
    t.state.x = det.box.x;
    t.state.y = det.box.y;
    t.state.z = det.box.z;
    t.state.yaw = det.box.yaw;
    const Vec3 los = det.box.center() - sensor_origin;
    if (los.norm() > 0.0) {
        const Vec3 v = det.doppler * los.normalized();
        t.state.vx = v(0);
        t.state.vy = v(1);
        t.state.vz = v(2);
    }
    t.cov = Covariance7::Zero();
    t.cov.block<4, 4>(0, 0) = measurement_noise(det, noise);
    t.cov.block<3, 3>(4, 4) = noise.p0_velocity.asDiagonal();
    t.history = History(horizon);
    t.history.push(timestamp, t.state.pose());
    t.l = det.box.l;
    t.w = det.box.w;
    t.h = det.box.h;
    t.hits = 1;
    t.misses = 0;
    t.status = TrackStatus::tentative;
    t.score = det.confidence;
    return t;
}

struct LifecycleOutcome {
    std::vector<Track> surviving;  // updated or coasting, status refreshed
    std::vector<Track> born;
    std::vector<int> dead;
};

/// Applies updates for matches, ages the unmatched, promotes and retires
/// tracks, and spawns tentative tracks from confident unmatched detections.
/// Every surviving or new track records its current pose at timestamp.
inline LifecycleOutcome lifecycle_step(const std::vector<Track>& predicted, const AssociationResult& assoc,
                                       std::span<const Detection> detections, const LifecycleParams& params,
                                       const NoiseConfig& noise, double timestamp, int& next_id, int horizon,
                                       const Vec3& sensor_origin) {
    params.validate();
    LifecycleOutcome out;
    for (const Track& t : predicted) {
        const Match* match = nullptr;
        for (const auto& m : assoc.matches)
            if (m.track_id == t.id) match = &m;
        Track cur = match ? kf_update(t, detections[match->detection], noise) : t;
        if (!match) cur.misses = t.misses + 1;
        if (cur.misses > params.max_age) {
            cur.status = TrackStatus::dead;
            out.dead.push_back(cur.id);
            continue;
        }
        if (cur.status == TrackStatus::tentative && cur.hits >= params.min_hits) cur.status = TrackStatus::confirmed;
        if (cur.history.empty() || timestamp > cur.history.timestamps.back()) cur.history.push(timestamp, cur.state.pose());
        out.surviving.push_back(std::move(cur));
    }
    for (std::size_t j : assoc.unmatched_detections) {
        const Detection& det = detections[j];
        if (det.confidence < params.init_score_min) continue;
        Track t = spawn_track(next_id++, det, noise, timestamp, horizon, sensor_origin);
        if (t.hits >= params.min_hits) t.status = TrackStatus::confirmed;
        out.born.push_back(std::move(t));
    }
    return out;
}

struct TrackerConfig {
    MotionMode motion = MotionMode::cv;
    int horizon = 3;
    int n_p = 10;
    NoiseConfig noise;
    AssociationConfig association;
    LifecycleParams lifecycle;
    FusionConfig fusion;
    Vec3 sensor_origin = Vec3::Zero();
    std::uint64_t seed = 0;
};

class FrameError : public Error {
public:
    FrameError(int frame, const std::string& what)
        : Error("frame " + std::to_string(frame) + ": " + what), frame_(frame) {}
    int frame() const { return frame_; }

private:
    int frame_;
};

/// Owns per-sequence state; frames must be fed in time order.
class Tracker {
public:
    explicit Tracker(TrackerConfig cfg, const PredictorModel* model = nullptr) : cfg_(std::move(cfg)), model_(model) {
        cfg_.noise.validate();
        cfg_.association.validate();
        cfg_.lifecycle.validate();
        if (cfg_.motion == MotionMode::predictor) {
            if (model_ == nullptr) throw InvalidArgument("Tracker: predictor mode requires a model");
            model_->validate();
            cfg_.horizon = model_->horizon;
        }
        if (cfg_.n_p < 1) throw InvalidArgument("Tracker: n_p must be >= 1");
    }

    const std::vector<Track>& tracks() const { return tracks_; }

    /// One frame of fused detections.
    FrameResult step_detections(int frame, double timestamp, const std::vector<Detection>& detections) {
        if (last_timestamp_ && !(timestamp > *last_timestamp_)) {
            throw FrameError(frame, "timestamps must be strictly increasing");
        }
        const double dt = last_timestamp_ ? timestamp - *last_timestamp_ : 0.0;

        std::vector<Track> priors;
        priors.reserve(tracks_.size());
        for (const Track& t : tracks_) priors.push_back(dt > 0.0 ? predict_track(t, frame, dt) : t);

        std::vector<AssocTrack> views;
        views.reserve(priors.size());
        const auto hm = measurement_matrix();
        for (const Track& t : priors) views.push_back({t.id, t.state, hm * t.cov * hm.transpose()});
        std::vector<Mat4> r;
        r.reserve(detections.size());
        for (const auto& d : detections) r.push_back(measurement_noise(d, cfg_.noise));

        const AssociationResult assoc = associate(views, detections, r, cfg_.association, cfg_.sensor_origin);
        auto outcome = lifecycle_step(priors, assoc, detections, cfg_.lifecycle, cfg_.noise, timestamp, next_id_,
                                      cfg_.horizon, cfg_.sensor_origin);
        tracks_ = std::move(outcome.surviving);
        for (auto& t : outcome.born) tracks_.push_back(std::move(t));
        last_timestamp_ = timestamp;

        FrameResult res;
        res.frame = frame;
        res.timestamp = timestamp;
        res.stage2_matches = assoc.stage2_count();
        for (const Track& t : tracks_) {
            if (t.status != TrackStatus::confirmed) continue;
            res.tracks.push_back({t.id, t.box(), t.state.velocity(), t.score});
        }
        return res;
    }

    FrameResult step(const SampleSet& samples) {
        try {
            return step_detections(samples.frame, samples.timestamp, fuse_frame(samples, cfg_.fusion));
        } catch (const FrameError&) {
            throw;
        } catch (const Error& e) {
            throw FrameError(samples.frame, e.what());
        }
    }

private:
    Track predict_track(const Track& t, int frame, double dt) const {
        if (cfg_.motion == MotionMode::predictor && t.history.size() >= 2) {
            const std::uint64_t seed =
                derive_seed(derive_seed(cfg_.seed, static_cast<std::uint64_t>(t.id)), static_cast<std::uint64_t>(frame));
            return kf_predict(t, mc_predict(*model_, t.history, cfg_.n_p, seed, dt), cfg_.noise, dt);
        }
        return kf_predict(t, cv_distribution(t.state, dt), cfg_.noise, dt);
    }

    TrackerConfig cfg_;
    const PredictorModel* model_ = nullptr;
    std::vector<Track> tracks_;
    std::optional<double> last_timestamp_;
    int next_id_ = 0;
};

inline std::vector<FrameResult> track_sequence(std::span<const SampleSet> frames, const TrackerConfig& cfg,
                                               const PredictorModel* model = nullptr) {
    Tracker tracker(cfg, model);
    std::vector<FrameResult> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(tracker.step(f));
    return out;
}

}  // namespace radtrack
