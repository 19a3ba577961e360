#pragma once

// Synthetic radar scenarios: ground-truth trajectories driven by a maneuver
// schedule, and per-frame sets of N_D stochastic detector passes with shared
// frame noise, per-pass jitter, missed detections and Poisson clutter.

#include "radtrack/core.hpp"
#include "radtrack/fusion.hpp"
#include "radtrack/motion.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace radtrack {

enum class SegmentKind { cv, turn, stopgo };

struct Segment {
    SegmentKind kind = SegmentKind::cv;
    int frames = 1;
    double yaw_rate = 0.0;  // rad/s, turn segments
    double accel = 3.0;     // m/s^2, stop-and-go braking and pull-away
    int hold_frames = 10;   // stop-and-go standstill
};

struct ObjectSpec {
    int id = 0;
    double x = 0.0, y = 0.0, z = 0.0, yaw = 0.0;
    double speed = 10.0;
    double l = 4.5, w = 1.9, h = 1.6;
    int start_frame = 0;
    int end_frame = -1;      // inclusive, -1 = until the end
    double confidence = 0.85;
    std::vector<Segment> segments;  // constant velocity after the last one
};

struct NoiseModel {
    Vec4 pose_sigma{0.25, 0.25, 0.1, 0.05};     // shared by all passes of a frame
    Vec4 jitter_sigma{0.15, 0.15, 0.05, 0.03};  // independent per pass
    double size_jitter = 0.03;                  // relative, per pass
    double doppler_sigma = 0.3;
    double doppler_jitter = 0.1;
    double confidence_sigma = 0.05;
};

struct ScenarioSpec {
    std::string name = "custom";
    int duration_frames = 100;
    double frame_rate = 10.0;
    std::vector<ObjectSpec> objects;
    Vec3 sensor_origin = Vec3::Zero();
    NoiseModel noise;
    double clutter_rate = 0.0;       // false alarms per pass and frame
    double p_d = 1.0;                // per-pass detection probability
    double frame_miss_prob = 0.0;    // probability an object is missed by every pass of a frame
    int n_d = 10;
    std::uint64_t seed = 0;
    double clutter_x_min = 0.0, clutter_x_max = 120.0;
    double clutter_y_min = -40.0, clutter_y_max = 40.0;
    double clutter_conf_min = 0.1, clutter_conf_max = 0.5;

    void validate() const {
        if (duration_frames < 0) throw InvalidArgument("ScenarioSpec: negative duration");
        if (!(frame_rate > 0.0)) throw InvalidArgument("ScenarioSpec: frame_rate must be positive");
        if (!(p_d >= 0.0 && p_d <= 1.0)) throw InvalidArgument("ScenarioSpec: p_d must be in [0, 1]");
        if (!(frame_miss_prob >= 0.0 && frame_miss_prob <= 1.0)) {
            throw InvalidArgument("ScenarioSpec: frame_miss_prob must be in [0, 1]");
        }
        if (!(clutter_rate >= 0.0)) throw InvalidArgument("ScenarioSpec: clutter_rate must be >= 0");
        if (n_d < 1) throw InvalidArgument("ScenarioSpec: n_d must be >= 1");
        if (!(noise.pose_sigma.array() >= 0.0).all() || !(noise.jitter_sigma.array() >= 0.0).all() ||
            noise.size_jitter < 0.0 || noise.doppler_sigma < 0.0 || noise.doppler_jitter < 0.0 ||
            noise.confidence_sigma < 0.0) {
            throw InvalidArgument("ScenarioSpec: noise sigmas must be >= 0");
        }
        if (!(clutter_x_max >= clutter_x_min) || !(clutter_y_max >= clutter_y_min) ||
            !(clutter_conf_max >= clutter_conf_min)) {
            throw InvalidArgument("ScenarioSpec: inverted clutter ranges");
        }
        std::map<int, int> seen;
        for (const auto& o : objects) {
            if (++seen[o.id] > 1) throw InvalidArgument("ScenarioSpec: duplicate object id");
            if (!(o.l > 0.0 && o.w > 0.0 && o.h > 0.0)) throw InvalidArgument("ScenarioSpec: object extents must be positive");
            if (o.speed < 0.0) throw InvalidArgument("ScenarioSpec: negative speed");
            for (const auto& s : o.segments) {
                if (s.frames < 1) throw InvalidArgument("ScenarioSpec: segment frames must be >= 1");
                if (s.kind == SegmentKind::stopgo && (!(s.accel > 0.0) || s.hold_frames < 0)) {
                    throw InvalidArgument("ScenarioSpec: stop-and-go needs accel > 0 and hold_frames >= 0");
                }
            }
        }
    }
};

struct GroundTruthObject {
    int id = 0;
    Box3D box;
    Vec3 velocity = Vec3::Zero();
};

struct GroundTruthFrame {
    int frame = 0;
    double timestamp = 0.0;
    std::vector<GroundTruthObject> objects;
};

struct Scenario {
    std::vector<GroundTruthFrame> ground_truth;
    std::vector<SampleSet> samples;
};

namespace detail {

// Kinematic integrator for one object over its maneuver schedule.
class ObjectMotion {
public:
    explicit ObjectMotion(const ObjectSpec& spec)
        : spec_(spec), x_(spec.x), y_(spec.y), z_(spec.z), yaw_(yaw_normalize(spec.yaw)), speed_(spec.speed),
          cruise_(spec.speed) {}

    Box3D box() const { return Box3D(x_, y_, z_, spec_.l, spec_.w, spec_.h, yaw_); }
    Vec3 velocity() const { return {speed_ * std::cos(yaw_), speed_ * std::sin(yaw_), 0.0}; }

    void advance(double dt) {
        const Segment* seg = current();
        if (seg && seg_frame_ == 0) {
            cruise_ = speed_;
            phase_ = Phase::braking;
            hold_left_ = seg->hold_frames;
        }
        if (seg == nullptr || seg->kind == SegmentKind::cv) {
            straight(speed_ * dt);
        } else if (seg->kind == SegmentKind::turn) {
            arc(seg->yaw_rate, dt);
        } else {
            stop_and_go(*seg, dt);
        }
        if (seg) {
            if (++seg_frame_ >= seg->frames) {
                ++seg_index_;
                seg_frame_ = 0;
            }
        }
    }

private:
    enum class Phase { braking, holding, accelerating, cruising };

    const Segment* current() const {
        return seg_index_ < spec_.segments.size() ? &spec_.segments[seg_index_] : nullptr;
    }

    void straight(double dist) {
        x_ += dist * std::cos(yaw_);
        y_ += dist * std::sin(yaw_);
    }

    void arc(double omega, double dt) {
        if (omega == 0.0) {
            straight(speed_ * dt);
            return;
        }
        const double r = speed_ / omega;
        const double yaw_next = yaw_ + omega * dt;
        x_ += r * (std::sin(yaw_next) - std::sin(yaw_));
        y_ += r * (std::cos(yaw_) - std::cos(yaw_next));
        yaw_ = yaw_normalize(yaw_next);
    }

    void stop_and_go(const Segment& seg, double dt) {
        switch (phase_) {
            case Phase::braking: {
                const double v1 = std::max(0.0, speed_ - seg.accel * dt);
                const double t_move = (speed_ - v1) / seg.accel;
                straight(0.5 * (speed_ + v1) * t_move);
                speed_ = v1;
                if (speed_ == 0.0) phase_ = hold_left_ > 0 ? Phase::holding : Phase::accelerating;
                break;
            }
            case Phase::holding:
                if (--hold_left_ <= 0) phase_ = Phase::accelerating;
                break;
            case Phase::accelerating: {
                const double v1 = std::min(cruise_, speed_ + seg.accel * dt);
                const double t_acc = (v1 - speed_) / seg.accel;
                straight(0.5 * (speed_ + v1) * t_acc + v1 * (dt - t_acc));
                speed_ = v1;
                if (speed_ >= cruise_) phase_ = Phase::cruising;
                break;
            }
            case Phase::cruising:
                straight(speed_ * dt);
                break;
        }
    }

    ObjectSpec spec_;
    double x_, y_, z_, yaw_, speed_, cruise_;
    std::size_t seg_index_ = 0;
    int seg_frame_ = 0;
    Phase phase_ = Phase::braking;
    int hold_left_ = 0;
};

}  // namespace detail

/// Ground truth for every frame of the scenario.
inline std::vector<GroundTruthFrame> generate_ground_truth(const ScenarioSpec& spec) {
    spec.validate();
    const double dt = 1.0 / spec.frame_rate;
    std::vector<detail::ObjectMotion> motions;
    for (const auto& o : spec.objects) motions.emplace_back(o);
    std::vector<GroundTruthFrame> frames;
    frames.reserve(static_cast<std::size_t>(spec.duration_frames));
    for (int f = 0; f < spec.duration_frames; ++f) {
        GroundTruthFrame gt;
        gt.frame = f;
        gt.timestamp = f * dt;
        for (std::size_t i = 0; i < spec.objects.size(); ++i) {
            const auto& o = spec.objects[i];
            const int end = o.end_frame < 0 ? spec.duration_frames - 1 : o.end_frame;
            if (f >= o.start_frame && f <= end) gt.objects.push_back({o.id, motions[i].box(), motions[i].velocity()});
            if (f >= o.start_frame) motions[i].advance(dt);
        }
        frames.push_back(std::move(gt));
    }
    return frames;
}

/// Ground truth plus per-frame detection sample sets; deterministic in spec.seed.
inline Scenario generate(const ScenarioSpec& spec) {
    Scenario sc;
    sc.ground_truth = generate_ground_truth(spec);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& nm = spec.noise;
    std::map<int, double> base_conf;
    for (const auto& o : spec.objects) base_conf[o.id] = o.confidence;

    for (const auto& gt : sc.ground_truth) {
        SampleSet set;
        set.frame = gt.frame;
        set.timestamp = gt.timestamp;
        set.passes.assign(static_cast<std::size_t>(spec.n_d), {});

        for (const auto& obj : gt.objects) {
            const bool frame_missed = unit(rng) < spec.frame_miss_prob;
            Vec4 shared;
            for (int k = 0; k < 4; ++k) shared(k) = nm.pose_sigma(k) * gauss(rng);
            const double doppler_err = nm.doppler_sigma * gauss(rng);
            const double conf = base_conf[obj.id] + nm.confidence_sigma * gauss(rng);
            KinematicState truth;
            truth.x = obj.box.x;
            truth.y = obj.box.y;
            truth.z = obj.box.z;
            truth.vx = obj.velocity(0);
            truth.vy = obj.velocity(1);
            truth.vz = obj.velocity(2);
            const double radial = radial_velocity(truth, spec.sensor_origin);
            for (auto& pass : set.passes) {
                const bool detected = unit(rng) < spec.p_d;
                Vec4 jit;
                for (int k = 0; k < 4; ++k) jit(k) = nm.jitter_sigma(k) * gauss(rng);
                const double sl = nm.size_jitter * gauss(rng);
                const double sw = nm.size_jitter * gauss(rng);
                const double sh = nm.size_jitter * gauss(rng);
                const double dj = nm.doppler_jitter * gauss(rng);
                const double cj = nm.confidence_sigma * gauss(rng);
                if (frame_missed || !detected) continue;
                Detection d;
                d.box = Box3D(obj.box.x + shared(0) + jit(0), obj.box.y + shared(1) + jit(1),
                              obj.box.z + shared(2) + jit(2), obj.box.l * std::max(0.1, 1.0 + sl),
                              obj.box.w * std::max(0.1, 1.0 + sw), obj.box.h * std::max(0.1, 1.0 + sh),
                              obj.box.yaw + shared(3) + jit(3));
                d.doppler = radial + doppler_err + dj;
                d.confidence = std::clamp(conf + cj, 0.0, 1.0);
                pass.push_back(d);
            }
        }

        std::poisson_distribution<int> clutter(spec.clutter_rate > 0.0 ? spec.clutter_rate : 1.0);
        for (auto& pass : set.passes) {
            const int count = spec.clutter_rate > 0.0 ? clutter(rng) : 0;
            for (int c = 0; c < count; ++c) {
                Detection d;
                const double x = spec.clutter_x_min + (spec.clutter_x_max - spec.clutter_x_min) * unit(rng);
                const double y = spec.clutter_y_min + (spec.clutter_y_max - spec.clutter_y_min) * unit(rng);
                const double yaw = -kPi + kTwoPi * unit(rng);
                d.box = Box3D(x, y, 0.0, 3.5 + 1.5 * unit(rng), 1.6 + 0.4 * unit(rng), 1.4 + 0.4 * unit(rng), yaw);
                d.doppler = -30.0 + 60.0 * unit(rng);
                d.confidence = spec.clutter_conf_min + (spec.clutter_conf_max - spec.clutter_conf_min) * unit(rng);
                pass.push_back(d);
            }
        }
        sc.samples.push_back(std::move(set));
    }
    return sc;
}

/// Sliding windows over each object's contiguous ground-truth run: n poses
/// paired with the pose that follows them.
inline std::vector<TrainingSample> export_training_set(const std::vector<GroundTruthFrame>& gt, int n) {
    if (n < 2) throw InvalidArgument("export_training_set: horizon must be >= 2");
    struct Entry {
        int frame;
        double t;
        Vec4 pose;
    };
    std::map<int, std::vector<Entry>> tracks;
    for (const auto& f : gt)
        for (const auto& o : f.objects) tracks[o.id].push_back({f.frame, f.timestamp, o.box.pose()});

    std::vector<TrainingSample> out;
    for (auto& [id, entries] : tracks) {
        std::size_t run_start = 0;
        for (std::size_t i = 1; i <= entries.size(); ++i) {
            const bool breaks = i == entries.size() || entries[i].frame != entries[i - 1].frame + 1;
            if (!breaks) continue;
            const std::size_t len = i - run_start;
            if (len >= static_cast<std::size_t>(n) + 1) {
                for (std::size_t s = run_start; s + static_cast<std::size_t>(n) < i; ++s) {
                    TrainingSample sample;
                    sample.history = History(n);
                    for (std::size_t k = s; k < s + static_cast<std::size_t>(n); ++k)
                        sample.history.push(entries[k].t, entries[k].pose);
                    sample.target = entries[s + static_cast<std::size_t>(n)].pose;
                    out.push_back(std::move(sample));
                }
            }
            run_start = i;
        }
    }
    return out;
}

/// Adds independent Gaussian noise to history poses (targets untouched) and
/// truncates a fraction of histories to a random length in [2, horizon].
inline std::vector<TrainingSample> augment_training_set(std::vector<TrainingSample> samples, const Vec4& pose_sigma,
                                                        double truncate_fraction, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& s : samples) {
        for (auto& p : s.history.poses) {
            for (int k = 0; k < 4; ++k) p(k) += pose_sigma(k) * gauss(rng);
            p(3) = yaw_normalize(p(3));
        }
        const int len = static_cast<int>(s.history.size());
        if (len > 2 && unit(rng) < truncate_fraction) {
            const int keep = 2 + static_cast<int>(unit(rng) * (len - 1));
            const int drop = len - std::min(keep, len);
            s.history.poses.erase(s.history.poses.begin(), s.history.poses.begin() + drop);
            s.history.timestamps.erase(s.history.timestamps.begin(), s.history.timestamps.begin() + drop);
        }
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"crossing_doppler", "regime_switch", "dense_parallel", "stopgo"};
    return names;
}

namespace detail {

inline ObjectSpec moving_object(int id, double x, double y, double vx, double vy) {
    ObjectSpec o;
    o.id = id;
    o.x = x;
    o.y = y;
    o.z = 0.8;
    o.yaw = std::atan2(vy, vx);
    o.speed = std::hypot(vx, vy);
    return o;
}

}  // namespace detail

/// Named scenario families. Geometry that is not fixed by the family is drawn
/// from the seed, as is all detection noise.
inline ScenarioSpec preset(const std::string& name, std::uint64_t seed = 0) {
    ScenarioSpec s;
    s.name = name;
    s.seed = seed;
    std::mt19937_64 rng(derive_seed(seed, name));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    if (name == "crossing_doppler") {
        // Two objects cross at (60, 0) at t = 10 s. The line of sight there is +x,
        // so their radial velocities are +10 and -10 m/s. The detector's pose
        // error (0.5 m) exceeds the tracker's nominal measurement noise, so
        // Mahalanobis gating rather than motion prediction limits association.
        s.duration_frames = 200;
        const double tc = 10.0;
        const double vy = 8.0;
        s.objects.push_back(detail::moving_object(1, 60.0 - 10.0 * tc, -vy * tc, 10.0, vy));
        s.objects.push_back(detail::moving_object(2, 60.0 + 10.0 * tc, -vy * tc, -10.0, vy));
        s.p_d = 0.9;
        s.frame_miss_prob = 0.1;
        s.clutter_rate = 1.0;
        s.noise.pose_sigma = Vec4(0.5, 0.5, 0.1, 0.05);
    } else if (name == "regime_switch") {
        // Objects alternate 30-frame constant-velocity and constant-turn segments.
        s.duration_frames = 240;
        const int count = 6;
        for (int i = 0; i < count; ++i) {
            const double x = 20.0 + 80.0 * unit(rng);
            const double y = -40.0 + 80.0 * unit(rng);
            const double heading = -kPi + kTwoPi * unit(rng);
            const double speed = 6.0 + 8.0 * unit(rng);
            ObjectSpec o = detail::moving_object(i + 1, x, y, speed * std::cos(heading), speed * std::sin(heading));
            for (int seg = 0; seg < s.duration_frames / 30; ++seg) {
                Segment sg;
                sg.frames = 30;
                if (seg % 2 == 1) {
                    sg.kind = SegmentKind::turn;
                    const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
                    sg.yaw_rate = sign * (0.3 + 0.3 * unit(rng));
                }
                o.segments.push_back(sg);
            }
            s.objects.push_back(std::move(o));
        }
        s.p_d = 0.9;
        s.frame_miss_prob = 0.15;
        s.clutter_rate = 1.0;
        s.clutter_x_min = -20.0;
        s.clutter_x_max = 160.0;
        s.clutter_y_min = -80.0;
        s.clutter_y_max = 80.0;
    } else if (name == "dense_parallel") {
        // Ten objects in adjacent lanes 4 m apart with near-equal velocities.
        s.duration_frames = 100;
        for (int i = 0; i < 10; ++i) {
            const double speed = 10.0 + 0.6 * (unit(rng) - 0.5);
            s.objects.push_back(detail::moving_object(i + 1, 20.0, -18.0 + 4.0 * i, speed, 0.0));
        }
        s.p_d = 0.9;
        s.clutter_rate = 1.0;
    } else if (name == "stopgo") {
        // Four objects brake to a halt, wait, and pull away again.
        s.duration_frames = 150;
        for (int i = 0; i < 4; ++i) {
            const double speed = 8.0 + 4.0 * unit(rng);
            ObjectSpec o = detail::moving_object(i + 1, 15.0, -15.0 + 10.0 * i, speed, 0.0);
            Segment cruise;
            cruise.frames = 20 + static_cast<int>(20.0 * unit(rng));
            Segment sg;
            sg.kind = SegmentKind::stopgo;
            sg.frames = 80;
            sg.accel = 2.5 + 1.5 * unit(rng);
            sg.hold_frames = 10 + static_cast<int>(10.0 * unit(rng));
            o.segments = {cruise, sg};
            s.objects.push_back(std::move(o));
        }
        s.p_d = 0.9;
        s.frame_miss_prob = 0.1;
        s.clutter_rate = 1.0;
    } else {
        throw InvalidArgument("preset: unknown preset '" + name + "'");
    }
    s.validate();
    return s;
}

}  // namespace radtrack
