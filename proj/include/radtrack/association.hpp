#pragma once

// Two-stage data association. Stage 1 solves an optimal assignment over
// Mahalanobis distances and accepts pairs inside gate1. Stage 2 revisits the
// leftovers with a cost that adds a Doppler velocity-affinity penalty and
// accepts pairs inside gate2.

#include "radtrack/core.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace radtrack {

struct AssociationConfig {
    double w1 = 1.0;
    double w2 = 2.0;
    double sigma_v = 2.0;                    // m/s
    double gate1 = std::sqrt(13.2767);       // chi-square(4) 99% quantile
    double gate2 = std::sqrt(13.2767) * 1.0 + 2.0 * 0.5;
    bool two_stage = true;

    void validate() const {
        if (w1 < 0.0 || w2 < 0.0 || (w1 == 0.0 && w2 == 0.0)) {
            throw InvalidArgument("AssociationConfig: weights must be >= 0 and not both zero");
        }
        if (!(sigma_v > 0.0)) throw InvalidArgument("AssociationConfig: sigma_v must be positive");
        if (!(gate1 > 0.0) || !(gate2 > 0.0)) throw InvalidArgument("AssociationConfig: gates must be positive");
    }
};

struct Match {
    int track_id = -1;
    std::size_t detection = 0;
    double cost = 0.0;
    int stage = 1;
};

/// Each input track and detection appears in exactly one of the three lists.
struct AssociationResult {
    std::vector<Match> matches;
    std::vector<int> unmatched_tracks;
    std::vector<std::size_t> unmatched_detections;

    int stage2_count() const {
        int n = 0;
        for (const auto& m : matches) n += m.stage == 2 ? 1 : 0;
        return n;
    }
};

/// Prior (a priori) view of a track as needed by association.
struct AssocTrack {
    int id = -1;
    KinematicState predicted;
    Mat4 pose_cov = Mat4::Identity();  // H P H^T
};

/// sqrt(r^T S^-1 r) over [x, y, z, yaw] with the yaw residual wrapped.
inline double mahalanobis(const Vec4& measured, const Vec4& predicted, const Mat4& innovation_cov) {
    Vec4 r = measured - predicted;
    r(3) = yaw_normalize(r(3));
    if (!innovation_cov.allFinite() ||
        !innovation_cov.isApprox(innovation_cov.transpose(), 1e-9 * std::max(1.0, innovation_cov.norm()))) {
        throw NumericalError("mahalanobis: innovation covariance is not symmetric");
    }
    Eigen::LLT<Mat4> llt(innovation_cov);
    if (llt.info() != Eigen::Success) throw NumericalError("mahalanobis: innovation covariance is not positive definite");
    const Vec4 y = llt.matrixL().solve(r);
    return std::sqrt(y.squaredNorm());
}

inline double mahalanobis(const Detection& det, const Vec4& predicted, const Mat4& innovation_cov) {
    return mahalanobis(det.box.pose(), predicted, innovation_cov);
}

/// Gaussian kernel on the Doppler mismatch, in (0, 1].
inline double velocity_affinity(double detection_doppler, double track_radial, double sigma_v) {
    if (!(sigma_v > 0.0)) throw InvalidArgument("velocity_affinity: sigma_v must be positive");
    const double dv = detection_doppler - track_radial;
    return std::exp(-dv * dv / (2.0 * sigma_v * sigma_v));
}

inline double combined_cost(double d_m, double a_r, const AssociationConfig& cfg) {
    if (!(a_r >= 0.0 && a_r <= 1.0)) throw InvalidArgument("combined_cost: affinity outside [0, 1]");
    return cfg.w1 * d_m + cfg.w2 * (1.0 - a_r);
}

/// Minimum-cost one-to-one assignment (shortest augmenting path with
/// potentials). Returns, per row, the assigned column or -1. When the matrix
/// is not square the surplus side stays unmatched.
inline std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
    const Eigen::Index rows = cost.rows();
    const Eigen::Index cols = cost.cols();
    if (rows == 0 || cols == 0) return std::vector<int>(static_cast<std::size_t>(rows), -1);
    if (!cost.allFinite()) throw InvalidArgument("hungarian: costs must be finite");
    if (rows > cols) {
        const std::vector<int> col_to_row = hungarian(cost.transpose());
        std::vector<int> row_to_col(static_cast<std::size_t>(rows), -1);
        for (std::size_t c = 0; c < col_to_row.size(); ++c) {
            if (col_to_row[c] >= 0) row_to_col[static_cast<std::size_t>(col_to_row[c])] = static_cast<int>(c);
        }
        return row_to_col;
    }

    // 1-based arrays; column 0 is the virtual start.
    const auto n = static_cast<std::size_t>(rows);
    const auto m = static_cast<std::size_t>(cols);
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
    }
    return row_to_col;
}

namespace detail {

inline constexpr double kGatedCost = 1e6;

// Solves over the given subsets and keeps pairs whose cost passes the gate.
inline void solve_gated(const Eigen::MatrixXd& full, std::span<const std::size_t> rows,
                        std::span<const std::size_t> cols, double gate, int stage, std::vector<Match>& matches,
                        std::vector<char>& row_done, std::vector<char>& col_done, std::span<const AssocTrack> tracks) {
    if (rows.empty() || cols.empty()) return;
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const double v = full(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(cols[c]));
            sub(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (std::isfinite(v) && v <= gate) ? v : kGatedCost;
        }
    }
    const auto assign = hungarian(sub);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (assign[r] < 0) continue;
        const double v = sub(static_cast<Eigen::Index>(r), assign[r]);
        if (v >= kGatedCost) continue;
        const std::size_t ti = rows[r];
        const std::size_t di = cols[static_cast<std::size_t>(assign[r])];
        matches.push_back({tracks[ti].id, di, v, stage});
        row_done[ti] = 1;
        col_done[di] = 1;
    }
}

}  // namespace detail

/// measurement_noise[j] is the R used for detection j.
inline AssociationResult associate(std::span<const AssocTrack> tracks, std::span<const Detection> detections,
                                   std::span<const Mat4> measurement_noise, const AssociationConfig& cfg,
                                   const Vec3& sensor_origin) {
    cfg.validate();
    if (measurement_noise.size() != detections.size()) {
        throw InvalidArgument("associate: one measurement covariance per detection required");
    }
    const auto nt = static_cast<Eigen::Index>(tracks.size());
    const auto nd = static_cast<Eigen::Index>(detections.size());
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();

    Eigen::MatrixXd dm = Eigen::MatrixXd::Constant(nt, nd, nan);
    for (Eigen::Index i = 0; i < nt; ++i) {
        const auto& t = tracks[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < nd; ++j) {
            try {
                dm(i, j) = mahalanobis(detections[static_cast<std::size_t>(j)], t.predicted.pose(),
                                       t.pose_cov + measurement_noise[static_cast<std::size_t>(j)]);
            } catch (const NumericalError&) {
                // singular pairs are treated as gated out
            }
        }
    }

    AssociationResult result;
    std::vector<char> track_done(tracks.size(), 0), det_done(detections.size(), 0);
    std::vector<std::size_t> all_t(tracks.size()), all_d(detections.size());
    for (std::size_t i = 0; i < all_t.size(); ++i) all_t[i] = i;
    for (std::size_t j = 0; j < all_d.size(); ++j) all_d[j] = j;
    detail::solve_gated(dm, all_t, all_d, cfg.gate1, 1, result.matches, track_done, det_done, tracks);

    if (cfg.two_stage) {
        std::vector<std::size_t> left_t, left_d;
        for (std::size_t i = 0; i < tracks.size(); ++i)
            if (!track_done[i]) left_t.push_back(i);
        for (std::size_t j = 0; j < detections.size(); ++j)
            if (!det_done[j]) left_d.push_back(j);
        if (!left_t.empty() && !left_d.empty()) {
            Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(nt, nd, nan);
            for (std::size_t i : left_t) {
                double radial = nan;
                try {
                    radial = radial_velocity(tracks[i].predicted, sensor_origin);
                } catch (const GeometryError&) {
                    continue;
                }
                for (std::size_t j : left_d) {
                    const double d = dm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    if (!std::isfinite(d)) continue;
                    const double ar = velocity_affinity(detections[j].doppler, radial, cfg.sigma_v);
                    cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = combined_cost(d, ar, cfg);
                }
            }
            detail::solve_gated(cost, left_t, left_d, cfg.gate2, 2, result.matches, track_done, det_done, tracks);
        }
    }

    for (std::size_t i = 0; i < tracks.size(); ++i)
        if (!track_done[i]) result.unmatched_tracks.push_back(tracks[i].id);
    for (std::size_t j = 0; j < detections.size(); ++j)
        if (!det_done[j]) result.unmatched_detections.push_back(j);
    return result;
}

}  // namespace radtrack
