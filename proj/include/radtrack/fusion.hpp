#pragma once

// Monte-Carlo detection fusion: N_D stochastic detector passes per frame are
// clustered by BEV IoU, averaged, and summarized by their spread. Also hosts
// the heteroscedastic (loss-attenuated) regression objective reused to train
// the motion predictor.

#include "radtrack/core.hpp"

#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

namespace radtrack {

/// Detections from N_D stochastic forward passes over one frame.
struct SampleSet {
    int frame = 0;
    double timestamp = 0.0;
    std::vector<std::vector<Detection>> passes;

    int n_d() const { return static_cast<int>(passes.size()); }

    void validate() const {
        if (passes.empty()) throw InvalidArgument("SampleSet: n_d must be >= 1");
        for (const auto& pass : passes) {
            for (const auto& d : pass) d.validate();
        }
    }
};

struct Cluster {
    std::vector<std::pair<int, Detection>> members;  // (pass index, detection)
    Detection fused;

    int support() const {
        std::set<int> passes;
        for (const auto& m : members) passes.insert(m.first);
        return static_cast<int>(passes.size());
    }
};

struct FusionConfig {
    double tau_iou = 0.3;
    double min_support = 0.3;      // fraction of passes
    bool drop_low_support = true;
};

/// Mean member confidence scaled by the fraction of passes that saw the cluster.
inline double fuse_confidence(const Cluster& cluster, int n_d) {
    if (cluster.members.empty()) throw InvalidArgument("fuse_confidence: empty cluster");
    if (n_d < 1) throw InvalidArgument("fuse_confidence: n_d must be >= 1");
    double sum = 0.0;
    for (const auto& m : cluster.members) sum += m.second.confidence;
    const double mean = sum / static_cast<double>(cluster.members.size());
    const double ratio = static_cast<double>(cluster.support()) / static_cast<double>(n_d);
    return std::clamp(mean * std::min(ratio, 1.0), 0.0, 1.0);
}

/// Averages member boxes (yaw circularly) and records the population standard
/// deviation of each box parameter. Confidence is left to the caller.
inline Detection average_members(const std::vector<std::pair<int, Detection>>& members) {
    if (members.empty()) throw InvalidArgument("average_members: empty cluster");
    const std::size_t n = members.size();
    std::array<std::vector<double>, 7> cols;
    std::vector<double> dopplers;
    for (auto& c : cols) c.reserve(n);
    for (const auto& [pass, det] : members) {
        const auto p = det.box.params();
        for (std::size_t k = 0; k < 7; ++k) cols[k].push_back(p[k]);
        dopplers.push_back(det.doppler);
    }
    std::array<double, 7> mean{};
    for (std::size_t k = 0; k < 6; ++k) mean[k] = stable_mean(cols[k]);
    mean[6] = circular_mean(cols[6]);

    Detection out;
    out.box = Box3D(mean[0], mean[1], mean[2], mean[3], mean[4], mean[5], mean[6]);
    out.doppler = stable_mean(dopplers);
    for (std::size_t k = 0; k < 7; ++k) {
        double ss = 0.0;
        for (double v : cols[k]) {
            const double d = (k == 6) ? yaw_normalize(v - mean[k]) : v - mean[k];
            ss += d * d;
        }
        out.box_std[k] = std::sqrt(ss / static_cast<double>(n));
    }
    out.confidence = 0.0;
    return out;
}

/// Greedy IoU agglomeration across passes. Passes are visited in order; within
/// a pass, (box, cluster) pairs with IoU >= tau_iou against the cluster's
/// running-mean box are accepted in descending IoU order, one box per cluster.
/// Boxes left over seed new clusters.
inline std::vector<Cluster> cluster_samples(const SampleSet& set, double tau_iou) {
    if (!(tau_iou > 0.0 && tau_iou <= 1.0)) throw InvalidArgument("cluster_samples: tau_iou must be in (0, 1]");
    set.validate();
    std::vector<Cluster> clusters;
    std::vector<Box3D> means;

    for (int p = 0; p < set.n_d(); ++p) {
        const auto& pass = set.passes[static_cast<std::size_t>(p)];
        std::vector<std::tuple<double, std::size_t, std::size_t>> cand;  // (iou, box, cluster)
        for (std::size_t b = 0; b < pass.size(); ++b) {
            for (std::size_t c = 0; c < clusters.size(); ++c) {
                const double iou = bev_iou(pass[b].box, means[c]);
                if (iou >= tau_iou) cand.emplace_back(iou, b, c);
            }
        }
        std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
            if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
            if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
            return std::get<2>(a) < std::get<2>(b);
        });
        std::vector<bool> box_used(pass.size(), false);
        std::vector<bool> cluster_used(clusters.size(), false);
        std::vector<std::size_t> touched;
        for (const auto& [iou, b, c] : cand) {
            if (box_used[b] || cluster_used[c]) continue;
            box_used[b] = true;
            cluster_used[c] = true;
            clusters[c].members.emplace_back(p, pass[b]);
            touched.push_back(c);
        }
        for (std::size_t c : touched) means[c] = average_members(clusters[c].members).box;
        for (std::size_t b = 0; b < pass.size(); ++b) {
            if (box_used[b]) continue;
            Cluster fresh;
            fresh.members.emplace_back(p, pass[b]);
            clusters.push_back(std::move(fresh));
            means.push_back(pass[b].box);
        }
    }

    for (auto& c : clusters) {
        c.fused = average_members(c.members);
        c.fused.confidence = fuse_confidence(c, set.n_d());
    }
    return clusters;
}

/// Clusters a frame's samples and returns the fused detections, optionally
/// dropping clusters seen by fewer than min_support of the passes.
inline std::vector<Detection> fuse_frame(const SampleSet& set, const FusionConfig& cfg = {}) {
    std::vector<Detection> out;
    for (const auto& c : cluster_samples(set, cfg.tau_iou)) {
        const double support = static_cast<double>(c.support()) / static_cast<double>(set.n_d());
        if (cfg.drop_low_support && support < cfg.min_support) continue;
        out.push_back(c.fused);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss attenuation
// ---------------------------------------------------------------------------

/// Mean over entries of r^2 / (2 sigma^2) + log(sigma^2) / 2, with the
/// variance supplied as log sigma^2.
inline double attenuated_loss(std::span<const double> residuals, std::span<const double> log_vars) {
    if (residuals.empty() || residuals.size() != log_vars.size()) {
        throw InvalidArgument("attenuated_loss: residuals and log_vars must be non-empty and equal length");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        const double r = residuals[i];
        acc += 0.5 * r * r * std::exp(-log_vars[i]) + 0.5 * log_vars[i];
    }
    return acc / static_cast<double>(residuals.size());
}

struct LossGradient {
    std::vector<double> d_residual;
    std::vector<double> d_log_var;
};

inline LossGradient attenuated_loss_grad(std::span<const double> residuals, std::span<const double> log_vars) {
    if (residuals.empty() || residuals.size() != log_vars.size()) {
        throw InvalidArgument("attenuated_loss_grad: residuals and log_vars must be non-empty and equal length");
    }
    const double inv_n = 1.0 / static_cast<double>(residuals.size());
    LossGradient g;
    g.d_residual.resize(residuals.size());
    g.d_log_var.resize(residuals.size());
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        const double r = residuals[i];
        const double inv_var = std::exp(-log_vars[i]);
        g.d_residual[i] = inv_n * r * inv_var;
        g.d_log_var[i] = inv_n * (0.5 - 0.5 * r * r * inv_var);
    }
    return g;
}

}  // namespace radtrack
