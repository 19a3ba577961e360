#pragma once

// 3D-MOT evaluation: per-frame greedy matching with identity bookkeeping,
// and recall-swept MOTAR averaging (AMOTA) plus matched-distance averaging
// (AMOTP) over a score-threshold sweep.

#include "radtrack/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <tuple>
#include <vector>

namespace radtrack {

struct EvalPrediction {
    int id = -1;
    double x = 0.0, y = 0.0;
    double score = 1.0;
};

struct EvalObject {
    int id = -1;
    double x = 0.0, y = 0.0;
};

struct EvalFrame {
    std::vector<EvalPrediction> predictions;
    std::vector<EvalObject> ground_truth;
};

using EvalSequence = std::vector<EvalFrame>;

struct FrameTally {
    int tp = 0, fp = 0, fn = 0, ids = 0;
    double distance_sum = 0.0;
    std::vector<std::pair<int, int>> pairs;  // (track id, gt id)
};

/// Remembers, per ground-truth id, the track id it was last matched to.
using IdentityBook = std::map<int, int>;

/// Greedy one-to-one matching by ascending BEV center distance, ties broken
/// by lower track id then lower gt id. Pairs beyond dist_threshold are not
/// accepted.
inline FrameTally match_frame(std::span<const EvalPrediction> predictions, std::span<const EvalObject> ground_truth,
                              double dist_threshold, IdentityBook& identities) {
    std::vector<std::tuple<double, int, int, std::size_t, std::size_t>> pairs;
    for (std::size_t p = 0; p < predictions.size(); ++p) {
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            const double d = std::hypot(predictions[p].x - ground_truth[g].x, predictions[p].y - ground_truth[g].y);
            if (d <= dist_threshold) pairs.emplace_back(d, predictions[p].id, ground_truth[g].id, p, g);
        }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<char> pred_used(predictions.size(), 0), gt_used(ground_truth.size(), 0);
    FrameTally tally;
    for (const auto& [d, track_id, gt_id, p, g] : pairs) {
        if (pred_used[p] || gt_used[g]) continue;
        pred_used[p] = 1;
        gt_used[g] = 1;
        ++tally.tp;
        tally.distance_sum += d;
        tally.pairs.emplace_back(track_id, gt_id);
        auto it = identities.find(gt_id);
        if (it != identities.end() && it->second != track_id) ++tally.ids;
        identities[gt_id] = track_id;
    }
    for (char u : pred_used) tally.fp += u ? 0 : 1;
    for (char u : gt_used) tally.fn += u ? 0 : 1;
    return tally;
}

struct EvalConfig {
    int recall_points = 40;
    double dist_threshold = 2.0;
    std::size_t max_thresholds = 400;  // score thresholds evaluated (quantiles beyond this)
};

struct ThresholdRow {
    double recall_target = 0.0;
    bool achieved = false;
    double recall = 0.0;
    double threshold = 0.0;
    int tp = 0, fp = 0, fn = 0, ids = 0;
    double motar = 0.0;
    double motp = 0.0;
};

struct MetricsReport {
    double amota = 0.0;
    double amotp = 0.0;
    int gt_count = 0;
    std::vector<ThresholdRow> rows;
    // Tallies at the operating point with the highest MOTAR.
    int tp = 0, fp = 0, fn = 0, ids = 0;
};

struct SweepTally {
    int tp = 0, fp = 0, fn = 0, ids = 0;
    double distance_sum = 0.0;
};

/// Tallies over all sequences keeping predictions with score >= threshold.
inline SweepTally tally_at(std::span<const EvalSequence> sequences, double threshold, double dist_threshold) {
    SweepTally t;
    std::vector<EvalPrediction> kept;
    for (const auto& seq : sequences) {
        IdentityBook book;
        for (const auto& frame : seq) {
            kept.clear();
            for (const auto& p : frame.predictions)
                if (p.score >= threshold) kept.push_back(p);
            const FrameTally ft = match_frame(kept, frame.ground_truth, dist_threshold, book);
            t.tp += ft.tp;
            t.fp += ft.fp;
            t.fn += ft.fn;
            t.ids += ft.ids;
            t.distance_sum += ft.distance_sum;
        }
    }
    return t;
}

/// MOTAR with the recall-adjusted normalisation, floored at 0. With recall
/// the achieved TP / P, FN cancels against (1 - recall) P and the value is
/// 1 - (IDS + FP) / TP, so it never exceeds 1; the upper clamp only removes
/// rounding left over from that cancellation.
inline double motar(int ids, int fp, int fn, double recall, int gt_count) {
    const double p = static_cast<double>(gt_count);
    const double v = 1.0 - (static_cast<double>(ids + fp + fn) - (1.0 - recall) * p) / (recall * p);
    return std::clamp(v, 0.0, 1.0);
}

inline MetricsReport evaluate_amota(std::span<const EvalSequence> sequences, const EvalConfig& cfg = {}) {
    if (cfg.recall_points < 1) throw InvalidArgument("amota: recall_points must be >= 1");
    int gt_count = 0;
    std::vector<double> scores;
    for (const auto& seq : sequences) {
        for (const auto& f : seq) {
            gt_count += static_cast<int>(f.ground_truth.size());
            for (const auto& p : f.predictions) scores.push_back(p.score);
        }
    }
    if (gt_count == 0) throw InvalidArgument("amota: no ground-truth objects");

    std::sort(scores.begin(), scores.end(), std::greater<>());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    if (cfg.max_thresholds > 1 && scores.size() > cfg.max_thresholds) {
        std::vector<double> sub;
        const std::size_t n = scores.size();
        for (std::size_t i = 0; i < cfg.max_thresholds; ++i) sub.push_back(scores[i * (n - 1) / (cfg.max_thresholds - 1)]);
        sub.erase(std::unique(sub.begin(), sub.end()), sub.end());
        scores.swap(sub);
    }

    struct Candidate {
        double threshold;
        SweepTally tally;
        double recall;
    };
    std::vector<Candidate> cands;  // descending threshold
    for (double s : scores) {
        const SweepTally t = tally_at(sequences, s, cfg.dist_threshold);
        cands.push_back({s, t, static_cast<double>(t.tp) / gt_count});
    }

    MetricsReport rep;
    rep.gt_count = gt_count;
    double motar_sum = 0.0, motp_sum = 0.0;
    for (int i = 1; i <= cfg.recall_points; ++i) {
        const double r = static_cast<double>(i) / cfg.recall_points;
        const Candidate* best = nullptr;
        for (const auto& c : cands) {
            if (c.recall < r) continue;
            if (best == nullptr || c.recall < best->recall) best = &c;
        }
        ThresholdRow row;
        row.recall_target = r;
        if (best != nullptr) {
            row.achieved = true;
            row.recall = best->recall;
            row.threshold = best->threshold;
            row.tp = best->tally.tp;
            row.fp = best->tally.fp;
            row.fn = best->tally.fn;
            row.ids = best->tally.ids;
            row.motar = motar(row.ids, row.fp, row.fn, row.recall, gt_count);
            row.motp = row.tp > 0 ? best->tally.distance_sum / row.tp : cfg.dist_threshold;
        } else {
            // Unreachable recall: report the highest-recall operating point, MOTAR 0.
            row.fn = gt_count;
            if (!cands.empty()) {
                const auto& c = cands.back();
                row.recall = c.recall;
                row.threshold = c.threshold;
                row.tp = c.tally.tp;
                row.fp = c.tally.fp;
                row.fn = c.tally.fn;
                row.ids = c.tally.ids;
            }
            row.motar = 0.0;
            row.motp = cfg.dist_threshold;
        }
        motar_sum += row.motar;
        motp_sum += row.motp;
        rep.rows.push_back(row);
    }
    rep.amota = motar_sum / cfg.recall_points;
    rep.amotp = motp_sum / cfg.recall_points;

    const ThresholdRow* op = nullptr;
    for (const auto& row : rep.rows) {
        if (op == nullptr || row.motar > op->motar) op = &row;
    }
    rep.tp = op->tp;
    rep.fp = op->fp;
    rep.fn = op->fn;
    rep.ids = op->ids;
    return rep;
}

}  // namespace radtrack
