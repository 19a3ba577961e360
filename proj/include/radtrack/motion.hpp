#pragma once

// Motion prediction: the constant-velocity baseline and a small single-head
// self-attention predictor sampled with Monte-Carlo dropout. The predictor is
// trained with the loss-attenuated objective from fusion.hpp using an
// explicit backward pass and SGD with momentum.

#include "radtrack/core.hpp"
#include "radtrack/fusion.hpp"
#include "radtrack/random.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace radtrack {

/// Past poses [x, y, z, yaw] of one object, oldest first, bounded by horizon.
struct History {
    int horizon = 3;
    std::vector<double> timestamps;
    std::vector<Vec4> poses;

    History() = default;
    explicit History(int n) : horizon(n) {
        if (n < 1) throw InvalidArgument("History: horizon must be >= 1");
    }

    std::size_t size() const { return poses.size(); }
    bool empty() const { return poses.empty(); }
    const Vec4& last() const { return poses.back(); }

    void push(double t, const Vec4& pose) {
        if (!timestamps.empty() && !(t > timestamps.back())) {
            throw InvalidArgument("History: timestamps must be strictly increasing");
        }
        timestamps.push_back(t);
        poses.push_back(pose);
        while (static_cast<int>(poses.size()) > horizon) {
            poses.erase(poses.begin());
            timestamps.erase(timestamps.begin());
        }
    }

    void validate() const {
        if (poses.empty()) throw InvalidArgument("History: empty");
        if (static_cast<int>(poses.size()) > horizon) throw InvalidArgument("History: longer than horizon");
        if (timestamps.size() != poses.size()) throw InvalidArgument("History: timestamp/pose size mismatch");
        for (std::size_t i = 1; i < timestamps.size(); ++i) {
            if (!(timestamps[i] > timestamps[i - 1])) {
                throw InvalidArgument("History: timestamps must be strictly increasing");
            }
        }
    }
};

/// Mean and diagonal variance of the next pose, plus the samples they came from.
struct PredictionDistribution {
    Vec4 mean = Vec4::Zero();
    Vec4 variance = Vec4::Zero();
    std::vector<Vec4> samples;
    Vec4 aleatoric = Vec4::Zero();  // mean of exp(log-variance head) over samples
};

inline KinematicState cv_predict(const KinematicState& s, double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("cv_predict: dt must be positive");
    KinematicState out = s;
    out.x += s.vx * dt;
    out.y += s.vy * dt;
    out.z += s.vz * dt;
    return out;
}

/// Population mean and variance of pose samples. Yaw is averaged circularly
/// and its deviations are wrapped before squaring.
inline PredictionDistribution summarize_samples(std::vector<Vec4> samples) {
    if (samples.empty()) throw InvalidArgument("summarize_samples: no samples");
    PredictionDistribution out;
    const double n = static_cast<double>(samples.size());
    for (int k = 0; k < 4; ++k) {
        std::vector<double> col;
        col.reserve(samples.size());
        for (const auto& s : samples) col.push_back(s(k));
        out.mean(k) = (k == 3) ? circular_mean(col) : stable_mean(col);
        double ss = 0.0;
        for (double v : col) {
            const double d = (k == 3) ? yaw_normalize(v - out.mean(k)) : v - out.mean(k);
            ss += d * d;
        }
        out.variance(k) = ss / n;
    }
    out.samples = std::move(samples);
    return out;
}

// ---------------------------------------------------------------------------
// Attention predictor
// ---------------------------------------------------------------------------

/// All trainable tensors. Biases are stored as 1 x k rows.
struct PredictorWeights {
    static constexpr std::size_t kCount = 14;
    static constexpr std::array<const char*, kCount> kNames{"embed_w", "embed_b", "pos", "wq", "wk",
                                                           "wv",      "wo",      "bo",  "w1", "b1",
                                                           "w2",      "b2",      "head_w", "head_b"};

    Eigen::MatrixXd embed_w, embed_b, pos, wq, wk, wv, wo, bo, w1, b1, w2, b2, head_w, head_b;

    std::array<Eigen::MatrixXd*, kCount> tensors() {
        return {&embed_w, &embed_b, &pos, &wq, &wk, &wv, &wo, &bo, &w1, &b1, &w2, &b2, &head_w, &head_b};
    }
    std::array<const Eigen::MatrixXd*, kCount> tensors() const {
        return {&embed_w, &embed_b, &pos, &wq, &wk, &wv, &wo, &bo, &w1, &b1, &w2, &b2, &head_w, &head_b};
    }

    /// Same shapes, all zeros.
    PredictorWeights zeros_like() const {
        PredictorWeights z;
        auto dst = z.tensors();
        auto src = tensors();
        for (std::size_t i = 0; i < kCount; ++i) *dst[i] = Eigen::MatrixXd::Zero(src[i]->rows(), src[i]->cols());
        return z;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* t : tensors()) n += static_cast<std::size_t>(t->size());
        return n;
    }

    bool all_finite() const {
        for (const auto* t : tensors()) {
            if (!t->allFinite()) return false;
        }
        return true;
    }
};

/// Pose-delta embedding, one single-head self-attention block, one
/// feed-forward block, mean pooling over valid tokens, and a linear head that
/// emits 4 pose deltas followed by 4 log-variances.
struct PredictorModel {
    static constexpr int kPoseDim = 4;
    static constexpr int kOutputDim = 8;

    int horizon = 3;
    int d_model = 32;
    int d_ff = 64;
    double dropout_rate = 0.1;
    double step_dt = 0.1;                    // frame period the model was trained on
    Vec4 input_scale{2.0, 2.0, 0.2, 0.1};    // divides local-frame deltas
    PredictorWeights weights;

    void validate() const {
        if (horizon < 1 || d_model < 1 || d_ff < 1) throw InvalidArgument("PredictorModel: bad dimensions");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
            throw InvalidArgument("PredictorModel: dropout_rate must be in [0, 1)");
        }
        if (!(step_dt > 0.0)) throw InvalidArgument("PredictorModel: step_dt must be positive");
        if (!(input_scale.array() > 0.0).all()) throw InvalidArgument("PredictorModel: input_scale must be positive");
        const auto& w = weights;
        const bool shapes_ok = w.embed_w.rows() == kPoseDim && w.embed_w.cols() == d_model &&
                               w.embed_b.rows() == 1 && w.embed_b.cols() == d_model && w.pos.rows() == horizon &&
                               w.pos.cols() == d_model && w.wq.rows() == d_model && w.wq.cols() == d_model &&
                               w.wk.rows() == d_model && w.wk.cols() == d_model && w.wv.rows() == d_model &&
                               w.wv.cols() == d_model && w.wo.rows() == d_model && w.wo.cols() == d_model &&
                               w.bo.rows() == 1 && w.bo.cols() == d_model && w.w1.rows() == d_model &&
                               w.w1.cols() == d_ff && w.b1.rows() == 1 && w.b1.cols() == d_ff &&
                               w.w2.rows() == d_ff && w.w2.cols() == d_model && w.b2.rows() == 1 &&
                               w.b2.cols() == d_model && w.head_w.rows() == d_model &&
                               w.head_w.cols() == kOutputDim && w.head_b.rows() == 1 &&
                               w.head_b.cols() == kOutputDim;
        if (!shapes_ok) throw InvalidArgument("PredictorModel: tensor shapes do not match hyper-parameters");
        if (!w.all_finite()) throw InvalidArgument("PredictorModel: non-finite weights");
    }

    /// Xavier-uniform initialisation; biases zero.
    static PredictorModel initialize(int horizon, int d_model, int d_ff, double dropout_rate, std::uint64_t seed) {
        PredictorModel m;
        m.horizon = horizon;
        m.d_model = d_model;
        m.d_ff = d_ff;
        m.dropout_rate = dropout_rate;
        SplitMix64 rng(seed);
        auto xavier = [&rng](int rows, int cols, double gain = 1.0) {
            const double limit = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
            Eigen::MatrixXd out(rows, cols);
            for (Eigen::Index j = 0; j < out.cols(); ++j)
                for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = limit * (2.0 * rng.uniform() - 1.0);
            return out;
        };
        auto& w = m.weights;
        w.embed_w = xavier(kPoseDim, d_model);
        w.embed_b = Eigen::MatrixXd::Zero(1, d_model);
        w.pos = xavier(horizon, d_model, 0.1);
        w.wq = xavier(d_model, d_model);
        w.wk = xavier(d_model, d_model);
        w.wv = xavier(d_model, d_model);
        w.wo = xavier(d_model, d_model);
        w.bo = Eigen::MatrixXd::Zero(1, d_model);
        w.w1 = xavier(d_model, d_ff);
        w.b1 = Eigen::MatrixXd::Zero(1, d_ff);
        w.w2 = xavier(d_ff, d_model);
        w.b2 = Eigen::MatrixXd::Zero(1, d_model);
        w.head_w = xavier(d_model, kOutputDim, 0.1);
        w.head_b = Eigen::MatrixXd::Zero(1, kOutputDim);
        m.validate();
        return m;
    }
};

/// Tokens for one history: local-frame deltas relative to the last pose,
/// front-padded to the model horizon with the oldest pose.
struct EncodedHistory {
    Eigen::MatrixXd tokens;   // horizon x 4, scaled
    std::vector<char> valid;  // key / pooling mask
    Vec4 reference = Vec4::Zero();
};

namespace detail {

inline Vec4 to_local(const Vec4& pose, const Vec4& ref) {
    const double c = std::cos(ref(3)), s = std::sin(ref(3));
    const double dx = pose(0) - ref(0), dy = pose(1) - ref(1);
    return {c * dx + s * dy, -s * dx + c * dy, pose(2) - ref(2), yaw_normalize(pose(3) - ref(3))};
}

inline Vec4 from_local(const Vec4& delta, const Vec4& ref) {
    const double c = std::cos(ref(3)), s = std::sin(ref(3));
    return {ref(0) + c * delta(0) - s * delta(1), ref(1) + s * delta(0) + c * delta(1), ref(2) + delta(2),
            yaw_normalize(ref(3) + delta(3))};
}

}  // namespace detail

inline EncodedHistory encode_history(const PredictorModel& model, const History& history) {
    if (history.empty()) throw InvalidArgument("predictor: empty history");
    const int t_len = model.horizon;
    const std::size_t n = history.size();
    const std::size_t used = std::min<std::size_t>(n, static_cast<std::size_t>(t_len));
    const std::size_t first = n - used;
    EncodedHistory enc;
    enc.reference = history.poses.back();
    enc.tokens.resize(t_len, 4);
    enc.valid.assign(static_cast<std::size_t>(t_len), 0);
    const std::size_t pad = static_cast<std::size_t>(t_len) - used;
    for (std::size_t row = 0; row < static_cast<std::size_t>(t_len); ++row) {
        const std::size_t src = row < pad ? first : first + (row - pad);
        const Vec4 local = detail::to_local(history.poses[src], enc.reference);
        enc.tokens.row(static_cast<Eigen::Index>(row)) = local.cwiseQuotient(model.input_scale).transpose();
        enc.valid[row] = row >= pad ? 1 : 0;
    }
    return enc;
}

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
    Eigen::MatrixXd x, h0, q, k, v, a, c, o, m1, h1, z1, f, m2, h2;
    Eigen::RowVectorXd pool;
    std::vector<char> valid;
    int n_valid = 0;
};

using NetworkOutput = Eigen::Matrix<double, 8, 1>;

namespace detail {

inline Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, SplitMix64* rng) {
    if (rng == nullptr || rate <= 0.0) return Eigen::MatrixXd::Ones(rows, cols);
    Eigen::MatrixXd m(rows, cols);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng->uniform() < rate ? 0.0 : keep_scale;
    return m;
}

}  // namespace detail

/// Raw network pass over encoded tokens. Dropout is active iff rng is non-null.
inline NetworkOutput network_forward(const PredictorModel& model, const Eigen::MatrixXd& x,
                                     const std::vector<char>& valid, SplitMix64* rng, ForwardCache* cache = nullptr) {
    const auto& w = model.weights;
    const Eigen::Index t_len = x.rows();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(model.d_model));
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(t_len);

    Eigen::MatrixXd h0 = x * w.embed_w + ones * w.embed_b + w.pos.topRows(t_len);
    Eigen::MatrixXd q = h0 * w.wq;
    Eigen::MatrixXd k = h0 * w.wk;
    Eigen::MatrixXd v = h0 * w.wv;
    Eigen::MatrixXd scores = (q * k.transpose()) * inv_sqrt_d;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(t_len, t_len);
    for (Eigen::Index i = 0; i < t_len; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < t_len; ++j)
            if (valid[static_cast<std::size_t>(j)]) mx = std::max(mx, scores(i, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j < t_len; ++j) {
            if (!valid[static_cast<std::size_t>(j)]) continue;
            a(i, j) = std::exp(scores(i, j) - mx);
            z += a(i, j);
        }
        a.row(i) /= z;
    }
    Eigen::MatrixXd c = a * v;
    Eigen::MatrixXd o = c * w.wo + ones * w.bo;
    Eigen::MatrixXd m1 = detail::dropout_mask(t_len, model.d_model, model.dropout_rate, rng);
    Eigen::MatrixXd h1 = h0 + o.cwiseProduct(m1);
    Eigen::MatrixXd z1 = h1 * w.w1 + ones * w.b1;
    Eigen::MatrixXd f = z1.cwiseMax(0.0);
    Eigen::MatrixXd m2 = detail::dropout_mask(t_len, model.d_ff, model.dropout_rate, rng);
    Eigen::MatrixXd h2 = h1 + f.cwiseProduct(m2) * w.w2 + ones * w.b2;

    Eigen::RowVectorXd pool = Eigen::RowVectorXd::Zero(model.d_model);
    int n_valid = 0;
    for (Eigen::Index i = 0; i < t_len; ++i) {
        if (!valid[static_cast<std::size_t>(i)]) continue;
        pool += h2.row(i);
        ++n_valid;
    }
    pool /= static_cast<double>(n_valid);
    const NetworkOutput out = (pool * w.head_w + w.head_b).transpose();

    if (cache != nullptr) {
        cache->x = x;
        cache->h0 = std::move(h0);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->a = std::move(a);
        cache->c = std::move(c);
        cache->o = std::move(o);
        cache->m1 = std::move(m1);
        cache->h1 = std::move(h1);
        cache->z1 = std::move(z1);
        cache->f = std::move(f);
        cache->m2 = std::move(m2);
        cache->h2 = std::move(h2);
        cache->pool = std::move(pool);
        cache->valid = valid;
        cache->n_valid = n_valid;
    }
    return out;
}

/// Accumulates dL/dweights into grad given dL/dout for one cached pass.
inline void network_backward(const PredictorModel& model, const ForwardCache& fc, const NetworkOutput& d_out,
                             PredictorWeights& grad) {
    const auto& w = model.weights;
    const Eigen::Index t_len = fc.x.rows();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(model.d_model));
    const Eigen::RowVectorXd dout = d_out.transpose();

    grad.head_w += fc.pool.transpose() * dout;
    grad.head_b += dout;
    const Eigen::RowVectorXd dpool = dout * w.head_w.transpose();

    Eigen::MatrixXd dh2 = Eigen::MatrixXd::Zero(t_len, model.d_model);
    for (Eigen::Index i = 0; i < t_len; ++i)
        if (fc.valid[static_cast<std::size_t>(i)]) dh2.row(i) = dpool / static_cast<double>(fc.n_valid);

    // h2 = h1 + (f * m2) w2 + b2
    const Eigen::MatrixXd fd = fc.f.cwiseProduct(fc.m2);
    grad.w2 += fd.transpose() * dh2;
    grad.b2 += dh2.colwise().sum();
    const Eigen::MatrixXd dfd = dh2 * w.w2.transpose();
    const Eigen::MatrixXd relu_gate = (fc.z1.array() > 0.0).cast<double>().matrix();
    const Eigen::MatrixXd dz1 = dfd.cwiseProduct(fc.m2).cwiseProduct(relu_gate);
    grad.w1 += fc.h1.transpose() * dz1;
    grad.b1 += dz1.colwise().sum();
    const Eigen::MatrixXd dh1 = dh2 + dz1 * w.w1.transpose();

    // h1 = h0 + (c wo + bo) * m1
    const Eigen::MatrixXd d_o = dh1.cwiseProduct(fc.m1);
    grad.wo += fc.c.transpose() * d_o;
    grad.bo += d_o.colwise().sum();
    const Eigen::MatrixXd dc = d_o * w.wo.transpose();
    const Eigen::MatrixXd da = dc * fc.v.transpose();
    const Eigen::MatrixXd dv = fc.a.transpose() * dc;

    Eigen::MatrixXd ds(t_len, t_len);
    for (Eigen::Index i = 0; i < t_len; ++i) {
        const double dot = fc.a.row(i).dot(da.row(i));
        for (Eigen::Index j = 0; j < t_len; ++j) ds(i, j) = fc.a(i, j) * (da(i, j) - dot);
    }
    const Eigen::MatrixXd dq = ds * fc.k * inv_sqrt_d;
    const Eigen::MatrixXd dk = ds.transpose() * fc.q * inv_sqrt_d;
    grad.wq += fc.h0.transpose() * dq;
    grad.wk += fc.h0.transpose() * dk;
    grad.wv += fc.h0.transpose() * dv;
    const Eigen::MatrixXd dh0 = dh1 + dq * w.wq.transpose() + dk * w.wk.transpose() + dv * w.wv.transpose();

    grad.embed_w += fc.x.transpose() * dh0;
    grad.embed_b += dh0.colwise().sum();
    grad.pos.topRows(t_len) += dh0;
}

struct PredictorOutput {
    Vec4 pose = Vec4::Zero();           // absolute predicted pose
    Vec4 log_var = Vec4::Zero();        // log-variance head, local frame
    Vec4 delta = Vec4::Zero();          // predicted local-frame delta (unscaled by dt)
};

/// One pass of the predictor. Without a seed dropout is disabled and the pass
/// is deterministic. dt rescales the one-step delta linearly relative to the
/// model's training frame period.
inline PredictorOutput predictor_forward(const PredictorModel& model, const History& history,
                                         std::optional<std::uint64_t> dropout_seed = std::nullopt,
                                         std::optional<double> dt = std::nullopt) {
    if (history.empty()) throw InvalidArgument("predictor_forward: empty history");
    const EncodedHistory enc = encode_history(model, history);
    std::optional<SplitMix64> rng;
    if (dropout_seed) rng.emplace(*dropout_seed);
    const NetworkOutput out = network_forward(model, enc.tokens, enc.valid, rng ? &*rng : nullptr);
    PredictorOutput res;
    res.delta = out.head<4>();
    res.log_var = out.tail<4>();
    const double ratio = dt ? (*dt / model.step_dt) : 1.0;
    if (!(ratio > 0.0)) throw InvalidArgument("predictor_forward: dt must be positive");
    res.pose = detail::from_local(res.delta * ratio, enc.reference);
    return res;
}

/// N_P dropout-enabled passes summarised by mean and population variance.
inline PredictionDistribution mc_predict(const PredictorModel& model, const History& history, int n_p,
                                         std::uint64_t rng_seed, std::optional<double> dt = std::nullopt) {
    if (n_p < 1) throw InvalidArgument("mc_predict: n_p must be >= 1");
    std::vector<Vec4> samples;
    samples.reserve(static_cast<std::size_t>(n_p));
    Vec4 aleatoric = Vec4::Zero();
    for (int i = 0; i < n_p; ++i) {
        const auto out = predictor_forward(model, history, derive_seed(rng_seed, static_cast<std::uint64_t>(i)), dt);
        samples.push_back(out.pose);
        aleatoric += out.log_var.array().exp().matrix();
    }
    auto dist = summarize_samples(std::move(samples));
    dist.aleatoric = aleatoric / static_cast<double>(n_p);
    return dist;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainingSample {
    History history;
    Vec4 target = Vec4::Zero();  // absolute pose one frame after history.last()
};

struct TrainConfig {
    int epochs = 30;
    double learning_rate = 1e-2;
    double momentum = 0.9;
    int batch_size = 32;
    std::uint64_t seed = 1;
    int horizon = 3;
    int d_model = 32;
    int d_ff = 64;
    double dropout_rate = 0.1;
    double step_dt = 0.1;
    double grad_clip = 5.0;  // global gradient-norm clip, <= 0 disables
};

struct TrainResult {
    PredictorModel model;
    std::vector<double> epoch_loss;  // [0] = before training, then one per epoch
    double best_loss = 0.0;
};

class TrainingError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Per-sample residuals (target - predicted local delta) and log-variances.
struct SampleTerms {
    Vec4 residual;
    Vec4 log_var;
};

inline SampleTerms sample_terms(const PredictorModel& model, const TrainingSample& s, SplitMix64* rng,
                                ForwardCache* cache) {
    const EncodedHistory enc = encode_history(model, s.history);
    const NetworkOutput out = network_forward(model, enc.tokens, enc.valid, rng, cache);
    const Vec4 target_delta = detail::to_local(s.target, enc.reference);
    SampleTerms t;
    t.residual = target_delta - out.head<4>();
    t.residual(3) = yaw_normalize(t.residual(3));
    t.log_var = out.tail<4>();
    return t;
}

/// Attenuated loss over a set of samples with all per-component terms
/// flattened (N = 4 * samples).
inline double dataset_loss(const PredictorModel& model, std::span<const TrainingSample> data,
                           std::span<const std::size_t> indices, SplitMix64* rng = nullptr) {
    std::vector<double> r, lv;
    r.reserve(indices.size() * 4);
    lv.reserve(indices.size() * 4);
    for (std::size_t idx : indices) {
        const auto t = sample_terms(model, data[idx], rng, nullptr);
        for (int k = 0; k < 4; ++k) {
            r.push_back(t.residual(k));
            lv.push_back(t.log_var(k));
        }
    }
    return attenuated_loss(r, lv);
}

inline double dataset_loss(const PredictorModel& model, std::span<const TrainingSample> data) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return dataset_loss(model, data, idx);
}

/// Gradient of the attenuated loss over a batch. Dropout masks are drawn from
/// rng when given, so a fixed seed reproduces the same stochastic objective.
inline PredictorWeights batch_gradient(const PredictorModel& model, std::span<const TrainingSample> data,
                                       std::span<const std::size_t> indices, SplitMix64* rng, double* loss_out) {
    PredictorWeights grad = model.weights.zeros_like();
    std::vector<ForwardCache> caches(indices.size());
    std::vector<double> r, lv;
    r.reserve(indices.size() * 4);
    lv.reserve(indices.size() * 4);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto t = sample_terms(model, data[indices[b]], rng, &caches[b]);
        for (int k = 0; k < 4; ++k) {
            r.push_back(t.residual(k));
            lv.push_back(t.log_var(k));
        }
    }
    if (loss_out != nullptr) *loss_out = attenuated_loss(r, lv);
    const LossGradient g = attenuated_loss_grad(r, lv);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        NetworkOutput d_out;
        for (int k = 0; k < 4; ++k) {
            d_out(k) = -g.d_residual[b * 4 + static_cast<std::size_t>(k)];  // residual = target - delta
            d_out(4 + k) = g.d_log_var[b * 4 + static_cast<std::size_t>(k)];
        }
        network_backward(model, caches[b], d_out, grad);
    }
    return grad;
}

/// SGD with momentum on the attenuated loss. Returns the parameters with the
/// lowest full-dataset (dropout-free) loss seen, so the result never scores
/// worse than the initialisation.
inline TrainResult train_predictor(std::span<const TrainingSample> dataset, const TrainConfig& cfg) {
    if (dataset.empty()) throw InvalidArgument("train_predictor: empty dataset");
    if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.learning_rate < 0.0) {
        throw InvalidArgument("train_predictor: invalid configuration");
    }
    for (const auto& s : dataset) {
        s.history.validate();
        if (static_cast<int>(s.history.size()) > cfg.horizon) {
            throw InvalidArgument("train_predictor: history longer than horizon");
        }
    }

    PredictorModel model = PredictorModel::initialize(cfg.horizon, cfg.d_model, cfg.d_ff, cfg.dropout_rate,
                                                      derive_seed(cfg.seed, "init"));
    model.step_dt = cfg.step_dt;

    TrainResult result;
    double loss = dataset_loss(model, dataset);
    if (!std::isfinite(loss)) throw TrainingError("train_predictor: non-finite initial loss");
    result.epoch_loss.push_back(loss);
    result.best_loss = loss;
    result.model = model;

    PredictorWeights velocity = model.weights.zeros_like();
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    SplitMix64 dropout_rng(derive_seed(cfg.seed, "dropout"));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(shuffle_rng() % i);
            std::swap(order[i - 1], order[j]);
        }
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> batch(order.data() + start, stop - start);
            PredictorWeights grad = batch_gradient(model, dataset, batch, &dropout_rng, nullptr);
            double norm2 = 0.0;
            for (const auto* t : grad.tensors()) norm2 += t->squaredNorm();
            if (!std::isfinite(norm2)) throw TrainingError("train_predictor: non-finite gradient");
            const double clip = (cfg.grad_clip > 0.0 && std::sqrt(norm2) > cfg.grad_clip)
                                    ? cfg.grad_clip / std::sqrt(norm2)
                                    : 1.0;
            auto vel = velocity.tensors();
            auto g = grad.tensors();
            auto p = model.weights.tensors();
            for (std::size_t k = 0; k < PredictorWeights::kCount; ++k) {
                *vel[k] = cfg.momentum * *vel[k] - cfg.learning_rate * clip * *g[k];
                *p[k] += *vel[k];
            }
        }
        loss = dataset_loss(model, dataset);
        if (!std::isfinite(loss)) throw TrainingError("train_predictor: loss diverged");
        result.epoch_loss.push_back(loss);
        if (loss < result.best_loss) {
            result.best_loss = loss;
            result.model = model;
        }
    }
    return result;
}

}  // namespace radtrack
