#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "trajrec/core.hpp"
#include "trajrec/embed.hpp"
#include "trajrec/mat.hpp"

namespace trajrec {

/// Sinusoidal slot embedding: component 2i is sin(t / 10000^(2i/d)),
/// component 2i+1 the matching cosine. Squared norm is d/2 for every t.
inline std::vector<double> time_embedding(int t, int d) {
    if (d <= 0 || d % 2 != 0) throw input_error("time_embedding: d must be positive and even");
    std::vector<double> e(std::size_t(d), 0.0);
    for (int i = 0; i < d / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * double(i) / double(d));
        e[std::size_t(2 * i)] = std::sin(double(t) * freq);
        e[std::size_t(2 * i) + 1] = std::cos(double(t) * freq);
    }
    return e;
}

/// Temporal-aware sequence representation: row n is the location embedding
/// (null slots use the zero null-token row) plus the slot embedding.
inline Mat temporal_aware(const Trajectory& traj, const LocationEmbeddingTable& table) {
    const int n = traj.n_slots();
    const int d = table.dim();
    Mat out(n, d);
    for (int s = 0; s < n; ++s) {
        const LocationId loc = traj.slots[s] ? *traj.slots[s] : table.null_loc();
        if (loc < 0 || loc >= table.m.rows)
            throw input_error("temporal_aware: location outside the embedding table");
        const double* e_l = table.row(loc);
        const auto e_t = time_embedding(s, d);
        double* row = out.row(s);
        for (int c = 0; c < d; ++c) row[c] = e_l[c] + e_t[std::size_t(c)];
    }
    return out;
}

/// Collapses historical days into one trajectory: per slot the modal
/// non-null location, ties broken by the most recent day.
inline Trajectory aggregate_history(const std::vector<Trajectory>& historical) {
    if (historical.empty()) throw input_error("aggregate_history: no historical trajectories");
    const int n = historical.front().n_slots();
    for (const auto& t : historical)
        if (t.n_slots() != n) throw input_error("aggregate_history: slot count mismatch");

    Trajectory agg;
    agg.user = historical.front().user;
    agg.day = historical.front().day;
    agg.slots.assign(std::size_t(n), std::nullopt);
    for (int s = 0; s < n; ++s) {
        std::map<LocationId, std::pair<int, std::int64_t>> stats; // loc -> (count, last day)
        for (const auto& t : historical) {
            if (!t.slots[s]) continue;
            auto& st = stats[*t.slots[s]];
            st.first += 1;
            st.second = std::max(st.second, t.day);
        }
        if (stats.empty()) continue;
        LocationId best = -1;
        std::pair<int, std::int64_t> best_st{-1, 0};
        for (const auto& [loc, st] : stats) {
            if (st.first > best_st.first ||
                (st.first == best_st.first && st.second > best_st.second)) {
                best = loc;
                best_st = st;
            }
        }
        agg.slots[s] = best;
    }
    return agg;
}

/// One multi-head attention layer. Scores are plain inner products of the
/// per-head projections (no scaling); the heads are concatenated, projected
/// back to width d and added to the query row before the ReLU.
struct AttentionParams {
    int heads = 0;
    int head_dim = 0;
    std::vector<Mat> w_q, w_k, w_v; // per head: head_dim x d
    Mat w_out;                      // d x head_dim*heads

    int dim() const { return w_out.rows; }

    static AttentionParams make(int d, int heads, int head_dim) {
        if (d <= 0 || heads <= 0 || head_dim <= 0) throw input_error("AttentionParams: bad shape");
        AttentionParams p;
        p.heads = heads;
        p.head_dim = head_dim;
        p.w_q.assign(std::size_t(heads), Mat(head_dim, d));
        p.w_k.assign(std::size_t(heads), Mat(head_dim, d));
        p.w_v.assign(std::size_t(heads), Mat(head_dim, d));
        p.w_out = Mat(d, head_dim * heads);
        return p;
    }

    // Scores are unscaled inner products. Query/key weights start as small
    // shared identity slices plus noise: q.k then peaks where the slot
    // embeddings agree, so attention begins softly time-aligned instead of
    // saturated or uniform. Value/output paths get the usual fan-based init.
    void init(Rng& rng) {
        const int d = dim();
        const double diag = 1.5 / std::sqrt(double(d));
        const double jitter = 0.1 / double(d);
        for (int h = 0; h < heads; ++h) {
            w_q[std::size_t(h)].fill_uniform(rng, -jitter, jitter);
            w_k[std::size_t(h)].fill_uniform(rng, -jitter, jitter);
            for (int i = 0; i < head_dim; ++i) {
                const int col = (h * head_dim + i) % d;
                w_q[std::size_t(h)](i, col) += diag;
                w_k[std::size_t(h)](i, col) += diag;
            }
        }
        for (auto& m : w_v) m.fill_xavier(rng);
        w_out.fill_xavier(rng);
    }

    AttentionParams zeros_like() const {
        return make(dim(), heads, head_dim);
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        for (int h = 0; h < heads; ++h) {
            fn(prefix + ".q" + std::to_string(h), w_q[std::size_t(h)]);
            fn(prefix + ".k" + std::to_string(h), w_k[std::size_t(h)]);
            fn(prefix + ".v" + std::to_string(h), w_v[std::size_t(h)]);
        }
        fn(prefix + ".out", w_out);
    }
};

struct AttentionCache {
    Mat query, kv;
    std::vector<Mat> qh, kh, vh;    // per head projections
    std::vector<Mat> alpha;         // per head softmax rows
    Mat concat;                     // N x head_dim*heads
    Mat z;                          // pre-activation, N x d
};

inline Mat attention_forward(const Mat& query, const Mat& kv, const AttentionParams& p,
                             AttentionCache* cache) {
    const int n = query.rows;
    const int m = kv.rows;
    const int d = p.dim();
    if (query.cols != d || kv.cols != d)
        throw input_error("attention_forward: input width does not match parameters");

    std::vector<Mat> qh(std::size_t(p.heads)), kh(std::size_t(p.heads)), vh(std::size_t(p.heads)),
        alpha(std::size_t(p.heads));
    Mat concat(n, p.head_dim * p.heads);
    std::vector<double> scores(std::size_t(m), 0.0);

    for (int h = 0; h < p.heads; ++h) {
        auto& q = qh[std::size_t(h)] = Mat(n, p.head_dim);
        auto& k = kh[std::size_t(h)] = Mat(m, p.head_dim);
        auto& v = vh[std::size_t(h)] = Mat(m, p.head_dim);
        auto& a = alpha[std::size_t(h)] = Mat(n, m);
        for (int i = 0; i < n; ++i) matvec(p.w_q[std::size_t(h)], query.row(i), q.row(i));
        for (int j = 0; j < m; ++j) {
            matvec(p.w_k[std::size_t(h)], kv.row(j), k.row(j));
            matvec(p.w_v[std::size_t(h)], kv.row(j), v.row(j));
        }
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) scores[std::size_t(j)] = dot(q.row(i), k.row(j), p.head_dim);
            softmax(scores.data(), a.row(i), m);
            double* out = concat.row(i) + h * p.head_dim;
            for (int j = 0; j < m; ++j) axpy(a(i, j), v.row(j), out, p.head_dim);
        }
    }

    Mat z(n, d);
    for (int i = 0; i < n; ++i) {
        matvec(p.w_out, concat.row(i), z.row(i));
        axpy(1.0, query.row(i), z.row(i), d);
    }
    Mat out = z;
    for (double& x : out.a) x = x > 0.0 ? x : 0.0;

    if (cache) {
        cache->query = query;
        cache->kv = kv;
        cache->qh = std::move(qh);
        cache->kh = std::move(kh);
        cache->vh = std::move(vh);
        cache->alpha = std::move(alpha);
        cache->concat = std::move(concat);
        cache->z = std::move(z);
    }
    return out;
}

/// Inference-only entry point matching the layer contract.
inline Mat attention_layer(const Mat& query, const Mat& kv, const AttentionParams& p) {
    return attention_forward(query, kv, p, nullptr);
}

// Accumulates parameter gradients and input gradients. d_query and d_kv may
// alias (self-attention); everything is written with +=.
inline void attention_backward(const Mat& d_out, const AttentionCache& c, const AttentionParams& p,
                               AttentionParams& grads, Mat& d_query, Mat& d_kv) {
    const int n = c.query.rows;
    const int m = c.kv.rows;
    const int d = p.dim();

    Mat dz = d_out;
    for (std::size_t i = 0; i < dz.a.size(); ++i)
        if (c.z.a[i] <= 0.0) dz.a[i] = 0.0;

    Mat dconcat(n, p.head_dim * p.heads);
    for (int i = 0; i < n; ++i) {
        axpy(1.0, dz.row(i), d_query.row(i), d); // residual path
        outer_add(grads.w_out, dz.row(i), c.concat.row(i));
        matvec_t_add(p.w_out, dz.row(i), dconcat.row(i));
    }

    std::vector<double> dalpha(std::size_t(m), 0.0), dscore(std::size_t(m), 0.0);
    for (int h = 0; h < p.heads; ++h) {
        const Mat& q = c.qh[std::size_t(h)];
        const Mat& k = c.kh[std::size_t(h)];
        const Mat& v = c.vh[std::size_t(h)];
        const Mat& a = c.alpha[std::size_t(h)];
        Mat dq(n, p.head_dim), dk(m, p.head_dim), dv(m, p.head_dim);
        for (int i = 0; i < n; ++i) {
            const double* dh = dconcat.row(i) + h * p.head_dim;
            for (int j = 0; j < m; ++j) {
                dalpha[std::size_t(j)] = dot(dh, v.row(j), p.head_dim);
                axpy(a(i, j), dh, dv.row(j), p.head_dim);
            }
            std::fill(dscore.begin(), dscore.end(), 0.0);
            softmax_backward(a.row(i), dalpha.data(), dscore.data(), m);
            for (int j = 0; j < m; ++j) {
                axpy(dscore[std::size_t(j)], k.row(j), dq.row(i), p.head_dim);
                axpy(dscore[std::size_t(j)], q.row(i), dk.row(j), p.head_dim);
            }
        }
        for (int i = 0; i < n; ++i) {
            outer_add(grads.w_q[std::size_t(h)], dq.row(i), c.query.row(i));
            matvec_t_add(p.w_q[std::size_t(h)], dq.row(i), d_query.row(i));
        }
        for (int j = 0; j < m; ++j) {
            outer_add(grads.w_k[std::size_t(h)], dk.row(j), c.kv.row(j));
            matvec_t_add(p.w_k[std::size_t(h)], dk.row(j), d_kv.row(j));
            outer_add(grads.w_v[std::size_t(h)], dv.row(j), c.kv.row(j));
            matvec_t_add(p.w_v[std::size_t(h)], dv.row(j), d_kv.row(j));
        }
    }
}

/// Trajectory encoder: a self-attention stack over the aggregated history,
/// a second stack over the current trajectory, and one cross-attention
/// layer that queries the current representation against the historical
/// one to produce the final per-slot representation.
struct EncoderParams {
    std::vector<AttentionParams> history; // family 1
    std::vector<AttentionParams> current; // family 2
    AttentionParams inter;                // family 3

    int dim() const { return inter.dim(); }

    static EncoderParams make(int d, int heads, int layers, int head_dim = 0) {
        if (layers < 1) throw input_error("EncoderParams: need at least one layer per stack");
        if (head_dim == 0) {
            if (d % heads != 0) throw input_error("EncoderParams: heads must divide d");
            head_dim = d / heads;
        }
        EncoderParams p;
        for (int l = 0; l < layers; ++l) {
            p.history.push_back(AttentionParams::make(d, heads, head_dim));
            p.current.push_back(AttentionParams::make(d, heads, head_dim));
        }
        p.inter = AttentionParams::make(d, heads, head_dim);
        return p;
    }

    void init(Rng& rng) {
        for (auto& l : history) l.init(rng);
        for (auto& l : current) l.init(rng);
        inter.init(rng);
    }

    EncoderParams zeros_like() const {
        EncoderParams z;
        for (const auto& l : history) z.history.push_back(l.zeros_like());
        for (const auto& l : current) z.current.push_back(l.zeros_like());
        z.inter = inter.zeros_like();
        return z;
    }

    template <typename Fn>
    void visit(Fn&& fn) {
        for (std::size_t l = 0; l < history.size(); ++l)
            history[l].visit("enc.hist" + std::to_string(l), fn);
        for (std::size_t l = 0; l < current.size(); ++l)
            current[l].visit("enc.cur" + std::to_string(l), fn);
        inter.visit("enc.inter", fn);
    }
};

struct EncodeCache {
    Trajectory aggregated;
    Trajectory current;
    Mat hist_bar, cur_bar;
    std::vector<AttentionCache> hist_stack, cur_stack;
    AttentionCache inter;
};

inline Mat encode_forward(const std::vector<Trajectory>& historical, const Trajectory& current,
                          const EncoderParams& params, const LocationEmbeddingTable& table,
                          EncodeCache* cache) {
    Trajectory agg;
    if (historical.empty()) {
        agg.user = current.user;
        agg.day = current.day;
        agg.slots.assign(current.slots.size(), std::nullopt);
    } else {
        agg = aggregate_history(historical);
        if (agg.n_slots() != current.n_slots())
            throw input_error("encode: history and current slot counts differ");
    }

    Mat hist = temporal_aware(agg, table);
    Mat cur = temporal_aware(current, table);
    if (cache) {
        cache->aggregated = agg;
        cache->current = current;
        cache->hist_bar = hist;
        cache->cur_bar = cur;
        cache->hist_stack.resize(params.history.size());
        cache->cur_stack.resize(params.current.size());
    }

    for (std::size_t l = 0; l < params.history.size(); ++l)
        hist = attention_forward(hist, hist, params.history[l],
                                 cache ? &cache->hist_stack[l] : nullptr);
    for (std::size_t l = 0; l < params.current.size(); ++l)
        cur = attention_forward(cur, cur, params.current[l],
                                cache ? &cache->cur_stack[l] : nullptr);

    return attention_forward(cur, hist, params.inter, cache ? &cache->inter : nullptr);
}

/// Final per-slot representation of the current trajectory.
inline Mat encode(const std::vector<Trajectory>& historical, const Trajectory& current,
                  const EncoderParams& params, const LocationEmbeddingTable& table) {
    return encode_forward(historical, current, params, table, nullptr);
}

// Backward through the whole encoder. d_table, when given, accumulates
// gradients for the embedding table rows actually used.
inline void encode_backward(const Mat& d_final, const EncodeCache& cache,
                            const EncoderParams& params, EncoderParams& grads,
                            Mat* d_table = nullptr) {
    const int n = cache.cur_bar.rows;
    const int d = cache.cur_bar.cols;
    Mat d_cur(n, d), d_hist(n, d);
    attention_backward(d_final, cache.inter, params.inter, grads.inter, d_cur, d_hist);

    for (std::size_t l = params.current.size(); l-- > 0;) {
        Mat d_in(n, d);
        attention_backward(d_cur, cache.cur_stack[l], params.current[l], grads.current[l], d_in,
                           d_in);
        d_cur = std::move(d_in);
    }
    for (std::size_t l = params.history.size(); l-- > 0;) {
        Mat d_in(n, d);
        attention_backward(d_hist, cache.hist_stack[l], params.history[l], grads.history[l], d_in,
                           d_in);
        d_hist = std::move(d_in);
    }

    if (d_table) {
        // temporal-aware rows are e_l + e_t, so each location row receives
        // its slot-row gradient directly; the null row stays frozen at zero
        for (int s = 0; s < n; ++s) {
            const auto& hs = cache.aggregated.slots[std::size_t(s)];
            if (hs) axpy(1.0, d_hist.row(s), d_table->row(int(*hs)), d);
            const auto& cs = cache.current.slots[std::size_t(s)];
            if (cs) axpy(1.0, d_cur.row(s), d_table->row(int(*cs)), d);
        }
    }
}

} // namespace trajrec
