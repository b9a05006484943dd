#pragma once

#include <algorithm>
#include <cmath>
#include <string_view>
#include <vector>

#include "trajrec/core.hpp"
#include "trajrec/embed.hpp"
#include "trajrec/encoder.hpp"
#include "trajrec/mat.hpp"

namespace trajrec {

/// Per-step noise constants: beta_t, alpha_t = 1 - beta_t, the running
/// product alpha_bar_t and the posterior variance beta_tilde_t.
struct DiffusionSchedule {
    int steps = 0;
    std::vector<double> beta, alpha, alpha_bar, beta_tilde; // index t-1 holds step t

    double alpha_bar_at(int t) const { // alpha_bar_0 := 1
        if (t < 0 || t > steps) throw input_error("DiffusionSchedule: step out of range");
        return t == 0 ? 1.0 : alpha_bar[std::size_t(t) - 1];
    }
};

inline DiffusionSchedule make_schedule(int steps, double beta_1, double beta_t) {
    if (steps < 1) throw input_error("make_schedule: need at least one step");
    if (!(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0))
        throw input_error("make_schedule: need 0 < beta_1 <= beta_T < 1");
    DiffusionSchedule s;
    s.steps = steps;
    s.beta.resize(std::size_t(steps));
    s.alpha.resize(std::size_t(steps));
    s.alpha_bar.resize(std::size_t(steps));
    s.beta_tilde.resize(std::size_t(steps));
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : double(i) / double(steps - 1);
        const double b = beta_1 + (beta_t - beta_1) * frac;
        s.beta[std::size_t(i)] = b;
        s.alpha[std::size_t(i)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[std::size_t(i)] = prod;
        if (i == 0)
            s.beta_tilde[std::size_t(i)] = b;
        else
            s.beta_tilde[std::size_t(i)] =
                (1.0 - s.alpha_bar[std::size_t(i) - 1]) / (1.0 - prod) * b;
    }
    return s;
}

inline DiffusionSchedule schedule_preset(std::string_view name) {
    if (name == "default") return make_schedule(50, 1e-4, 0.02);
    if (name == "long") return make_schedule(200, 1e-4, 0.02);
    if (name.rfind("linear:", 0) == 0) {
        // custom step count over the standard beta range
        const std::string steps(name.substr(7));
        try {
            return make_schedule(std::stoi(steps), 1e-4, 0.02);
        } catch (const std::logic_error&) {
            throw input_error("schedule_preset: bad step count '" + steps + "'");
        }
    }
    throw input_error("schedule_preset: unknown preset '" + std::string(name) + "'");
}

/// Closed-form forward noising x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
/// With a mask, only TARGET/MISSING rows are noised; observed rows pass
/// through untouched.
inline Mat forward_sample(const Mat& x0, int t, const Mat& eps, const DiffusionSchedule& sched,
                          const MaskSet* mask = nullptr) {
    if (t < 1 || t > sched.steps) throw input_error("forward_sample: step out of range");
    if (!x0.same_shape(eps)) throw input_error("forward_sample: shape mismatch");
    const double ab = sched.alpha_bar_at(t);
    const double c0 = std::sqrt(ab);
    const double ce = std::sqrt(1.0 - ab);
    Mat out = x0;
    for (int r = 0; r < x0.rows; ++r) {
        if (mask && mask->labels[std::size_t(r)] == SlotLabel::observed) continue;
        double* o = out.row(r);
        const double* x = x0.row(r);
        const double* e = eps.row(r);
        for (int c = 0; c < x0.cols; ++c) o[c] = c0 * x[c] + ce * e[c];
    }
    return out;
}

// ---------------------------------------------------------------------------
// denoising network: input projection over [noisy channel | conditioner |
// observed flag], residual blocks with step embedding, temporal
// self-attention, a gated tanh/sigmoid unit and skip projections, then one
// output projection back to width d

struct PlainAttnCache {
    Mat in, q, k, v, alpha;
};

// single-head attention without output projection or activation
inline Mat plain_attention_forward(const Mat& in, const Mat& wq, const Mat& wk, const Mat& wv,
                                   PlainAttnCache* cache) {
    const int n = in.rows;
    const int c = wq.rows;
    Mat q(n, c), k(n, c), v(n, c), alpha(n, n), out(n, c);
    for (int i = 0; i < n; ++i) {
        matvec(wq, in.row(i), q.row(i));
        matvec(wk, in.row(i), k.row(i));
        matvec(wv, in.row(i), v.row(i));
    }
    std::vector<double> scores(std::size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) scores[std::size_t(j)] = dot(q.row(i), k.row(j), c);
        softmax(scores.data(), alpha.row(i), n);
        for (int j = 0; j < n; ++j) axpy(alpha(i, j), v.row(j), out.row(i), c);
    }
    if (cache) {
        cache->in = in;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->alpha = std::move(alpha);
    }
    return out;
}

inline void plain_attention_backward(const Mat& d_out, const PlainAttnCache& cch, const Mat& wq,
                                     const Mat& wk, const Mat& wv, Mat& d_wq, Mat& d_wk, Mat& d_wv,
                                     Mat& d_in) {
    const int n = cch.in.rows;
    const int c = wq.rows;
    Mat dq(n, c), dk(n, c), dv(n, c);
    std::vector<double> dalpha(std::size_t(n), 0.0), dscore(std::size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* dh = d_out.row(i);
        for (int j = 0; j < n; ++j) {
            dalpha[std::size_t(j)] = dot(dh, cch.v.row(j), c);
            axpy(cch.alpha(i, j), dh, dv.row(j), c);
        }
        std::fill(dscore.begin(), dscore.end(), 0.0);
        softmax_backward(cch.alpha.row(i), dalpha.data(), dscore.data(), n);
        for (int j = 0; j < n; ++j) {
            axpy(dscore[std::size_t(j)], cch.k.row(j), dq.row(i), c);
            axpy(dscore[std::size_t(j)], cch.q.row(i), dk.row(j), c);
        }
    }
    for (int i = 0; i < n; ++i) {
        outer_add(d_wq, dq.row(i), cch.in.row(i));
        outer_add(d_wk, dk.row(i), cch.in.row(i));
        outer_add(d_wv, dv.row(i), cch.in.row(i));
        matvec_t_add(wq, dq.row(i), d_in.row(i));
        matvec_t_add(wk, dk.row(i), d_in.row(i));
        matvec_t_add(wv, dv.row(i), d_in.row(i));
    }
}

struct DenoiserBlock {
    Mat w_t, b_t;       // step-embedding projection, C x C and C x 1
    Mat w_q, w_k, w_v;  // temporal self-attention, C x C
    Mat w_g, b_g;       // gate projection, 2C x C and 2C x 1
    Mat w_res;          // C x C
    Mat w_skip;         // C x C
};

struct DenoiserParams {
    int d = 0;      // slot representation width
    int hidden = 0; // C
    Mat w_in, b_in; // C x (2d+1), C x 1
    std::vector<DenoiserBlock> blocks;
    Mat w_out, b_out; // d x C, d x 1

    static DenoiserParams make(int d, int hidden, int n_blocks) {
        if (d <= 0 || hidden <= 0 || hidden % 2 != 0)
            throw input_error("DenoiserParams: hidden width must be positive and even");
        if (n_blocks < 1) throw input_error("DenoiserParams: need at least one block");
        DenoiserParams p;
        p.d = d;
        p.hidden = hidden;
        p.w_in = Mat(hidden, 2 * d + 1);
        p.b_in = Mat(hidden, 1);
        p.blocks.resize(std::size_t(n_blocks));
        for (auto& b : p.blocks) {
            b.w_t = Mat(hidden, hidden);
            b.b_t = Mat(hidden, 1);
            b.w_q = Mat(hidden, hidden);
            b.w_k = Mat(hidden, hidden);
            b.w_v = Mat(hidden, hidden);
            b.w_g = Mat(2 * hidden, hidden);
            b.b_g = Mat(2 * hidden, 1);
            b.w_res = Mat(hidden, hidden);
            b.w_skip = Mat(hidden, hidden);
        }
        p.w_out = Mat(d, hidden);
        p.b_out = Mat(d, 1);
        return p;
    }

    void init(Rng& rng) {
        w_in.fill_xavier(rng);
        for (auto& b : blocks) {
            b.w_t.fill_xavier(rng);
            b.w_q.fill_xavier(rng);
            b.w_k.fill_xavier(rng);
            b.w_v.fill_xavier(rng);
            b.w_g.fill_xavier(rng);
            b.w_res.fill_xavier(rng);
            b.w_skip.fill_xavier(rng);
        }
        w_out.fill_xavier(rng);
    }

    DenoiserParams zeros_like() const { return make(d, hidden, int(blocks.size())); }

    template <typename Fn>
    void visit(Fn&& fn) {
        fn(std::string("den.in.w"), w_in);
        fn(std::string("den.in.b"), b_in);
        for (std::size_t r = 0; r < blocks.size(); ++r) {
            const std::string p = "den.blk" + std::to_string(r);
            fn(p + ".tw", blocks[r].w_t);
            fn(p + ".tb", blocks[r].b_t);
            fn(p + ".q", blocks[r].w_q);
            fn(p + ".k", blocks[r].w_k);
            fn(p + ".v", blocks[r].w_v);
            fn(p + ".gw", blocks[r].w_g);
            fn(p + ".gb", blocks[r].b_g);
            fn(p + ".res", blocks[r].w_res);
            fn(p + ".skip", blocks[r].w_skip);
        }
        fn(std::string("den.out.w"), w_out);
        fn(std::string("den.out.b"), b_out);
    }
};

/// Everything the denoiser needs for one prediction: the noisy channel,
/// the conditioner (encoder output over all slots), the slot mask and the
/// diffusion step.
struct DiffusionState {
    Mat x_t;
    Mat conditioner;
    MaskSet mask;
    int t = 1;
};

struct DenoiserBlockCache {
    std::vector<double> pe; // step embedding
    Mat u;                  // block input + step embedding
    PlainAttnCache attn;
    Mat a;  // attention output
    Mat v2; // pre-gate, N x 2C
    Mat g;  // gated, N x C
};

struct DenoiserCache {
    Mat input; // N x (2d+1)
    Mat h0;
    std::vector<DenoiserBlockCache> blocks;
    Mat skip;      // accumulated skip connections
    Mat skip_relu; // after the ReLU feeding the output projection
};

inline Mat denoise_predict(const DiffusionState& state, const DenoiserParams& p,
                           DenoiserCache* cache = nullptr) {
    const int n = state.conditioner.rows;
    const int d = p.d;
    const int c = p.hidden;
    if (state.conditioner.cols != d || state.x_t.rows != n || state.x_t.cols != d ||
        int(state.mask.labels.size()) != n)
        throw input_error("denoise_predict: shape mismatch");

    Mat input(n, 2 * d + 1);
    for (int i = 0; i < n; ++i) {
        const bool observed = state.mask.labels[std::size_t(i)] == SlotLabel::observed;
        double* row = input.row(i);
        if (!observed)
            for (int j = 0; j < d; ++j) row[j] = state.x_t(i, j);
        for (int j = 0; j < d; ++j) row[d + j] = state.conditioner(i, j);
        row[2 * d] = observed ? 1.0 : 0.0;
    }

    Mat h(n, c);
    for (int i = 0; i < n; ++i) {
        matvec(p.w_in, input.row(i), h.row(i));
        axpy(1.0, p.b_in.a.data(), h.row(i), c);
    }
    if (cache) {
        cache->input = input;
        cache->h0 = h;
        cache->blocks.resize(p.blocks.size());
    }

    Mat skip(n, c);
    std::vector<double> step(std::size_t(c), 0.0);
    for (std::size_t r = 0; r < p.blocks.size(); ++r) {
        const auto& blk = p.blocks[r];
        const auto pe = time_embedding(state.t, c);
        matvec(blk.w_t, pe.data(), step.data());
        axpy(1.0, blk.b_t.a.data(), step.data(), c);

        Mat u = h;
        for (int i = 0; i < n; ++i) axpy(1.0, step.data(), u.row(i), c);

        DenoiserBlockCache* bc = cache ? &cache->blocks[r] : nullptr;
        // residual temporal attention: slots mix without losing their own row
        Mat a = plain_attention_forward(u, blk.w_q, blk.w_k, blk.w_v, bc ? &bc->attn : nullptr);
        for (std::size_t i = 0; i < a.a.size(); ++i) a.a[i] += u.a[i];

        Mat v2(n, 2 * c), g(n, c);
        for (int i = 0; i < n; ++i) {
            matvec(blk.w_g, a.row(i), v2.row(i));
            axpy(1.0, blk.b_g.a.data(), v2.row(i), 2 * c);
            for (int j = 0; j < c; ++j)
                g(i, j) = std::tanh(v2(i, j)) / (1.0 + std::exp(-v2(i, c + j)));
        }
        for (int i = 0; i < n; ++i) {
            matvec_add(blk.w_res, g.row(i), u.row(i));
            matvec_add(blk.w_skip, g.row(i), skip.row(i));
        }
        if (bc) {
            bc->pe = pe;
            bc->u = bc->attn.in; // input to the attention, pre-residual
            bc->a = std::move(a);
            bc->v2 = std::move(v2);
            bc->g = std::move(g);
        }
        h = std::move(u);
    }

    Mat skip_relu = skip;
    for (double& x : skip_relu.a) x = x > 0.0 ? x : 0.0;
    Mat out(n, d);
    for (int i = 0; i < n; ++i) {
        matvec(p.w_out, skip_relu.row(i), out.row(i));
        axpy(1.0, p.b_out.a.data(), out.row(i), d);
    }
    if (cache) {
        cache->skip = std::move(skip);
        cache->skip_relu = std::move(skip_relu);
    }
    return out;
}

// Backward through the denoiser. d_cond receives the conditioner-channel
// gradient; the noisy channel and flags are treated as constants.
inline void denoiser_backward(const Mat& d_out, const DenoiserCache& cch, const DenoiserParams& p,
                              DenoiserParams& grads, Mat& d_cond) {
    const int n = cch.input.rows;
    const int d = p.d;
    const int c = p.hidden;

    Mat dskip(n, c);
    for (int i = 0; i < n; ++i) {
        outer_add(grads.w_out, d_out.row(i), cch.skip_relu.row(i));
        axpy(1.0, d_out.row(i), grads.b_out.a.data(), d);
        matvec_t_add(p.w_out, d_out.row(i), dskip.row(i));
    }
    for (std::size_t i = 0; i < dskip.a.size(); ++i)
        if (cch.skip.a[i] <= 0.0) dskip.a[i] = 0.0;

    Mat dh(n, c); // gradient flowing into the output of each block
    std::vector<double> dstep(std::size_t(c), 0.0);
    for (std::size_t r = p.blocks.size(); r-- > 0;) {
        const auto& blk = p.blocks[r];
        const auto& bc = cch.blocks[r];
        auto& gb = grads.blocks[r];

        // g feeds both the residual path (via w_res) and the skip sum
        Mat dg(n, c);
        for (int i = 0; i < n; ++i) {
            outer_add(gb.w_res, dh.row(i), bc.g.row(i));
            matvec_t_add(blk.w_res, dh.row(i), dg.row(i));
            outer_add(gb.w_skip, dskip.row(i), bc.g.row(i));
            matvec_t_add(blk.w_skip, dskip.row(i), dg.row(i));
        }

        Mat dv2(n, 2 * c);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < c; ++j) {
                const double th = std::tanh(bc.v2(i, j));
                const double sg = 1.0 / (1.0 + std::exp(-bc.v2(i, c + j)));
                dv2(i, j) = dg(i, j) * sg * (1.0 - th * th);
                dv2(i, c + j) = dg(i, j) * th * sg * (1.0 - sg);
            }
        }

        Mat da(n, c);
        for (int i = 0; i < n; ++i) {
            outer_add(gb.w_g, dv2.row(i), bc.a.row(i));
            axpy(1.0, dv2.row(i), gb.b_g.a.data(), 2 * c);
            matvec_t_add(blk.w_g, dv2.row(i), da.row(i));
        }

        Mat du = dh; // identity path of u into the block output
        for (std::size_t i = 0; i < du.a.size(); ++i) du.a[i] += da.a[i]; // attention residual
        plain_attention_backward(da, bc.attn, blk.w_q, blk.w_k, blk.w_v, gb.w_q, gb.w_k, gb.w_v,
                                 du);

        std::fill(dstep.begin(), dstep.end(), 0.0);
        for (int i = 0; i < n; ++i) axpy(1.0, du.row(i), dstep.data(), c);
        outer_add(gb.w_t, dstep.data(), bc.pe.data());
        axpy(1.0, dstep.data(), gb.b_t.a.data(), c);

        dh = std::move(du);
    }

    // input projection; only the conditioner slice of the input varies
    for (int i = 0; i < n; ++i) {
        outer_add(grads.w_in, dh.row(i), cch.input.row(i));
        axpy(1.0, dh.row(i), grads.b_in.a.data(), c);
        for (int row = 0; row < c; ++row) {
            const double gi = dh(i, row);
            const double* w = p.w_in.row(row);
            for (int j = 0; j < d; ++j) d_cond(i, j) += gi * w[d + j];
        }
    }
}

// Gradient notes: blocks' w_t gradient uses outer_add(dstep, pe) where
// dstep already sums the broadcast over slots.

/// DDPM posterior step in the x0 parameterisation. Terminal step t = 1 is
/// deterministic; alpha_bar_0 := 1 makes its mean collapse to x0_hat.
inline Mat posterior_step(const Mat& x_t, const Mat& x0_hat, int t, const DiffusionSchedule& sched,
                          Rng& rng) {
    if (t < 1 || t > sched.steps) throw input_error("posterior_step: step out of range");
    if (!x_t.same_shape(x0_hat)) throw input_error("posterior_step: shape mismatch");
    const double ab_t = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(t - 1);
    const double beta = sched.beta[std::size_t(t) - 1];
    const double alpha = sched.alpha[std::size_t(t) - 1];
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
    const double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t);
    const double sigma = t > 1 ? std::sqrt(sched.beta_tilde[std::size_t(t) - 1]) : 0.0;
    Mat out(x_t.rows, x_t.cols);
    for (std::size_t i = 0; i < out.a.size(); ++i) {
        out.a[i] = c0 * x0_hat.a[i] + ct * x_t.a[i];
        if (sigma > 0.0) out.a[i] += sigma * rng.normal();
    }
    return out;
}

/// Reverse-process sampling. Non-observed slots start from a standard
/// normal draw and are refined step by step; observed slots stay clamped to
/// their conditioner rows throughout and in the returned x0.
template <typename DenoiseFn>
inline Mat sample_reverse(const Mat& conditioner, const MaskSet& mask,
                          const DiffusionSchedule& sched, DenoiseFn&& denoise, Rng& rng) {
    const int n = conditioner.rows;
    const int d = conditioner.cols;
    Mat x(n, d);
    for (int i = 0; i < n; ++i) {
        const bool observed = mask.labels[std::size_t(i)] == SlotLabel::observed;
        for (int j = 0; j < d; ++j) x(i, j) = observed ? conditioner(i, j) : rng.normal();
    }
    for (int t = sched.steps; t >= 1; --t) {
        const Mat x0_hat = denoise(x, t);
        Mat prev = posterior_step(x, x0_hat, t, sched, rng);
        for (int i = 0; i < n; ++i) {
            if (mask.labels[std::size_t(i)] == SlotLabel::observed) continue;
            for (int j = 0; j < d; ++j) x(i, j) = prev(i, j);
        }
    }
    return x;
}

inline Mat sample(const Mat& conditioner, const MaskSet& mask, const DiffusionSchedule& sched,
                  const DenoiserParams& params, Rng& rng) {
    return sample_reverse(conditioner, mask, sched,
                          [&](const Mat& x, int t) {
                              DiffusionState st{x, conditioner, mask, t};
                              return denoise_predict(st, params);
                          },
                          rng);
}

// ---------------------------------------------------------------------------
// decoding and losses

struct DecodeResult {
    std::vector<std::pair<LocationId, double>> ranking; // best first
    bool degenerate = false;                            // zero-norm query, id-order fallback
};

/// Ranks locations by cosine similarity to the recovered slot vector.
/// The null token is never ranked. Ties break toward the smaller id.
inline DecodeResult decode_location(const double* x, const LocationEmbeddingTable& table) {
    const int d = table.dim();
    const int n_loc = table.n_locations();
    const double xn = std::sqrt(dot(x, x, d));
    DecodeResult res;
    res.ranking.reserve(std::size_t(n_loc));
    res.degenerate = xn < 1e-12;
    for (LocationId l = 0; l < n_loc; ++l) {
        const double* r = table.row(l);
        const double rn = std::sqrt(dot(r, r, d));
        double score = 0.0;
        if (!res.degenerate && rn >= 1e-12) score = dot(x, r, d) / (xn * rn);
        if (!std::isfinite(score)) throw input_error("decode_location: non-finite score");
        res.ranking.emplace_back(l, score);
    }
    std::stable_sort(res.ranking.begin(), res.ranking.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return res;
}

/// Mean squared error between the clean representation and the denoiser
/// output, averaged over TARGET slots and dimensions only. The optional
/// gradient output receives dL/dx0_hat.
inline double loss_simple(const Mat& x0, const Mat& x0_hat, const MaskSet& mask,
                          Mat* d_x0_hat = nullptr) {
    if (!x0.same_shape(x0_hat)) throw input_error("loss_simple: shape mismatch");
    int n_targets = 0;
    for (auto l : mask.labels)
        if (l == SlotLabel::target) ++n_targets;
    if (n_targets == 0) throw input_error("loss_simple: no TARGET slots");
    const double denom = double(n_targets) * double(x0.cols);
    double loss = 0.0;
    for (int i = 0; i < x0.rows; ++i) {
        if (mask.labels[std::size_t(i)] != SlotLabel::target) continue;
        for (int j = 0; j < x0.cols; ++j) {
            const double diff = x0_hat(i, j) - x0(i, j);
            loss += diff * diff;
            if (d_x0_hat) (*d_x0_hat)(i, j) += 2.0 * diff / denom;
        }
    }
    return loss / denom;
}

/// Precomputed unit rows and centroids for the differentiable decoder used
/// by the distance-aware loss.
class SoftDecoder {
public:
    SoftDecoder(const LocationEmbeddingTable& table, const Grid& grid)
        : d_(table.dim()), n_loc_(table.n_locations()), unit_rows_(table.n_locations(), table.dim()),
          cx_(std::size_t(table.n_locations())), cy_(std::size_t(table.n_locations())) {
        if (grid.n_cells() != n_loc_)
            throw input_error("SoftDecoder: table size does not match the grid");
        for (LocationId l = 0; l < n_loc_; ++l) {
            const double* r = table.row(l);
            const double rn = std::sqrt(dot(r, r, d_));
            if (rn >= 1e-12)
                for (int j = 0; j < d_; ++j) unit_rows_(int(l), j) = r[j] / rn;
            // zero-norm rows keep a zero unit vector: constant score, no grad
            auto [row, col] = grid.row_col(l);
            cx_[std::size_t(l)] = col + 0.5; // centroid in cell-side units
            cy_[std::size_t(l)] = row + 0.5;
        }
    }

    /// Soft displacement penalty: per slot a temperature-softmax over cosine
    /// scores gives a soft centroid (in cell-side units); the loss is the
    /// mean squared displacement between consecutive soft centroids.
    double loss(const Mat& x0_hat, double tau, Mat* d_x0_hat = nullptr, double weight = 1.0) const {
        if (!(tau > 0.0)) throw input_error("distance loss: tau must be positive");
        const int n = x0_hat.rows;
        if (n < 2) throw input_error("distance loss: need at least two slots");

        Mat probs(n, n_loc_);
        std::vector<double> cosines(std::size_t(n) * std::size_t(n_loc_), 0.0);
        std::vector<double> norms(std::size_t(n), 0.0);
        std::vector<double> coord_x(std::size_t(n), 0.0), coord_y(std::size_t(n), 0.0);

        for (int i = 0; i < n; ++i) {
            const double* x = x0_hat.row(i);
            const double xn = std::sqrt(dot(x, x, d_));
            norms[std::size_t(i)] = xn;
            double* cos_row = cosines.data() + std::size_t(i) * n_loc_;
            for (LocationId l = 0; l < n_loc_; ++l)
                cos_row[l] = xn < 1e-12 ? 0.0 : dot(x, unit_rows_.row(int(l)), d_) / xn;
            std::vector<double> scaled(std::size_t(n_loc_), 0.0);
            for (int l = 0; l < n_loc_; ++l) scaled[std::size_t(l)] = cos_row[l] / tau;
            softmax(scaled.data(), probs.row(i), n_loc_);
            coord_x[std::size_t(i)] = dot(probs.row(i), cx_.data(), n_loc_);
            coord_y[std::size_t(i)] = dot(probs.row(i), cy_.data(), n_loc_);
        }

        double loss = 0.0;
        for (int i = 0; i + 1 < n; ++i) {
            const double dx = coord_x[std::size_t(i) + 1] - coord_x[std::size_t(i)];
            const double dy = coord_y[std::size_t(i) + 1] - coord_y[std::size_t(i)];
            loss += dx * dx + dy * dy;
        }
        loss /= double(n - 1);

        if (d_x0_hat) {
            for (int i = 0; i < n; ++i) {
                double dcx = 0.0, dcy = 0.0;
                if (i > 0) {
                    dcx += 2.0 * (coord_x[std::size_t(i)] - coord_x[std::size_t(i) - 1]);
                    dcy += 2.0 * (coord_y[std::size_t(i)] - coord_y[std::size_t(i) - 1]);
                }
                if (i + 1 < n) {
                    dcx -= 2.0 * (coord_x[std::size_t(i) + 1] - coord_x[std::size_t(i)]);
                    dcy -= 2.0 * (coord_y[std::size_t(i) + 1] - coord_y[std::size_t(i)]);
                }
                dcx *= weight / double(n - 1);
                dcy *= weight / double(n - 1);
                if (dcx == 0.0 && dcy == 0.0) continue;
                if (norms[std::size_t(i)] < 1e-12) continue; // degenerate slot: no gradient

                const double* p = probs.row(i);
                std::vector<double> dp(std::size_t(n_loc_), 0.0);
                for (int l = 0; l < n_loc_; ++l)
                    dp[std::size_t(l)] = dcx * cx_[std::size_t(l)] + dcy * cy_[std::size_t(l)];
                std::vector<double> dcos(std::size_t(n_loc_), 0.0);
                softmax_backward(p, dp.data(), dcos.data(), n_loc_);
                for (double& v : dcos) v /= tau;

                // cosine backward: d cos_l / dx = (unit_l - cos_l * x_hat) / |x|
                const double* x = x0_hat.row(i);
                const double xn = norms[std::size_t(i)];
                const double* cos_row = cosines.data() + std::size_t(i) * n_loc_;
                std::vector<double> v_acc(std::size_t(d_), 0.0);
                double kappa = 0.0;
                for (int l = 0; l < n_loc_; ++l) {
                    axpy(dcos[std::size_t(l)], unit_rows_.row(l), v_acc.data(), d_);
                    kappa += dcos[std::size_t(l)] * cos_row[l];
                }
                double* dst = d_x0_hat->row(i);
                for (int j = 0; j < d_; ++j)
                    dst[j] += (v_acc[std::size_t(j)] - kappa * x[j] / xn) / xn;
            }
        }
        return loss;
    }

private:
    int d_;
    int n_loc_;
    Mat unit_rows_;
    std::vector<double> cx_, cy_;
};

inline double loss_distance(const Mat& x0_hat, const LocationEmbeddingTable& table,
                            const Grid& grid, double tau, Mat* d_x0_hat = nullptr,
                            double weight = 1.0) {
    return SoftDecoder(table, grid).loss(x0_hat, tau, d_x0_hat, weight);
}

struct LossWeights {
    double lambda_d = 1.2;
    double tau = 1.0;
};

inline double total_loss(double simple, double distance, const LossWeights& w) {
    if (w.lambda_d < 0.0) throw input_error("total_loss: lambda_d must be non-negative");
    return simple + w.lambda_d * distance;
}

} // namespace trajrec
