#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "trajrec/dataset_io.hpp"
#include "trajrec/diffusion.hpp"
#include "trajrec/encoder.hpp"

namespace trajrec {

// ---------------------------------------------------------------------------
// named-tensor registry

struct NamedTensor {
    std::string name;
    Mat* mat = nullptr;
};

struct ParamSet {
    std::vector<NamedTensor> items;

    void add(std::string name, Mat& m) { items.push_back({std::move(name), &m}); }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& it : items) n += it.mat->size();
        return n;
    }

    double* locate(std::size_t flat) const {
        for (const auto& it : items) {
            if (flat < it.mat->size()) return it.mat->a.data() + flat;
            flat -= it.mat->size();
        }
        throw input_error("ParamSet: flat index out of range");
    }
};

// ---------------------------------------------------------------------------
// Adam with bias correction

struct AdamState {
    Mat m, v;
};

inline void adam_step_tensor(Mat& param, const Mat& grad, AdamState& state, std::uint64_t step,
                             double lr, double b1, double b2, double eps) {
    if (!param.same_shape(grad)) throw input_error("adam_step: shape mismatch");
    if (state.m.size() != param.size()) {
        state.m = Mat(param.rows, param.cols);
        state.v = Mat(param.rows, param.cols);
    }
    const double c1 = 1.0 - std::pow(b1, double(step));
    const double c2 = 1.0 - std::pow(b2, double(step));
    for (std::size_t i = 0; i < param.a.size(); ++i) {
        const double g = grad.a[i];
        state.m.a[i] = b1 * state.m.a[i] + (1.0 - b1) * g;
        state.v.a[i] = b2 * state.v.a[i] + (1.0 - b2) * g * g;
        const double mhat = state.m.a[i] / c1;
        const double vhat = state.v.a[i] / c2;
        param.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

/// Optimises a fixed registry of tensors. A non-finite gradient anywhere
/// skips the whole step and reports it.
class Adam {
public:
    Adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

    // returns false when the step was skipped because of non-finite grads
    bool step(const ParamSet& params, const ParamSet& grads) {
        if (params.items.size() != grads.items.size())
            throw input_error("Adam: parameter/gradient registry mismatch");
        for (const auto& g : grads.items)
            if (!g.mat->all_finite()) {
                ++skipped_;
                return false;
            }
        if (states_.empty()) states_.resize(params.items.size());
        ++step_;
        for (std::size_t i = 0; i < params.items.size(); ++i)
            adam_step_tensor(*params.items[i].mat, *grads.items[i].mat, states_[i], step_, lr_,
                             b1_, b2_, eps_);
        return true;
    }

    std::uint64_t steps_taken() const { return step_; }
    std::uint64_t steps_skipped() const { return skipped_; }

private:
    double lr_, b1_, b2_, eps_;
    std::uint64_t step_ = 0;
    std::uint64_t skipped_ = 0;
    std::vector<AdamState> states_;
};

// ---------------------------------------------------------------------------
// finite-difference gradient verification

/// Compares analytic gradients against central differences at up to
/// probe_count coordinates (0 = all) and returns the maximum relative
/// error, |a - n| / max(|a|, |n|, floor). The floor turns the comparison
/// absolute for near-zero gradients, where central differences only
/// resolve down to roundoff.
template <typename LossFn>
double finite_diff_check(LossFn&& loss, const ParamSet& params, const ParamSet& analytic,
                         std::size_t probe_count = 0, double h = 1e-5, double floor = 1e-4) {
    const std::size_t total = params.total_size();
    if (analytic.total_size() != total)
        throw input_error("finite_diff_check: registry size mismatch");
    std::size_t n_probe = probe_count == 0 ? total : std::min(probe_count, total);
    double max_rel = 0.0;
    for (std::size_t p = 0; p < n_probe; ++p) {
        const std::size_t flat = n_probe == total ? p : (p * total) / n_probe;
        double* slot = params.locate(flat);
        const double saved = *slot;
        *slot = saved + h;
        const double lp = loss();
        *slot = saved - h;
        const double lm = loss();
        *slot = saved;
        const double numeric = (lp - lm) / (2.0 * h);
        const double a = *analytic.locate(flat);
        const double rel =
            std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// model container and pipeline loss

struct TrainConfig {
    int epochs = 30;
    int batch_size = 1;
    double lr = 1e-3;
    double adam_b1 = 0.9;
    double adam_b2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_d = 1.2;
    double tau = 1.0;
    std::uint64_t seed = 0;
    std::string schedule = "default"; // or "long", or "linear:<T>"
    int dim = 64;
    int heads = 4;
    int layers = 4;
    int blocks = 4;
    int hidden = 64;
    bool unfreeze_table = false;
    // when non-empty, each training sample gets a fresh target mask every
    // epoch at a ratio drawn from this list; off by default (the stored
    // dataset masks are used as-is)
    std::vector<double> remask_ratios;
};

struct Model {
    LocationEmbeddingTable table;
    EncoderParams encoder;
    DenoiserParams denoiser;
    DiffusionSchedule sched;
    LossWeights weights;

    static Model make(const LocationEmbeddingTable& table, const TrainConfig& cfg) {
        if (table.dim() != cfg.dim)
            throw input_error("Model: embedding width does not match the configured dim");
        Model m;
        m.table = table;
        m.encoder = EncoderParams::make(cfg.dim, cfg.heads, cfg.layers);
        m.denoiser = DenoiserParams::make(cfg.dim, cfg.hidden, cfg.blocks);
        Rng rng(mix64(cfg.seed + 0x6d6f64ULL));
        m.encoder.init(rng);
        m.denoiser.init(rng);
        m.sched = schedule_preset(cfg.schedule);
        m.weights = LossWeights{cfg.lambda_d, cfg.tau};
        return m;
    }

    ParamSet trainables(bool include_table) {
        ParamSet ps;
        encoder.visit([&](const std::string& n, Mat& m) { ps.add(n, m); });
        denoiser.visit([&](const std::string& n, Mat& m) { ps.add(n, m); });
        if (include_table) ps.add("table", table.m);
        return ps;
    }
};

/// Clean per-slot regression target: the frozen embedding row of the true
/// location, unit-normalized so targets share the noise scale and cosine
/// decoding is exact on them; missing slots keep the zero null row.
inline Mat clean_representation(const Trajectory& truth, const LocationEmbeddingTable& table) {
    Mat x0(truth.n_slots(), table.dim());
    const int d = table.dim();
    for (int s = 0; s < truth.n_slots(); ++s) {
        if (!truth.slots[std::size_t(s)]) continue;
        const double* row = table.row(*truth.slots[std::size_t(s)]);
        const double norm = std::sqrt(dot(row, row, d));
        if (norm < 1e-12) continue;
        for (int c = 0; c < d; ++c) x0(s, c) = row[c] / norm;
    }
    return x0;
}

/// One training example: the masked current day, its hidden truth, and the
/// visible prior days.
struct TrainSample {
    std::vector<Trajectory> history;
    Trajectory current_visible;
    Trajectory current_truth;
    MaskSet mask;
};

struct GradSink {
    EncoderParams* encoder = nullptr;
    DenoiserParams* denoiser = nullptr;
    Mat* table = nullptr;
};

struct LossBreakdown {
    double total = 0.0;
    double simple = 0.0;
    double distance = 0.0;
};

/// Full pipeline for one sample at a fixed diffusion step and noise draw:
/// encode -> forward noising -> denoise -> simple + distance loss. When a
/// gradient sink is given, runs the matching backward pass.
inline LossBreakdown pipeline_loss(const TrainSample& s, int t, const Mat& eps, Model& model,
                                   const SoftDecoder& decoder, const GradSink& sink = {}) {
    const Mat x0 = clean_representation(s.current_truth, model.table);

    EncodeCache ecache;
    const bool need_grads = sink.encoder || sink.denoiser || sink.table;
    Mat cond = encode_forward(s.history, s.current_visible, model.encoder, model.table,
                              need_grads ? &ecache : nullptr);

    DiffusionState state;
    state.x_t = forward_sample(x0, t, eps, model.sched, &s.mask);
    state.conditioner = std::move(cond);
    state.mask = s.mask;
    state.t = t;

    DenoiserCache dcache;
    Mat x0_hat = denoise_predict(state, model.denoiser, need_grads ? &dcache : nullptr);

    Mat d_x0_hat(x0_hat.rows, x0_hat.cols);
    LossBreakdown out;
    out.simple = loss_simple(x0, x0_hat, s.mask, need_grads ? &d_x0_hat : nullptr);
    if (model.weights.lambda_d > 0.0) {
        // the displacement penalty sees the recovered trajectory: observed
        // slots stay at their clean rows (constants that anchor the path),
        // recovered slots carry gradient
        Mat mixed = x0_hat;
        for (int i = 0; i < mixed.rows; ++i)
            if (s.mask.labels[std::size_t(i)] == SlotLabel::observed)
                std::memcpy(mixed.row(i), x0.row(i), sizeof(double) * std::size_t(mixed.cols));
        Mat d_mixed(mixed.rows, mixed.cols);
        out.distance = decoder.loss(mixed, model.weights.tau, need_grads ? &d_mixed : nullptr,
                                    model.weights.lambda_d);
        if (need_grads)
            for (int i = 0; i < mixed.rows; ++i)
                if (s.mask.labels[std::size_t(i)] != SlotLabel::observed)
                    axpy(1.0, d_mixed.row(i), d_x0_hat.row(i), mixed.cols);
    }
    out.total = total_loss(out.simple, out.distance, model.weights);

    if (need_grads) {
        Mat d_cond(x0_hat.rows, model.table.dim());
        DenoiserParams scratch_den;
        DenoiserParams& dgrads = sink.denoiser ? *sink.denoiser : scratch_den;
        if (!sink.denoiser) scratch_den = model.denoiser.zeros_like();
        denoiser_backward(d_x0_hat, dcache, model.denoiser, dgrads, d_cond);

        EncoderParams scratch_enc;
        EncoderParams& egrads = sink.encoder ? *sink.encoder : scratch_enc;
        if (!sink.encoder) scratch_enc = model.encoder.zeros_like();
        encode_backward(d_cond, ecache, model.encoder, egrads, sink.table);
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoint serialisation: magic "TRCK", version u32 = 1, u32 tensor count,
// per tensor (u16 name length, name bytes, rows u32, cols u32, f32
// little-endian row-major), then a length-prefixed UTF-8 key=value block

struct ModelCheckpoint {
    std::vector<std::pair<std::string, Mat>> tensors;
    std::map<std::string, std::string> config;
    std::uint64_t step = 0;
};

inline std::map<std::string, std::string> to_config_map(const TrainConfig& c) {
    std::map<std::string, std::string> m;
    auto putd = [&](const char* k, double v) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v;
        m[k] = ss.str();
    };
    m["epochs"] = std::to_string(c.epochs);
    m["batch-size"] = std::to_string(c.batch_size);
    putd("lr", c.lr);
    putd("adam-b1", c.adam_b1);
    putd("adam-b2", c.adam_b2);
    putd("adam-eps", c.adam_eps);
    putd("lambda-d", c.lambda_d);
    putd("tau", c.tau);
    m["seed"] = std::to_string(c.seed);
    m["schedule"] = c.schedule;
    m["dim"] = std::to_string(c.dim);
    m["heads"] = std::to_string(c.heads);
    m["layers"] = std::to_string(c.layers);
    m["blocks"] = std::to_string(c.blocks);
    m["hidden"] = std::to_string(c.hidden);
    m["unfreeze-table"] = c.unfreeze_table ? "1" : "0";
    if (!c.remask_ratios.empty()) {
        std::string list;
        for (double r : c.remask_ratios) {
            if (!list.empty()) list += ",";
            std::ostringstream ss;
            ss.precision(17);
            ss << r;
            list += ss.str();
        }
        m["remask"] = list;
    }
    return m;
}

inline TrainConfig train_config_from_map(const std::map<std::string, std::string>& m) {
    TrainConfig c;
    auto geti = [&](const char* k, int& dst) {
        auto it = m.find(k);
        if (it != m.end()) dst = std::stoi(it->second);
    };
    auto getd = [&](const char* k, double& dst) {
        auto it = m.find(k);
        if (it != m.end()) dst = std::stod(it->second);
    };
    geti("epochs", c.epochs);
    geti("batch-size", c.batch_size);
    getd("lr", c.lr);
    getd("adam-b1", c.adam_b1);
    getd("adam-b2", c.adam_b2);
    getd("adam-eps", c.adam_eps);
    getd("lambda-d", c.lambda_d);
    getd("tau", c.tau);
    if (auto it = m.find("seed"); it != m.end()) c.seed = std::stoull(it->second);
    if (auto it = m.find("schedule"); it != m.end()) c.schedule = it->second;
    geti("dim", c.dim);
    geti("heads", c.heads);
    geti("layers", c.layers);
    geti("blocks", c.blocks);
    geti("hidden", c.hidden);
    if (auto it = m.find("unfreeze-table"); it != m.end()) c.unfreeze_table = it->second == "1";
    if (auto it = m.find("remask"); it != m.end()) {
        std::stringstream ss(it->second);
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) c.remask_ratios.push_back(std::stod(part));
    }
    return c;
}

inline ModelCheckpoint checkpoint_from_model(Model& model, const TrainConfig& cfg,
                                             std::uint64_t step) {
    ModelCheckpoint ck;
    ck.config = to_config_map(cfg);
    ck.step = step;
    ck.tensors.emplace_back("table", model.table.m);
    model.encoder.visit([&](const std::string& n, Mat& m) { ck.tensors.emplace_back(n, m); });
    model.denoiser.visit([&](const std::string& n, Mat& m) { ck.tensors.emplace_back(n, m); });
    return ck;
}

inline Model model_from_checkpoint(const ModelCheckpoint& ck) {
    const TrainConfig cfg = train_config_from_map(ck.config);
    std::map<std::string, const Mat*> by_name;
    for (const auto& [name, mat] : ck.tensors) by_name[name] = &mat;
    auto it = by_name.find("table");
    if (it == by_name.end()) throw format_error("checkpoint: missing embedding table");

    Model m;
    m.table.m = *it->second;
    if (m.table.dim() != cfg.dim) throw format_error("checkpoint: table width mismatch");
    m.encoder = EncoderParams::make(cfg.dim, cfg.heads, cfg.layers);
    m.denoiser = DenoiserParams::make(cfg.dim, cfg.hidden, cfg.blocks);
    m.sched = schedule_preset(cfg.schedule);
    m.weights = LossWeights{cfg.lambda_d, cfg.tau};

    auto load = [&](const std::string& n, Mat& dst) {
        auto f = by_name.find(n);
        if (f == by_name.end()) throw format_error("checkpoint: missing tensor " + n);
        if (!dst.same_shape(*f->second)) throw format_error("checkpoint: shape mismatch for " + n);
        dst = *f->second;
    };
    m.encoder.visit(load);
    m.denoiser.visit(load);
    return m;
}

inline void save_checkpoint(std::ostream& out, const ModelCheckpoint& ck) {
    out.write("TRCK", 4);
    detail::put_u32(out, 1);
    detail::put_u32(out, std::uint32_t(ck.tensors.size()));
    for (const auto& [name, mat] : ck.tensors) {
        if (name.size() > 0xffff) throw input_error("save_checkpoint: tensor name too long");
        const std::uint16_t len = std::uint16_t(name.size());
        const unsigned char lb[2] = {static_cast<unsigned char>(len),
                                     static_cast<unsigned char>(len >> 8)};
        out.write(reinterpret_cast<const char*>(lb), 2);
        out.write(name.data(), std::streamsize(name.size()));
        detail::put_u32(out, std::uint32_t(mat.rows));
        detail::put_u32(out, std::uint32_t(mat.cols));
        for (double v : mat.a) detail::put_f32(out, float(v));
    }
    std::string cfg;
    cfg += "step=" + std::to_string(ck.step) + "\n";
    for (const auto& [k, v] : ck.config) cfg += k + "=" + v + "\n";
    detail::put_u32(out, std::uint32_t(cfg.size()));
    out.write(cfg.data(), std::streamsize(cfg.size()));
    if (!out) throw io_error("save_checkpoint: write failure");
}

inline ModelCheckpoint load_checkpoint(std::istream& in) {
    if (!in.good()) throw io_error("load_checkpoint: unreadable stream");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "TRCK", 4) != 0)
        throw format_error("load_checkpoint: bad magic");
    std::uint32_t version, count;
    if (!detail::get_u32(in, version) || version != 1)
        throw format_error("load_checkpoint: unsupported version");
    if (!detail::get_u32(in, count) || count > (1u << 20))
        throw format_error("load_checkpoint: bad tensor count");
    ModelCheckpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
        unsigned char lb[2];
        if (!in.read(reinterpret_cast<char*>(lb), 2))
            throw format_error("load_checkpoint: truncated tensor name");
        const std::uint16_t len = std::uint16_t(lb[0]) | std::uint16_t(lb[1]) << 8;
        std::string name(len, '\0');
        if (len > 0 && !in.read(name.data(), len))
            throw format_error("load_checkpoint: truncated tensor name");
        std::uint32_t rows, cols;
        if (!detail::get_u32(in, rows) || !detail::get_u32(in, cols) || rows < 1 || cols < 1 ||
            rows > (1u << 26) || cols > (1u << 26))
            throw format_error("load_checkpoint: bad tensor shape");
        Mat m{int(rows), int(cols)};
        for (double& v : m.a) {
            float f;
            if (!detail::get_f32(in, f)) throw format_error("load_checkpoint: truncated payload");
            v = double(f);
        }
        ck.tensors.emplace_back(std::move(name), std::move(m));
    }
    std::uint32_t cfg_len;
    if (!detail::get_u32(in, cfg_len) || cfg_len > (1u << 24))
        throw format_error("load_checkpoint: bad config block");
    std::string cfg(cfg_len, '\0');
    if (cfg_len > 0 && !in.read(cfg.data(), cfg_len))
        throw format_error("load_checkpoint: truncated config block");
    std::istringstream ss(cfg);
    std::string line;
    while (std::getline(ss, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = line.substr(0, eq);
        const std::string v = line.substr(eq + 1);
        if (k == "step")
            ck.step = std::stoull(v);
        else
            ck.config[k] = v;
    }
    return ck;
}

// ---------------------------------------------------------------------------
// training loop

/// Builds the training/validation samples of a split: the masked current
/// day plus all visible prior days of the same user.
inline std::vector<TrainSample> collect_samples(const Dataset& ds, Split split) {
    std::vector<TrainSample> out;
    for (const auto& [user, entries] : ds.users) {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].split != split) continue;
            if (!entries[i].mask)
                throw input_error("collect_samples: dataset has no masks; run masking first");
            if (entries[i].mask->count(SlotLabel::target) == 0) continue;
            TrainSample s;
            for (std::size_t j = 0; j < entries.size(); ++j)
                if (entries[j].traj.day < entries[i].traj.day)
                    s.history.push_back(visible_trajectory(entries[j]));
            s.current_visible = visible_trajectory(entries[i]);
            s.current_truth = entries[i].traj;
            s.mask = *entries[i].mask;
            out.push_back(std::move(s));
        }
    }
    return out;
}

struct EpochStats {
    double train_loss = 0.0;
    double valid_loss = 0.0;
};

struct TrainOutcome {
    Model model;
    ModelCheckpoint checkpoint;
    std::vector<EpochStats> epochs;
    bool diverged = false;
};

using EpochReporter = std::function<void(int epoch, const EpochStats&)>;

/// Single-worker, seed-deterministic optimisation of the encoder families
/// and denoiser parameters; the embedding table stays frozen unless
/// explicitly unfrozen. Divergence aborts with the last finite-loss
/// checkpoint.
inline TrainOutcome train_model(const Dataset& ds, const LocationEmbeddingTable& table,
                                const TrainConfig& cfg, const EpochReporter& report = {}) {
    if (cfg.epochs < 0 || cfg.batch_size < 1) throw input_error("train_model: bad config");
    TrainOutcome out;
    out.model = Model::make(table, cfg);
    Model& model = out.model;
    const SoftDecoder decoder(model.table, ds.grid);

    const auto train_samples = collect_samples(ds, Split::train);
    if (train_samples.empty()) throw input_error("train_model: no train samples with targets");
    const auto valid_samples = collect_samples(ds, Split::valid);

    ParamSet params = model.trainables(cfg.unfreeze_table);
    Adam adam(cfg.lr, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps);

    EncoderParams enc_grads = model.encoder.zeros_like();
    DenoiserParams den_grads = model.denoiser.zeros_like();
    Mat table_grads(model.table.m.rows, model.table.m.cols);
    ParamSet grads;
    enc_grads.visit([&](const std::string& n, Mat& m) { grads.add(n, m); });
    den_grads.visit([&](const std::string& n, Mat& m) { grads.add(n, m); });
    if (cfg.unfreeze_table) grads.add("table", table_grads);
    GradSink sink{&enc_grads, &den_grads, cfg.unfreeze_table ? &table_grads : nullptr};

    auto zero_grads = [&] {
        for (auto& it : grads.items) it.mat->zero();
    };
    auto scale_grads = [&](double s) {
        for (auto& it : grads.items)
            for (double& v : it.mat->a) v *= s;
    };

    const int n = ds.n_slots();
    ModelCheckpoint last_good = checkpoint_from_model(model, cfg, 0);
    std::uint64_t step_counter = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix64(cfg.seed + mix64(std::uint64_t(epoch) + 0x747261696eULL)));
        double epoch_loss = 0.0;
        std::size_t in_batch = 0;
        zero_grads();
        for (std::size_t si = 0; si < train_samples.size(); ++si) {
            const TrainSample* sample = &train_samples[si];
            TrainSample remasked;
            if (!cfg.remask_ratios.empty()) {
                const double ratio =
                    cfg.remask_ratios[rng.below(cfg.remask_ratios.size())];
                remasked = train_samples[si];
                remasked.mask = mask_targets(remasked.current_truth, ratio, rng.next_u64());
                remasked.current_visible = remasked.current_truth;
                for (int i = 0; i < remasked.current_visible.n_slots(); ++i)
                    if (remasked.mask.labels[std::size_t(i)] == SlotLabel::target)
                        remasked.current_visible.slots[std::size_t(i)].reset();
                sample = &remasked;
            }
            const int t = int(rng.below(std::uint64_t(model.sched.steps))) + 1;
            Mat eps(n, cfg.dim);
            for (double& v : eps.a) v = rng.normal();
            const auto l = pipeline_loss(*sample, t, eps, model, decoder, sink);
            epoch_loss += l.total;
            ++in_batch;
            if (int(in_batch) == cfg.batch_size || si + 1 == train_samples.size()) {
                scale_grads(1.0 / double(in_batch));
                adam.step(params, grads);
                ++step_counter;
                zero_grads();
                in_batch = 0;
            }
        }
        epoch_loss /= double(train_samples.size());

        EpochStats stats;
        stats.train_loss = epoch_loss;
        if (!valid_samples.empty()) {
            Rng vrng(mix64(cfg.seed + mix64(std::uint64_t(epoch) + 0x76616cULL)));
            double vloss = 0.0;
            for (const auto& s : valid_samples) {
                const int t = int(vrng.below(std::uint64_t(model.sched.steps))) + 1;
                Mat eps(n, cfg.dim);
                for (double& v : eps.a) v = vrng.normal();
                vloss += pipeline_loss(s, t, eps, model, decoder).total;
            }
            stats.valid_loss = vloss / double(valid_samples.size());
        }
        out.epochs.push_back(stats);
        if (report) report(epoch, stats);

        if (!std::isfinite(stats.train_loss)) {
            out.diverged = true;
            out.checkpoint = std::move(last_good);
            out.model = model_from_checkpoint(out.checkpoint);
            return out;
        }
        last_good = checkpoint_from_model(model, cfg, step_counter);
    }
    out.checkpoint = checkpoint_from_model(model, cfg, step_counter);
    return out;
}

} // namespace trajrec
