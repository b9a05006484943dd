#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include "trajrec/graph.hpp"
#include "trajrec/mat.hpp"

namespace trajrec {

/// Location embedding matrix of shape (|L|+1) x d. Row |L| is the null
/// token and stays all-zero; rows of locations never seen in training keep
/// their random initialisation.
struct LocationEmbeddingTable {
    Mat m;

    int n_locations() const { return m.rows - 1; }
    int dim() const { return m.cols; }
    LocationId null_loc() const { return LocationId(m.rows - 1); }

    const double* row(LocationId l) const {
        if (l < 0 || l >= m.rows) throw input_error("LocationEmbeddingTable: bad location id");
        return m.row(int(l));
    }
};

struct EmbedTrainConfig {
    int dim = 64;                     // total width; first/second-order halves
    int epochs = 5;
    double lr = 0.025;
    int negatives = 5;                // K negative draws per positive
    std::int64_t samples_per_epoch = 100000;
    std::uint64_t seed = 0;
    int workers = 1;                  // >1 runs lock-free shared updates
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct EmbedState {
    Mat first;      // first-order vertex vectors, L x d/2
    Mat second;     // second-order vertex vectors, L x d/2
    Mat context;    // second-order context vectors, L x d/2
    std::vector<LocationId> vertices;
    std::vector<double> neg_weights; // degree^0.75 per vertex
};

// one skip-gram style update: accumulate the source error over the positive
// target and K negatives, updating targets in place
inline void sgns_update(Mat& src, Mat& dst, LocationId u, LocationId v, int negatives,
                        const std::vector<LocationId>& vertices, const AliasTable& neg_table,
                        double lr, Rng& rng, std::vector<double>& err) {
    const int dim = src.cols;
    std::fill(err.begin(), err.end(), 0.0);
    double* xu = src.row(int(u));
    for (int k = 0; k <= negatives; ++k) {
        LocationId target;
        double label;
        if (k == 0) {
            target = v;
            label = 1.0;
        } else {
            target = vertices[neg_table.sample(rng)];
            // never contrast an edge against its own endpoints
            if (target == v || target == u) continue;
            label = 0.0;
        }
        double* xt = dst.row(int(target));
        const double g = lr * (label - sigmoid(dot(xu, xt, dim)));
        axpy(g, xt, err.data(), dim);
        axpy(g, xu, xt, dim);
    }
    for (int c = 0; c < dim; ++c) xu[c] += err[c];
}

inline void run_sampling(EmbedState& st, const EdgeSampler& edges, const AliasTable& neg_table,
                         const EmbedTrainConfig& cfg, std::int64_t n_samples, Rng rng) {
    std::vector<double> err(std::size_t(cfg.dim / 2), 0.0);
    for (std::int64_t i = 0; i < n_samples; ++i) {
        auto [a, b] = edges.sample(rng);
        if (rng.uniform() < 0.5) std::swap(a, b); // undirected: pick an orientation
        sgns_update(st.first, st.first, a, b, cfg.negatives, st.vertices, neg_table, cfg.lr, rng,
                    err);
        sgns_update(st.second, st.context, a, b, cfg.negatives, st.vertices, neg_table, cfg.lr,
                    rng, err);
    }
}

} // namespace detail

/// Proximity-preserving location embeddings in the LINE style: the first
/// d/2 components are trained on first-order proximity (edge endpoints
/// agree), the last d/2 on second-order proximity (vertex/context pairs),
/// both with degree^(3/4) negative sampling. The halves are concatenated.
class LineTrainer {
public:
    LineTrainer(const GroupTendencyGraph& graph, int n_locations, const EmbedTrainConfig& cfg)
        : graph_(graph), cfg_(cfg), n_locations_(n_locations), edges_(graph) {
        if (cfg.dim < 2 || cfg.dim % 2 != 0) throw input_error("embedding dim must be even and >= 2");
        if (cfg.negatives < 1) throw input_error("need at least one negative sample");
        if (graph.n_vertices() < 2 || graph.n_edges() < 1)
            throw input_error("graph needs at least 2 vertices and 1 edge");
        if (n_locations <= 0) throw input_error("n_locations must be positive");
        for (LocationId v : graph.vertices())
            if (v >= n_locations) throw input_error("graph vertex outside the location range");

        const int half = cfg.dim / 2;
        st_.first = Mat(n_locations, half);
        st_.second = Mat(n_locations, half);
        st_.context = Mat(n_locations, half);
        Rng rng(mix64(cfg.seed + 0x1a2b3c4dULL));
        const double r = 0.5 / double(cfg.dim);
        st_.first.fill_uniform(rng, -r, r);
        st_.second.fill_uniform(rng, -r, r);
        // context vectors start at zero, as in the reference skip-gram setup

        st_.vertices = graph.vertices();
        st_.neg_weights.reserve(st_.vertices.size());
        for (LocationId v : st_.vertices)
            st_.neg_weights.push_back(std::pow(double(graph.degree(v)), 0.75));
        neg_table_.emplace(st_.neg_weights);
    }

    void train() {
        for (int e = 0; e < cfg_.epochs; ++e) epoch(e);
    }

    void epoch(int index) {
        if (cfg_.workers <= 1) {
            detail::run_sampling(st_, edges_, *neg_table_, cfg_, cfg_.samples_per_epoch,
                                 Rng(mix64(cfg_.seed + mix64(std::uint64_t(index) + 0xe90cULL))));
        } else {
            std::vector<std::thread> pool;
            const std::int64_t share = cfg_.samples_per_epoch / cfg_.workers;
            for (int w = 0; w < cfg_.workers; ++w) {
                const std::int64_t n =
                    w + 1 == cfg_.workers ? cfg_.samples_per_epoch - share * (cfg_.workers - 1) : share;
                pool.emplace_back([this, index, w, n] {
                    detail::run_sampling(
                        st_, edges_, *neg_table_, cfg_, n,
                        Rng(mix64(cfg_.seed + mix64(std::uint64_t(index) * 131 + w + 0x9a51ULL))));
                });
            }
            for (auto& t : pool) t.join();
        }
        if (!st_.first.all_finite() || !st_.second.all_finite() || !st_.context.all_finite())
            throw training_error("embedding training produced non-finite values");
    }

    // deterministic full-edge objective (positives plus expected negatives),
    // used to watch optimisation progress
    double first_order_loss() const { return objective(st_.first, st_.first); }
    double second_order_loss() const { return objective(st_.second, st_.context); }

    LocationEmbeddingTable table() const {
        const int half = cfg_.dim / 2;
        LocationEmbeddingTable t;
        t.m = Mat(n_locations_ + 1, cfg_.dim);
        for (int l = 0; l < n_locations_; ++l) {
            double* out = t.m.row(l);
            std::memcpy(out, st_.first.row(l), sizeof(double) * half);
            std::memcpy(out + half, st_.second.row(l), sizeof(double) * half);
        }
        return t;
    }

private:
    double objective(const Mat& src, const Mat& dst) const {
        double neg_norm = 0.0;
        for (double w : st_.neg_weights) neg_norm += w;
        double loss = 0.0;
        double total_w = 0.0;
        for (const auto& [e, w] : graph_.edges()) {
            for (auto [u, v] : {std::pair{e.first, e.second}, std::pair{e.second, e.first}}) {
                double term = std::log(detail::sigmoid(dot(src.row(u), dst.row(v), src.cols)));
                for (std::size_t k = 0; k < st_.vertices.size(); ++k) {
                    const LocationId n = st_.vertices[k];
                    if (n == v || n == u) continue;
                    const double p = st_.neg_weights[k] / neg_norm;
                    term += cfg_.negatives * p *
                            std::log(detail::sigmoid(-dot(src.row(u), dst.row(n), src.cols)));
                }
                loss -= 0.5 * double(w) * term;
            }
            total_w += double(w);
        }
        return loss / total_w;
    }

    const GroupTendencyGraph& graph_;
    EmbedTrainConfig cfg_;
    int n_locations_;
    EdgeSampler edges_;
    std::optional<AliasTable> neg_table_;
    detail::EmbedState st_;
};

/// Trains both proximity objectives and returns the concatenated table with
/// a zero null row.
inline LocationEmbeddingTable train_line(const GroupTendencyGraph& graph, int n_locations,
                                         const EmbedTrainConfig& cfg) {
    LineTrainer trainer(graph, n_locations, cfg);
    trainer.train();
    return trainer.table();
}

// --- binary embedding file: magic "TREM", version u32 = 1, rows u32,
// --- cols u32, then rows*cols IEEE-754 f32 values, row-major little-endian

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline bool get_u32(std::istream& in, std::uint32_t& v) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    v = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
        std::uint32_t(b[3]) << 24;
    return true;
}

inline void put_f32(std::ostream& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

inline bool get_f32(std::istream& in, float& f) {
    std::uint32_t bits;
    if (!get_u32(in, bits)) return false;
    std::memcpy(&f, &bits, 4);
    return true;
}

} // namespace detail

inline void write_embeddings(std::ostream& out, const LocationEmbeddingTable& table) {
    out.write("TREM", 4);
    detail::put_u32(out, 1);
    detail::put_u32(out, std::uint32_t(table.m.rows));
    detail::put_u32(out, std::uint32_t(table.m.cols));
    for (double v : table.m.a) detail::put_f32(out, float(v));
    if (!out) throw io_error("write_embeddings: write failure");
}

inline LocationEmbeddingTable read_embeddings(std::istream& in) {
    if (!in.good()) throw io_error("read_embeddings: unreadable stream");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "TREM", 4) != 0)
        throw format_error("read_embeddings: bad magic");
    std::uint32_t version, rows, cols;
    if (!detail::get_u32(in, version) || version != 1)
        throw format_error("read_embeddings: unsupported version");
    if (!detail::get_u32(in, rows) || !detail::get_u32(in, cols) || rows < 1 || cols < 1 ||
        rows > (1u << 26) || cols > (1u << 16))
        throw format_error("read_embeddings: bad shape");
    LocationEmbeddingTable t;
    t.m = Mat(int(rows), int(cols));
    for (double& v : t.m.a) {
        float f;
        if (!detail::get_f32(in, f)) throw format_error("read_embeddings: truncated payload");
        v = double(f);
    }
    return t;
}

} // namespace trajrec
