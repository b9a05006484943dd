// trajrec: trajectory recovery pipeline front-end.
//
// Subcommands cover the full flow: synth/preprocess -> build-graph -> embed
// -> train -> recover -> evaluate, plus rule-based baselines. Every run
// prints its resolved configuration, and the same configuration is echoed
// into the header of every text artifact it writes.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "trajrec/dataset_io.hpp"
#include "trajrec/embed.hpp"
#include "trajrec/eval.hpp"
#include "trajrec/graph.hpp"
#include "trajrec/ingest.hpp"
#include "trajrec/pipeline.hpp"
#include "trajrec/train.hpp"

using namespace trajrec;

namespace {

void print_config(const std::string& command, const HeaderMap& cfg) {
    std::cout << "# command = " << command << "\n";
    for (const auto& [k, v] : cfg) std::cout << "# " << k << " = " << v << "\n";
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
}

std::ofstream open_out(const std::string& path, bool binary = false) {
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw io_error("cannot open output file: " + path);
    return out;
}

std::ifstream open_in(const std::string& path, bool binary = false) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw io_error("cannot open input file: " + path);
    return in;
}

Dataset load_dataset(const std::string& path, HeaderMap* header = nullptr) {
    auto in = open_in(path);
    Dataset ds = read_dataset(in, header);
    if (ds.users.empty()) throw input_error("dataset is empty: " + path);
    return ds;
}

std::vector<Trajectory> visible_train_split(const Dataset& ds) {
    std::vector<Trajectory> out;
    for (const auto& [u, entries] : ds.users)
        for (const auto& e : entries)
            if (e.split == Split::train) out.push_back(visible_trajectory(e));
    return out;
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "valid") return Split::valid;
    if (name == "test") return Split::test;
    throw input_error("unknown split '" + name + "' (expected train|valid|test)");
}

HeaderMap grid_header(const Grid& g, int slot_minutes) {
    return {
        {"grid-rows", std::to_string(g.rows)},
        {"grid-cols", std::to_string(g.cols)},
        {"cell-side-m", fmt(g.cell_side_m)},
        {"origin-lat", fmt(g.origin_lat)},
        {"origin-lon", fmt(g.origin_lon)},
        {"slot-minutes", std::to_string(slot_minutes)},
    };
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
    std::string input, format = "csv", user = "plt-user", out;
    int grid_rows = 32, grid_cols = 32;
    double origin_lat = 0.0, origin_lon = 0.0, cell_side_m = 515.0;
    int slot_minutes = 30;
    int min_slots = 1, min_days = 5;
    double ratio = 0.0;
    std::uint64_t seed = 0;
};

int run_preprocess(const PreprocessArgs& a) {
    Grid grid{a.grid_rows, a.grid_cols, a.origin_lat, a.origin_lon, a.cell_side_m};
    auto in = open_in(a.input);
    const auto parsed =
        parse_points(in, a.format == "plt" ? PointFormat::plt : PointFormat::csv, a.user);
    std::cerr << "parsed " << parsed.points.size() << " points (" << parsed.malformed
              << " malformed lines)\n";

    auto disc = discretize(parsed.points, grid, a.slot_minutes);
    if (disc.dropped_outside_grid > 0)
        std::cerr << "dropped " << disc.dropped_outside_grid << " points outside the grid\n";

    Dataset ds = filter_dataset(disc.dataset, a.min_slots, a.min_days);
    if (ds.users.empty()) throw input_error("no users survive the filtering thresholds");
    std::vector<std::string> warnings;
    ds = split_chronological(ds, {}, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    if (a.ratio > 0.0) apply_masks(ds, a.ratio, a.seed);

    HeaderMap header = grid_header(grid, a.slot_minutes);
    header["min-slots"] = std::to_string(a.min_slots);
    header["min-days"] = std::to_string(a.min_days);
    header["seed"] = std::to_string(a.seed);
    if (a.ratio > 0.0) header["ratio"] = fmt(a.ratio);
    print_config("preprocess", header);

    auto out = open_out(a.out);
    write_dataset(out, ds, header);
    std::cerr << "wrote " << ds.n_trajectories() << " user-days for " << ds.users.size()
              << " users to " << a.out << "\n";
    return 0;
}

struct SynthArgs {
    int users = 20, days = 10;
    int grid_rows = 4, grid_cols = 4;
    double cell_side_m = 515.0;
    int slot_minutes = 30;
    int anchors = 2;
    double noise = 0.05, sparsity = 0.3;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::string out;
};

int run_synth(const SynthArgs& a) {
    SynthConfig cfg;
    cfg.n_users = a.users;
    cfg.n_days = a.days;
    cfg.grid_rows = a.grid_rows;
    cfg.grid_cols = a.grid_cols;
    cfg.cell_side_m = a.cell_side_m;
    cfg.slot_minutes = a.slot_minutes;
    cfg.anchors_per_user = a.anchors;
    cfg.noise_prob = a.noise;
    cfg.drop_prob = a.sparsity;
    cfg.seed = a.seed;

    Dataset ds = generate_synthetic(cfg);
    std::vector<std::string> warnings;
    ds = split_chronological(ds, {}, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    if (a.ratio > 0.0) apply_masks(ds, a.ratio, a.seed);

    HeaderMap header = grid_header(ds.grid, a.slot_minutes);
    header["users"] = std::to_string(a.users);
    header["days"] = std::to_string(a.days);
    header["anchors"] = std::to_string(a.anchors);
    header["noise"] = fmt(a.noise);
    header["sparsity"] = fmt(a.sparsity);
    header["seed"] = std::to_string(a.seed);
    if (a.ratio > 0.0) header["ratio"] = fmt(a.ratio);
    print_config("synth", header);

    auto out = open_out(a.out);
    write_dataset(out, ds, header);
    return 0;
}

struct BuildGraphArgs {
    std::string input, out;
};

int run_build_graph(const BuildGraphArgs& a) {
    Dataset ds = load_dataset(a.input);
    ds = split_chronological(ds);
    const auto graph = build_group_graph(visible_train_split(ds));
    print_config("build-graph", {{"input", a.input},
                                 {"locations", std::to_string(ds.grid.n_cells())},
                                 {"vertices", std::to_string(graph.n_vertices())},
                                 {"edges", std::to_string(graph.n_edges())}});
    auto out = open_out(a.out);
    write_graph(out, graph);
    return 0;
}

struct EmbedArgs {
    std::string input, out;
    int locations = 0, grid_rows = 0, grid_cols = 0;
    int dim = 64, negatives = 5, epochs = 5, workers = 1;
    std::int64_t samples = 100000;
    double lr = 0.025;
    std::uint64_t seed = 0;
};

int run_embed(const EmbedArgs& a) {
    int n_loc = a.locations;
    if (n_loc == 0 && a.grid_rows > 0 && a.grid_cols > 0) n_loc = a.grid_rows * a.grid_cols;
    if (n_loc <= 0) throw input_error("embed needs --locations or --grid-rows/--grid-cols");
    auto in = open_in(a.input);
    const auto graph = read_graph(in);

    EmbedTrainConfig cfg;
    cfg.dim = a.dim;
    cfg.negatives = a.negatives;
    cfg.epochs = a.epochs;
    cfg.samples_per_epoch = a.samples;
    cfg.lr = a.lr;
    cfg.seed = a.seed;
    cfg.workers = a.workers;

    print_config("embed", {{"input", a.input},
                           {"locations", std::to_string(n_loc)},
                           {"dim", std::to_string(a.dim)},
                           {"neg", std::to_string(a.negatives)},
                           {"epochs", std::to_string(a.epochs)},
                           {"samples", std::to_string(a.samples)},
                           {"lr", fmt(a.lr)},
                           {"workers", std::to_string(a.workers)},
                           {"seed", std::to_string(a.seed)}});

    const auto table = train_line(graph, n_loc, cfg);
    auto out = open_out(a.out, true);
    write_embeddings(out, table);
    return 0;
}

struct TrainArgs {
    std::string input, emb, out;
    int epochs = 30, batch = 1;
    double lr = 1e-3, lambda_d = 1.2, tau = 1.0;
    int layers = 4, heads = 4, blocks = 4, hidden = 64;
    int steps = 0;
    std::string schedule = "default";
    std::uint64_t seed = 0;
    bool unfreeze_table = false;
    double ratio = 0.0;
};

int run_train(const TrainArgs& a) {
    Dataset ds = load_dataset(a.input);
    ds = split_chronological(ds);
    if (a.ratio > 0.0) apply_masks(ds, a.ratio, a.seed);

    auto ein = open_in(a.emb, true);
    const auto table = read_embeddings(ein);

    TrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.lr = a.lr;
    cfg.lambda_d = a.lambda_d;
    cfg.tau = a.tau;
    cfg.seed = a.seed;
    cfg.schedule = a.steps > 0 ? "linear:" + std::to_string(a.steps) : a.schedule;
    cfg.dim = table.dim();
    cfg.heads = a.heads;
    cfg.layers = a.layers;
    cfg.blocks = a.blocks;
    cfg.hidden = a.hidden;
    cfg.unfreeze_table = a.unfreeze_table;

    HeaderMap header = to_config_map(cfg);
    header["input"] = a.input;
    header["emb"] = a.emb;
    print_config("train", header);

    const auto outcome = train_model(ds, table, cfg, [](int epoch, const EpochStats& st) {
        std::cerr << "epoch " << epoch << " train " << st.train_loss << " valid " << st.valid_loss
                  << "\n";
    });
    if (outcome.diverged)
        std::cerr << "warning: training diverged; keeping the last finite checkpoint\n";

    auto out = open_out(a.out, true);
    save_checkpoint(out, outcome.checkpoint);
    return 0;
}

struct RecoverArgs {
    std::string input, ckpt, out, split = "test", missing;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::string report;
};

int run_recover(const RecoverArgs& a) {
    Dataset ds = load_dataset(a.input);
    ds = split_chronological(ds);
    auto cin_ = open_in(a.ckpt, true);
    Model model = model_from_checkpoint(load_checkpoint(cin_));
    const Split split = split_from_name(a.split);

    HeaderMap header{{"input", a.input},
                     {"ckpt", a.ckpt},
                     {"split", a.split},
                     {"seed", std::to_string(a.seed)}};

    if (!a.missing.empty()) {
        std::vector<double> ratios;
        std::stringstream ss(a.missing);
        std::string part;
        while (std::getline(ss, part, '/'))
            if (!part.empty()) ratios.push_back(std::stod(part));
        if (ratios.empty()) throw input_error("--missing needs ratios like 0.2/0.4/0.6/0.8");
        header["missing"] = a.missing;
        print_config("recover", header);

        Report combined;
        for (double ratio : ratios) {
            Dataset masked = ds;
            apply_masks(masked, ratio, a.seed);
            auto preds = recover_dataset(masked, model, split, a.seed);
            const Report r = evaluate(masked, preds, split);
            combined.per_ratio.push_back({ratio, r.recall, r.map, r.distance_m, r.n_targets});

            const std::string path = a.out + ".m" + std::to_string(int(ratio * 100 + 0.5));
            HeaderMap h = header;
            h["ratio"] = fmt(ratio);
            auto out = open_out(path);
            write_predictions(out, preds, h);
            std::cerr << "missing " << ratio << ": recall " << r.recall << " map " << r.map
                      << " distance_m " << r.distance_m << "\n";
        }
        const std::string report_path = a.report.empty() ? a.out + ".report.txt" : a.report;
        auto rout = open_out(report_path);
        write_report(rout, combined, header);
        return 0;
    }

    if (a.ratio > 0.0) apply_masks(ds, a.ratio, a.seed);
    bool any_mask = false;
    for (const auto& [u, es] : ds.users)
        for (const auto& e : es) any_mask = any_mask || e.mask.has_value();
    if (!any_mask) throw input_error("dataset has no masks; pass --ratio or mask at preprocess");
    if (a.ratio > 0.0) header["ratio"] = fmt(a.ratio);
    print_config("recover", header);

    auto preds = recover_dataset(ds, model, split, a.seed);
    auto out = open_out(a.out);
    write_predictions(out, preds, header);
    return 0;
}

struct EvaluateArgs {
    std::string input, preds, out, split = "test";
    bool all_splits = false;
};

int run_evaluate(const EvaluateArgs& a) {
    Dataset ds = load_dataset(a.input);
    ds = split_chronological(ds);
    auto pin = open_in(a.preds);
    const auto preds = read_predictions(pin);

    HeaderMap header{{"input", a.input}, {"preds", a.preds}};
    std::optional<Split> split;
    if (!a.all_splits) {
        split = split_from_name(a.split);
        header["split"] = a.split;
    } else {
        header["split"] = "all";
    }
    print_config("evaluate", header);

    const Report r = evaluate(ds, preds, split);
    std::cout << "recall = " << r.recall << "\n"
              << "map = " << r.map << "\n"
              << "distance_m = " << r.distance_m << "\n"
              << "n_targets = " << r.n_targets << "\n";
    if (!a.out.empty()) {
        auto out = open_out(a.out);
        write_report(out, r, header);
    }
    return 0;
}

struct BaselineArgs {
    std::string input, method = "linear", out, split = "test";
    double ratio = 0.0;
    std::uint64_t seed = 0;
};

int run_baseline_cmd(const BaselineArgs& a) {
    Dataset ds = load_dataset(a.input);
    ds = split_chronological(ds);
    if (a.ratio > 0.0) apply_masks(ds, a.ratio, a.seed);
    const Split split = split_from_name(a.split);
    const auto method = baseline_from_name(a.method);

    HeaderMap header{{"input", a.input},
                     {"method", a.method},
                     {"split", a.split},
                     {"seed", std::to_string(a.seed)}};
    if (a.ratio > 0.0) header["ratio"] = fmt(a.ratio);
    print_config("baseline", header);

    const auto preds = run_baseline(ds, method, split);
    auto out = open_out(a.out);
    write_predictions(out, preds, header);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"trajectory recovery toolkit: group-transition graph embeddings, an attention "
                 "trajectory encoder and conditional diffusion recovery"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value config file; flags override file values");

    PreprocessArgs pa;
    auto* pre = app.add_subcommand("preprocess", "discretise raw GPS points into a dataset");
    pre->add_option("--input", pa.input, "point file")->required();
    pre->add_option("--format", pa.format, "csv|plt")->check(CLI::IsMember({"csv", "plt"}));
    pre->add_option("--user", pa.user, "user id for plt input");
    pre->add_option("--out", pa.out, "dataset output path")->required();
    pre->add_option("--grid-rows", pa.grid_rows);
    pre->add_option("--grid-cols", pa.grid_cols);
    pre->add_option("--origin-lat", pa.origin_lat);
    pre->add_option("--origin-lon", pa.origin_lon);
    pre->add_option("--cell-side-m", pa.cell_side_m);
    pre->add_option("--slot-minutes", pa.slot_minutes);
    pre->add_option("--min-slots", pa.min_slots);
    pre->add_option("--min-days", pa.min_days);
    pre->add_option("--ratio", pa.ratio, "mask this fraction of observations as targets");
    pre->add_option("--seed", pa.seed);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "generate a seed-deterministic synthetic dataset");
    synth->add_option("--users", sa.users);
    synth->add_option("--days", sa.days);
    synth->add_option("--grid-rows", sa.grid_rows);
    synth->add_option("--grid-cols", sa.grid_cols);
    synth->add_option("--cell-side-m", sa.cell_side_m);
    synth->add_option("--slot-minutes", sa.slot_minutes);
    synth->add_option("--anchors", sa.anchors);
    synth->add_option("--noise", sa.noise, "per-slot neighbour-flip probability");
    synth->add_option("--sparsity", sa.sparsity, "per-slot drop probability");
    synth->add_option("--ratio", sa.ratio, "mask this fraction of observations as targets");
    synth->add_option("--seed", sa.seed);
    synth->add_option("--out", sa.out)->required();

    BuildGraphArgs ba;
    auto* bg = app.add_subcommand("build-graph", "transition graph from the training split");
    bg->add_option("--input", ba.input)->required();
    bg->add_option("--out", ba.out)->required();

    EmbedArgs ea;
    auto* embed = app.add_subcommand("embed", "train proximity-preserving location embeddings");
    embed->add_option("--input", ea.input, "graph tsv")->required();
    embed->add_option("--out", ea.out, "binary embedding output")->required();
    embed->add_option("--locations", ea.locations, "location count (grid cells)");
    embed->add_option("--grid-rows", ea.grid_rows);
    embed->add_option("--grid-cols", ea.grid_cols);
    embed->add_option("--dim", ea.dim);
    embed->add_option("--neg", ea.negatives);
    embed->add_option("--epochs", ea.epochs);
    embed->add_option("--samples", ea.samples, "edge samples per epoch");
    embed->add_option("--lr", ea.lr);
    embed->add_option("--workers", ea.workers);
    embed->add_option("--seed", ea.seed);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train the encoder and denoiser");
    train->add_option("--input", ta.input, "masked dataset")->required();
    train->add_option("--emb", ta.emb, "embedding file")->required();
    train->add_option("--out", ta.out, "checkpoint output")->required();
    train->add_option("--epochs", ta.epochs);
    train->add_option("--batch", ta.batch);
    train->add_option("--lr", ta.lr);
    train->add_option("--lambda-d", ta.lambda_d);
    train->add_option("--tau", ta.tau);
    train->add_option("--layers", ta.layers);
    train->add_option("--heads", ta.heads);
    train->add_option("--blocks", ta.blocks);
    train->add_option("--hidden", ta.hidden);
    train->add_option("--steps", ta.steps, "diffusion steps (overrides --schedule)");
    train->add_option("--schedule", ta.schedule, "default|long|linear:<T>");
    train->add_option("--seed", ta.seed);
    train->add_option("--ratio", ta.ratio, "re-mask at this ratio before training");
    train->add_flag("--unfreeze-table", ta.unfreeze_table, "also train the embedding table");

    RecoverArgs ra;
    auto* rec = app.add_subcommand("recover", "fill masked slots with the diffusion model");
    rec->add_option("--input", ra.input)->required();
    rec->add_option("--ckpt", ra.ckpt)->required();
    rec->add_option("--out", ra.out)->required();
    rec->add_option("--split", ra.split, "train|valid|test");
    rec->add_option("--ratio", ra.ratio, "re-mask at this single ratio");
    rec->add_option("--missing", ra.missing, "sweep, e.g. 0.2/0.4/0.6/0.8");
    rec->add_option("--report", ra.report, "sweep report path");
    rec->add_option("--seed", ra.seed);

    EvaluateArgs ev;
    auto* eval_cmd = app.add_subcommand("evaluate", "score predictions against masked truth");
    eval_cmd->add_option("--input", ev.input)->required();
    eval_cmd->add_option("--preds", ev.preds)->required();
    eval_cmd->add_option("--out", ev.out, "report output path");
    eval_cmd->add_option("--split", ev.split, "train|valid|test");
    eval_cmd->add_flag("--all-splits", ev.all_splits, "score every masked trajectory");

    BaselineArgs bl;
    auto* base = app.add_subcommand("baseline", "rule-based recovery");
    base->add_option("--input", bl.input)->required();
    base->add_option("--method", bl.method)->check(CLI::IsMember({"linear", "history", "top"}));
    base->add_option("--out", bl.out)->required();
    base->add_option("--split", bl.split, "train|valid|test");
    base->add_option("--ratio", bl.ratio, "re-mask at this ratio first");
    base->add_option("--seed", bl.seed);

    try {
        app.parse(argc, argv);
        if (pre->parsed()) return run_preprocess(pa);
        if (synth->parsed()) return run_synth(sa);
        if (bg->parsed()) return run_build_graph(ba);
        if (embed->parsed()) return run_embed(ea);
        if (train->parsed()) return run_train(ta);
        if (rec->parsed()) return run_recover(ra);
        if (eval_cmd->parsed()) return run_evaluate(ev);
        if (base->parsed()) return run_baseline_cmd(bl);
        std::cerr << app.help() << "\n";
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const input_error& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 1;
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const format_error& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
