// mgnni: command-line front end for dataset generation, training, evaluation
// and effective-range probes.
//
// Exit codes: 0 success, 2 usage (including out-of-domain parameter values),
// 3 I/O, 4 parse or invalid input data, 5 numerical divergence, 6 any other
// failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mgnni/mgnni.hpp"

namespace fs = std::filesystem;
using namespace mgnni;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 2, kIo = 3, kParse = 4, kDivergence = 5, kOther = 6 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string default_out_dir() {
    const char* env = std::getenv("MGNNI_OUT_DIR");
    return (env != nullptr && *env != '\0') ? env : "mgnni_out";
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
    std::vector<T> out;
    for (std::string_view field : split_fields(text, ',')) {
        const std::string f(trim(field));
        if (f.empty()) throw UsageError(std::string(flag) + ": empty entry in '" + text + "'");
        try {
            std::size_t used = 0;
            if constexpr (std::is_same_v<T, double>) {
                out.push_back(std::stod(f, &used));
            } else {
                const long long v = std::stoll(f, &used);
                if (v < 0) throw UsageError(std::string(flag) + ": negative value '" + f + "'");
                out.push_back(static_cast<T>(v));
            }
            if (used != f.size()) throw std::invalid_argument(f);
        } catch (const std::logic_error&) {
            throw UsageError(std::string(flag) + ": cannot parse '" + f + "'");
        }
    }
    if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
    return out;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

/// Writes the effective configuration (file values, flags and defaults) next to the outputs.
void echo_config(const CLI::App& app, const fs::path& dir) {
    ensure_dir(dir);
    write_file(dir / "config.ini", app.config_to_str(true, false));
}

// ---- gen-chains / gen-colors ---------------------------------------------

struct GenChainsOpts {
    ChainsSpec spec;
    std::string out;
};

void run_gen_chains(const CLI::App& root, const GenChainsOpts& o) {
    const Dataset d = gen_chains(o.spec);
    nlohmann::ordered_json spec{{"kind", "chains"},
                                {"num_classes", o.spec.num_classes},
                                {"chains_per_class", o.spec.chains_per_class},
                                {"length", o.spec.length},
                                {"seed", o.spec.seed}};
    save_dataset(d, o.out, spec);
    echo_config(root, o.out);
    std::cout << "wrote " << d.graph.n << " nodes to " << o.out << "\n";
}

struct GenColorsOpts {
    ColorCountingSpec spec;
    std::string out;
};

void run_gen_colors(const CLI::App& root, const GenColorsOpts& o) {
    const Dataset d = gen_color_counting(o.spec);
    nlohmann::ordered_json spec{{"kind", "colors"},
                                {"num_colors", o.spec.num_colors},
                                {"num_chains", o.spec.num_chains},
                                {"length", o.spec.length},
                                {"colored_fraction", o.spec.colored_fraction},
                                {"seed", o.spec.seed}};
    save_dataset(d, o.out, spec);
    echo_config(root, o.out);
    std::cout << "wrote " << d.graph.n << " nodes to " << o.out << "\n";
}

// ---- train / eval ----------------------------------------------------------

struct TrainOpts {
    std::string data;
    std::size_t chains_length = 0;
    std::string scales = "1";
    double gamma = 0.8;
    std::size_t hidden = 16;
    std::string encoder_hidden = "16";
    bool no_encoder_bias = false;
    double dropout = 0.5;
    double lr = 0.01;
    double wd = 5e-6;
    std::size_t epochs = 300;
    std::size_t patience = 100;
    std::uint64_t seed = 0;
    double tol = 1e-6;
    std::size_t max_iters = 300;
    bool no_timing = false;
    std::string out;
};

Dataset load_or_generate(const std::string& data, std::size_t chains_length, std::uint64_t seed) {
    if (!data.empty() && chains_length != 0) throw UsageError("train: give either --data or --chains, not both");
    if (!data.empty()) return load_dataset(data);
    if (chains_length == 0) throw UsageError("train: one of --data or --chains is required");
    ChainsSpec spec;
    spec.length = chains_length;
    spec.seed = seed;
    return gen_chains(spec);
}

nlohmann::ordered_json metrics_json(const MgnniModel& model, const Dataset& d) {
    const DenseMatrix logits = forward(model, d.graph).logits;
    nlohmann::ordered_json j;
    j["metric"] = model.multi_label ? "micro_f1" : "accuracy";
    j["train"] = node_metric(model, logits, d.graph.labels, d.split.train);
    j["val"] = d.split.val.empty() ? 0.0 : node_metric(model, logits, d.graph.labels, d.split.val);
    j["test"] = d.split.test.empty() ? 0.0 : node_metric(model, logits, d.graph.labels, d.split.test);
    return j;
}

void run_train(const CLI::App& root, const TrainOpts& o) {
    ModelConfig mc;
    mc.scales = parse_list<unsigned>(o.scales, "--scales");
    try {
        check_distinct_scales(mc.scales);
    } catch (const DomainError& e) {
        throw UsageError(std::string("--scales: ") + e.what());
    }
    mc.encoder_hidden = parse_list<std::size_t>(o.encoder_hidden, "--encoder-hidden");
    mc.encoder_bias = !o.no_encoder_bias;
    mc.hidden = o.hidden;
    mc.gamma = o.gamma;
    mc.dropout = o.dropout;
    mc.solver.tol = o.tol;
    mc.solver.max_iters = o.max_iters;

    const Dataset d = load_or_generate(o.data, o.chains_length, o.seed);
    mc.feature_dim = d.graph.features.rows();
    mc.multi_label = d.graph.labels.is_multi_label();
    mc.num_classes = d.graph.labels.num_classes();

    Rng rng(o.seed);
    MgnniModel model = MgnniModel::init(mc, rng);
    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.lr = o.lr;
    tc.weight_decay = o.wd;
    tc.seed = o.seed;
    tc.patience = o.patience;
    tc.record_time = !o.no_timing;
    const TrainResult r = train_loop(model, d.graph, d.split, tc);

    const fs::path out(o.out);
    ensure_dir(out);
    save_checkpoint(model, out / "checkpoint.json");
    write_file(out / "history.csv", history_csv(r.history));
    nlohmann::ordered_json report;
    report["epochs_run"] = r.history.size();
    report["best_epoch"] = r.best_epoch;
    report["metrics"] = metrics_json(model, d);
    write_file(out / "metrics.json", report.dump(1) + "\n");
    echo_config(root, out);
    std::cout << report.dump() << "\n";
}

struct EvalOpts {
    std::string checkpoint;
    std::string data;
};

void run_eval(const EvalOpts& o) {
    const MgnniModel model = load_checkpoint(o.checkpoint);
    const Dataset d = load_dataset(o.data);
    std::cout << metrics_json(model, d).dump() << "\n";
}

// ---- probe-range / bound ---------------------------------------------------

struct ProbeOpts {
    std::string gammas = "0.3,0.5,0.7,0.9";
    std::string ms = "1";
    std::size_t length = 60;
    double theta = 1e-8;
    std::uint64_t seed = 0;
    std::size_t hidden = 8;
    std::size_t feature_dim = 2;
    std::string out;
};

void run_probe(const CLI::App& root, const ProbeOpts& o) {
    const auto gammas = parse_list<double>(o.gammas, "--gammas");
    const auto ms = parse_list<unsigned>(o.ms, "--ms");
    if (!(o.theta > 0.0 && o.theta < 1.0)) throw UsageError("--theta must lie in (0,1)");

    // The encoder and F are drawn once per seed and shared by every (gamma, m)
    // so that curves differ only in the propagation settings.
    Rng rng(o.seed);
    const MlpEncoder enc = MlpEncoder::init({o.feature_dim, o.hidden}, 0.0, rng);
    const DenseMatrix f = glorot_uniform(o.hidden, o.hidden, rng, 0.5);
    const Graph g = probe_chain(o.length, o.feature_dim);
    SolverConfig cfg;
    cfg.tol = 1e-300;
    cfg.max_iters = o.length + 2;

    const fs::path out(o.out);
    ensure_dir(out);
    std::ostringstream summary;
    summary << "gamma,m,theta,empirical_range,range_bound,clamped\n";
    for (double gamma : gammas) {
        for (unsigned m : ms) {
            const ScaleModule mod(f, gamma, m);
            const DecayCurve c = measure_decay(mod, g, enc, 0, cfg);
            std::ostringstream name;
            name << "decay_g" << format_double(gamma) << "_m" << m << ".csv";
            write_file(out / name.str(), decay_curve_csv(c));
            std::size_t clamped = 0;
            for (bool b : c.clamped) clamped += b ? 1 : 0;
            summary << format_double(gamma) << ',' << m << ',' << format_double(o.theta) << ','
                    << empirical_range(c, o.theta) << ',' << range_bound(gamma, o.theta, m) << ',' << clamped
                    << '\n';
        }
    }
    write_file(out / "summary.csv", summary.str());
    echo_config(root, out);
    std::cout << summary.str();
}

struct BoundOpts {
    double gamma = 0.8;
    double theta = 1e-8;
    unsigned m = 1;
};

void run_bound(const BoundOpts& o) { std::cout << range_bound(o.gamma, o.theta, o.m) << "\n"; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multiscale implicit graph neural networks"};
    app.set_config("--config", "", "INI config file; keys mirror flag names, flags override file values");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);

    const std::string out_default = default_out_dir();

    GenChainsOpts gc;
    gc.out = out_default;
    auto* c_gc = app.add_subcommand("gen-chains", "Generate the directed chains benchmark");
    c_gc->add_option("--classes", gc.spec.num_classes, "Number of classes")->capture_default_str();
    c_gc->add_option("--chains-per-class", gc.spec.chains_per_class, "Chains per class")->capture_default_str();
    c_gc->add_option("--length", gc.spec.length, "Chain length l")->capture_default_str();
    c_gc->add_option("--seed", gc.spec.seed, "Random seed")->capture_default_str();
    c_gc->add_option("--out", gc.out, "Output directory (default $MGNNI_OUT_DIR)")->capture_default_str();

    GenColorsOpts gco;
    gco.out = out_default;
    auto* c_gco = app.add_subcommand("gen-colors", "Generate the color-counting benchmark");
    c_gco->add_option("--colors", gco.spec.num_colors, "Number of colors")->capture_default_str();
    c_gco->add_option("--chains", gco.spec.num_chains, "Number of chains")->capture_default_str();
    c_gco->add_option("--length", gco.spec.length, "Chain length")->capture_default_str();
    c_gco->add_option("--colored-fraction", gco.spec.colored_fraction, "Fraction of colored nodes")
        ->capture_default_str();
    c_gco->add_option("--seed", gco.spec.seed, "Random seed")->capture_default_str();
    c_gco->add_option("--out", gco.out, "Output directory (default $MGNNI_OUT_DIR)")->capture_default_str();

    TrainOpts tr;
    tr.out = out_default;
    auto* c_tr = app.add_subcommand("train", "Train a model and write checkpoint, history and metrics");
    c_tr->add_option("--data", tr.data, "Dataset directory written by gen-chains/gen-colors");
    c_tr->add_option("--chains", tr.chains_length, "Generate a chains dataset of this length instead");
    c_tr->add_option("--scales", tr.scales, "Comma-separated distinct scales, e.g. 1,2")->capture_default_str();
    c_tr->add_option("--gamma", tr.gamma, "Contraction factor in [0,1)")->capture_default_str();
    c_tr->add_option("--hidden", tr.hidden, "Equilibrium width h")->capture_default_str();
    c_tr->add_option("--encoder-hidden", tr.encoder_hidden, "Comma-separated encoder hidden widths")
        ->capture_default_str();
    c_tr->add_flag("--no-encoder-bias", tr.no_encoder_bias, "Bias-free encoder layers");
    c_tr->add_option("--dropout", tr.dropout, "Encoder dropout rate")->capture_default_str();
    c_tr->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
    c_tr->add_option("--wd", tr.wd, "Weight decay")->capture_default_str();
    c_tr->add_option("--epochs", tr.epochs, "Maximum epochs")->capture_default_str();
    c_tr->add_option("--patience", tr.patience, "Early-stopping patience")->capture_default_str();
    c_tr->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
    c_tr->add_option("--tol", tr.tol, "Fixed-point relative tolerance")->capture_default_str();
    c_tr->add_option("--max-iters", tr.max_iters, "Fixed-point iteration cap")->capture_default_str();
    c_tr->add_flag("--no-timing", tr.no_timing, "Write 0 in the seconds column of history.csv");
    c_tr->add_option("--out", tr.out, "Output directory (default $MGNNI_OUT_DIR)")->capture_default_str();

    EvalOpts ev;
    auto* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    c_ev->add_option("--checkpoint", ev.checkpoint, "checkpoint.json written by train")->required();
    c_ev->add_option("--data", ev.data, "Dataset directory")->required();

    ProbeOpts pr;
    pr.out = out_default;
    auto* c_pr = app.add_subcommand("probe-range", "Measure equilibrium decay on a directed chain");
    c_pr->add_option("--gammas", pr.gammas, "Comma-separated gamma values")->capture_default_str();
    c_pr->add_option("--ms", pr.ms, "Comma-separated scales")->capture_default_str();
    c_pr->add_option("--length", pr.length, "Chain length")->capture_default_str();
    c_pr->add_option("--theta", pr.theta, "Effective-range threshold")->capture_default_str();
    c_pr->add_option("--seed", pr.seed, "Seed for the fixed encoder and F")->capture_default_str();
    c_pr->add_option("--hidden", pr.hidden, "Equilibrium width h")->capture_default_str();
    c_pr->add_option("--feature-dim", pr.feature_dim, "Input feature dimension")->capture_default_str();
    c_pr->add_option("--out", pr.out, "Output directory (default $MGNNI_OUT_DIR)")->capture_default_str();

    BoundOpts bo;
    auto* c_bo = app.add_subcommand("bound", "Print the theoretical effective-range bound");
    c_bo->add_option("--gamma", bo.gamma, "Contraction factor in (0,1)")->capture_default_str();
    c_bo->add_option("--theta", bo.theta, "Threshold in (0,1)")->capture_default_str();
    c_bo->add_option("--m", bo.m, "Scale m >= 1")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*c_gc) run_gen_chains(app, gc);
        else if (*c_gco) run_gen_colors(app, gco);
        else if (*c_tr) run_train(app, tr);
        else if (*c_ev) run_eval(ev);
        else if (*c_pr) run_probe(app, pr);
        else if (*c_bo) run_bound(bo);
        return kOk;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const DomainError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIo;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kParse;
    } catch (const ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kParse;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
}
