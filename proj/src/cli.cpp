#include "oodkit/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "oodkit/error.hpp"
#include "oodkit/harness.hpp"
#include "oodkit/rng.hpp"
#include "oodkit/toy.hpp"

namespace oodkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace harness;

namespace {

constexpr std::uint64_t kSeedSynth = 20;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::optional<std::size_t> jobs;
};

struct Layout {
    fs::path root;
    fs::path ce() const { return root / "ce"; }
    fs::path finetune() const { return root / "finetune"; }
    fs::path selected() const { return finetune() / "selected"; }
    fs::path detector(bool oecc, Detector d) const {
        return root / "detectors" / (oecc ? "oecc" : "ce") / std::string(detector_name(d));
    }
    fs::path eval() const { return root / "eval"; }
    fs::path synthetic() const { return root / "synthetic"; }
};

struct Context {
    ExperimentConfig cfg;
    Layout out;
    fs::path config_path;
};

Context load_context(const Globals& g) {
    if (g.config.empty()) throw ConfigError("--config is required for this command");
    Context ctx{load_config(g.config), {g.out}, g.config};
    if (g.seed) ctx.cfg.seed = *g.seed;
    if (g.jobs) ctx.cfg.jobs = std::max<std::size_t>(1, *g.jobs);
    return ctx;
}

void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path);
    os << j.dump(2) << '\n';
    if (!os) throw DataError("failed to write " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot read " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

json hashed(const fs::path& p) { return {{"path", p.generic_string()}, {"sha256", content_hash(p)}}; }

/// Records inputs and outputs of a stage by content hash next to its artifacts.
void write_manifest(const fs::path& dir, const std::string& command, const Context& ctx,
                    const std::vector<std::pair<std::string, fs::path>>& inputs) {
    json in = json::object();
    for (const auto& [role, p] : inputs)
        if (!p.empty() && fs::exists(p)) in[role].push_back(hashed(p));
    json outputs = json::array();
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename() != "run_manifest.json") entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    for (const auto& e : entries) outputs.push_back(hashed(e));
    write_json(dir / "run_manifest.json", {{"command", command},
                                           {"seed", ctx.cfg.seed},
                                           {"protocol", protocol_name(ctx.cfg.protocol)},
                                           {"config", hashed(ctx.config_path)},
                                           {"inputs", in},
                                           {"outputs", outputs}});
}

std::vector<std::pair<std::string, fs::path>> dataset_inputs(const ExperimentConfig& cfg, const RoleNeeds& n) {
    std::vector<std::pair<std::string, fs::path>> in;
    if (n.train) in.emplace_back("d_in_train", cfg.datasets.d_in_train);
    if (n.test) in.emplace_back("d_in_test", cfg.datasets.d_in_test);
    if (n.oe) in.emplace_back("d_out_oe", cfg.datasets.d_out_oe);
    if (n.val)
        for (const auto& p : cfg.datasets.d_out_val) in.emplace_back("d_out_val", p);
    if (n.ood_test)
        for (const auto& p : cfg.datasets.d_out_test) in.emplace_back("d_out_test", p);
    return in;
}

/// Roles needed to build validation partitions, plus any configured outlier set so that
/// disjointness is checked whenever it can be.
RoleNeeds partition_needs(const ExperimentConfig& cfg, bool need_out_val) {
    RoleNeeds n;
    n.train = true;
    n.test = true;
    n.oe = !cfg.datasets.d_out_oe.empty();
    n.val = (need_out_val && cfg.protocol == Protocol::ZeroShot) || !cfg.datasets.d_out_val.empty();
    n.ood_test = cfg.protocol == Protocol::Oracle || !cfg.datasets.d_out_test.empty();
    return n;
}

double checkpoint_accuracy(const fs::path& dir, const Network& net, const Dataset& d_in_train) {
    CheckpointMeta meta;
    load_network(dir, &meta);
    if (meta.train_accuracy) return *meta.train_accuracy;
    return accuracy(net, d_in_train.images, d_in_train.labels);
}

int cmd_train(const Context& ctx, std::ostream& out) {
    const RoleNeeds needs{};
    const Datasets ds = load_datasets(ctx.cfg, needs);
    const TrainResult tr = run_train(ctx.cfg, ds.d_in_train);
    const fs::path dir = ctx.out.ce();
    save_network(dir, tr.net, {tr.train_accuracy, {}});
    write_manifest(dir, "train", ctx, dataset_inputs(ctx.cfg, needs));
    out << "trained " << ds.d_in_train.name << ": train accuracy " << tr.train_accuracy << "\n";
    out << "checkpoint: " << dir.string() << "\n";
    return kExitOk;
}

int cmd_finetune(const Context& ctx, const fs::path& checkpoint, std::ostream& out) {
    RoleNeeds needs = partition_needs(ctx.cfg, true);
    needs.oe = true;
    const Datasets ds = load_datasets(ctx.cfg, needs);
    enforce_disjointness(ds);
    const Partitions parts = make_partitions(ctx.cfg, ds);
    const fs::path ckpt = checkpoint.empty() ? ctx.out.ce() : checkpoint;
    const Network base = load_network(ckpt);
    const double a_tr = checkpoint_accuracy(ckpt, base, ds.d_in_train);

    const FinetuneOutcome res = run_finetune(ctx.cfg, base, a_tr, ds.d_in_train, *ds.d_out_oe, parts);
    const fs::path dir = ctx.out.finetune();
    json grid = json::array();
    for (std::size_t i = 0; i < res.grid.size(); ++i) {
        const GridPoint& gp = res.grid[i];
        save_network(dir / "grid" / std::to_string(i), res.nets[i],
                     {a_tr, {{"lambda1", gp.lambda1}, {"lambda2", gp.lambda2}}});
        json per_set = json::object();
        for (std::size_t v = 0; v < parts.out_val.size(); ++v) per_set[parts.out_val[v].name] = gp.val_aurocs[v];
        grid.push_back({{"index", i},
                        {"lambda1", gp.lambda1},
                        {"lambda2", gp.lambda2},
                        {"mean_val_auroc", gp.mean_val_auroc},
                        {"val_auroc", per_set}});
    }
    const GridPoint& best = res.grid[res.selected];
    save_network(ctx.out.selected(), res.nets[res.selected],
                 {a_tr, {{"lambda1", best.lambda1}, {"lambda2", best.lambda2}}});
    write_json(dir / "grid.json", {{"protocol", protocol_name(ctx.cfg.protocol)},
                                   {"train_accuracy", a_tr},
                                   {"selected", res.selected},
                                   {"grid", grid}});
    auto inputs = dataset_inputs(ctx.cfg, needs);
    inputs.emplace_back("checkpoint", ckpt);
    write_manifest(dir, "finetune", ctx, inputs);
    out << "fine-tuned " << res.grid.size() << " grid points; selected lambda1=" << best.lambda1
        << " lambda2=" << best.lambda2 << " (mean validation AUROC " << best.mean_val_auroc << ")\n";
    return kExitOk;
}

std::vector<Detector> parse_detectors(const std::string& s, const ExperimentConfig& cfg) {
    if (s == "all") {
        std::vector<Detector> out;
        for (auto d : cfg.detectors)
            if (d != Detector::Msp) out.push_back(d);
        return out;
    }
    if (s == "md") return {Detector::Md};
    if (s == "fcgm") return {Detector::Fcgm};
    throw ConfigError("--detector must be md, fcgm or all, got '" + s + "'");
}

int cmd_fit_detector(const Context& ctx, const std::string& which, std::ostream& out) {
    const auto detectors = parse_detectors(which, ctx.cfg);
    const bool want_md = std::find(detectors.begin(), detectors.end(), Detector::Md) != detectors.end();
    const RoleNeeds needs = partition_needs(ctx.cfg, want_md);
    const Datasets ds = load_datasets(ctx.cfg, needs);
    enforce_disjointness(ds);
    const Partitions parts = make_partitions(ctx.cfg, ds);

    std::vector<std::pair<bool, fs::path>> models{{false, ctx.out.ce()}};
    if (fs::exists(ctx.out.selected())) models.emplace_back(true, ctx.out.selected());
    for (const auto& [oecc, ckpt] : models) {
        const Network net = load_network(ckpt);
        for (auto d : detectors) {
            const fs::path dir = ctx.out.detector(oecc, d);
            if (d == Detector::Md) {
                double val_auroc = 0.0;
                const auto st = fit_md(ctx.cfg, net, ds.d_in_train, parts, &val_auroc);
                mahalanobis::save_state(dir, st);
                out << (oecc ? "OECC+MD" : "MD") << ": eps=" << st.preproc_eps << " validation AUROC " << val_auroc
                    << "\n";
            } else {
                fcgm::save_bounds(dir, fit_fcgm(ctx.cfg, net, ds.d_in_train, parts));
                out << (oecc ? "OECC+FCGM" : "FCGM") << ": bounds fitted\n";
            }
            auto inputs = dataset_inputs(ctx.cfg, needs);
            inputs.emplace_back("checkpoint", ckpt);
            write_manifest(dir, "fit-detector", ctx, inputs);
        }
    }
    return kExitOk;
}

Model load_model(const Layout& out, bool oecc) {
    Model m{load_network(oecc ? out.selected() : out.ce()), {}};
    if (fs::exists(out.detector(oecc, Detector::Md)))
        m.detectors.md = mahalanobis::load_state(out.detector(oecc, Detector::Md));
    if (fs::exists(out.detector(oecc, Detector::Fcgm)))
        m.detectors.fcgm = fcgm::load_bounds(out.detector(oecc, Detector::Fcgm));
    return m;
}

void write_table(const fs::path& dir, const ResultTable& t) {
    fs::create_directories(dir);
    std::ofstream txt(dir / "table.txt");
    render_text(t, txt);
    std::ofstream js(dir / "table.json");
    js << render_json(t) << '\n';
    if (!txt || !js) throw DataError("failed to write tables in " + dir.string());
}

int cmd_evaluate(const Context& ctx, std::ostream& out, std::ostream& err) {
    RoleNeeds needs = partition_needs(ctx.cfg, false);
    needs.ood_test = true;
    const Datasets ds = load_datasets(ctx.cfg, needs);
    enforce_disjointness(ds);
    const Partitions parts = make_partitions(ctx.cfg, ds);

    const Model base = load_model(ctx.out, false);
    std::optional<Model> tuned;
    if (fs::exists(ctx.out.selected())) tuned = load_model(ctx.out, true);
    std::vector<RawScores> raw;
    const ResultTable t = evaluate_cells(ctx.cfg, parts, base, tuned, &raw);

    const fs::path dir = ctx.out.eval();
    write_table(dir, t);
    save_scores(dir / "scores", raw);
    write_json(dir / "meta.json", {{"protocol", t.protocol}, {"d_in", parts.d_in_name}});
    auto inputs = dataset_inputs(ctx.cfg, needs);
    inputs.emplace_back("checkpoint", ctx.out.ce());
    inputs.emplace_back("checkpoint", ctx.out.selected());
    inputs.emplace_back("detectors", ctx.out.root / "detectors");
    write_manifest(dir, "evaluate", ctx, inputs);
    render_text(t, out);
    if (t.any_failed()) {
        err << "some evaluation cells failed; see " << (dir / "table.txt").string() << "\n";
        return kExitPartial;
    }
    return kExitOk;
}

int cmd_gen_synthetic(const Context& ctx, const std::string& source_path, std::ostream& out, std::ostream& err) {
    std::optional<Dataset> source;
    fs::path src = source_path.empty() ? ctx.cfg.datasets.d_in_train : fs::path(source_path);
    if (!src.empty()) {
        if (!fs::exists(src)) throw DataError("synthetic source dataset not found: " + src.string());
        source = load_dataset(src);
    }
    bool refused = false;
    for (auto kind : ctx.cfg.synth_kinds) {
        synth::GenSpec spec;
        spec.kind = kind;
        spec.seed = mix_seed(ctx.cfg.seed, kSeedSynth + static_cast<std::uint64_t>(kind));
        spec.count = ctx.cfg.synth_count;
        spec.image_shape = source ? source->image_shape() : ctx.cfg.input_shape;
        spec.speckle_sigma = ctx.cfg.speckle_sigma;
        const std::string name(synth::kind_name(kind));
        try {
            const Dataset ds = synth::generate_dataset(spec, source ? &*source : nullptr, name);
            const fs::path dir = ctx.out.synthetic() / name;
            save_dataset(ds, dir);
            write_manifest(dir, "gen-synthetic", ctx, {{"source", src}});
            out << name << ": " << ds.size() << " images -> " << dir.string() << "\n";
        } catch (const Error& e) {
            refused = true;
            err << name << ": refused: " << e.what() << "\n";
        }
    }
    return refused ? kExitDataError : kExitOk;
}

int cmd_report(const Layout& layout, const std::string& scores_dir, bool as_json, std::ostream& out) {
    const fs::path dir = scores_dir.empty() ? layout.eval() / "scores" : fs::path(scores_dir);
    std::string protocol = "unknown", d_in = "d_in";
    if (const fs::path meta = dir.parent_path() / "meta.json"; fs::exists(meta)) {
        const json m = read_json(meta);
        protocol = m.value("protocol", protocol);
        d_in = m.value("d_in", d_in);
    }
    const ResultTable t = table_from_scores(protocol, d_in, load_scores(dir));
    if (as_json) out << render_json(t) << "\n";
    else render_text(t, out);
    return kExitOk;
}

struct ToyOptions {
    toy::BlobTaskSpec spec;
};

int cmd_make_toy(const Globals& g, const ToyOptions& opt, std::ostream& out) {
    toy::BlobTaskSpec spec = opt.spec;
    if (g.seed) spec.seed = *g.seed;
    const toy::BlobTask task = toy::make_blob_task(spec);
    const fs::path root = g.out;
    const fs::path data = root / "data";
    save_dataset(task.d_in_train, data / "d_in_train");
    save_dataset(task.d_in_test, data / "d_in_test");
    save_dataset(task.d_out_oe, data / "d_out_oe");
    save_dataset(task.d_out_val, data / "d_out_val");
    save_dataset(task.d_out_test, data / "d_out_test");
    const json cfg{
        {"seed", spec.seed},
        {"protocol", "zero-shot"},
        {"datasets",
         {{"d_in_train", "data/d_in_train"},
          {"d_in_test", "data/d_in_test"},
          {"d_out_oe", "data/d_out_oe"},
          {"d_out_val", {"data/d_out_val"}},
          {"d_out_test", {"data/d_out_test"}}}},
        {"network", {{"input_shape", {spec.channels, spec.side, spec.side}}, {"num_classes", spec.num_classes}}},
        {"train", {{"epochs", 15}, {"batch_in", 32}, {"lr", {{"schedule", "step"}, {"initial", 0.05}}}}},
        {"finetune",
         {{"epochs", 5}, {"batch_in", 32}, {"batch_oe", 64}, {"lr", {{"schedule", "cosine"}, {"initial", 0.01}}}}},
        {"oecc", {{"lambda1", {0.0, 0.1}}, {"lambda2", {0.0, 0.3, 1.0}}}},
    };
    write_json(root / "config.json", cfg);
    out << "toy task written to " << root.string() << " (config: " << (root / "config.json").string() << ")\n";
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Out-of-distribution detection experiments: train, fine-tune, fit detectors, evaluate.", "oodkit"};
    app.fallthrough();
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Experiment config (JSON)");
    app.add_option("--seed", g.seed, "Master seed (overrides the config)");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--jobs", g.jobs, "Parallel units for grid points and evaluation cells");

    auto* train = app.add_subcommand("train", "Cross-entropy training on d_in_train");
    auto* finetune = app.add_subcommand("finetune", "OECC fine-tuning over the lambda grid");
    std::string checkpoint;
    finetune->add_option("--checkpoint", checkpoint, "CE checkpoint (default: <out>/ce)");
    auto* fit = app.add_subcommand("fit-detector", "Fit MD and/or FCGM on the CE and fine-tuned networks");
    std::string which = "all";
    fit->add_option("--detector", which, "md, fcgm or all")->capture_default_str();
    auto* evaluate = app.add_subcommand("evaluate", "Score every (D_out^test, method) cell and render the table");
    auto* gen = app.add_subcommand("gen-synthetic", "Write one validation outlier set per generator kind");
    std::string source;
    gen->add_option("--source", source, "Source dataset (default: d_in_train from the config)");
    auto* report = app.add_subcommand("report", "Rebuild the table from persisted raw scores");
    std::string scores_dir;
    bool as_json = false;
    report->add_option("--scores", scores_dir, "Score directory (default: <out>/eval/scores)");
    report->add_flag("--json", as_json, "Print the machine-readable table");
    auto* make_toy = app.add_subcommand("make-toy", "Write the synthetic blob task and a matching config");
    ToyOptions toy_opt;
    make_toy->add_option("--classes", toy_opt.spec.num_classes)->capture_default_str();
    make_toy->add_option("--side", toy_opt.spec.side)->capture_default_str();
    make_toy->add_option("--train-per-class", toy_opt.spec.train_per_class)->capture_default_str();
    make_toy->add_option("--test-per-class", toy_opt.spec.test_per_class)->capture_default_str();
    make_toy->add_option("--oe-count", toy_opt.spec.oe_count)->capture_default_str();
    make_toy->add_option("--val-count", toy_opt.spec.val_count)->capture_default_str();
    make_toy->add_option("--ood-count", toy_opt.spec.ood_test_count)->capture_default_str();
    auto* run_all = app.add_subcommand("run", "train, finetune, fit-detector and evaluate in sequence");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitDataError;
    }

    try {
        if (*make_toy) return cmd_make_toy(g, toy_opt, out);
        if (*report) return cmd_report({g.out}, scores_dir, as_json, out);
        const Context ctx = load_context(g);
        if (*train) return cmd_train(ctx, out);
        if (*finetune) return cmd_finetune(ctx, checkpoint, out);
        if (*fit) return cmd_fit_detector(ctx, which, out);
        if (*evaluate) return cmd_evaluate(ctx, out, err);
        if (*gen) return cmd_gen_synthetic(ctx, source, out, err);
        if (*run_all) {
            cmd_train(ctx, out);
            if (!ctx.cfg.datasets.d_out_oe.empty()) cmd_finetune(ctx, {}, out);
            cmd_fit_detector(ctx, "all", out);
            return cmd_evaluate(ctx, out, err);
        }
    } catch (const DisjointnessError& e) {
        err << "error: " << e.what() << "\n";
        err << "colliding indices: " << e.a_index() << " " << e.b_index() << "\n";
        return kExitDataError;
    } catch (const DivergenceError& e) {
        err << "error: numeric divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitDataError;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}

}  // namespace oodkit::cli
