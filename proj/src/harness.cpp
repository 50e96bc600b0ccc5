#include "oodkit/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "oodkit/error.hpp"
#include "oodkit/rng.hpp"

namespace oodkit::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// master-seed sub-streams
constexpr std::uint64_t kSeedInit = 10;
constexpr std::uint64_t kSeedTrain = 11;
constexpr std::uint64_t kSeedFinetune = 12;
constexpr std::uint64_t kSeedInSplit = 13;
constexpr std::uint64_t kSeedOracleSplit = 14;

template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex mu;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w)
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

Tensor concat_images(const std::vector<Dataset>& sets) {
    Tensor out = sets.at(0).images;
    for (std::size_t i = 1; i < sets.size(); ++i) out = concat_rows(out, sets[i].images);
    return out;
}

double msp_auroc(const Network& net, const Tensor& in, const Tensor& out) {
    ScoreSample s{msp_scores(logits_of(net, in)), msp_scores(logits_of(net, out))};
    return auroc(s);
}

LrSchedule parse_schedule(const json& j, const LrSchedule& fallback) {
    if (j.is_null()) return fallback;
    const std::string kind = j.value("schedule", "step");
    if (kind == "step") {
        StepDecay s;
        s.initial = j.value("initial", s.initial);
        s.drop_factor = j.value("drop_factor", s.drop_factor);
        s.milestones = j.value("milestones", s.milestones);
        return s;
    }
    if (kind == "cosine") {
        Cosine c;
        c.initial = j.value("initial", c.initial);
        return c;
    }
    throw ConfigError("unknown learning-rate schedule '" + kind + "'");
}

TrainConfig parse_train(const json& j, TrainConfig base) {
    if (j.is_null()) return base;
    base.epochs = j.value("epochs", base.epochs);
    base.batch_in = j.value("batch_in", base.batch_in);
    base.batch_oe = j.value("batch_oe", base.batch_oe);
    base.momentum = j.value("momentum", base.momentum);
    base.schedule = parse_schedule(j.contains("lr") ? j["lr"] : json(), base.schedule);
    return base;
}

LayerSpec parse_layer(const json& j) {
    LayerSpec l;
    l.kind = parse_layer_kind(j.at("kind").get<std::string>());
    l.in_dim = j.value("in_dim", std::size_t{0});
    l.out_dim = j.value("out_dim", std::size_t{0});
    l.in_channels = j.value("in_channels", std::size_t{0});
    l.out_channels = j.value("out_channels", std::size_t{0});
    l.kernel = j.value("kernel", std::size_t{0});
    l.stride = j.value("stride", std::size_t{1});
    l.padding = j.value("padding", std::size_t{0});
    l.pool = j.value("pool", std::size_t{2});
    return l;
}

Detector parse_detector(const std::string& s) {
    if (s == "msp") return Detector::Msp;
    if (s == "md") return Detector::Md;
    if (s == "fcgm") return Detector::Fcgm;
    throw ConfigError("unknown detector '" + s + "'");
}

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << std::round(v * 1000.0) / 10.0;
    return os.str();
}

double pct_value(double v) { return std::round(v * 1000.0) / 10.0; }

std::string hex(const unsigned char* d, unsigned n) {
    std::ostringstream os;
    for (unsigned i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(d[i]);
    return os.str();
}

std::string sha256(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
    return hex(md, len);
}

}  // namespace

std::string_view protocol_name(Protocol p) { return p == Protocol::ZeroShot ? "zero-shot" : "oracle"; }

std::string_view detector_name(Detector d) {
    switch (d) {
    case Detector::Msp: return "msp";
    case Detector::Md: return "md";
    case Detector::Fcgm: return "fcgm";
    }
    return "unknown";
}

void ExperimentConfig::validate() const {
    if (lambda1_grid.empty() || lambda2_grid.empty()) throw ConfigError("lambda grids must be non-empty");
    for (double v : lambda1_grid)
        if (!(v >= 0.0)) throw ConfigError("lambda1 grid values must be nonnegative");
    for (double v : lambda2_grid)
        if (!(v >= 0.0)) throw ConfigError("lambda2 grid values must be nonnegative");
    if (eps_grid.empty()) throw ConfigError("eps grid must be non-empty");
    if (orders.empty()) throw ConfigError("Gram orders must be non-empty");
    if (detectors.empty()) throw ConfigError("at least one detector must be selected");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0,1)");
    if (!(oracle_fraction > 0.0 && oracle_fraction < 1.0)) throw ConfigError("oracle_fraction must lie in (0,1)");
    if (train.batch_in == 0 || finetune.batch_in == 0 || finetune.batch_oe == 0)
        throw ConfigError("batch sizes must be at least 1");
}

std::vector<LayerSpec> default_layers(const Shape& input_shape, std::size_t num_classes) {
    if (input_shape.size() != 3 || input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0)
        throw ConfigError("default network needs C x H x W input with H, W divisible by 4");
    const std::size_t c = input_shape[0], area = (input_shape[1] / 4) * (input_shape[2] / 4);
    return {
        LayerSpec::conv2d(c, 8, 3, 1, 1), LayerSpec::relu(), LayerSpec::avgpool(2),
        LayerSpec::conv2d(8, 16, 3, 1, 1), LayerSpec::relu(), LayerSpec::avgpool(2),
        LayerSpec::flatten(), LayerSpec::dense(16 * area, 32), LayerSpec::relu(),
        LayerSpec::dense(32, num_classes),
    };
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.train.epochs = 20;
    cfg.train.batch_in = 64;
    cfg.train.schedule = StepDecay{0.1, 0.1, {0.5, 0.75}};
    cfg.finetune.epochs = 5;
    cfg.finetune.batch_in = 128;
    cfg.finetune.batch_oe = 256;
    cfg.finetune.schedule = Cosine{0.001};
    cfg.layers = default_layers(cfg.input_shape, cfg.num_classes);
    return cfg;
}

ExperimentConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg = default_config();
    auto path = [&](const json& v) {
        fs::path p = v.get<std::string>();
        return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    auto paths = [&](const json& v) {
        std::vector<fs::path> out;
        if (v.is_string()) out.push_back(path(v));
        else
            for (const auto& e : v) out.push_back(path(e));
        return out;
    };
    try {
        cfg.seed = j.value("seed", cfg.seed);
        cfg.jobs = j.value("jobs", cfg.jobs);
        if (j.contains("protocol")) {
            const auto p = j["protocol"].get<std::string>();
            if (p == "zero-shot") cfg.protocol = Protocol::ZeroShot;
            else if (p == "oracle") cfg.protocol = Protocol::Oracle;
            else throw ConfigError("protocol must be 'zero-shot' or 'oracle', got '" + p + "'");
        }
        if (j.contains("datasets")) {
            const auto& d = j["datasets"];
            if (d.contains("d_in_train")) cfg.datasets.d_in_train = path(d["d_in_train"]);
            if (d.contains("d_in_test")) cfg.datasets.d_in_test = path(d["d_in_test"]);
            if (d.contains("d_out_oe")) cfg.datasets.d_out_oe = path(d["d_out_oe"]);
            if (d.contains("d_out_val")) cfg.datasets.d_out_val = paths(d["d_out_val"]);
            if (d.contains("d_out_test")) cfg.datasets.d_out_test = paths(d["d_out_test"]);
        }
        if (j.contains("network")) {
            const auto& n = j["network"];
            cfg.input_shape = n.value("input_shape", cfg.input_shape);
            cfg.num_classes = n.value("num_classes", cfg.num_classes);
            if (n.contains("layers")) {
                cfg.layers.clear();
                for (const auto& l : n["layers"]) cfg.layers.push_back(parse_layer(l));
            } else {
                cfg.layers = default_layers(cfg.input_shape, cfg.num_classes);
            }
        }
        cfg.train = parse_train(j.value("train", json()), cfg.train);
        cfg.finetune = parse_train(j.value("finetune", json()), cfg.finetune);
        if (j.contains("oecc")) {
            cfg.lambda1_grid = j["oecc"].value("lambda1", cfg.lambda1_grid);
            cfg.lambda2_grid = j["oecc"].value("lambda2", cfg.lambda2_grid);
        }
        if (j.contains("detectors")) {
            const auto& d = j["detectors"];
            if (d.contains("methods")) {
                cfg.detectors.clear();
                for (const auto& m : d["methods"]) cfg.detectors.push_back(parse_detector(m.get<std::string>()));
            }
            cfg.eps_grid = d.value("eps_grid", cfg.eps_grid);
            cfg.orders = d.value("orders", cfg.orders);
            cfg.val_fraction = d.value("val_fraction", cfg.val_fraction);
            cfg.oracle_fraction = d.value("oracle_fraction", cfg.oracle_fraction);
        }
        if (j.contains("synthetic")) {
            const auto& s = j["synthetic"];
            if (s.contains("kinds")) {
                cfg.synth_kinds.clear();
                for (const auto& k : s["kinds"]) cfg.synth_kinds.push_back(synth::parse_kind(k.get<std::string>()));
            }
            cfg.synth_count = s.value("count", cfg.synth_count);
            cfg.speckle_sigma = s.value("speckle_sigma", cfg.speckle_sigma);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    cfg.validate();
    // shape composition is checked here so config errors surface before any data is read
    Network probe(cfg.input_shape, cfg.layers, cfg.num_classes);
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path.parent_path());
}

Datasets load_datasets(const ExperimentConfig& cfg, const RoleNeeds& needs) {
    auto load_role = [](const fs::path& p, Role role) {
        const std::string rn(role_name(role));
        if (p.empty()) throw DataError("no dataset configured for role " + rn);
        if (!fs::exists(p)) throw DataError("dataset for role " + rn + " not found: " + p.string());
        Dataset ds = load_dataset(p);
        if (ds.role != role)
            throw DataError("dataset at " + p.string() + " has role " + std::string(role_name(ds.role)) +
                            ", expected " + rn);
        return ds;
    };
    auto load_many = [&](const std::vector<fs::path>& ps, Role role) {
        if (ps.empty()) throw DataError("no dataset configured for role " + std::string(role_name(role)));
        std::vector<Dataset> out;
        for (const auto& p : ps) out.push_back(load_role(p, role));
        return out;
    };
    Datasets ds;
    if (needs.train) ds.d_in_train = load_role(cfg.datasets.d_in_train, Role::DInTrain);
    if (needs.test) ds.d_in_test = load_role(cfg.datasets.d_in_test, Role::DInTest);
    if (needs.oe) ds.d_out_oe = load_role(cfg.datasets.d_out_oe, Role::DOutOe);
    if (needs.val) ds.d_out_val = load_many(cfg.datasets.d_out_val, Role::DOutVal);
    if (needs.ood_test) ds.d_out_test = load_many(cfg.datasets.d_out_test, Role::DOutTest);
    for (const Dataset* d : {&ds.d_in_train, &ds.d_in_test})
        if (d->size() && d->num_classes != cfg.num_classes)
            throw DataError("dataset '" + d->name + "' has " + std::to_string(d->num_classes) +
                            " classes, config expects " + std::to_string(cfg.num_classes));
    return ds;
}

void enforce_disjointness(const Datasets& ds) {
    auto check = [](const Dataset& a, const Dataset& b) {
        const DisjointReport r = check_disjoint(a, b);
        if (!r.disjoint) {
            const auto [i, j] = *r.first_collision;
            throw DisjointnessError(std::string(role_name(a.role)) + " '" + a.name + "' image " + std::to_string(i) +
                                        " equals " + std::string(role_name(b.role)) + " '" + b.name + "' image " +
                                        std::to_string(j),
                                    i, j);
        }
    };
    for (const auto& test : ds.d_out_test) {
        if (ds.d_out_oe) check(*ds.d_out_oe, test);
        for (const auto& val : ds.d_out_val) check(val, test);
    }
}

Partitions make_partitions(const ExperimentConfig& cfg, const Datasets& ds) {
    Partitions p;
    p.d_in_name = ds.d_in_train.name;
    if (ds.d_in_test.size()) {
        auto parts = split(ds.d_in_test, {mix_seed(cfg.seed, kSeedInSplit), {cfg.val_fraction, 1.0 - cfg.val_fraction}});
        p.in_val = std::move(parts[0]);
        p.in_eval = std::move(parts[1]);
        p.in_val.name = ds.d_in_test.name + "/val";
        p.in_eval.name = ds.d_in_test.name;
    }
    if (cfg.protocol == Protocol::ZeroShot) {
        p.out_val = ds.d_out_val;
        p.out_eval = ds.d_out_test;
    } else {
        for (std::size_t i = 0; i < ds.d_out_test.size(); ++i) {
            const auto& t = ds.d_out_test[i];
            auto parts = split(t, {mix_seed(cfg.seed, kSeedOracleSplit + 100 * i),
                                   {cfg.oracle_fraction, 1.0 - cfg.oracle_fraction}});
            parts[0].name = t.name + "/val";
            parts[1].name = t.name;
            p.out_val.push_back(std::move(parts[0]));
            p.out_eval.push_back(std::move(parts[1]));
        }
    }
    return p;
}

TrainResult run_train(const ExperimentConfig& cfg, const Dataset& d_in_train) {
    Network net = Network::initialized(cfg.input_shape, cfg.layers, cfg.num_classes, mix_seed(cfg.seed, kSeedInit));
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.seed, kSeedTrain);
    return train(std::move(net), d_in_train, tc);
}

FinetuneOutcome run_finetune(const ExperimentConfig& cfg, const Network& base, double train_accuracy,
                             const Dataset& d_in_train, const Dataset& d_oe, const Partitions& parts) {
    if (parts.out_val.empty()) throw ValidationError("lambda tuning needs at least one validation outlier set");
    if (parts.in_val.size() == 0) throw ValidationError("lambda tuning needs in-distribution validation data");
    FinetuneOutcome out;
    for (double l1 : cfg.lambda1_grid)
        for (double l2 : cfg.lambda2_grid) out.grid.push_back({l1, l2, 0.0, {}});
    out.nets.resize(out.grid.size());
    TrainConfig tc = cfg.finetune;
    tc.seed = mix_seed(cfg.seed, kSeedFinetune);

    parallel_for(out.grid.size(), cfg.jobs, [&](std::size_t i) {
        GridPoint& gp = out.grid[i];
        out.nets[i] = finetune_oecc(base, d_in_train, d_oe, tc, {gp.lambda1, gp.lambda2, train_accuracy});
        double sum = 0.0;
        for (const auto& v : parts.out_val) {
            gp.val_aurocs.push_back(msp_auroc(out.nets[i], parts.in_val.images, v.images));
            sum += gp.val_aurocs.back();
        }
        gp.mean_val_auroc = sum / static_cast<double>(parts.out_val.size());
    });
    for (std::size_t i = 1; i < out.grid.size(); ++i)
        if (out.grid[i].mean_val_auroc > out.grid[out.selected].mean_val_auroc) out.selected = i;
    return out;
}

mahalanobis::State fit_md(const ExperimentConfig& cfg, const Network& net, const Dataset& d_in_train,
                          const Partitions& parts, double* val_auroc) {
    if (parts.out_val.empty()) throw ValidationError("Mahalanobis combiner needs validation outliers");
    mahalanobis::State base = mahalanobis::fit(net, d_in_train);
    const Tensor vout = concat_images(parts.out_val);
    std::optional<mahalanobis::State> best;
    double best_auroc = -1.0;
    for (double eps : cfg.eps_grid) {
        mahalanobis::State st = base;
        st.preproc_eps = eps;
        st = mahalanobis::fit_combiner(std::move(st), net, parts.in_val.images, vout);
        const double a = auroc({mahalanobis::score(st, net, parts.in_val.images), mahalanobis::score(st, net, vout)});
        if (a > best_auroc) {
            best_auroc = a;
            best = std::move(st);
        }
    }
    if (val_auroc) *val_auroc = best_auroc;
    return std::move(*best);
}

fcgm::Bounds fit_fcgm(const ExperimentConfig& cfg, const Network& net, const Dataset& d_in_train,
                      const Partitions& parts) {
    fcgm::Bounds b = fcgm::fit_bounds(net, d_in_train.images, cfg.orders);
    return fcgm::calibrate_normalizer(std::move(b), net, parts.in_val.images);
}

std::string MethodSpec::label() const {
    switch (detector) {
    case Detector::Msp: return oecc ? "OECC" : "MSP";
    case Detector::Md: return oecc ? "OECC+MD" : "MD";
    case Detector::Fcgm: return oecc ? "OECC+FCGM" : "FCGM";
    }
    return "?";
}

std::vector<MethodSpec> methods_for(const ExperimentConfig& cfg) {
    std::vector<MethodSpec> out;
    for (auto d : cfg.detectors) {
        out.push_back({false, d});
        out.push_back({true, d});
    }
    return out;
}

const Cell* ResultTable::find(const std::string& d_out, const std::string& method) const {
    for (const auto& c : cells)
        if (c.d_out == d_out && c.method == method) return &c;
    return nullptr;
}

bool ResultTable::any_failed() const {
    return std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return !c.result; });
}

std::size_t ResultTable::value_count() const {
    std::size_t n = 0;
    for (const auto& c : cells) n += c.result ? 3 : 0;
    return n;
}

void render_text(const ResultTable& table, std::ostream& os) {
    os << "# protocol: " << table.protocol << "\n";
    os << "# cells: TNR95 / AUROC / DAcc (%), * marks the best value in a row\n";
    std::size_t w_in = 4, w_out = 10;
    for (const auto& n : table.d_in_names) w_in = std::max(w_in, n.size());
    for (const auto& n : table.d_out_names) w_out = std::max(w_out, n.size());
    const std::size_t w_cell = 22;
    os << std::left << std::setw(static_cast<int>(w_in)) << "D_in" << "  " << std::setw(static_cast<int>(w_out))
       << "D_out^test";
    for (const auto& m : table.methods) os << " | " << std::setw(static_cast<int>(w_cell)) << m;
    os << "\n";
    for (const auto& din : table.d_in_names)
        for (const auto& dout : table.d_out_names) {
            double best[3] = {-1, -1, -1};
            for (const auto& m : table.methods)
                if (const Cell* c = table.find(dout, m); c && c->result) {
                    best[0] = std::max(best[0], pct_value(c->result->tnr95));
                    best[1] = std::max(best[1], pct_value(c->result->auroc));
                    best[2] = std::max(best[2], pct_value(c->result->dacc));
                }
            os << std::setw(static_cast<int>(w_in)) << din << "  " << std::setw(static_cast<int>(w_out)) << dout;
            for (const auto& m : table.methods) {
                const Cell* c = table.find(dout, m);
                std::string cell;
                if (!c || !c->result) {
                    cell = "FAILED";
                } else {
                    const double v[3] = {c->result->tnr95, c->result->auroc, c->result->dacc};
                    for (int k = 0; k < 3; ++k) {
                        if (k) cell += " / ";
                        cell += pct(v[k]);
                        if (pct_value(v[k]) == best[k]) cell += "*";
                    }
                }
                os << " | " << std::setw(static_cast<int>(w_cell)) << cell;
            }
            os << "\n";
        }
    for (const auto& c : table.cells)
        if (!c.result) os << "# failed " << c.d_out << " / " << c.method << ": " << c.error << "\n";
}

std::string render_json(const ResultTable& table) {
    json rows = json::array();
    for (const auto& din : table.d_in_names)
        for (const auto& dout : table.d_out_names) {
            json cells = json::object();
            for (const auto& m : table.methods) {
                const Cell* c = table.find(dout, m);
                if (!c || !c->result) {
                    cells[m] = {{"error", c ? c->error : "missing"}};
                    continue;
                }
                cells[m] = {{"tnr95", pct_value(c->result->tnr95)},
                            {"auroc", pct_value(c->result->auroc)},
                            {"dacc", pct_value(c->result->dacc)}};
            }
            for (const char* metric : {"tnr95", "auroc", "dacc"}) {
                double best = -1;
                for (auto& [m, v] : cells.items())
                    if (v.contains(metric)) best = std::max(best, v[metric].get<double>());
                for (auto& [m, v] : cells.items())
                    if (v.contains(metric) && v[metric].get<double>() == best) v["best"].push_back(metric);
            }
            rows.push_back({{"d_in", din}, {"d_out", dout}, {"cells", cells}});
        }
    json j{{"protocol", table.protocol}, {"methods", table.methods}, {"rows", rows}};
    return j.dump(2);
}

std::vector<double> method_scores(const MethodSpec& method, const Model& model, const Tensor& images) {
    switch (method.detector) {
    case Detector::Msp: return msp_scores(logits_of(model.net, images));
    case Detector::Md:
        if (!model.detectors.md) throw StateError("no Mahalanobis detector fitted for " + method.label());
        return mahalanobis::score(*model.detectors.md, model.net, images);
    case Detector::Fcgm:
        if (!model.detectors.fcgm) throw StateError("no FCGM detector fitted for " + method.label());
        return fcgm::score(*model.detectors.fcgm, model.net, images);
    }
    throw StateError("unknown detector");
}

ResultTable evaluate_cells(const ExperimentConfig& cfg, const Partitions& parts, const Model& base,
                           const std::optional<Model>& oecc, std::vector<RawScores>* raw) {
    ResultTable t;
    t.protocol = std::string(protocol_name(cfg.protocol));
    t.d_in_names = {parts.d_in_name};
    for (const auto& d : parts.out_eval) t.d_out_names.push_back(d.name);
    const auto methods = methods_for(cfg);
    for (const auto& m : methods) t.methods.push_back(m.label());

    struct Unit {
        std::size_t method;
        std::size_t d_out;
    };
    std::vector<Unit> units;
    for (std::size_t d = 0; d < parts.out_eval.size(); ++d)
        for (std::size_t m = 0; m < methods.size(); ++m) units.push_back({m, d});
    std::vector<Cell> cells(units.size());
    std::vector<std::optional<ScoreSample>> samples(units.size());

    // in-distribution scores are shared across rows
    std::vector<std::optional<std::vector<double>>> in_scores(methods.size());
    std::vector<std::string> in_errors(methods.size());
    parallel_for(methods.size(), cfg.jobs, [&](std::size_t m) {
        try {
            if (methods[m].oecc && !oecc) throw StateError("no fine-tuned model available");
            in_scores[m] = method_scores(methods[m], methods[m].oecc ? *oecc : base, parts.in_eval.images);
        } catch (const std::exception& e) {
            in_errors[m] = e.what();
        }
    });
    parallel_for(units.size(), cfg.jobs, [&](std::size_t u) {
        const auto& [m, d] = units[u];
        Cell& c = cells[u];
        c.d_in = parts.d_in_name;
        c.d_out = parts.out_eval[d].name;
        c.method = methods[m].label();
        try {
            if (!in_scores[m]) throw StateError(in_errors[m]);
            ScoreSample s{*in_scores[m],
                          method_scores(methods[m], methods[m].oecc ? *oecc : base, parts.out_eval[d].images)};
            c.result = evaluate(s);
            samples[u] = std::move(s);
        } catch (const std::exception& e) {
            c.error = e.what();
        }
    });
    t.cells = std::move(cells);
    if (raw)
        for (std::size_t u = 0; u < units.size(); ++u)
            if (samples[u]) raw->push_back({t.cells[u].d_out, t.cells[u].method, std::move(*samples[u])});
    return t;
}

ResultTable table_from_scores(const std::string& protocol, const std::string& d_in,
                              const std::vector<RawScores>& raw) {
    ResultTable t;
    t.protocol = protocol;
    t.d_in_names = {d_in};
    for (const auto& r : raw) {
        if (std::find(t.d_out_names.begin(), t.d_out_names.end(), r.d_out) == t.d_out_names.end())
            t.d_out_names.push_back(r.d_out);
        if (std::find(t.methods.begin(), t.methods.end(), r.method) == t.methods.end()) t.methods.push_back(r.method);
        t.cells.push_back({d_in, r.d_out, r.method, evaluate(r.sample), {}});
    }
    return t;
}

void save_scores(const fs::path& dir, const std::vector<RawScores>& raw) {
    fs::create_directories(dir);
    json index = json::array();
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const std::string stem = "cell" + std::to_string(i);
        const auto& s = raw[i].sample;
        save_tensor(dir / (stem + "_in.oodt"), Tensor({s.in_scores.size()}, s.in_scores));
        save_tensor(dir / (stem + "_out.oodt"), Tensor({s.out_scores.size()}, s.out_scores));
        index.push_back({{"d_out", raw[i].d_out},
                         {"method", raw[i].method},
                         {"in", stem + "_in.oodt"},
                         {"out", stem + "_out.oodt"}});
    }
    std::ofstream os(dir / "index.json");
    os << index.dump(2) << '\n';
    if (!os) throw DataError("failed to write score index in " + dir.string());
}

std::vector<RawScores> load_scores(const fs::path& dir) {
    std::ifstream is(dir / "index.json");
    if (!is) throw DataError("no score index in " + dir.string());
    std::vector<RawScores> out;
    try {
        for (const auto& e : json::parse(is)) {
            RawScores r;
            r.d_out = e.at("d_out").get<std::string>();
            r.method = e.at("method").get<std::string>();
            r.sample.in_scores = load_tensor(dir / e.at("in").get<std::string>()).values();
            r.sample.out_scores = load_tensor(dir / e.at("out").get<std::string>()).values();
            out.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw FormatError("invalid score index in " + dir.string() + ": " + e.what());
    }
    return out;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, const Datasets& ds) {
    cfg.validate();
    enforce_disjointness(ds);
    const Partitions parts = make_partitions(cfg, ds);
    PipelineResult res;

    TrainResult tr = run_train(cfg, ds.d_in_train);
    res.train_accuracy = tr.train_accuracy;

    auto fit_all = [&](const Network& net) {
        Model m{net, {}};
        for (auto d : cfg.detectors) {
            if (d == Detector::Md) m.detectors.md = fit_md(cfg, net, ds.d_in_train, parts, &m.detectors.md_val_auroc);
            if (d == Detector::Fcgm) m.detectors.fcgm = fit_fcgm(cfg, net, ds.d_in_train, parts);
        }
        return m;
    };

    const Model base = fit_all(tr.net);
    std::optional<Model> tuned;
    if (ds.d_out_oe) {
        res.finetune = run_finetune(cfg, tr.net, tr.train_accuracy, ds.d_in_train, *ds.d_out_oe, parts);
        tuned = fit_all(res.finetune.nets[res.finetune.selected]);
    }
    res.table = evaluate_cells(cfg, parts, base, tuned);
    return res;
}

std::string content_hash(const fs::path& path) {
    auto file_bytes = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        if (!is) throw DataError("cannot read " + p.string());
        std::ostringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };
    if (fs::is_regular_file(path)) return sha256(file_bytes(path));
    if (!fs::is_directory(path)) throw DataError("cannot hash missing path " + path.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += fs::relative(f, path).generic_string() + ":" + sha256(file_bytes(f)) + "\n";
    return sha256(acc);
}

}  // namespace oodkit::harness
