#include "oodkit/fcgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "oodkit/error.hpp"

namespace oodkit::fcgm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double ipow(double x, std::size_t p) {
    double r = 1.0;
    while (p) {
        if (p & 1U) r *= x;
        x *= x;
        p >>= 1U;
    }
    return r;
}

double signed_root(double v, std::size_t p) {
    if (p == 1) return v;
    const double r = std::pow(std::abs(v), 1.0 / static_cast<double>(p));
    return v < 0.0 ? -r : r;
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Gram vectors for every (order) of one example at one layer.
std::vector<Tensor> grams_for(const ForwardTrace& tr, std::size_t layer, std::size_t example,
                              const std::vector<std::size_t>& orders) {
    const Tensor fm = feature_map(tr, layer, example);
    std::vector<Tensor> out;
    out.reserve(orders.size());
    for (auto p : orders) out.push_back(gram(fm, p));
    return out;
}

}  // namespace

Tensor gram(const Tensor& feature_map, std::size_t order) {
    if (order == 0) throw DimensionError("gram: order must be at least 1");
    std::size_t c, s;
    if (feature_map.rank() == 1) {
        c = feature_map.dim(0);
        s = 1;
    } else if (feature_map.rank() == 2) {
        c = feature_map.dim(0);
        s = feature_map.dim(1);
    } else {
        throw DimensionError("gram: expected a channels x positions map");
    }
    std::vector<double> powered(c * s);
    for (std::size_t i = 0; i < c * s; ++i) powered[i] = ipow(feature_map[i], order);
    Tensor g({c * (c + 1) / 2});
    std::size_t idx = 0;
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = i; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t q = 0; q < s; ++q) acc += powered[i * s + q] * powered[j * s + q];
            g[idx++] = signed_root(acc, order);
        }
    return g;
}

Tensor feature_map(const ForwardTrace& trace, std::size_t k, std::size_t example) {
    const Tensor& a = trace.feature(k);
    auto r = a.row(example);
    std::vector<double> v(r.begin(), r.end());
    if (a.rank() == 4) return Tensor({a.dim(1), a.dim(2) * a.dim(3)}, std::move(v));
    const std::size_t c = v.size();
    return Tensor({c, 1}, std::move(v));
}

double deviation(double v, double lo, double hi) {
    if (v < lo) return (lo - v) / std::max(std::abs(lo), kDenominatorFloor);
    if (v > hi) return (v - hi) / std::max(std::abs(hi), kDenominatorFloor);
    return 0.0;
}

Bounds fit_bounds(const Network& net, const Tensor& images, const std::vector<std::size_t>& orders) {
    if (orders.empty()) throw ValidationError("fit_bounds: no Gram orders given");
    for (auto p : orders)
        if (p == 0) throw ValidationError("fit_bounds: Gram orders must be positive");
    const ForwardTrace tr = forward(net, images);
    const std::size_t n = images.dim(0), k = net.num_classes();

    std::vector<std::size_t> pred(n);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[pred[i] = argmax(tr.logits().row(i))];
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] == 0)
            throw MissingClassError("fit_bounds: no training example is predicted as class " + std::to_string(c), c);

    Bounds b;
    b.orders = orders;
    b.num_classes = k;
    const std::size_t layers = tr.num_features();
    b.mins.resize(layers);
    b.maxs.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const Tensor fm0 = feature_map(tr, l, 0);
        b.layer_shapes.push_back(fm0.shape());
        const std::size_t entries = fm0.dim(0) * (fm0.dim(0) + 1) / 2;
        b.mins[l].assign(orders.size(), std::vector<Tensor>(k, Tensor({entries}, HUGE_VAL)));
        b.maxs[l].assign(orders.size(), std::vector<Tensor>(k, Tensor({entries}, -HUGE_VAL)));
        for (std::size_t i = 0; i < n; ++i) {
            const auto gs = grams_for(tr, l, i, orders);
            for (std::size_t o = 0; o < orders.size(); ++o) {
                auto& lo = b.mins[l][o][pred[i]];
                auto& hi = b.maxs[l][o][pred[i]];
                for (std::size_t e = 0; e < entries; ++e) {
                    lo[e] = std::min(lo[e], gs[o][e]);
                    hi[e] = std::max(hi[e], gs[o][e]);
                }
            }
        }
    }
    return b;
}

double layer_deviation(const Bounds& bounds, std::size_t layer, std::span<const Tensor> gram_values,
                       std::size_t predicted_class) {
    if (layer >= bounds.num_layers()) throw DimensionError("layer_deviation: layer out of range");
    if (predicted_class >= bounds.num_classes) throw LabelError("layer_deviation: class out of range");
    if (gram_values.size() != bounds.orders.size())
        throw DimensionError("layer_deviation: expected one Gram vector per order");
    double dev = 0.0;
    for (std::size_t o = 0; o < bounds.orders.size(); ++o) {
        const Tensor& lo = bounds.mins[layer][o][predicted_class];
        const Tensor& hi = bounds.maxs[layer][o][predicted_class];
        const Tensor& v = gram_values[o];
        if (v.size() != lo.size()) throw DimensionError("layer_deviation: Gram vector length mismatch");
        for (std::size_t e = 0; e < v.size(); ++e) dev += deviation(v[e], lo[e], hi[e]);
    }
    return dev;
}

Tensor layer_deviations(const Bounds& bounds, const Network& net, const Tensor& images) {
    const ForwardTrace tr = forward(net, images);
    if (tr.num_features() != bounds.num_layers())
        throw StateError("fcgm bounds cover " + std::to_string(bounds.num_layers()) +
                         " layers, network captures " + std::to_string(tr.num_features()));
    const std::size_t n = images.dim(0);
    Tensor out({n, bounds.num_layers()});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = argmax(tr.logits().row(i));
        for (std::size_t l = 0; l < bounds.num_layers(); ++l) {
            const auto gs = grams_for(tr, l, i, bounds.orders);
            out.at(i, l) = layer_deviation(bounds, l, gs, cls);
        }
    }
    return out;
}

Bounds calibrate_normalizer(Bounds bounds, const Network& net, const Tensor& partition) {
    if (partition.rank() == 0 || partition.dim(0) == 0)
        throw ValidationError("calibrate_normalizer: validation partition is empty");
    const Tensor dev = layer_deviations(bounds, net, partition);
    const std::size_t n = dev.dim(0);
    bounds.expected_dev.assign(bounds.num_layers(), 0.0);
    for (std::size_t l = 0; l < bounds.num_layers(); ++l) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += dev.at(i, l);
        bounds.expected_dev[l] = std::max(acc / static_cast<double>(n), kExpectedDevFloor);
    }
    return bounds;
}

std::vector<Deviation> deviations(const Bounds& bounds, const Network& net, const Tensor& images) {
    if (!bounds.calibrated()) throw StateError("fcgm: bounds have not been calibrated");
    const Tensor dev = layer_deviations(bounds, net, images);
    std::vector<Deviation> out(dev.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].per_layer.assign(dev.row(i).begin(), dev.row(i).end());
        for (std::size_t l = 0; l < bounds.num_layers(); ++l)
            out[i].total += out[i].per_layer[l] / bounds.expected_dev[l];
    }
    return out;
}

std::vector<double> score(const Bounds& bounds, const Network& net, const Tensor& images) {
    const auto devs = deviations(bounds, net, images);
    std::vector<double> out(devs.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -devs[i].total;
    return out;
}

void save_bounds(const fs::path& dir, const Bounds& bounds) {
    fs::create_directories(dir);
    json m;
    m["format"] = "oodkit-fcgm";
    m["orders"] = bounds.orders;
    m["num_classes"] = bounds.num_classes;
    m["layer_shapes"] = bounds.layer_shapes;
    m["expected_dev"] = bounds.expected_dev;
    for (std::size_t l = 0; l < bounds.num_layers(); ++l)
        for (std::size_t o = 0; o < bounds.orders.size(); ++o) {
            const std::string stem = "layer" + std::to_string(l) + "_order" + std::to_string(bounds.orders[o]);
            save_tensor(dir / (stem + "_mins.oodt"), stack(bounds.mins[l][o]));
            save_tensor(dir / (stem + "_maxs.oodt"), stack(bounds.maxs[l][o]));
        }
    std::ofstream os(dir / "manifest.json");
    os << m.dump(2) << '\n';
    if (!os) throw DataError("failed to write detector manifest in " + dir.string());
}

Bounds load_bounds(const fs::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw DataError("no detector manifest in " + dir.string());
    try {
        const json m = json::parse(is);
        if (m.value("format", "") != "oodkit-fcgm")
            throw FormatError(dir.string() + " is not an FCGM detector checkpoint");
        Bounds b;
        b.orders = m.at("orders").get<std::vector<std::size_t>>();
        b.num_classes = m.at("num_classes").get<std::size_t>();
        b.layer_shapes = m.at("layer_shapes").get<std::vector<Shape>>();
        b.expected_dev = m.at("expected_dev").get<std::vector<double>>();
        auto unstack = [&](const Tensor& t, std::size_t entries) {
            if (t.rank() != 2 || t.dim(0) != b.num_classes || t.dim(1) != entries)
                throw FormatError("bound tensor disagrees with manifest in " + dir.string());
            std::vector<Tensor> out;
            for (std::size_t c = 0; c < b.num_classes; ++c) {
                auto r = t.row(c);
                out.emplace_back(Shape{entries}, std::vector<double>(r.begin(), r.end()));
            }
            return out;
        };
        b.mins.resize(b.num_layers());
        b.maxs.resize(b.num_layers());
        for (std::size_t l = 0; l < b.num_layers(); ++l) {
            const std::size_t ch = b.layer_shapes[l].at(0);
            const std::size_t entries = ch * (ch + 1) / 2;
            for (auto p : b.orders) {
                const std::string stem = "layer" + std::to_string(l) + "_order" + std::to_string(p);
                b.mins[l].push_back(unstack(load_tensor(dir / (stem + "_mins.oodt")), entries));
                b.maxs[l].push_back(unstack(load_tensor(dir / (stem + "_maxs.oodt")), entries));
            }
        }
        return b;
    } catch (const json::exception& e) {
        throw FormatError("invalid detector manifest in " + dir.string() + ": " + e.what());
    }
}

}  // namespace oodkit::fcgm
