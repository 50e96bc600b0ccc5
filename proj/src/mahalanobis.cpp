#include "oodkit/mahalanobis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "oodkit/error.hpp"

namespace oodkit::mahalanobis {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor layer_features(const ForwardTrace& trace, std::size_t k) {
    const Tensor& a = trace.feature(k);
    const std::size_t n = a.dim(0);
    if (a.rank() == 2) return a;
    if (a.rank() != 4) throw DimensionError("layer_features: unsupported activation rank");
    const std::size_t c = a.dim(1), area = a.dim(2) * a.dim(3);
    Tensor f({n, c});
    for (std::size_t s = 0; s < n; ++s) {
        auto r = a.row(s);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t p = 0; p < area; ++p) acc += r[ch * area + p];
            f.at(s, ch) = acc / static_cast<double>(area);
        }
    }
    return f;
}

State fit(const Network& net, const Dataset& d_in_train) {
    const std::size_t k = net.num_classes();
    if (d_in_train.labels.size() != d_in_train.size())
        throw LabelError("mahalanobis::fit: training set '" + d_in_train.name + "' lacks labels");
    std::vector<std::size_t> counts(k, 0);
    for (auto y : d_in_train.labels) {
        if (y >= k) throw LabelError("mahalanobis::fit: label out of range");
        ++counts[y];
    }
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] == 0)
            throw MissingClassError("mahalanobis::fit: class " + std::to_string(c) + " has no training data", c);

    const ForwardTrace tr = forward(net, d_in_train.images);
    State st;
    st.num_classes = k;
    for (std::size_t l = 0; l < tr.num_features(); ++l) {
        const Tensor f = layer_features(tr, l);
        std::vector<Tensor> rows;
        rows.reserve(f.dim(0));
        for (std::size_t i = 0; i < f.dim(0); ++i) {
            auto r = f.row(i);
            rows.emplace_back(Shape{r.size()}, std::vector<double>(r.begin(), r.end()));
        }
        ClassStats cs = class_stats(rows, d_in_train.labels, k);
        LayerGaussian g;
        g.means = std::move(cs.means);
        g.ridge = default_ridge(cs.tied_cov);
        g.cov_factor = spd_factor(cs.tied_cov, g.ridge);
        st.layers.push_back(std::move(g));
    }
    return st;
}

LayerScore layer_score(const State& state, std::size_t layer, std::span<const double> feature) {
    if (layer >= state.layers.size()) throw DimensionError("layer_score: layer index out of range");
    const LayerGaussian& g = state.layers[layer];
    const std::size_t d = g.dim();
    if (feature.size() != d)
        throw DimensionError("layer_score: feature length " + std::to_string(feature.size()) +
                             " != layer dim " + std::to_string(d));
    std::vector<double> diff(d), w(d);
    LayerScore best{-std::numeric_limits<double>::infinity(), 0};
    for (std::size_t c = 0; c < g.means.size(); ++c) {
        for (std::size_t j = 0; j < d; ++j) diff[j] = feature[j] - g.means[c][j];
        spd_solve_into(g.cov_factor, diff, w);
        const double s = -dot(diff, w);
        if (s > best.value) best = {s, c};
    }
    return best;
}

Tensor preprocess_input(const Network& net, const State& state, const Tensor& x, double eps) {
    if (!(eps >= 0.0)) throw ValidationError("preprocess_input: eps must be nonnegative");
    if (eps == 0.0) return x;
    const ForwardTrace tr = forward(net, x);
    const std::size_t last = tr.num_features() - 1;
    const Tensor f = layer_features(tr, last);
    const LayerGaussian& g = state.layers.at(last);
    const Tensor& act = tr.feature(last);
    const std::size_t n = f.dim(0), d = f.dim(1);
    const std::size_t area = act.row_size() / d;

    // d score / d activation: -2 Sigma^-1 (f - mu_closest), spread evenly over pooled positions.
    Tensor upstream(act.shape());
    std::vector<double> diff(d), w(d);
    for (std::size_t s = 0; s < n; ++s) {
        const LayerScore ls = layer_score(state, last, f.row(s));
        for (std::size_t j = 0; j < d; ++j) diff[j] = f.at(s, j) - g.means[ls.closest][j];
        spd_solve_into(g.cov_factor, diff, w);
        auto u = upstream.row(s);
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t p = 0; p < area; ++p) u[j * area + p] = -2.0 * w[j] / static_cast<double>(area);
    }
    const Gradients grads = backward_from(net, tr, net.capture_points()[last], upstream, true);
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double gi = grads.input[i];
        if (gi > 0.0)
            out[i] += eps;
        else if (gi < 0.0)
            out[i] -= eps;
    }
    return out;
}

Tensor layer_scores(const State& state, const Network& net, const Tensor& images, double eps) {
    if (state.layers.size() != net.capture_points().size())
        throw StateError("mahalanobis state has " + std::to_string(state.layers.size()) +
                         " layers, network captures " + std::to_string(net.capture_points().size()));
    const Tensor xin = preprocess_input(net, state, images, eps);
    const ForwardTrace tr = forward(net, xin);
    const std::size_t n = images.dim(0), layers = state.layers.size();
    Tensor out({n, layers});
    for (std::size_t l = 0; l < layers; ++l) {
        const Tensor f = layer_features(tr, l);
        for (std::size_t s = 0; s < n; ++s) out.at(s, l) = layer_score(state, l, f.row(s)).value;
    }
    return out;
}

Combiner fit_logistic(const Tensor& in_scores, const Tensor& out_scores, std::size_t max_steps,
                      double grad_tol) {
    if (in_scores.rank() != 2 || out_scores.rank() != 2 || in_scores.dim(0) == 0 || out_scores.dim(0) == 0)
        throw ValidationError("fit_logistic: both validation sets must be non-empty");
    const std::size_t d = in_scores.dim(1);
    if (out_scores.dim(1) != d) throw DimensionError("fit_logistic: column counts differ");
    const std::size_t n_in = in_scores.dim(0), n = n_in + out_scores.dim(0);
    auto value = [&](std::size_t i, std::size_t j) {
        return i < n_in ? in_scores.at(i, j) : out_scores.at(i - n_in, j);
    };

    // Gradient descent runs on standardised columns; weights are mapped back afterwards.
    std::vector<double> mean(d, 0.0), scale(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) mean[j] += value(i, j);
        mean[j] /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) scale[j] += (value(i, j) - mean[j]) * (value(i, j) - mean[j]);
        scale[j] = std::sqrt(scale[j] / static_cast<double>(n));
        if (!(scale[j] > 0.0)) scale[j] = 1.0;
    }
    std::vector<double> z(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) z[i * d + j] = (value(i, j) - mean[j]) / scale[j];

    std::vector<double> w(d, 0.0), grad(d);
    double b = 0.0;
    // 1/L for the mean logistic loss on standardised inputs with a bias column
    const double lr = 4.0 / static_cast<double>(d + 1);
    for (std::size_t step = 0; step < max_steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double t = b;
            for (std::size_t j = 0; j < d; ++j) t += w[j] * z[i * d + j];
            const double p = 1.0 / (1.0 + std::exp(-t));
            const double r = p - (i < n_in ? 1.0 : 0.0);
            gb += r;
            for (std::size_t j = 0; j < d; ++j) grad[j] += r * z[i * d + j];
        }
        double norm2 = gb * gb;
        for (auto& gj : grad) norm2 += gj * gj;
        const double inv_n = 1.0 / static_cast<double>(n);
        if (std::sqrt(norm2) * inv_n < grad_tol) break;
        b -= lr * gb * inv_n;
        for (std::size_t j = 0; j < d; ++j) w[j] -= lr * grad[j] * inv_n;
    }

    Combiner c;
    c.weights.resize(d);
    c.bias = b;
    for (std::size_t j = 0; j < d; ++j) {
        c.weights[j] = w[j] / scale[j];
        c.bias -= c.weights[j] * mean[j];
    }
    return c;
}

State fit_combiner(State state, const Network& net, const Tensor& val_in, const Tensor& val_out) {
    if (val_in.rank() == 0 || val_out.rank() == 0 || val_in.dim(0) == 0 || val_out.dim(0) == 0)
        throw ValidationError("fit_combiner: validation needs both in- and out-of-distribution samples");
    const Tensor sin = layer_scores(state, net, val_in, state.preproc_eps);
    const Tensor sout = layer_scores(state, net, val_out, state.preproc_eps);
    state.combiner = fit_logistic(sin, sout);
    return state;
}

std::vector<double> score(const State& state, const Network& net, const Tensor& images) {
    if (!state.combiner) throw StateError("mahalanobis::score: combiner has not been fitted");
    const Tensor s = layer_scores(state, net, images, state.preproc_eps);
    const Combiner& c = *state.combiner;
    if (c.weights.size() != s.dim(1)) throw StateError("mahalanobis::score: combiner width mismatch");
    std::vector<double> out(s.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        double t = c.bias;
        for (std::size_t j = 0; j < c.weights.size(); ++j) t += c.weights[j] * s.at(i, j);
        out[i] = t;
    }
    return out;
}

void save_state(const fs::path& dir, const State& state) {
    fs::create_directories(dir);
    json m;
    m["format"] = "oodkit-mahalanobis";
    m["num_classes"] = state.num_classes;
    m["eps"] = state.preproc_eps;
    json dims = json::array(), ridges = json::array();
    for (std::size_t l = 0; l < state.layers.size(); ++l) {
        const auto& g = state.layers[l];
        dims.push_back(g.dim());
        ridges.push_back(g.ridge);
        save_tensor(dir / ("layer" + std::to_string(l) + "_means.oodt"), stack(g.means));
        save_tensor(dir / ("layer" + std::to_string(l) + "_cov_factor.oodt"), g.cov_factor.lower);
    }
    m["layer_dims"] = dims;
    m["ridges"] = ridges;
    if (state.combiner) m["combiner"] = {{"weights", state.combiner->weights}, {"bias", state.combiner->bias}};
    std::ofstream os(dir / "manifest.json");
    os << m.dump(2) << '\n';
    if (!os) throw DataError("failed to write detector manifest in " + dir.string());
}

State load_state(const fs::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw DataError("no detector manifest in " + dir.string());
    try {
        const json m = json::parse(is);
        if (m.value("format", "") != "oodkit-mahalanobis")
            throw FormatError(dir.string() + " is not a Mahalanobis detector checkpoint");
        State st;
        st.num_classes = m.at("num_classes").get<std::size_t>();
        st.preproc_eps = m.at("eps").get<double>();
        const auto dims = m.at("layer_dims").get<std::vector<std::size_t>>();
        const auto ridges = m.at("ridges").get<std::vector<double>>();
        for (std::size_t l = 0; l < dims.size(); ++l) {
            const Tensor means = load_tensor(dir / ("layer" + std::to_string(l) + "_means.oodt"));
            Tensor lower = load_tensor(dir / ("layer" + std::to_string(l) + "_cov_factor.oodt"));
            if (means.rank() != 2 || means.dim(0) != st.num_classes || means.dim(1) != dims[l] ||
                lower.shape() != Shape{dims[l], dims[l]})
                throw FormatError("detector tensors disagree with manifest in " + dir.string());
            LayerGaussian g;
            for (std::size_t c = 0; c < st.num_classes; ++c) {
                auto r = means.row(c);
                g.means.emplace_back(Shape{dims[l]}, std::vector<double>(r.begin(), r.end()));
            }
            g.cov_factor = {dims[l], std::move(lower)};
            g.ridge = ridges.at(l);
            st.layers.push_back(std::move(g));
        }
        if (m.contains("combiner")) {
            Combiner c;
            c.weights = m["combiner"].at("weights").get<std::vector<double>>();
            c.bias = m["combiner"].at("bias").get<double>();
            st.combiner = std::move(c);
        }
        return st;
    } catch (const json::exception& e) {
        throw FormatError("invalid detector manifest in " + dir.string() + ": " + e.what());
    }
}

}  // namespace oodkit::mahalanobis
