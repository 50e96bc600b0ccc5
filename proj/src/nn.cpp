#include "oodkit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "oodkit/error.hpp"
#include "oodkit/rng.hpp"

namespace oodkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::Dense, "dense"},     {LayerKind::Conv2d, "conv2d"},   {LayerKind::Relu, "relu"},
    {LayerKind::Flatten, "flatten"}, {LayerKind::AvgPool, "avgpool"},
};

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

Shape batch_shape(std::size_t n, const Shape& per_example) {
    Shape s{n};
    s.insert(s.end(), per_example.begin(), per_example.end());
    return s;
}

std::size_t conv_extent(std::size_t in, const LayerSpec& l) {
    const std::size_t padded = in + 2 * l.padding;
    if (padded < l.kernel) return 0;
    return (padded - l.kernel) / l.stride + 1;
}

// ---- per-layer kernels; all operate on whole batches ----

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t n = x.dim(0), in = w.dim(1), out = w.dim(0);
    Tensor y({n, out});
    for (std::size_t s = 0; s < n; ++s) {
        auto xs = x.row(s);
        auto ys = y.row(s);
        for (std::size_t o = 0; o < out; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += w.at(o, i) * xs[i];
            ys[o] = acc + b[o];
        }
    }
    return y;
}

void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db,
                    Tensor* dx) {
    const std::size_t n = x.dim(0), in = w.dim(1), out = w.dim(0);
    for (std::size_t s = 0; s < n; ++s) {
        auto xs = x.row(s);
        auto gs = dy.row(s);
        for (std::size_t o = 0; o < out; ++o) {
            const double g = gs[o];
            db[o] += g;
            for (std::size_t i = 0; i < in; ++i) dw.at(o, i) += g * xs[i];
        }
        if (dx) {
            auto dxs = dx->row(s);
            for (std::size_t i = 0; i < in; ++i) {
                double acc = 0.0;
                for (std::size_t o = 0; o < out; ++o) acc += w.at(o, i) * gs[o];
                dxs[i] = acc;
            }
        }
    }
}

struct ConvGeom {
    std::size_t n, c, h, w, o, k, stride, pad, oh, ow;
};

ConvGeom conv_geom(const Tensor& x, const LayerSpec& l) {
    return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), l.out_channels, l.kernel, l.stride, l.padding,
            conv_extent(x.dim(2), l), conv_extent(x.dim(3), l)};
}

Tensor conv_forward(const Tensor& x, const LayerSpec& l, const Tensor& w, const Tensor& b) {
    const ConvGeom g = conv_geom(x, l);
    Tensor y({g.n, g.o, g.oh, g.ow});
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    double* yp = y.data().data();
    for (std::size_t s = 0; s < g.n; ++s)
        for (std::size_t o = 0; o < g.o; ++o)
            for (std::size_t i = 0; i < g.oh; ++i)
                for (std::size_t j = 0; j < g.ow; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < g.c; ++c)
                        for (std::size_t u = 0; u < g.k; ++u) {
                            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * g.stride + u) -
                                                     static_cast<std::ptrdiff_t>(g.pad);
                            if (r < 0 || r >= static_cast<std::ptrdiff_t>(g.h)) continue;
                            for (std::size_t v = 0; v < g.k; ++v) {
                                const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(j * g.stride + v) -
                                                         static_cast<std::ptrdiff_t>(g.pad);
                                if (q < 0 || q >= static_cast<std::ptrdiff_t>(g.w)) continue;
                                acc += wp[((o * g.c + c) * g.k + u) * g.k + v] *
                                       xp[((s * g.c + c) * g.h + r) * g.w + q];
                            }
                        }
                    yp[((s * g.o + o) * g.oh + i) * g.ow + j] = acc + b[o];
                }
    return y;
}

void conv_backward(const Tensor& x, const LayerSpec& l, const Tensor& w, const Tensor& dy, Tensor& dw,
                   Tensor& db, Tensor* dx) {
    const ConvGeom g = conv_geom(x, l);
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    const double* gp = dy.data().data();
    double* dwp = dw.data().data();
    double* dxp = dx ? dx->data().data() : nullptr;
    for (std::size_t s = 0; s < g.n; ++s)
        for (std::size_t o = 0; o < g.o; ++o)
            for (std::size_t i = 0; i < g.oh; ++i)
                for (std::size_t j = 0; j < g.ow; ++j) {
                    const double gy = gp[((s * g.o + o) * g.oh + i) * g.ow + j];
                    db[o] += gy;
                    for (std::size_t c = 0; c < g.c; ++c)
                        for (std::size_t u = 0; u < g.k; ++u) {
                            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * g.stride + u) -
                                                     static_cast<std::ptrdiff_t>(g.pad);
                            if (r < 0 || r >= static_cast<std::ptrdiff_t>(g.h)) continue;
                            for (std::size_t v = 0; v < g.k; ++v) {
                                const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(j * g.stride + v) -
                                                         static_cast<std::ptrdiff_t>(g.pad);
                                if (q < 0 || q >= static_cast<std::ptrdiff_t>(g.w)) continue;
                                const std::size_t wi = ((o * g.c + c) * g.k + u) * g.k + v;
                                const std::size_t xi = ((s * g.c + c) * g.h + r) * g.w + q;
                                dwp[wi] += gy * xp[xi];
                                if (dxp) dxp[xi] += gy * wp[wi];
                            }
                        }
                }
}

Tensor avgpool_forward(const Tensor& x, std::size_t win) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / win, ow = w / win;
    Tensor y({n, c, oh, ow});
    const double inv = 1.0 / static_cast<double>(win * win);
    const double* xp = x.data().data();
    double* yp = y.data().data();
    for (std::size_t sc = 0; sc < n * c; ++sc)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (std::size_t u = 0; u < win; ++u)
                    for (std::size_t v = 0; v < win; ++v) acc += xp[(sc * h + i * win + u) * w + j * win + v];
                yp[(sc * oh + i) * ow + j] = acc * inv;
            }
    return y;
}

Tensor avgpool_backward(const Tensor& x, std::size_t win, const Tensor& dy) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / win, ow = w / win;
    Tensor dx(x.shape());
    const double inv = 1.0 / static_cast<double>(win * win);
    const double* gp = dy.data().data();
    double* dxp = dx.data().data();
    for (std::size_t sc = 0; sc < n * c; ++sc)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                const double g = gp[(sc * oh + i) * ow + j] * inv;
                for (std::size_t u = 0; u < win; ++u)
                    for (std::size_t v = 0; v < win; ++v) dxp[(sc * h + i * win + u) * w + j * win + v] = g;
            }
    return dx;
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
    for (const auto& [k, n] : kKindNames)
        if (k == kind) return n;
    return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name) return k;
    throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.in_dim = in;
    l.out_dim = out;
    return l;
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
    LayerSpec l;
    l.kind = LayerKind::Conv2d;
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::flatten() {
    LayerSpec l;
    l.kind = LayerKind::Flatten;
    return l;
}

LayerSpec LayerSpec::avgpool(std::size_t window) {
    LayerSpec l;
    l.kind = LayerKind::AvgPool;
    l.pool = window;
    return l;
}

Network::Network(Shape input_shape, std::vector<LayerSpec> layers, std::size_t num_classes)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), num_classes_(num_classes) {
    if (layers_.empty()) throw DimensionError("network needs at least one layer");
    if (num_classes_ < 2) throw DimensionError("network needs at least two classes");
    Shape cur = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& l = layers_[i];
        const std::string where = "layer " + std::to_string(i) + " (" +
                                  std::string(layer_kind_name(l.kind)) + "): input " + shape_str(cur);
        switch (l.kind) {
        case LayerKind::Dense:
            if (cur.size() != 1 || cur[0] != l.in_dim || l.out_dim == 0)
                throw DimensionError(where + " does not match in_dim " + std::to_string(l.in_dim));
            param_offset_.push_back(params_.size());
            params_.emplace_back(Shape{l.out_dim, l.in_dim});
            params_.emplace_back(Shape{l.out_dim});
            cur = {l.out_dim};
            break;
        case LayerKind::Conv2d: {
            if (cur.size() != 3 || cur[0] != l.in_channels || l.out_channels == 0 || l.kernel == 0 ||
                l.stride == 0)
                throw DimensionError(where + " does not match in_channels " + std::to_string(l.in_channels));
            const std::size_t oh = conv_extent(cur[1], l), ow = conv_extent(cur[2], l);
            if (oh == 0 || ow == 0) throw DimensionError(where + " leaves no output positions");
            param_offset_.push_back(params_.size());
            params_.emplace_back(Shape{l.out_channels, l.in_channels, l.kernel, l.kernel});
            params_.emplace_back(Shape{l.out_channels});
            cur = {l.out_channels, oh, ow};
            break;
        }
        case LayerKind::Relu:
            param_offset_.push_back(std::nullopt);
            capture_.push_back(i);
            break;
        case LayerKind::Flatten:
            param_offset_.push_back(std::nullopt);
            cur = {shape_size(cur)};
            break;
        case LayerKind::AvgPool:
            if (cur.size() != 3 || l.pool == 0 || cur[1] % l.pool != 0 || cur[2] % l.pool != 0)
                throw DimensionError(where + " is not divisible by window " + std::to_string(l.pool));
            param_offset_.push_back(std::nullopt);
            cur = {cur[0], cur[1] / l.pool, cur[2] / l.pool};
            break;
        }
        out_shapes_.push_back(cur);
    }
    if (cur.size() != 1 || cur[0] != num_classes_)
        throw DimensionError("network output " + shape_str(cur) + " does not equal K = " +
                             std::to_string(num_classes_));
    if (capture_.empty() || capture_.back() != layers_.size() - 1) capture_.push_back(layers_.size() - 1);
}

Network Network::initialized(Shape input_shape, std::vector<LayerSpec> layers, std::size_t num_classes,
                             std::uint64_t seed) {
    Network net(std::move(input_shape), std::move(layers), num_classes);
    net.seed_ = seed;
    Rng rng(mix_seed(seed, stream::kInit));
    for (std::size_t i = 0; i < net.layers_.size(); ++i) {
        const auto off = net.param_offset_[i];
        if (!off) continue;
        const LayerSpec& l = net.layers_[i];
        double fan_in, fan_out;
        if (l.kind == LayerKind::Dense) {
            fan_in = static_cast<double>(l.in_dim);
            fan_out = static_cast<double>(l.out_dim);
        } else {
            const double area = static_cast<double>(l.kernel * l.kernel);
            fan_in = static_cast<double>(l.in_channels) * area;
            fan_out = static_cast<double>(l.out_channels) * area;
        }
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-a, a);
        for (auto& v : net.params_[*off].values()) v = dist(rng);
    }
    return net;
}

std::optional<std::size_t> Network::param_offset(std::size_t layer) const { return param_offset_.at(layer); }

std::string Network::param_name(std::size_t param_index) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (!param_offset_[i]) continue;
        if (*param_offset_[i] == param_index) return "layer" + std::to_string(i) + "_weight";
        if (*param_offset_[i] + 1 == param_index) return "layer" + std::to_string(i) + "_bias";
    }
    return "param" + std::to_string(param_index);
}

bool operator==(const Network& a, const Network& b) {
    return a.input_shape_ == b.input_shape_ && a.layers_ == b.layers_ && a.num_classes_ == b.num_classes_ &&
           a.params_ == b.params_;
}

ForwardTrace forward(const Network& net, const Tensor& x) {
    const Shape expected = batch_shape(x.rank() ? x.dim(0) : 0, net.input_shape());
    if (x.shape() != expected)
        throw DimensionError("forward: input " + shape_str(x.shape()) + " does not match " +
                             shape_str(expected));
    const std::size_t n = x.dim(0);
    ForwardTrace tr;
    tr.capture_points = net.capture_points();
    tr.activations.reserve(net.layers().size() + 1);
    tr.activations.push_back(x);
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const LayerSpec& l = net.layers()[i];
        const Tensor& in = tr.activations.back();
        const auto off = net.param_offset(i);
        switch (l.kind) {
        case LayerKind::Dense:
            tr.activations.push_back(dense_forward(in, net.params()[*off], net.params()[*off + 1]));
            break;
        case LayerKind::Conv2d:
            tr.activations.push_back(conv_forward(in, l, net.params()[*off], net.params()[*off + 1]));
            break;
        case LayerKind::Relu: {
            Tensor y = in;
            for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
            tr.activations.push_back(std::move(y));
            break;
        }
        case LayerKind::Flatten:
            tr.activations.push_back(in.reshaped({n, in.row_size()}));
            break;
        case LayerKind::AvgPool:
            tr.activations.push_back(avgpool_forward(in, l.pool));
            break;
        }
    }
    return tr;
}

Gradients backward_from(const Network& net, const ForwardTrace& trace, std::size_t from_layer,
                        const Tensor& upstream, bool want_input_grad) {
    const auto& layers = net.layers();
    if (trace.activations.size() != layers.size() + 1)
        throw ConsistencyError("backward: trace has " + std::to_string(trace.activations.size()) +
                               " activations, network expects " + std::to_string(layers.size() + 1));
    const std::size_t n = trace.batch_size();
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (trace.activations[i + 1].shape() != batch_shape(n, net.output_shape(i)))
            throw ConsistencyError("backward: trace activation " + std::to_string(i + 1) +
                                   " does not match the network");
    if (from_layer >= layers.size()) throw ConsistencyError("backward: layer index out of range");
    if (upstream.shape() != trace.activations[from_layer + 1].shape())
        throw DimensionError("backward: upstream gradient " + shape_str(upstream.shape()) +
                             " does not match layer output " +
                             shape_str(trace.activations[from_layer + 1].shape()));

    Gradients out;
    out.params.reserve(net.params().size());
    for (const auto& p : net.params()) out.params.emplace_back(p.shape());

    Tensor grad = upstream;
    for (std::size_t ii = from_layer + 1; ii-- > 0;) {
        const LayerSpec& l = layers[ii];
        const Tensor& in = trace.activations[ii];
        const bool need_dx = ii > 0 || want_input_grad;
        const auto off = net.param_offset(ii);
        Tensor dx;
        switch (l.kind) {
        case LayerKind::Dense: {
            if (need_dx) dx = Tensor(in.shape());
            dense_backward(in, net.params()[*off], grad, out.params[*off], out.params[*off + 1],
                           need_dx ? &dx : nullptr);
            break;
        }
        case LayerKind::Conv2d: {
            if (need_dx) dx = Tensor(in.shape());
            conv_backward(in, l, net.params()[*off], grad, out.params[*off], out.params[*off + 1],
                          need_dx ? &dx : nullptr);
            break;
        }
        case LayerKind::Relu:
            dx = std::move(grad);
            for (std::size_t k = 0; k < dx.size(); ++k)
                if (!(in[k] > 0.0)) dx[k] = 0.0;
            break;
        case LayerKind::Flatten:
            dx = grad.reshaped(in.shape());
            break;
        case LayerKind::AvgPool:
            dx = avgpool_backward(in, l.pool, grad);
            break;
        }
        grad = std::move(dx);
    }
    if (want_input_grad) out.input = std::move(grad);
    return out;
}

Gradients backward(const Network& net, const ForwardTrace& trace, const Tensor& dloss_dlogits,
                   bool want_input_grad) {
    if (trace.activations.empty()) throw ConsistencyError("backward: empty trace");
    return backward_from(net, trace, net.layers().size() - 1, dloss_dlogits, want_input_grad);
}

Velocity Velocity::zeros_like(const Network& net) {
    Velocity v;
    for (const auto& p : net.params()) v.buffers.emplace_back(p.shape());
    return v;
}

void sgd_step(Network& net, const std::vector<Tensor>& grads, Velocity& velocity, double lr,
              double momentum) {
    auto& params = net.params();
    if (grads.size() != params.size() || velocity.buffers.size() != params.size())
        throw DimensionError("sgd_step: gradient count does not match parameter count");
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (grads[p].shape() != params[p].shape() || velocity.buffers[p].shape() != params[p].shape())
            throw DimensionError("sgd_step: shape mismatch for " + net.param_name(p));
        if (!grads[p].all_finite())
            throw DivergenceError("non-finite gradient in " + net.param_name(p), net.param_name(p));
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& v = velocity.buffers[p];
        auto& th = params[p];
        for (std::size_t k = 0; k < th.size(); ++k) {
            v[k] = momentum * v[k] + grads[p][k];
            th[k] -= lr * v[k];
        }
        if (!th.all_finite())
            throw DivergenceError("parameter " + net.param_name(p) + " became non-finite", net.param_name(p));
    }
}

double lr_at(const LrSchedule& schedule, std::size_t step, std::size_t total_steps) {
    return std::visit(
        [&](const auto& s) -> double {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, StepDecay>) {
                double lr = s.initial;
                for (double m : s.milestones)
                    if (static_cast<double>(step) >= m * static_cast<double>(total_steps)) lr *= s.drop_factor;
                return lr;
            } else {
                if (total_steps == 0) return s.initial;
                const double t = static_cast<double>(step) / static_cast<double>(total_steps);
                return s.initial * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
            }
        },
        schedule);
}

Tensor logits_of(const Network& net, const Tensor& images, std::size_t chunk) {
    const std::size_t n = images.dim(0);
    if (n <= chunk) return forward(net, images).logits();
    Tensor out({n, net.num_classes()});
    for (std::size_t b = 0; b < n; b += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b; i < std::min(n, b + chunk); ++i) idx.push_back(i);
        const Tensor z = forward(net, take_rows(images, idx)).logits();
        std::copy(z.values().begin(), z.values().end(), out.values().begin() + b * net.num_classes());
    }
    return out;
}

std::vector<std::size_t> predict(const Network& net, const Tensor& images) {
    const Tensor z = logits_of(net, images);
    std::vector<std::size_t> out(z.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto r = z.row(i);
        out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

double accuracy(const Network& net, const Tensor& images, std::span<const std::size_t> labels) {
    const auto pred = predict(net, images);
    if (pred.size() != labels.size()) throw LabelError("accuracy: label count mismatch");
    if (pred.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

namespace {

void check_labels(const Network& net, const Dataset& ds) {
    if (ds.labels.size() != ds.size()) throw LabelError("dataset '" + ds.name + "' lacks labels");
    for (auto y : ds.labels)
        if (y >= net.num_classes())
            throw LabelError("dataset '" + ds.name + "': label " + std::to_string(y) + " outside [0,K)");
}

std::vector<std::size_t> gather_labels(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> y;
    y.reserve(idx.size());
    for (auto i : idx) y.push_back(ds.labels[i]);
    return y;
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

// Cycles through shuffled epochs of the outlier set independently of the in-distribution stream.
class OeStream {
public:
    OeStream(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(batch), seed_(seed) {}

    const std::vector<std::size_t>& next() {
        if (pos_ == current_.size()) {
            current_ = batch_indices(n_, batch_, seed_, epoch_++);
            pos_ = 0;
        }
        return current_[pos_++];
    }

private:
    std::size_t n_, batch_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<std::vector<std::size_t>> current_;
    std::size_t pos_ = 0;
};

}  // namespace

TrainResult train(Network net, const Dataset& d_in, const TrainConfig& config) {
    check_labels(net, d_in);
    const std::size_t n = d_in.size();
    const std::size_t total = config.epochs * steps_per_epoch(n, config.batch_in);
    const std::uint64_t batch_seed = mix_seed(config.seed, stream::kBatchIn);
    Velocity vel = Velocity::zeros_like(net);
    std::size_t step = 0;
    for (std::size_t e = 0; e < config.epochs; ++e) {
        for (const auto& idx : batch_indices(n, config.batch_in, batch_seed, e)) {
            const Tensor x = take_rows(d_in.images, idx);
            const auto y = gather_labels(d_in, idx);
            const ForwardTrace tr = forward(net, x);
            const LossValue loss = ce_loss(tr.logits(), y);
            const Gradients g = backward(net, tr, loss.grad);
            sgd_step(net, g.params, vel, lr_at(config.schedule, step, total), config.momentum);
            ++step;
        }
    }
    const double acc = accuracy(net, d_in.images, d_in.labels);
    return {std::move(net), acc};
}

Network finetune_ce(Network net, const Dataset& d_in, const TrainConfig& config,
                    const StepObserver& observer) {
    check_labels(net, d_in);
    const std::size_t n = d_in.size();
    const std::size_t total = config.epochs * steps_per_epoch(n, config.batch_in);
    const std::uint64_t batch_seed = mix_seed(config.seed, stream::kBatchIn);
    Velocity vel = Velocity::zeros_like(net);
    std::size_t step = 0;
    for (std::size_t e = 0; e < config.epochs; ++e) {
        for (const auto& idx : batch_indices(n, config.batch_in, batch_seed, e)) {
            const Tensor x = take_rows(d_in.images, idx);
            const auto y = gather_labels(d_in, idx);
            const ForwardTrace tr = forward(net, x);
            const LossValue loss = ce_loss(tr.logits(), y);
            const Gradients g = backward(net, tr, loss.grad);
            sgd_step(net, g.params, vel, lr_at(config.schedule, step, total), config.momentum);
            if (observer) observer(step, net);
            ++step;
        }
    }
    return net;
}

Network finetune_ce(Network net, const Dataset& d_in, const TrainConfig& config) {
    return finetune_ce(std::move(net), d_in, config, StepObserver{});
}

Network finetune_oecc(Network net, const Dataset& d_in, const Dataset& d_oe, const TrainConfig& config,
                      const OeccConfig& oecc, const StepObserver& observer) {
    check_labels(net, d_in);
    oecc.validate();
    if (d_oe.size() == 0) throw DataError("finetune_oecc: outlier set '" + d_oe.name + "' is empty");
    const std::size_t n = d_in.size();
    const std::size_t total = config.epochs * steps_per_epoch(n, config.batch_in);
    const std::uint64_t batch_seed = mix_seed(config.seed, stream::kBatchIn);
    OeStream oe(d_oe.size(), config.batch_oe, mix_seed(config.seed, stream::kBatchOe));
    const std::size_t k = net.num_classes();
    Velocity vel = Velocity::zeros_like(net);
    std::size_t step = 0;
    for (std::size_t e = 0; e < config.epochs; ++e) {
        for (const auto& idx : batch_indices(n, config.batch_in, batch_seed, e)) {
            const auto& oe_idx = oe.next();
            const std::size_t nin = idx.size(), noe = oe_idx.size();
            const Tensor x = concat_rows(take_rows(d_in.images, idx), take_rows(d_oe.images, oe_idx));
            const auto y = gather_labels(d_in, idx);
            const ForwardTrace tr = forward(net, x);

            const Tensor& z = tr.logits();
            Tensor zin({nin, k}, std::vector<double>(z.values().begin(), z.values().begin() + nin * k));
            Tensor zoe({noe, k}, std::vector<double>(z.values().begin() + nin * k, z.values().end()));
            const OeccValue loss = oecc_loss(zin, y, zoe, oecc);

            const Gradients g = backward(net, tr, concat_rows(loss.in_grad, loss.oe_grad));
            sgd_step(net, g.params, vel, lr_at(config.schedule, step, total), config.momentum);
            if (observer) observer(step, net);
            ++step;
        }
    }
    return net;
}

Network finetune_oecc(Network net, const Dataset& d_in, const Dataset& d_oe, const TrainConfig& config,
                      const OeccConfig& oecc) {
    return finetune_oecc(std::move(net), d_in, d_oe, config, oecc, StepObserver{});
}

void save_network(const fs::path& dir, const Network& net, const CheckpointMeta& meta) {
    fs::create_directories(dir);
    json m;
    m["format"] = "oodkit-network";
    m["input_shape"] = net.input_shape();
    m["num_classes"] = net.num_classes();
    m["seed"] = net.seed();
    m["capture_points"] = net.capture_points();
    json layers = json::array();
    for (const auto& l : net.layers()) {
        json j{{"kind", std::string(layer_kind_name(l.kind))}};
        switch (l.kind) {
        case LayerKind::Dense:
            j["in_dim"] = l.in_dim;
            j["out_dim"] = l.out_dim;
            break;
        case LayerKind::Conv2d:
            j["in_channels"] = l.in_channels;
            j["out_channels"] = l.out_channels;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            j["padding"] = l.padding;
            break;
        case LayerKind::AvgPool:
            j["pool"] = l.pool;
            break;
        default:
            break;
        }
        layers.push_back(std::move(j));
    }
    m["layers"] = std::move(layers);
    json files = json::array();
    for (std::size_t p = 0; p < net.params().size(); ++p) {
        const std::string file = net.param_name(p) + ".oodt";
        save_tensor(dir / file, net.params()[p]);
        files.push_back(file);
    }
    m["params"] = std::move(files);
    if (meta.train_accuracy) m["train_accuracy"] = *meta.train_accuracy;
    m["scalars"] = meta.scalars;
    std::ofstream os(dir / "manifest.json");
    os << m.dump(2) << '\n';
    if (!os) throw DataError("failed to write network manifest in " + dir.string());
}

Network load_network(const fs::path& dir, CheckpointMeta* meta) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw DataError("no network manifest in " + dir.string());
    try {
        const json m = json::parse(is);
        if (m.value("format", "") != "oodkit-network")
            throw FormatError(dir.string() + " is not a network checkpoint");
        std::vector<LayerSpec> layers;
        for (const auto& j : m.at("layers")) {
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
            layers.push_back(l);
        }
        Network net = Network::initialized(m.at("input_shape").get<Shape>(), std::move(layers),
                                           m.at("num_classes").get<std::size_t>(), m.at("seed").get<std::uint64_t>());
        const auto files = m.at("params").get<std::vector<std::string>>();
        if (files.size() != net.params().size())
            throw FormatError("checkpoint parameter count mismatch in " + dir.string());
        for (std::size_t p = 0; p < files.size(); ++p) {
            Tensor t = load_tensor(dir / files[p]);
            if (t.shape() != net.params()[p].shape())
                throw FormatError("parameter " + files[p] + " has the wrong shape");
            net.params()[p] = std::move(t);
        }
        if (meta) {
            meta->train_accuracy.reset();
            if (m.contains("train_accuracy")) meta->train_accuracy = m["train_accuracy"].get<double>();
            meta->scalars = m.value("scalars", std::map<std::string, double>{});
        }
        return net;
    } catch (const json::exception& e) {
        throw FormatError("invalid network manifest in " + dir.string() + ": " + e.what());
    }
}

}  // namespace oodkit
