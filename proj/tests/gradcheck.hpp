#pragma once

// Finite-difference gradient checks of the network and the OECC objective.

#include <string>
#include <vector>

#include "oodkit/losses.hpp"
#include "oodkit/nn.hpp"
#include "oracles.hpp"

namespace gradcheck {

using namespace oodkit;

struct Architecture {
    std::string name;
    Shape input;
    std::vector<LayerSpec> layers;
    std::size_t classes;
};

/// Covers every layer kind, strided and padded convolutions included.
inline std::vector<Architecture> architectures() {
    using L = LayerSpec;
    return {
        {"mlp", {1, 2, 3}, {L::flatten(), L::dense(6, 5), L::relu(), L::dense(5, 3)}, 3},
        {"conv-pool", {2, 4, 4}, {L::conv2d(2, 3, 3, 1, 1), L::relu(), L::avgpool(2), L::flatten(), L::dense(12, 4)}, 4},
        {"conv-stride", {1, 5, 5}, {L::conv2d(1, 2, 3, 2, 1), L::relu(), L::flatten(), L::dense(18, 3)}, 3},
        {"conv-valid", {3, 4, 4}, {L::conv2d(3, 2, 2, 1, 0), L::relu(), L::conv2d(2, 2, 3, 1, 0), L::relu(), L::flatten(),
                                   L::dense(2, 2)}, 2},
    };
}

enum class Objective { Linear, CrossEntropy, Oecc };

inline std::string objective_name(Objective o) {
    return o == Objective::Linear ? "linear" : o == Objective::CrossEntropy ? "ce" : "oecc";
}

struct Report {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

/// Compares backward() against central differences for every parameter entry on a
/// random 5-example batch (plus a 4-example outlier batch for the OECC objective).
inline Report check(const Architecture& arch, Objective objective, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Network net = Network::initialized(arch.input, arch.layers, arch.classes, seed);
    for (auto& p : net.params())
        for (auto& v : p.values()) v += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
    const std::size_t nin = 5, noe = objective == Objective::Oecc ? 4 : 0, k = arch.classes;
    Shape bs = arch.input;
    bs.insert(bs.begin(), nin + noe);
    const Tensor x = oracle::random_tensor(bs, rng);
    const Tensor upstream = oracle::random_tensor({nin, k}, rng);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < nin; ++i) labels.push_back(rng() % k);
    const OeccConfig cfg{std::uniform_real_distribution<double>(0.05, 1.0)(rng),
                         std::uniform_real_distribution<double>(0.05, 1.0)(rng),
                         std::uniform_real_distribution<double>(0.5, 1.0)(rng)};

    auto split = [&](const Tensor& z, std::size_t from, std::size_t count) {
        return Tensor({count, k}, std::vector<double>(z.values().begin() + from * k,
                                                      z.values().begin() + (from + count) * k));
    };
    auto value_and_grad = [&](const Network& n, Tensor* grad) {
        const ForwardTrace tr = forward(n, x);
        const Tensor& z = tr.logits();
        if (objective == Objective::Linear) {
            if (grad) *grad = upstream;
            return oodkit::dot(z.values(), upstream.values());
        }
        if (objective == Objective::CrossEntropy) {
            const LossValue l = ce_loss(z, labels);
            if (grad) *grad = l.grad;
            return l.value;
        }
        const OeccValue l = oecc_loss(split(z, 0, nin), labels, split(z, nin, noe), cfg);
        if (grad) *grad = concat_rows(l.in_grad, l.oe_grad);
        return l.value;
    };

    Tensor dz;
    value_and_grad(net, &dz);
    const Gradients g = backward(net, forward(net, x), dz);
    Report r;
    for (std::size_t p = 0; p < net.params().size(); ++p) {
        auto& vals = net.params()[p].values();
        const auto fd = oracle::finite_diff([&] { return value_and_grad(net, nullptr); }, vals, 1e-5);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            r.max_rel_err = std::max(r.max_rel_err, oracle::rel_err(g.params[p][i], fd[i], 1e-6));
            ++r.checked;
        }
    }
    return r;
}

}  // namespace gradcheck
