#include "oodkit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "oodkit/error.hpp"

namespace oodkit {

namespace {

void require_batch(const Tensor& logits, const char* who) {
    if (logits.rank() != 2 || logits.dim(0) == 0 || logits.dim(1) == 0)
        throw DimensionError(std::string(who) + ": expected a non-empty N x K logit batch");
}

void softmax_into(std::span<const double> z, std::span<double> p) {
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    if (!logits.empty()) softmax_into(logits, p);
    return p;
}

Tensor softmax(const Tensor& logits) {
    Tensor p(logits.shape());
    if (logits.rank() == 1) {
        softmax_into(logits.data(), p.data());
    } else {
        require_batch(logits, "softmax");
        for (std::size_t n = 0; n < logits.dim(0); ++n) softmax_into(logits.row(n), p.row(n));
    }
    return p;
}

LossValue ce_loss(const Tensor& logits, std::span<const std::size_t> labels) {
    require_batch(logits, "ce_loss");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) throw LabelError("ce_loss: label count does not match batch size");
    LossValue out{0.0, softmax(logits)};
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = labels[i];
        if (y >= k) throw LabelError("ce_loss: label " + std::to_string(y) + " out of range");
        auto z = logits.row(i);
        // -log softmax_y = logsumexp(z) - z_y
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) s += std::exp(v - m);
        out.value += (m + std::log(s) - z[y]);
        auto g = out.grad.row(i);
        g[y] -= 1.0;
        for (auto& v : g) v *= inv_n;
    }
    out.value *= inv_n;
    return out;
}

LossValue confidence_term(const Tensor& logits, double target_accuracy) {
    require_batch(logits, "confidence_term");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    const Tensor p = softmax(logits);
    std::vector<std::size_t> arg(n);
    double mean_conf = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto pi = p.row(i);
        arg[i] = static_cast<std::size_t>(std::max_element(pi.begin(), pi.end()) - pi.begin());
        mean_conf += pi[arg[i]];
    }
    mean_conf /= static_cast<double>(n);
    const double gap = target_accuracy - mean_conf;

    LossValue out{gap * gap, Tensor(logits.shape())};
    // d/dz_j of p_a = p_a (1[j==a] - p_j); the square couples the whole batch through the mean
    const double coef = -2.0 * gap / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto pi = p.row(i);
        auto g = out.grad.row(i);
        const double pa = pi[arg[i]];
        for (std::size_t j = 0; j < k; ++j) g[j] = coef * pa * ((j == arg[i] ? 1.0 : 0.0) - pi[j]);
    }
    return out;
}

LossValue uniformity_term(const Tensor& logits) {
    require_batch(logits, "uniformity_term");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    const Tensor p = softmax(logits);
    const double u = 1.0 / static_cast<double>(k);
    const double inv_n = 1.0 / static_cast<double>(n);
    LossValue out{0.0, Tensor(logits.shape())};
    std::vector<double> s(k);
    for (std::size_t i = 0; i < n; ++i) {
        auto pi = p.row(i);
        double row_sum = 0.0;
        double sp = 0.0;  // sum_l s_l p_l
        for (std::size_t l = 0; l < k; ++l) {
            const double d = pi[l] - u;
            row_sum += std::abs(d);
            s[l] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            sp += s[l] * pi[l];
        }
        out.value += row_sum;
        auto g = out.grad.row(i);
        for (std::size_t j = 0; j < k; ++j) g[j] = inv_n * pi[j] * (s[j] - sp);
    }
    out.value *= inv_n;
    return out;
}

void OeccConfig::validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0))
        throw ValidationError("OECC weights must be nonnegative");
    if (!(train_accuracy >= 0.0 && train_accuracy <= 1.0))
        throw ValidationError("OECC target accuracy must lie in [0,1]");
}

OeccValue oecc_loss(const Tensor& in_logits, std::span<const std::size_t> labels,
                    const Tensor& oe_logits, const OeccConfig& cfg) {
    cfg.validate();
    LossValue ce = ce_loss(in_logits, labels);
    LossValue conf = confidence_term(in_logits, cfg.train_accuracy);
    LossValue uni = uniformity_term(oe_logits);

    OeccValue out;
    out.ce = ce.value;
    out.confidence = conf.value;
    out.uniformity = uni.value;
    out.value = ce.value + cfg.lambda1 * conf.value + cfg.lambda2 * uni.value;
    out.in_grad = std::move(ce.grad);
    for (std::size_t i = 0; i < out.in_grad.size(); ++i) out.in_grad[i] += cfg.lambda1 * conf.grad[i];
    out.oe_grad = std::move(uni.grad);
    for (auto& v : out.oe_grad.values()) v *= cfg.lambda2;
    return out;
}

}  // namespace oodkit
