#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "oodkit/tensor.hpp"

namespace oodkit {

/// Numerically stable softmax of one logit vector.
std::vector<double> softmax(std::span<const double> logits);
Tensor softmax(const Tensor& logits);  // length-K vector or N x K batch

/// A scalar objective and its gradient with respect to the logits it consumed.
struct LossValue {
    double value = 0.0;
    Tensor grad;  // same shape as the logits batch
};

/// Mean cross-entropy over an N x K batch.
LossValue ce_loss(const Tensor& logits, std::span<const std::size_t> labels);

/// (target_accuracy - mean max-softmax)^2; ties in the max resolve to the lowest index.
LossValue confidence_term(const Tensor& logits, double target_accuracy);

/// Mean over examples of sum_l |1/K - softmax_l|, subgradient sign(softmax - 1/K).
LossValue uniformity_term(const Tensor& logits);

struct OeccConfig {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double train_accuracy = 1.0;

    void validate() const;
};

struct OeccValue {
    double value = 0.0;
    double ce = 0.0;
    double confidence = 0.0;
    double uniformity = 0.0;
    Tensor in_grad;
    Tensor oe_grad;
};

/// CE + lambda1 * confidence(in-batch) + lambda2 * uniformity(OE batch).
OeccValue oecc_loss(const Tensor& in_logits, std::span<const std::size_t> labels,
                    const Tensor& oe_logits, const OeccConfig& cfg);

}  // namespace oodkit
