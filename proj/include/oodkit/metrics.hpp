#pragma once

#include <span>
#include <vector>

#include "oodkit/tensor.hpp"

namespace oodkit {

/// In-distribution scores are positives; higher confidence means more in-distribution.
struct ScoreSample {
    std::vector<double> in_scores;
    std::vector<double> out_scores;

    void validate() const;
};

struct EvalResult {
    double tnr95 = 0.0;
    double auroc = 0.0;
    double dacc = 0.0;
};

/// Maximum softmax probability.
double msp_score(std::span<const double> logits);
std::vector<double> msp_scores(const Tensor& logits);

/// TNR at the largest observed in-score threshold that keeps TPR >= tpr_target.
double tnr_at_tpr(const ScoreSample& sample, double tpr_target = 0.95);
/// Mann-Whitney estimate with ties counted as one half.
double auroc(const ScoreSample& sample);
/// max over thresholds of (TPR + TNR) / 2, where q <= eps is classified as OOD.
double detection_accuracy(const ScoreSample& sample);

EvalResult evaluate(const ScoreSample& sample);

}  // namespace oodkit
