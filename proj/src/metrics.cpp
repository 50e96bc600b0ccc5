#include "oodkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "oodkit/error.hpp"
#include "oodkit/losses.hpp"

namespace oodkit {

void ScoreSample::validate() const {
    if (in_scores.empty() || out_scores.empty())
        throw ValidationError("score sample needs in- and out-of-distribution scores");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(in_scores.begin(), in_scores.end(), finite) ||
        !std::all_of(out_scores.begin(), out_scores.end(), finite))
        throw ValidationError("score sample contains non-finite values");
}

double msp_score(std::span<const double> logits) {
    const auto p = softmax(logits);
    return *std::max_element(p.begin(), p.end());
}

std::vector<double> msp_scores(const Tensor& logits) {
    std::vector<double> out(logits.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = msp_score(logits.row(i));
    return out;
}

double tnr_at_tpr(const ScoreSample& sample, double tpr_target) {
    sample.validate();
    std::vector<double> in = sample.in_scores;
    std::sort(in.begin(), in.end(), std::greater<>());
    const double n = static_cast<double>(in.size());
    // Walk down distinct values; the first one reaching the target TPR is the largest valid threshold.
    double tau = in.back();
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (i + 1 < in.size() && in[i + 1] == in[i]) continue;
        if (static_cast<double>(i + 1) / n >= tpr_target) {
            tau = in[i];
            break;
        }
    }
    std::size_t below = 0;
    for (double v : sample.out_scores) below += v < tau;
    return static_cast<double>(below) / static_cast<double>(sample.out_scores.size());
}

double auroc(const ScoreSample& sample) {
    sample.validate();
    std::vector<double> out = sample.out_scores;
    std::sort(out.begin(), out.end());
    // twice the Mann-Whitney count, kept integral
    unsigned long long twice = 0;
    for (double v : sample.in_scores) {
        const auto lo = std::lower_bound(out.begin(), out.end(), v);
        const auto hi = std::upper_bound(lo, out.end(), v);
        twice += 2ULL * static_cast<unsigned long long>(lo - out.begin()) +
                 static_cast<unsigned long long>(hi - lo);
    }
    return static_cast<double>(twice) /
           (2.0 * static_cast<double>(sample.in_scores.size()) * static_cast<double>(out.size()));
}

double detection_accuracy(const ScoreSample& sample) {
    sample.validate();
    std::vector<double> in = sample.in_scores, out = sample.out_scores;
    std::sort(in.begin(), in.end());
    std::sort(out.begin(), out.end());
    const double n_in = static_cast<double>(in.size()), n_out = static_cast<double>(out.size());
    auto balanced = [&](double eps) {
        // TPR: in > eps; TNR: out <= eps
        const auto tp = in.end() - std::upper_bound(in.begin(), in.end(), eps);
        const auto tn = std::upper_bound(out.begin(), out.end(), eps) - out.begin();
        return 0.5 * (static_cast<double>(tp) / n_in + static_cast<double>(tn) / n_out);
    };
    double best = std::max(balanced(-HUGE_VAL), balanced(HUGE_VAL));
    for (double v : in) best = std::max(best, balanced(v));
    for (double v : out) best = std::max(best, balanced(v));
    return best;
}

EvalResult evaluate(const ScoreSample& sample) {
    return {tnr_at_tpr(sample, 0.95), auroc(sample), detection_accuracy(sample)};
}

}  // namespace oodkit
