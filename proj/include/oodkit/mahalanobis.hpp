#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "oodkit/data_io.hpp"
#include "oodkit/nn.hpp"
#include "oodkit/tensor.hpp"

namespace oodkit::mahalanobis {

/// Gaussian fit for one capture layer: class means and the factor of the shared covariance.
struct LayerGaussian {
    std::vector<Tensor> means;
    SpdFactor cov_factor;
    double ridge = 0.0;

    std::size_t dim() const { return cov_factor.dim; }
};

struct Combiner {
    std::vector<double> weights;  // one per layer
    double bias = 0.0;
};

struct State {
    std::size_t num_classes = 0;
    std::vector<LayerGaussian> layers;
    std::optional<Combiner> combiner;
    double preproc_eps = 0.0;
};

/// Feature vectors for capture point k: conv maps are averaged over space, dense outputs used as is.
Tensor layer_features(const ForwardTrace& trace, std::size_t k);

/// Per-layer class means and tied covariance using ground-truth labels.
State fit(const Network& net, const Dataset& d_in_train);

struct LayerScore {
    double value = 0.0;       // max_c -(f - mu_c)^T Sigma^-1 (f - mu_c)
    std::size_t closest = 0;  // arg max, lowest index on ties
};

LayerScore layer_score(const State& state, std::size_t layer, std::span<const double> feature);

/// x + eps * sign(d score_last / d x), where score_last is the last capture layer's score.
Tensor preprocess_input(const Network& net, const State& state, const Tensor& x, double eps);

/// N x L matrix of per-layer scores after preprocessing with `eps`.
Tensor layer_scores(const State& state, const Network& net, const Tensor& images, double eps);

/// Logistic regression (label 1 = in-distribution) over per-layer score vectors.
Combiner fit_logistic(const Tensor& in_scores, const Tensor& out_scores, std::size_t max_steps = 10000,
                      double grad_tol = 1e-6);

/// Fits the layer combiner on validation data, preprocessing with state.preproc_eps.
State fit_combiner(State state, const Network& net, const Tensor& val_in, const Tensor& val_out);

/// Pre-sigmoid combined confidence for every image; higher means more in-distribution.
std::vector<double> score(const State& state, const Network& net, const Tensor& images);

void save_state(const std::filesystem::path& dir, const State& state);
State load_state(const std::filesystem::path& dir);

}  // namespace oodkit::mahalanobis
