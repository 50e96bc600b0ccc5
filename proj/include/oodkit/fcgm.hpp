#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "oodkit/nn.hpp"
#include "oodkit/tensor.hpp"

namespace oodkit::fcgm {

inline const std::vector<std::size_t> kDefaultOrders{1, 2, 4, 8};
inline constexpr double kDenominatorFloor = 1e-12;
inline constexpr double kExpectedDevFloor = 1e-12;

/// Order-p Gram matrix of a channels x positions map, returned as its row-major
/// upper triangle. Entry (i,j) = root_p(sum_s F[i,s]^p F[j,s]^p), where root_p keeps
/// the sign of a negative sum. A rank-1 input is treated as channels x 1.
Tensor gram(const Tensor& feature_map, std::size_t order);

/// Channels x positions view of one example's activation at capture point k.
Tensor feature_map(const ForwardTrace& trace, std::size_t k, std::size_t example);

/// Relative violation of [lo, hi]; denominators floored at kDenominatorFloor.
double deviation(double v, double lo, double hi);

struct Bounds {
    std::vector<std::size_t> orders;
    std::size_t num_classes = 0;
    std::vector<Shape> layer_shapes;  // {channels, positions} per capture layer
    // [layer][order index][class] -> upper-triangular Gram extrema
    std::vector<std::vector<std::vector<Tensor>>> mins;
    std::vector<std::vector<std::vector<Tensor>>> maxs;
    std::vector<double> expected_dev;  // empty until calibrated

    std::size_t num_layers() const { return layer_shapes.size(); }
    bool calibrated() const { return expected_dev.size() == layer_shapes.size() && !layer_shapes.empty(); }
};

/// Gram extrema per (layer, order, class) where class is the network's prediction.
Bounds fit_bounds(const Network& net, const Tensor& images,
                  const std::vector<std::size_t>& orders = kDefaultOrders);

/// Sum over orders and entries of deviation() against the bounds of `predicted_class`.
/// `gram_values[o]` holds the Gram vector for orders[o].
double layer_deviation(const Bounds& bounds, std::size_t layer, std::span<const Tensor> gram_values,
                       std::size_t predicted_class);

/// N x L matrix of layerwise deviations, using each example's predicted class.
Tensor layer_deviations(const Bounds& bounds, const Network& net, const Tensor& images);

/// Sets expected_dev to the per-layer mean deviation over a held-out in-distribution partition.
Bounds calibrate_normalizer(Bounds bounds, const Network& net, const Tensor& partition);

struct Deviation {
    std::vector<double> per_layer;
    double total = 0.0;
};

std::vector<Deviation> deviations(const Bounds& bounds, const Network& net, const Tensor& images);

/// Confidence = -total deviation; 0 is the maximum.
std::vector<double> score(const Bounds& bounds, const Network& net, const Tensor& images);

void save_bounds(const std::filesystem::path& dir, const Bounds& bounds);
Bounds load_bounds(const std::filesystem::path& dir);

}  // namespace oodkit::fcgm
