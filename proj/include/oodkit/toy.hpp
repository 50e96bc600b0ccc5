#pragma once

#include <cstddef>
#include <cstdint>

#include "oodkit/data_io.hpp"

namespace oodkit::toy {

/// Sizes for the synthetic blob task.
struct BlobTaskSpec {
    std::size_t num_classes = 4;
    std::size_t channels = 3;
    std::size_t side = 8;
    std::size_t train_per_class = 400;
    std::size_t test_per_class = 200;
    std::size_t oe_count = 2000;
    std::size_t val_count = 500;
    std::size_t ood_test_count = 800;
    // image variability
    double background = 0.4;  // max of the uniform background
    double jitter = 1.0;      // std of the blob centre around its class anchor, pixels
    double min_width = 0.8;
    double max_width = 2.0;
    double min_amplitude = 0.3;
    std::uint64_t seed = 0;
};

/// In-distribution: one Gaussian blob per image, its position set by the class.
/// Test outliers: ring-shaped blobs at arbitrary positions.
/// Outlier exposure and validation: uniform noise from independent streams.
struct BlobTask {
    Dataset d_in_train;
    Dataset d_in_test;
    Dataset d_out_oe;
    Dataset d_out_val;
    Dataset d_out_test;
};

BlobTask make_blob_task(const BlobTaskSpec& spec);

}  // namespace oodkit::toy
