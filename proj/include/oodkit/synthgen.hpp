#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oodkit/data_io.hpp"
#include "oodkit/tensor.hpp"

namespace oodkit::synth {

enum class Kind { UniformNoise, ArithmeticMean, GeometricMean, Jigsaw, Speckle, Inverted, RgbGhosted };

inline constexpr std::array kAllKinds{Kind::UniformNoise, Kind::ArithmeticMean, Kind::GeometricMean,
                                      Kind::Jigsaw,       Kind::Speckle,        Kind::Inverted,
                                      Kind::RgbGhosted};

std::string_view kind_name(Kind kind);
Kind parse_kind(std::string_view name);
inline bool needs_source(Kind kind) { return kind != Kind::UniformNoise; }

struct GenSpec {
    Kind kind = Kind::UniformNoise;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    Shape image_shape{3, 8, 8};  // C x H x W; used by uniform noise only
    double speckle_sigma = 0.4;

    std::map<std::string, std::string> provenance() const;
};

/// Images are N x C x H x W with values in [0,1].
Tensor uniform_noise(const GenSpec& spec);
Tensor arithmetic_mean(const GenSpec& spec, const Tensor& source);
Tensor geometric_mean(const GenSpec& spec, const Tensor& source);
Tensor jigsaw(const GenSpec& spec, const Tensor& source);
Tensor speckle(const GenSpec& spec, const Tensor& source);
Tensor inverted(const GenSpec& spec, const Tensor& source);
Tensor rgb_ghosted(const GenSpec& spec, const Tensor& source);

/// Permutes a single image's 4 x 4 grid of patches: output patch slot t takes source patch perm[t].
Tensor apply_jigsaw(const Tensor& image, const std::array<std::size_t, 16>& perm);
/// (R,G,B) -> (R,B,G): a cyclic shift by one followed by swapping the first two channels.
Tensor reorder_channels(const Tensor& image);

Tensor generate(const GenSpec& spec, const Tensor* source);

/// Wraps a generated batch as a d_out_val dataset tagged with the spec.
Dataset generate_dataset(const GenSpec& spec, const Dataset* source, std::string name);

}  // namespace oodkit::synth
