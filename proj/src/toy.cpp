#include "oodkit/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oodkit/error.hpp"
#include "oodkit/rng.hpp"
#include "oodkit/synthgen.hpp"

namespace oodkit::toy {

namespace {

struct Canvas {
    std::size_t channels, side;
    double background;
};

// Per-channel tint applied to a radial profile, over a faint noisy background.
template <typename Profile>
void paint(std::span<double> img, const Canvas& cv, Rng& rng, Profile profile) {
    std::uniform_real_distribution<double> tint(0.5, 1.0), bg(0.0, cv.background);
    for (std::size_t c = 0; c < cv.channels; ++c) {
        const double w = tint(rng);
        for (std::size_t y = 0; y < cv.side; ++y)
            for (std::size_t x = 0; x < cv.side; ++x) {
                const double v = bg(rng) + w * profile(static_cast<double>(y), static_cast<double>(x));
                img[(c * cv.side + y) * cv.side + x] = std::clamp(v, 0.0, 1.0);
            }
    }
}

double class_angle(std::size_t c, std::size_t k) {
    return 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k) + std::numbers::pi / 4.0;
}

Dataset blobs(const BlobTaskSpec& spec, std::size_t per_class, Role role, const std::string& name,
              std::uint64_t stream_id) {
    const Canvas cv{spec.channels, spec.side, spec.background};
    const std::size_t n = per_class * spec.num_classes;
    Dataset ds;
    ds.name = name;
    ds.role = role;
    ds.num_classes = spec.num_classes;
    ds.images = Tensor({n, cv.channels, cv.side, cv.side});
    ds.provenance = {{"generator", "gaussian_blobs"}, {"seed", std::to_string(spec.seed)}};
    Rng rng(mix_seed(spec.seed, stream_id));
    std::normal_distribution<double> jitter(0.0, spec.jitter);
    std::uniform_real_distribution<double> width(spec.min_width, spec.max_width), amp(spec.min_amplitude, 1.0);
    const double mid = (static_cast<double>(cv.side) - 1.0) / 2.0;
    const double radius = static_cast<double>(cv.side) / 4.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % spec.num_classes;
        const double angle = class_angle(c, spec.num_classes);
        const double cy = mid + radius * std::sqrt(2.0) * std::sin(angle) + jitter(rng);
        const double cx = mid + radius * std::sqrt(2.0) * std::cos(angle) + jitter(rng);
        const double s = width(rng), a = amp(rng);
        paint(ds.images.row(i), cv, rng, [&](double y, double x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            return a * std::exp(-d2 / (2.0 * s * s));
        });
        ds.labels.push_back(c);
    }
    return ds;
}

Dataset rings(const BlobTaskSpec& spec, std::uint64_t stream_id) {
    const Canvas cv{spec.channels, spec.side, spec.background};
    Dataset ds;
    ds.name = "rings";
    ds.role = Role::DOutTest;
    ds.num_classes = spec.num_classes;
    ds.images = Tensor({spec.ood_test_count, cv.channels, cv.side, cv.side});
    ds.provenance = {{"generator", "gaussian_rings"}, {"seed", std::to_string(spec.seed)}};
    Rng rng(mix_seed(spec.seed, stream_id));
    const double side = static_cast<double>(cv.side);
    std::uniform_real_distribution<double> centre(side * 0.25, side * 0.75 - 1.0), radius(1.2, 2.2),
        thickness(0.5, 0.8), amp(spec.min_amplitude, 1.0);
    for (std::size_t i = 0; i < spec.ood_test_count; ++i) {
        const double cy = centre(rng), cx = centre(rng);
        const double r0 = radius(rng), t = thickness(rng), a = amp(rng);
        paint(ds.images.row(i), cv, rng, [&](double y, double x) {
            const double r = std::hypot(y - cy, x - cx);
            return a * std::exp(-(r - r0) * (r - r0) / (2.0 * t * t));
        });
    }
    return ds;
}

Dataset noise(const BlobTaskSpec& spec, std::size_t count, Role role, const std::string& name,
              std::uint64_t stream_id) {
    synth::GenSpec g;
    g.kind = synth::Kind::UniformNoise;
    g.seed = mix_seed(spec.seed, stream_id);
    g.count = count;
    g.image_shape = {spec.channels, spec.side, spec.side};
    Dataset ds;
    ds.name = name;
    ds.role = role;
    ds.num_classes = spec.num_classes;
    ds.images = synth::uniform_noise(g);
    ds.provenance = g.provenance();
    return ds;
}

}  // namespace

BlobTask make_blob_task(const BlobTaskSpec& spec) {
    if (spec.num_classes < 2 || spec.side < 4 || (spec.channels != 1 && spec.channels != 3))
        throw ConfigError("blob task: need >= 2 classes, side >= 4 and 1 or 3 channels");
    BlobTask t;
    t.d_in_train = blobs(spec, spec.train_per_class, Role::DInTrain, "blobs", 101);
    t.d_in_test = blobs(spec, spec.test_per_class, Role::DInTest, "blobs_test", 102);
    t.d_out_oe = noise(spec, spec.oe_count, Role::DOutOe, "noise_oe", 103);
    t.d_out_val = noise(spec, spec.val_count, Role::DOutVal, "noise_val", 104);
    t.d_out_test = rings(spec, 105);
    return t;
}

}  // namespace oodkit::toy
