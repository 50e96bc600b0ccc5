#include "oodkit/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oodkit/error.hpp"
#include "oodkit/rng.hpp"

namespace oodkit::synth {

namespace {

constexpr std::pair<Kind, std::string_view> kKindNames[] = {
    {Kind::UniformNoise, "uniform_noise"}, {Kind::ArithmeticMean, "arithmetic_mean"},
    {Kind::GeometricMean, "geometric_mean"}, {Kind::Jigsaw, "jigsaw"},
    {Kind::Speckle, "speckle"},             {Kind::Inverted, "inverted"},
    {Kind::RgbGhosted, "rgb_ghosted"},
};

void require_images(const Tensor& source, std::size_t min_count, Kind kind) {
    if (source.rank() != 4)
        throw DimensionError(std::string(kind_name(kind)) + ": source must be N x C x H x W");
    if (source.dim(0) < min_count)
        throw DataError(std::string(kind_name(kind)) + ": source needs at least " + std::to_string(min_count) +
                        " images, has " + std::to_string(source.dim(0)));
}

void require_rgb(const Tensor& source, Kind kind) {
    if (source.dim(1) != 3)
        throw DataError(std::string(kind_name(kind)) + ": channel count must be 3, source has " +
                        std::to_string(source.dim(1)));
}

std::size_t output_count(const GenSpec& spec, const Tensor& source) {
    return spec.count ? spec.count : source.dim(0);
}

Shape batch_of(std::size_t n, const Tensor& source) {
    return {n, source.dim(1), source.dim(2), source.dim(3)};
}

Rng make_rng(const GenSpec& spec) { return Rng(mix_seed(spec.seed, stream::kSynth)); }

template <typename Combine>
Tensor pairwise(const GenSpec& spec, const Tensor& source, Combine combine) {
    require_images(source, 2, spec.kind);
    const std::size_t n = output_count(spec, source), m = source.dim(0);
    Rng rng = make_rng(spec);
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    Tensor out(batch_of(n, source));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t a = pick(rng);
        std::size_t b = pick(rng);
        while (b == a) b = pick(rng);
        auto ra = source.row(a), rb = source.row(b);
        auto ro = out.row(i);
        for (std::size_t k = 0; k < ro.size(); ++k) ro[k] = combine(ra[k], rb[k]);
    }
    return out;
}

template <typename PerImage>
Tensor resample(const GenSpec& spec, const Tensor& source, PerImage per_image) {
    require_images(source, 1, spec.kind);
    const std::size_t n = output_count(spec, source), m = source.dim(0);
    Rng rng = make_rng(spec);
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    Tensor out(batch_of(n, source));
    const Shape image_shape{source.dim(1), source.dim(2), source.dim(3)};
    for (std::size_t i = 0; i < n; ++i) {
        auto r = source.row(pick(rng));
        Tensor img(image_shape, std::vector<double>(r.begin(), r.end()));
        const Tensor res = per_image(img, rng);
        std::copy(res.values().begin(), res.values().end(), out.row(i).begin());
    }
    return out;
}

}  // namespace

std::string_view kind_name(Kind kind) {
    for (const auto& [k, n] : kKindNames)
        if (k == kind) return n;
    return "unknown";
}

Kind parse_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name) return k;
    throw ConfigError("unknown generator kind '" + std::string(name) + "'");
}

std::map<std::string, std::string> GenSpec::provenance() const {
    return {{"generator", std::string(kind_name(kind))},
            {"seed", std::to_string(seed)},
            {"count", std::to_string(count)},
            {"speckle_sigma", std::to_string(speckle_sigma)}};
}

Tensor uniform_noise(const GenSpec& spec) {
    if (spec.image_shape.size() != 3) throw DimensionError("uniform_noise: image shape must be C x H x W");
    Shape shape{spec.count};
    shape.insert(shape.end(), spec.image_shape.begin(), spec.image_shape.end());
    Tensor out(shape);
    Rng rng = make_rng(spec);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : out.values()) v = u(rng);
    return out;
}

Tensor arithmetic_mean(const GenSpec& spec, const Tensor& source) {
    return pairwise(spec, source, [](double a, double b) { return (a + b) / 2.0; });
}

Tensor geometric_mean(const GenSpec& spec, const Tensor& source) {
    return pairwise(spec, source, [](double a, double b) { return std::sqrt(a * b); });
}

Tensor apply_jigsaw(const Tensor& image, const std::array<std::size_t, 16>& perm) {
    if (image.rank() != 3) throw DimensionError("jigsaw: image must be C x H x W");
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h % 4 != 0 || w % 4 != 0)
        throw DimensionError("jigsaw: height and width must be divisible by 4, got " + std::to_string(h) + "x" +
                             std::to_string(w));
    const std::size_t ph = h / 4, pw = w / 4;
    Tensor out(image.shape());
    for (std::size_t slot = 0; slot < 16; ++slot) {
        const std::size_t src = perm[slot];
        const std::size_t dr = (slot / 4) * ph, dc = (slot % 4) * pw;
        const std::size_t sr = (src / 4) * ph, sc = (src % 4) * pw;
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < ph; ++y)
                for (std::size_t x = 0; x < pw; ++x)
                    out[(ch * h + dr + y) * w + dc + x] = image[(ch * h + sr + y) * w + sc + x];
    }
    return out;
}

Tensor jigsaw(const GenSpec& spec, const Tensor& source) {
    require_images(source, 1, spec.kind);
    if (source.dim(2) % 4 != 0 || source.dim(3) % 4 != 0)
        throw DimensionError("jigsaw: height and width must be divisible by 4");
    return resample(spec, source, [](const Tensor& img, Rng& rng) {
        std::array<std::size_t, 16> perm;
        std::iota(perm.begin(), perm.end(), 0);
        std::array<std::size_t, 16> identity = perm;
        do {
            std::shuffle(perm.begin(), perm.end(), rng);
        } while (perm == identity);
        return apply_jigsaw(img, perm);
    });
}

Tensor speckle(const GenSpec& spec, const Tensor& source) {
    if (!(spec.speckle_sigma >= 0.0)) throw ValidationError("speckle: sigma must be nonnegative");
    const double sigma = spec.speckle_sigma;
    return resample(spec, source, [sigma](const Tensor& img, Rng& rng) {
        Tensor out = img;
        if (sigma == 0.0) return out;
        std::normal_distribution<double> noise(0.0, sigma);
        for (auto& v : out.values()) v = std::clamp(v * (1.0 + noise(rng)), 0.0, 1.0);
        return out;
    });
}

Tensor reorder_channels(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw DataError("inverted: channel count must be 3");
    const std::size_t area = image.dim(1) * image.dim(2);
    // (R,G,B) -cyclic shift-> (B,R,G) -swap first two-> (R,B,G)
    constexpr std::size_t from[3] = {0, 2, 1};
    Tensor out(image.shape());
    for (std::size_t c = 0; c < 3; ++c)
        std::copy_n(image.values().begin() + from[c] * area, area, out.values().begin() + c * area);
    return out;
}

Tensor inverted(const GenSpec& spec, const Tensor& source) {
    require_images(source, 1, spec.kind);
    require_rgb(source, spec.kind);
    return resample(spec, source, [](const Tensor& img, Rng&) { return reorder_channels(img); });
}

Tensor rgb_ghosted(const GenSpec& spec, const Tensor& source) {
    require_images(source, 1, spec.kind);
    require_rgb(source, spec.kind);
    return resample(spec, source, [](const Tensor& img, Rng&) {
        Tensor out = img;
        for (auto& v : out.values()) v = 1.0 - v;
        return out;
    });
}

Tensor generate(const GenSpec& spec, const Tensor* source) {
    if (spec.kind == Kind::UniformNoise) return uniform_noise(spec);
    if (!source) throw DataError(std::string(kind_name(spec.kind)) + ": a source dataset is required");
    switch (spec.kind) {
    case Kind::ArithmeticMean: return arithmetic_mean(spec, *source);
    case Kind::GeometricMean: return geometric_mean(spec, *source);
    case Kind::Jigsaw: return jigsaw(spec, *source);
    case Kind::Speckle: return speckle(spec, *source);
    case Kind::Inverted: return inverted(spec, *source);
    case Kind::RgbGhosted: return rgb_ghosted(spec, *source);
    default: break;
    }
    throw ConfigError("unhandled generator kind");
}

Dataset generate_dataset(const GenSpec& spec, const Dataset* source, std::string name) {
    GenSpec s = spec;
    if (source && s.kind == Kind::UniformNoise && s.image_shape.empty()) s.image_shape = source->image_shape();
    Dataset ds;
    ds.name = std::move(name);
    ds.role = Role::DOutVal;
    ds.images = generate(s, source ? &source->images : nullptr);
    ds.num_classes = source ? source->num_classes : 0;
    ds.provenance = s.provenance();
    if (source) ds.provenance["source"] = source->name;
    return ds;
}

}  // namespace oodkit::synth
