#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oodkit/error.hpp"
#include "oodkit/synthgen.hpp"
#include "synth_checks.hpp"

using namespace oodkit;
using namespace oodkit::synth;

namespace {

GenSpec spec_for(Kind kind, std::uint64_t seed, std::size_t count) {
    GenSpec s;
    s.kind = kind;
    s.seed = seed;
    s.count = count;
    return s;
}

}  // namespace

TEST_CASE("uniform noise") {
    GenSpec s = spec_for(Kind::UniformNoise, 1, 0);
    s.count = 100000 / 192 + 1;
    const Tensor a = uniform_noise(s);
    double mean = 0;
    for (double v : a.values()) {
        CHECK((v >= 0.0 && v <= 1.0));
        mean += v / static_cast<double>(a.size());
    }
    CHECK(std::abs(mean - 0.5) < 0.01);
    CHECK(uniform_noise(s) == a);
    s.seed = 2;
    const Tensor b = uniform_noise(s);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
    CHECK(static_cast<double>(diff) >= 0.99 * static_cast<double>(a.size()));
}

TEST_CASE("arithmetic and geometric means") {
    Tensor pair({2, 3, 4, 4});
    std::fill(pair.row(1).begin(), pair.row(1).end(), 1.0);
    const Tensor am = arithmetic_mean(spec_for(Kind::ArithmeticMean, 3, 5), pair);
    const Tensor gm = geometric_mean(spec_for(Kind::GeometricMean, 3, 5), pair);
    for (double v : am.values()) CHECK(v == 0.5);
    for (double v : gm.values()) CHECK(v == 0.0);

    const Tensor src = synth_checks::random_source(30, 4);
    CHECK(synth_checks::arithmetic_exact(src, arithmetic_mean(spec_for(Kind::ArithmeticMean, 5, 40), src)));
    CHECK(synth_checks::geometric_exact(src, geometric_mean(spec_for(Kind::GeometricMean, 5, 40), src)));
    for (double a : src.values()) CHECK(std::sqrt(a * a) == a);
    CHECK_THROWS_AS(arithmetic_mean(spec_for(Kind::ArithmeticMean, 1, 3), synth_checks::random_source(1, 1)),
                    DataError);
}

TEST_CASE("jigsaw") {
    Tensor grad({1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) grad[i] = static_cast<double>(i);
    std::array<std::size_t, 16> perm{};
    for (std::size_t t = 0; t < 16; ++t) perm[t] = 15 - t;
    const Tensor flipped = apply_jigsaw(grad, perm);
    for (std::size_t i = 0; i < 16; ++i) CHECK(flipped[i] == 15.0 - i);

    Tensor blocks({1, 8, 8});
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) blocks[y * 8 + x] = static_cast<double>((y / 2) * 4 + x / 2);
    std::array<std::size_t, 16> swap01{};
    std::iota(swap01.begin(), swap01.end(), 0);
    std::swap(swap01[0], swap01[1]);
    const Tensor s = apply_jigsaw(blocks, swap01);
    CHECK(s[0] == 1.0);
    CHECK(s[9] == 1.0);
    CHECK(s[2] == 0.0);
    CHECK(s[11] == 0.0);
    CHECK(s[4] == 2.0);

    const Tensor src = synth_checks::random_source(20, 6);
    CHECK(synth_checks::jigsaw_preserves_multiset(src, jigsaw(spec_for(Kind::Jigsaw, 7, 50), src)));
    CHECK_THROWS_AS(jigsaw(spec_for(Kind::Jigsaw, 7, 5), Tensor({2, 3, 6, 6})), DimensionError);
}

TEST_CASE("speckle") {
    const Tensor zeros({4, 3, 8, 8});
    const Tensor flat = speckle(spec_for(Kind::Speckle, 1, 10), zeros);
    for (double v : flat.values()) CHECK(v == 0.0);
    const Tensor src = synth_checks::random_source(1, 8);
    GenSpec still = spec_for(Kind::Speckle, 2, 3);
    still.speckle_sigma = 0.0;
    const Tensor out = speckle(still, src);
    for (std::size_t i = 0; i < 3; ++i) CHECK(synth_checks::rows_equal(out.row(i), src.row(0)));
    const GenSpec s = spec_for(Kind::Speckle, 9, 6);
    const Tensor a = speckle(s, src);
    CHECK(speckle(s, src) == a);
    for (double v : a.values()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("inverted reorders channels") {
    Tensor rgb({3, 1, 2}, {0.1, 0.15, 0.2, 0.25, 0.3, 0.35});
    const Tensor r = reorder_channels(rgb);
    CHECK(r.values() == std::vector<double>{0.1, 0.15, 0.3, 0.35, 0.2, 0.25});
    const Tensor thrice = reorder_channels(reorder_channels(reorder_channels(rgb)));
    auto a = thrice.values(), b = rgb.values();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);

    const Tensor src = synth_checks::random_source(10, 10);
    const Tensor out = inverted(spec_for(Kind::Inverted, 11, 20), src);
    for (std::size_t i = 0; i < 20; ++i) {
        bool found = false;
        for (std::size_t s = 0; s < 10 && !found; ++s) {
            const Tensor img({3, 8, 8}, {src.row(s).begin(), src.row(s).end()});
            found = synth_checks::rows_equal(reorder_channels(img).values(), out.row(i));
        }
        CHECK(found);
    }
    CHECK_THROWS_AS(inverted(spec_for(Kind::Inverted, 1, 2), synth_checks::random_source(3, 1, 1)), DataError);
}

TEST_CASE("rgb_ghosted") {
    const Tensor half({2, 3, 4, 4}, 0.5);
    CHECK(rgb_ghosted(spec_for(Kind::RgbGhosted, 1, 4), half) == Tensor({4, 3, 4, 4}, 0.5));
    const Tensor src = synth_checks::random_source(15, 12);
    CHECK(synth_checks::ghosted_involution(src, rgb_ghosted(spec_for(Kind::RgbGhosted, 13, 30), src)));
    CHECK_THROWS_AS(rgb_ghosted(spec_for(Kind::RgbGhosted, 1, 2), synth_checks::random_source(3, 1, 1)), DataError);
}

TEST_CASE("determinism, ranges and dataset wrapping") {
    const Tensor src = synth_checks::random_source(12, 14);
    CHECK(synth_checks::deterministic(src, 15, 8));
    Dataset source;
    source.name = "src";
    source.num_classes = 1;
    source.images = src;
    source.labels.assign(12, 0);
    for (auto kind : kAllKinds) {
        const Dataset ds = generate_dataset(spec_for(kind, 16, 9), &source, std::string(kind_name(kind)));
        CHECK(ds.role == Role::DOutVal);
        CHECK(ds.size() == 9);
        CHECK(ds.labels.empty());
        CHECK_NOTHROW(ds.validate());
        CHECK(ds.provenance.at("generator") == kind_name(kind));
        CHECK(parse_kind(kind_name(kind)) == kind);
    }
    CHECK_THROWS_AS(parse_kind("mosaic"), ConfigError);
}
