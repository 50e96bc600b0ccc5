#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "oodkit/error.hpp"
#include "oodkit/fcgm.hpp"
#include "oodkit/harness.hpp"
#include "oodkit/metrics.hpp"
#include "oodkit/toy.hpp"
#include "oracles.hpp"

using namespace oodkit;

namespace {

// relu(dup(x)) then logits = x: predictions are the larger pixel.
Network pixel_net() {
    Network net({1, 1, 2}, {LayerSpec::flatten(), LayerSpec::dense(2, 4), LayerSpec::relu(), LayerSpec::dense(4, 2)}, 2);
    net.params()[0] = Tensor({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
    net.params()[2] = Tensor({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    return net;
}

fcgm::Bounds manual_bounds(double lo, double hi) {
    fcgm::Bounds b;
    b.orders = {1};
    b.num_classes = 1;
    b.layer_shapes = {{1, 1}};
    b.mins = {{{Tensor::vector({lo})}}};
    b.maxs = {{{Tensor::vector({hi})}}};
    return b;
}

}  // namespace

TEST_CASE("gram hand cases") {
    const Tensor f({1, 2}, {1.0, 2.0});
    CHECK(fcgm::gram(f, 1) == Tensor::vector({5.0}));
    CHECK(fcgm::gram(f, 2)[0] == doctest::Approx(std::sqrt(17.0)).epsilon(1e-15));
    CHECK(fcgm::gram(Tensor::vector({-1.0, 2.0}), 1).values() == std::vector<double>{1.0, -2.0, 4.0});
    CHECK_THROWS_AS(fcgm::gram(f, 0), DimensionError);
}

TEST_CASE("gram matches loop oracle") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t)
        for (std::size_t p : {1, 2, 4, 8}) {
            const Tensor f = oracle::random_tensor({3, 4}, rng, -1.5, 1.5);
            const Tensor g = fcgm::gram(f, p);
            const auto ref = oracle::gram(f, p);
            REQUIRE(g.size() == ref.size());
            for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(g[i] - ref[i]) <= 1e-10 * std::max(1.0, std::abs(ref[i])));
        }
}

TEST_CASE("deviation and layer_deviation") {
    CHECK(fcgm::deviation(15, 10, 20) == 0.0);
    CHECK(fcgm::deviation(25, 10, 20) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(fcgm::deviation(-8, -4, -2) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(fcgm::deviation(5, 10, 20) == doctest::Approx(0.5).epsilon(1e-15));

    const fcgm::Bounds b = manual_bounds(10, 20);
    const std::vector<Tensor> inside{Tensor::vector({12})}, above{Tensor::vector({25})};
    CHECK(fcgm::layer_deviation(b, 0, inside, 0) == 0.0);
    CHECK(fcgm::layer_deviation(b, 0, above, 0) == doctest::Approx(0.25).epsilon(1e-15));
    const fcgm::Bounds n = manual_bounds(-4, -2);
    const std::vector<Tensor> below{Tensor::vector({-8})};
    CHECK(fcgm::layer_deviation(n, 0, below, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(fcgm::layer_deviation(b, 0, above, 1), LabelError);
}

TEST_CASE("fit_bounds") {
    const Network net = pixel_net();
    const Tensor x({3, 1, 1, 2}, {0.9, 0.2, 0.6, 0.5, 0.1, 0.7});
    const fcgm::Bounds b = fcgm::fit_bounds(net, x, {1, 2});
    CHECK(b.num_layers() == 2);
    CHECK(b.layer_shapes[0] == Shape{4, 1});
    const fcgm::Bounds again = fcgm::fit_bounds(net, x, {1, 2});
    CHECK(again.mins == b.mins);
    CHECK(again.maxs == b.maxs);

    // class 0 holds examples 0 and 1; logits layer, order 1
    const auto g0 = oracle::gram(Tensor({2, 1}, {0.9, 0.2}), 1), g1 = oracle::gram(Tensor({2, 1}, {0.6, 0.5}), 1);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(b.mins[1][0][0][i] == doctest::Approx(std::min(g0[i], g1[i])).epsilon(1e-15));
        CHECK(b.maxs[1][0][0][i] == doctest::Approx(std::max(g0[i], g1[i])).epsilon(1e-15));
    }
    const Tensor devs = fcgm::layer_deviations(b, net, x);
    for (double v : devs.values()) CHECK(v == 0.0);

    const Tensor one_class({2, 1, 1, 2}, {0.9, 0.2, 0.6, 0.5});
    try {
        fcgm::fit_bounds(net, one_class);
        FAIL("expected missing class");
    } catch (const MissingClassError& e) {
        CHECK(e.missing_class() == 1);
    }
}

TEST_CASE("calibrate_normalizer and score") {
    const Network net = pixel_net();
    std::mt19937_64 rng(2);
    const Tensor train = oracle::random_tensor({40, 1, 1, 2}, rng, 0.2, 0.8);
    const fcgm::Bounds b = fcgm::fit_bounds(net, train);
    CHECK_THROWS_AS(fcgm::score(b, net, train), StateError);
    CHECK_THROWS_AS(fcgm::calibrate_normalizer(b, net, Tensor({0, 1, 1, 2})), ValidationError);

    const fcgm::Bounds self = fcgm::calibrate_normalizer(b, net, train);
    for (double e : self.expected_dev) CHECK(e == fcgm::kExpectedDevFloor);
    for (double s : fcgm::score(self, net, train)) CHECK(s == 0.0);

    const Tensor part = oracle::random_tensor({2, 1, 1, 2}, rng, 0.0, 1.0);
    const fcgm::Bounds cal = fcgm::calibrate_normalizer(b, net, part);
    const Tensor d = fcgm::layer_deviations(b, net, part);
    for (std::size_t l = 0; l < 2; ++l)
        CHECK(cal.expected_dev[l] == std::max(fcgm::kExpectedDevFloor, (d.at(0, l) + d.at(1, l)) / 2.0));
    CHECK(fcgm::calibrate_normalizer(b, net, part).expected_dev == cal.expected_dev);

    const Tensor probe = oracle::random_tensor({50, 1, 1, 2}, rng, 0.0, 1.0);
    const auto s = fcgm::score(cal, net, probe);
    const auto devs = fcgm::deviations(cal, net, probe);
    const Tensor per = fcgm::layer_deviations(cal, net, probe);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(s[i] <= 0.0);
        double total = 0;
        for (std::size_t l = 0; l < 2; ++l) total += per.at(i, l) / cal.expected_dev[l];
        CHECK(std::abs(devs[i].total - total) <= 1e-12 * std::max(1.0, total));
        CHECK(s[i] == -devs[i].total);
    }
}

TEST_CASE("end to end: toy blobs vs uniform noise") {
    toy::BlobTaskSpec spec;
    spec.train_per_class = 100;
    spec.test_per_class = 50;
    spec.val_count = 200;
    spec.seed = 3;
    const toy::BlobTask task = toy::make_blob_task(spec);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_in = 32;
    cfg.schedule = StepDecay{0.05, 0.1, {0.5, 0.75}};
    const Shape shape = task.d_in_train.image_shape();
    const Network init = Network::initialized(shape, harness::default_layers(shape, 4), 4, 4);
    const Network net = train(init, task.d_in_train, cfg).net;

    const auto parts = split(task.d_in_test, {5, {0.5, 0.5}});
    const fcgm::Bounds b =
        fcgm::calibrate_normalizer(fcgm::fit_bounds(net, task.d_in_train.images), net, parts[0].images);
    for (double s : fcgm::score(b, net, task.d_in_train.images)) CHECK(s == 0.0);
    const auto in = fcgm::score(b, net, parts[1].images);
    const auto out = fcgm::score(b, net, task.d_out_val.images);
    double mi = 0, mo = 0;
    for (double v : in) mi += v / in.size();
    for (double v : out) mo += v / out.size();
    CHECK(mo < mi);
    CHECK(auroc(ScoreSample{in, out}) > 0.95);

    const auto dir = std::filesystem::temp_directory_path() / "oodkit_test_fcgm_bounds";
    std::filesystem::remove_all(dir);
    fcgm::save_bounds(dir, b);
    CHECK(fcgm::score(fcgm::load_bounds(dir), net, task.d_out_val.images) == out);
}
