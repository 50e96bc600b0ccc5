#include <cmath>

#include "doctest.h"
#include "oodkit/error.hpp"
#include "oodkit/metrics.hpp"
#include "oracles.hpp"

using namespace oodkit;

namespace {

ScoreSample random_sample(std::mt19937_64& rng, std::size_t n, std::size_t m, bool ties) {
    ScoreSample s;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> g(0, 9);
    for (std::size_t i = 0; i < n; ++i) s.in_scores.push_back(ties ? g(rng) : u(rng) + 0.2);
    for (std::size_t i = 0; i < m; ++i) s.out_scores.push_back(ties ? g(rng) - 1 : u(rng));
    return s;
}

}  // namespace

TEST_CASE("msp_score") {
    std::vector<double> flat(10, 2.5);
    CHECK(msp_score(flat) == doctest::Approx(0.1).epsilon(1e-14));
    std::vector<double> big{1000, 0};
    CHECK(std::abs(msp_score(big) - 1.0) < 1e-12);
    std::vector<double> z{1, 2, 3};
    CHECK(msp_score(z) == doctest::Approx(0.66524).epsilon(1e-5));
}

TEST_CASE("separable and indistinguishable samples") {
    ScoreSample sep{{5, 6, 7, 8}, {1, 2, 3}};
    CHECK(tnr_at_tpr(sep) == 1.0);
    CHECK(auroc(sep) == 1.0);
    CHECK(detection_accuracy(sep) == 1.0);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u;
    ScoreSample same;
    for (int i = 0; i < 200; ++i) same.in_scores.push_back(u(rng));
    same.out_scores = same.in_scores;
    CHECK(tnr_at_tpr(same) <= 0.05 + 1.0 / 200);
    CHECK(auroc(same) == 0.5);
    ScoreSample flat{{1, 1, 1}, {1, 1}};
    CHECK(auroc(flat) == 0.5);
    CHECK(detection_accuracy(flat) == 0.5);
}

TEST_CASE("metrics equal brute-force oracles") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 60; ++t) {
        const ScoreSample s = random_sample(rng, 1 + t * 3, 1 + t * 2, t % 2 == 0);
        CHECK(std::abs(tnr_at_tpr(s) - oracle::tnr_at_tpr(s.in_scores, s.out_scores)) <= 1e-12);
        CHECK(std::abs(auroc(s) - oracle::auroc(s.in_scores, s.out_scores)) <= 1e-12);
        CHECK(std::abs(detection_accuracy(s) - oracle::detection_accuracy(s.in_scores, s.out_scores)) <= 1e-12);
    }
}

TEST_CASE("evaluate bundles the three metrics") {
    std::mt19937_64 rng(9);
    const ScoreSample s = random_sample(rng, 40, 30, false);
    const EvalResult r = evaluate(s);
    CHECK(r.tnr95 == tnr_at_tpr(s));
    CHECK(r.auroc == auroc(s));
    CHECK(r.dacc == detection_accuracy(s));
}

TEST_CASE("invalid samples are rejected") {
    CHECK_THROWS_AS(auroc(ScoreSample{{}, {1.0}}), ValidationError);
    CHECK_THROWS_AS(auroc(ScoreSample{{1.0}, {}}), ValidationError);
    CHECK_THROWS_AS(auroc(ScoreSample{{std::nan("")}, {1.0}}), ValidationError);
}
