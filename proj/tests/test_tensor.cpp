#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oodkit/error.hpp"
#include "oodkit/tensor.hpp"
#include "oracles.hpp"

using namespace oodkit;

TEST_CASE("matmul small cases") {
    const Tensor m = Tensor::matrix({{3, 4}, {5, 6}});
    CHECK(matmul(Tensor::identity(2), m) == m);
    CHECK(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}})) == Tensor::matrix({{11}}));
    CHECK_THROWS_AS(matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 2}})), DimensionError);
}

TEST_CASE("matmul matches triple loop and is associative") {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 10; ++t) {
        const Tensor a = oracle::random_tensor({5, 4}, rng), b = oracle::random_tensor({4, 3}, rng),
                     c = oracle::random_tensor({3, 2}, rng);
        const Tensor ab = matmul(a, b), ref = oracle::naive_matmul(a, b);
        for (std::size_t i = 0; i < ab.size(); ++i) CHECK(ab[i] == doctest::Approx(ref[i]).epsilon(1e-14));
        const Tensor l = matmul(a, matmul(b, c)), r = matmul(ab, c);
        for (std::size_t i = 0; i < l.size(); ++i) CHECK(std::abs(l[i] - r[i]) < 1e-9);
    }
}

TEST_CASE("spd_factor") {
    CHECK(spd_factor(Tensor::identity(3)).lower == Tensor::identity(3));
    const Tensor m = Tensor::matrix({{4, 2}, {2, 3}});
    const SpdFactor f = spd_factor(m);
    CHECK(f.lower.at(0, 0) == doctest::Approx(2.0));
    CHECK(f.lower.at(0, 1) == 0.0);
    CHECK(f.lower.at(1, 0) == doctest::Approx(1.0));
    CHECK(f.lower.at(1, 1) == doctest::Approx(std::sqrt(2.0)));
    const Tensor back = spd_reconstruct(f);
    for (std::size_t i = 0; i < 4; ++i) CHECK(back[i] == doctest::Approx(m[i]).epsilon(1e-14));

    const Tensor ones = Tensor::matrix({{1, 1}, {1, 1}});
    CHECK_NOTHROW(spd_factor(ones, 1e-3));
    try {
        spd_factor(ones, 0.0);
        FAIL("expected singularity");
    } catch (const SingularityError& e) {
        CHECK(e.pivot() == 1);
    }
}

TEST_CASE("spd_solve") {
    const Tensor v = Tensor::vector({1, 2, 3});
    CHECK(spd_solve(spd_factor(Tensor::identity(3)), v) == v);
    const Tensor w = spd_solve(spd_factor(Tensor::matrix({{4, 2}, {2, 3}})), Tensor::vector({1, 0}));
    CHECK(w[0] == doctest::Approx(0.375).epsilon(1e-14));
    CHECK(w[1] == doctest::Approx(-0.25).epsilon(1e-14));
    CHECK_THROWS_AS(spd_solve(spd_factor(Tensor::identity(3)), Tensor::vector({1, 2})), DimensionError);

    std::mt19937_64 rng(3);
    for (int t = 0; t < 10; ++t) {
        const Tensor a = oracle::random_tensor({6, 6}, rng);
        Tensor spd = oracle::naive_matmul(a, transpose(a));
        for (std::size_t i = 0; i < 6; ++i) spd.at(i, i) += 0.5;
        const Tensor x = oracle::random_tensor({6}, rng);
        const Tensor rhs = oracle::naive_matmul(spd, x.reshaped({6, 1})).reshaped({6});
        const Tensor sol = spd_solve(spd_factor(spd), rhs);
        for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(sol[i] - x[i]) < 1e-8);
    }
}

TEST_CASE("class_stats hand cases") {
    std::vector<Tensor> f{Tensor::vector({0, 0}), Tensor::vector({2, 2})};
    std::vector<std::size_t> y{0, 0};
    const ClassStats s = class_stats(f, y, 1);
    CHECK(s.means[0] == Tensor::vector({1, 1}));
    CHECK(s.tied_cov == Tensor::matrix({{1, 1}, {1, 1}}));

    std::vector<Tensor> same(4, Tensor::vector({0.3, -2.0}));
    std::vector<std::size_t> ys{0, 1, 0, 1};
    const ClassStats z = class_stats(same, ys, 2);
    for (double v : z.tied_cov.values()) CHECK(v == 0.0);
}

TEST_CASE("class_stats errors") {
    std::vector<Tensor> f{Tensor::vector({0}), Tensor::vector({1})};
    std::vector<std::size_t> y{0, 0};
    try {
        class_stats(f, y, 2);
        FAIL("expected missing class");
    } catch (const MissingClassError& e) {
        CHECK(e.missing_class() == 1);
    }
    std::vector<Tensor> one{Tensor::vector({0})};
    std::vector<std::size_t> y1{0};
    CHECK_THROWS_AS(class_stats(one, y1, 1), InsufficientDataError);
}

TEST_CASE("class_stats matches double loop, symmetric, PSD, order invariant") {
    std::mt19937_64 rng(11);
    const std::size_t n = 20, d = 3;
    std::vector<Tensor> f;
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < n; ++i) {
        f.push_back(oracle::random_tensor({d}, rng));
        y.push_back(i % 2);
    }
    const ClassStats s = class_stats(f, y, 2);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < d; ++j) {
            double m = 0;
            for (std::size_t i = c; i < n; i += 2) m += f[i][j];
            CHECK(std::abs(s.means[c][j] - m / 10.0) < 1e-10);
        }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) {
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i)
                acc += (f[i][a] - s.means[y[i]][a]) * (f[i][b] - s.means[y[i]][b]);
            CHECK(std::abs(s.tied_cov.at(a, b) - acc / n) < 1e-10);
            CHECK(s.tied_cov.at(a, b) == s.tied_cov.at(b, a));
        }
    const SpdFactor fac = spd_factor(s.tied_cov, 1e-9);
    for (std::size_t i = 0; i < d; ++i) CHECK(fac.lower.at(i, i) >= 0.0);

    std::vector<Tensor> fr(f.rbegin(), f.rend());
    std::vector<std::size_t> yr(y.rbegin(), y.rend());
    const ClassStats r = class_stats(fr, yr, 2);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(r.means[c][j] - s.means[c][j]) < 1e-12);
}

TEST_CASE("default_ridge") {
    CHECK(default_ridge(Tensor::matrix({{2, 0}, {0, 4}})) == doctest::Approx(3e-6));
    CHECK(default_ridge(Tensor({2, 2})) == 1e-6);
}

TEST_CASE("tensor serialization round trip and errors") {
    std::mt19937_64 rng(1);
    const Tensor t = oracle::random_tensor({2, 3, 4}, rng);
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "OODT");
    CHECK(bytes.size() == 4 + 4 + 4 + 3 * 8 + 24 * 8);
    std::stringstream in(bytes);
    CHECK(read_tensor(in) == t);

    std::stringstream bad("XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(read_tensor(bad), FormatError);
    std::stringstream cut(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(read_tensor(cut), CorruptionError);
}
