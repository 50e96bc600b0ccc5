#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "oodkit/data_io.hpp"
#include "oodkit/error.hpp"
#include "oracles.hpp"

using namespace oodkit;
namespace fs = std::filesystem;

namespace {

Dataset random_dataset(std::size_t n, std::uint64_t seed, Role role = Role::DInTrain) {
    std::mt19937_64 rng(seed);
    Dataset ds;
    ds.name = "rand";
    ds.role = role;
    ds.images = oracle::random_tensor({n, 3, 4, 4}, rng, 0.0, 1.0);
    if (role_has_labels(role)) {
        ds.num_classes = 3;
        for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(i % 3);
    }
    return ds;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("oodkit_test_data_io_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("save/load round trip is bit-identical") {
    const Dataset ds = random_dataset(12, 1);
    const fs::path dir = scratch("rt");
    save_dataset(ds, dir);
    const Dataset back = load_dataset(dir);
    CHECK(back.images == ds.images);
    CHECK(back.labels == ds.labels);
    CHECK(back.role == ds.role);
    CHECK(back.name == ds.name);
    CHECK(back.num_classes == 3);
}

TEST_CASE("truncated and inconsistent files are rejected") {
    const Dataset ds = random_dataset(6, 2);
    const fs::path dir = scratch("bad");
    save_dataset(ds, dir);
    const auto size = fs::file_size(dir / "images.oodt");
    fs::resize_file(dir / "images.oodt", size - 9);
    CHECK_THROWS_AS(load_dataset(dir), CorruptionError);

    save_dataset(ds, dir);
    save_tensor(dir / "labels.oodt", Tensor({5}, std::vector<double>(5, 0.0)));
    CHECK_THROWS_AS(load_dataset(dir), FormatError);
}

TEST_CASE("split") {
    const Dataset ds = random_dataset(100, 3);
    const auto whole = split(ds, {9, {1.0}});
    REQUIRE(whole.size() == 1);
    CHECK(whole[0].size() == 100);

    const auto idx = split_indices(100, {9, {0.9, 0.1}});
    CHECK(idx[0].size() == 90);
    CHECK(idx[1].size() == 10);
    std::set<std::size_t> all(idx[0].begin(), idx[0].end());
    all.insert(idx[1].begin(), idx[1].end());
    CHECK(all.size() == 100);
    CHECK(split_indices(100, {9, {0.9, 0.1}}) == idx);
    CHECK_THROWS_AS(split(ds, {1, {0.999, 0.001}}), DataError);
    CHECK_THROWS_AS(split(ds, {1, {0.5, 0.4}}), DataError);
}

TEST_CASE("batches") {
    const Dataset ds = random_dataset(10, 4);
    const auto one = batch_indices(10, 10, 5, 0);
    REQUIRE(one.size() == 1);
    auto sorted = one[0];
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
    CHECK(batch_indices(10, 10, 5, 0) != batch_indices(10, 10, 5, 1));

    const auto b = batches(ds, 3, 5, 2);
    CHECK(b.size() == 4);
    CHECK(b.back().images.dim(0) == 1);
    std::multiset<double> got, want(ds.images.values().begin(), ds.images.values().end());
    for (const auto& x : b) got.insert(x.images.values().begin(), x.images.values().end());
    CHECK(got == want);
    const auto again = batches(ds, 3, 5, 2);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(again[i].images == b[i].images);
}

TEST_CASE("check_disjoint") {
    const Dataset a = random_dataset(8, 5, Role::DOutOe), b = random_dataset(6, 6, Role::DOutTest);
    const DisjointReport self = check_disjoint(a, a);
    CHECK_FALSE(self.disjoint);
    CHECK(self.first_collision == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(check_disjoint(a, b).disjoint);

    Dataset planted = b;
    std::copy(a.images.row(5).begin(), a.images.row(5).end(), planted.images.row(3).begin());
    const DisjointReport r = check_disjoint(a, planted);
    CHECK_FALSE(r.disjoint);
    CHECK(r.first_collision == std::pair<std::size_t, std::size_t>{5, 3});
}

TEST_CASE("dataset invariants") {
    Dataset ds = random_dataset(4, 7, Role::DOutVal);
    ds.labels = {0, 0, 0, 0};
    CHECK_THROWS_AS(ds.validate(), DataError);
    Dataset lab = random_dataset(3, 8);
    lab.labels[0] = 9;
    CHECK_THROWS_AS(lab.validate(), LabelError);
}
