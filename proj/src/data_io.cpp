#include "oodkit/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "json.hpp"
#include "oodkit/error.hpp"
#include "oodkit/rng.hpp"

namespace oodkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::pair<Role, std::string_view> kRoleNames[] = {
    {Role::DInTrain, "d_in_train"}, {Role::DInTest, "d_in_test"}, {Role::DOutOe, "d_out_oe"},
    {Role::DOutVal, "d_out_val"},   {Role::DOutTest, "d_out_test"},
};

std::string_view image_bytes(const Tensor& images, std::size_t i) {
    auto r = images.row(i);
    return {reinterpret_cast<const char*>(r.data()), r.size() * sizeof(double)};
}

}  // namespace

std::string_view role_name(Role role) {
    for (const auto& [r, n] : kRoleNames)
        if (r == role) return n;
    return "unknown";
}

Role parse_role(std::string_view name) {
    for (const auto& [r, n] : kRoleNames)
        if (n == name) return r;
    throw FormatError("unknown dataset role '" + std::string(name) + "'");
}

Shape Dataset::image_shape() const {
    if (images.rank() < 2) return {};
    return Shape(images.shape().begin() + 1, images.shape().end());
}

void Dataset::validate() const {
    if (images.rank() != 4) throw DataError("dataset '" + name + "': images must be N x C x H x W");
    const std::size_t c = images.dim(1);
    if (c != 1 && c != 3) throw DataError("dataset '" + name + "': channel count must be 1 or 3");
    for (double v : images.values())
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("dataset '" + name + "': pixel outside [0,1]");
    if (role_has_labels(role)) {
        if (labels.size() != size())
            throw DataError("dataset '" + name + "': label count does not match image count");
        for (auto y : labels)
            if (y >= num_classes) throw LabelError("dataset '" + name + "': label out of range");
    } else if (!labels.empty()) {
        throw DataError("dataset '" + name + "': labels only allowed for in-distribution roles");
    }
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    json m;
    m["name"] = ds.name;
    m["role"] = std::string(role_name(ds.role));
    m["shape"] = ds.images.shape();
    m["num_classes"] = ds.num_classes;
    m["has_labels"] = !ds.labels.empty();
    m["count"] = ds.size();
    m["label_count"] = ds.labels.size();
    m["provenance"] = ds.provenance;
    save_tensor(dir / "images.oodt", ds.images);
    if (!ds.labels.empty()) {
        Tensor lab({ds.labels.size()});
        for (std::size_t i = 0; i < ds.labels.size(); ++i) lab[i] = static_cast<double>(ds.labels[i]);
        save_tensor(dir / "labels.oodt", lab);
    }
    std::ofstream os(dir / "manifest.json");
    os << m.dump(2) << '\n';
    if (!os) throw DataError("failed to write manifest in " + dir.string());
}

Dataset load_dataset(const fs::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw DataError("no dataset manifest in " + dir.string());
    json m;
    try {
        m = json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("malformed dataset manifest in " + dir.string() + ": " + e.what());
    }
    Dataset ds;
    try {
        ds.name = m.at("name").get<std::string>();
        ds.role = parse_role(m.at("role").get<std::string>());
        ds.num_classes = m.at("num_classes").get<std::size_t>();
        if (m.contains("provenance"))
            ds.provenance = m["provenance"].get<std::map<std::string, std::string>>();
        ds.images = load_tensor(dir / "images.oodt");
        if (ds.images.shape() != m.at("shape").get<Shape>())
            throw FormatError("image tensor shape disagrees with manifest in " + dir.string());
        if (m.at("has_labels").get<bool>()) {
            Tensor lab = load_tensor(dir / "labels.oodt");
            const auto expected = m.at("label_count").get<std::size_t>();
            if (lab.rank() != 1 || lab.size() != expected || expected != ds.size())
                throw FormatError("label count mismatch in " + dir.string());
            ds.labels.reserve(lab.size());
            for (double v : lab.values()) {
                if (v < 0 || v != std::floor(v)) throw FormatError("non-integer label in " + dir.string());
                ds.labels.push_back(static_cast<std::size_t>(v));
            }
        }
    } catch (const json::exception& e) {
        throw FormatError("invalid dataset manifest in " + dir.string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices, std::string name) {
    Dataset out;
    out.name = std::move(name);
    out.role = ds.role;
    out.num_classes = ds.num_classes;
    out.provenance = ds.provenance;
    out.images = take_rows(ds.images, indices);
    if (!ds.labels.empty()) {
        out.labels.reserve(indices.size());
        for (auto i : indices) out.labels.push_back(ds.labels.at(i));
    }
    return out;
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const SplitPlan& plan) {
    if (plan.fractions.empty()) throw DataError("split: no fractions given");
    double total = 0.0;
    for (double f : plan.fractions) {
        if (!(f > 0.0)) throw DataError("split: fractions must be positive");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-12) throw DataError("split: fractions must sum to 1");

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(mix_seed(plan.seed, stream::kSplit));
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<std::vector<std::size_t>> out;
    std::size_t begin = 0;
    double cum = 0.0;
    for (std::size_t s = 0; s < plan.fractions.size(); ++s) {
        cum += plan.fractions[s];
        const std::size_t end = (s + 1 == plan.fractions.size())
                                    ? n
                                    : std::min(n, static_cast<std::size_t>(std::llround(cum * n)));
        if (end <= begin)
            throw DataError("split: fraction " + std::to_string(plan.fractions[s]) +
                            " yields an empty split of " + std::to_string(n) + " items");
        out.emplace_back(perm.begin() + begin, perm.begin() + end);
        begin = end;
    }
    return out;
}

std::vector<Dataset> split(const Dataset& ds, const SplitPlan& plan) {
    std::vector<Dataset> out;
    auto parts = split_indices(ds.size(), plan);
    for (std::size_t s = 0; s < parts.size(); ++s)
        out.push_back(subset(ds, parts[s], ds.name + "/split" + std::to_string(s)));
    return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size == 0) throw DataError("batch size must be at least 1");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(mix_seed(seed, epoch));
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < n; b += batch_size)
        out.emplace_back(perm.begin() + b, perm.begin() + std::min(n, b + batch_size));
    return out;
}

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch) {
    std::vector<Batch> out;
    for (const auto& idx : batch_indices(ds.size(), batch_size, seed, epoch)) {
        Batch b{take_rows(ds.images, idx), {}};
        if (!ds.labels.empty())
            for (auto i : idx) b.labels.push_back(ds.labels[i]);
        out.push_back(std::move(b));
    }
    return out;
}

DisjointReport check_disjoint(const Dataset& a, const Dataset& b) {
    if (a.image_shape() != b.image_shape())
        throw DimensionError("check_disjoint: image shapes differ between '" + a.name + "' and '" +
                             b.name + "'");
    std::unordered_multimap<std::string_view, std::size_t> index;
    index.reserve(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) index.emplace(image_bytes(b.images, j), j);

    DisjointReport report;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto [lo, hi] = index.equal_range(image_bytes(a.images, i));
        if (lo == hi) continue;
        std::size_t best = b.size();
        for (auto it = lo; it != hi; ++it) best = std::min(best, it->second);
        report.disjoint = false;
        report.first_collision = {i, best};
        break;
    }
    return report;
}

}  // namespace oodkit
