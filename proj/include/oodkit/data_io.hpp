#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "oodkit/tensor.hpp"

namespace oodkit {

enum class Role { DInTrain, DInTest, DOutOe, DOutVal, DOutTest };

std::string_view role_name(Role role);
Role parse_role(std::string_view name);
inline bool role_has_labels(Role role) { return role == Role::DInTrain || role == Role::DInTest; }

/// Images (N x C x H x W, values in [0,1]) plus labels for in-distribution roles.
struct Dataset {
    std::string name;
    Role role = Role::DInTrain;
    Tensor images;
    std::vector<std::size_t> labels;  // empty for out-of-distribution roles
    std::size_t num_classes = 0;
    std::map<std::string, std::string> provenance;

    std::size_t size() const { return images.rank() ? images.dim(0) : 0; }
    Shape image_shape() const;
    /// Throws DataError/LabelError when an invariant does not hold.
    void validate() const;
};

/// Writes manifest.json, images.oodt and (when labelled) labels.oodt into `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Returns a copy restricted to the given example indices.
Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices, std::string name);

struct SplitPlan {
    std::uint64_t seed = 0;
    std::vector<double> fractions;
};

/// Seeded permutation followed by contiguous slicing.
std::vector<Dataset> split(const Dataset& ds, const SplitPlan& plan);
/// Index sets produced by split(); exposed for audit and tests.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, const SplitPlan& plan);

/// Per-epoch shuffled batch index lists; the last batch may be short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

struct Batch {
    Tensor images;
    std::vector<std::size_t> labels;
};

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch);

struct DisjointReport {
    bool disjoint = true;
    std::optional<std::pair<std::size_t, std::size_t>> first_collision;
};

/// Exact bitwise comparison of images; reports the lexicographically first (i, j) collision.
DisjointReport check_disjoint(const Dataset& a, const Dataset& b);

}  // namespace oodkit
