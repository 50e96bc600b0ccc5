#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "oodkit/data_io.hpp"
#include "oodkit/fcgm.hpp"
#include "oodkit/mahalanobis.hpp"
#include "oodkit/metrics.hpp"
#include "oodkit/nn.hpp"
#include "oodkit/synthgen.hpp"

namespace oodkit::harness {

// CLI exit statuses
inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitPartial = 4;

/// How lambda and detector hyper-parameters see outliers during tuning.
/// ZeroShot: synthetic d_out_val only. Oracle: a held-out slice of each d_out_test set.
enum class Protocol { ZeroShot, Oracle };

std::string_view protocol_name(Protocol p);

enum class Detector { Msp, Md, Fcgm };

std::string_view detector_name(Detector d);

struct DatasetPaths {
    std::filesystem::path d_in_train;
    std::filesystem::path d_in_test;
    std::filesystem::path d_out_oe;
    std::vector<std::filesystem::path> d_out_val;
    std::vector<std::filesystem::path> d_out_test;
};

struct ExperimentConfig {
    DatasetPaths datasets;
    Shape input_shape{3, 8, 8};
    std::vector<LayerSpec> layers;
    std::size_t num_classes = 4;
    TrainConfig train;
    TrainConfig finetune;
    std::vector<double> lambda1_grid{0.0, 0.01, 0.03, 0.05, 0.07, 0.1};
    std::vector<double> lambda2_grid{0.0, 0.01, 0.03, 0.05, 0.07, 0.1};
    Protocol protocol = Protocol::ZeroShot;
    std::vector<Detector> detectors{Detector::Msp, Detector::Md, Detector::Fcgm};
    std::vector<double> eps_grid{0.0, 0.001, 0.005, 0.01};
    std::vector<std::size_t> orders = fcgm::kDefaultOrders;
    double val_fraction = 0.1;
    double oracle_fraction = 0.1;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    // gen-synthetic
    std::vector<synth::Kind> synth_kinds{synth::kAllKinds.begin(), synth::kAllKinds.end()};
    std::size_t synth_count = 500;
    double speckle_sigma = 0.4;

    /// Throws ConfigError on empty grids or out-of-range fractions.
    void validate() const;
};

/// Default small convolutional classifier for C x H x W inputs with H, W divisible by 4.
std::vector<LayerSpec> default_layers(const Shape& input_shape, std::size_t num_classes);

ExperimentConfig default_config();
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every dataset role of one experiment, loaded into memory.
struct Datasets {
    Dataset d_in_train;
    Dataset d_in_test;
    std::optional<Dataset> d_out_oe;
    std::vector<Dataset> d_out_val;
    std::vector<Dataset> d_out_test;
};

/// Loads the roles a command needs; a missing path raises DataError naming the role.
struct RoleNeeds {
    bool train = true, test = false, oe = false, val = false, ood_test = false;
};
Datasets load_datasets(const ExperimentConfig& cfg, const RoleNeeds& needs);

/// Refuses (DisjointnessError) when an OE or validation set shares an image with a test set.
void enforce_disjointness(const Datasets& ds);

/// Validation/evaluation partitions derived from the config seed.
struct Partitions {
    std::string d_in_name;
    Dataset in_val;                    // slice of d_in_test used for tuning and FCGM normalisation
    Dataset in_eval;                   // the rest of d_in_test
    std::vector<Dataset> out_val;      // tuning outliers (protocol dependent)
    std::vector<Dataset> out_eval;     // evaluation outliers
};
Partitions make_partitions(const ExperimentConfig& cfg, const Datasets& ds);

TrainResult run_train(const ExperimentConfig& cfg, const Dataset& d_in_train);

struct GridPoint {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double mean_val_auroc = 0.0;
    std::vector<double> val_aurocs;  // one per validation outlier set
};

struct FinetuneOutcome {
    std::vector<GridPoint> grid;
    std::size_t selected = 0;
    std::vector<Network> nets;  // parallel to grid
};

/// Fine-tunes every (lambda1, lambda2) point with a shared fine-tune seed and selects the
/// point with the highest mean MSP AUROC over the validation outlier sets.
FinetuneOutcome run_finetune(const ExperimentConfig& cfg, const Network& base, double train_accuracy,
                             const Dataset& d_in_train, const Dataset& d_oe, const Partitions& parts);

struct DetectorBundle {
    std::optional<mahalanobis::State> md;
    std::optional<fcgm::Bounds> fcgm;
    double md_val_auroc = 0.0;
};

/// Fits Gaussians on d_in_train, then picks the preprocessing eps from cfg.eps_grid with the
/// best validation AUROC of the fitted combiner.
mahalanobis::State fit_md(const ExperimentConfig& cfg, const Network& net, const Dataset& d_in_train,
                          const Partitions& parts, double* val_auroc = nullptr);
/// Bounds from d_in_train, normalised on the in-distribution validation slice.
fcgm::Bounds fit_fcgm(const ExperimentConfig& cfg, const Network& net, const Dataset& d_in_train,
                      const Partitions& parts);

/// Column of the result table: a detector applied to either the CE or the OECC network.
struct MethodSpec {
    bool oecc = false;
    Detector detector = Detector::Msp;
    std::string label() const;
};

std::vector<MethodSpec> methods_for(const ExperimentConfig& cfg);

struct Cell {
    std::string d_in;
    std::string d_out;
    std::string method;
    std::optional<EvalResult> result;
    std::string error;
};

struct ResultTable {
    std::string protocol;
    std::vector<std::string> d_in_names;
    std::vector<std::string> d_out_names;
    std::vector<std::string> methods;
    std::vector<Cell> cells;

    const Cell* find(const std::string& d_out, const std::string& method) const;
    bool any_failed() const;
    std::size_t value_count() const;
};

void render_text(const ResultTable& table, std::ostream& os);
std::string render_json(const ResultTable& table);

/// A trained network plus the detectors fitted on it.
struct Model {
    Network net;
    DetectorBundle detectors;
};

/// Confidence scores of one method on a set of images.
std::vector<double> method_scores(const MethodSpec& method, const Model& model, const Tensor& images);

struct RawScores {
    std::string d_out;
    std::string method;
    ScoreSample sample;
};

/// Scores every (d_out, method) cell; failures are recorded per cell.
ResultTable evaluate_cells(const ExperimentConfig& cfg, const Partitions& parts, const Model& base,
                           const std::optional<Model>& oecc, std::vector<RawScores>* raw = nullptr);

/// Rebuilds a table from persisted raw scores with the metrics module alone.
ResultTable table_from_scores(const std::string& protocol, const std::string& d_in,
                              const std::vector<RawScores>& raw);

void save_scores(const std::filesystem::path& dir, const std::vector<RawScores>& raw);
std::vector<RawScores> load_scores(const std::filesystem::path& dir);

/// End-to-end in-memory run used by the acceptance suite.
struct PipelineResult {
    double train_accuracy = 0.0;
    FinetuneOutcome finetune;
    ResultTable table;
};

PipelineResult run_pipeline(const ExperimentConfig& cfg, const Datasets& ds);

/// SHA-256 of a file, or of the sorted per-file digests for a directory.
std::string content_hash(const std::filesystem::path& path);

}  // namespace oodkit::harness
