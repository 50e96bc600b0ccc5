#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "oodkit/data_io.hpp"
#include "oodkit/losses.hpp"
#include "oodkit/tensor.hpp"

namespace oodkit {

enum class LayerKind { Dense, Conv2d, Relu, Flatten, AvgPool };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    // dense
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    // conv2d
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    // avgpool (square window, stride == window)
    std::size_t pool = 2;

    static LayerSpec dense(std::size_t in, std::size_t out);
    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride = 1, std::size_t padding = 0);
    static LayerSpec relu();
    static LayerSpec flatten();
    static LayerSpec avgpool(std::size_t window = 2);

    bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layered classifier. Parameters are stored as (weight, bias) pairs for every
/// dense/conv layer, in layer order. Features are captured after every relu and
/// at the logits.
class Network {
public:
    Network() = default;
    /// Builds a network with zero parameters; throws DimensionError if shapes do not compose.
    Network(Shape input_shape, std::vector<LayerSpec> layers, std::size_t num_classes);

    /// Glorot-uniform weights, zero biases, drawn from `seed`.
    static Network initialized(Shape input_shape, std::vector<LayerSpec> layers,
                               std::size_t num_classes, std::uint64_t seed);

    const Shape& input_shape() const { return input_shape_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::size_t num_classes() const { return num_classes_; }
    std::uint64_t seed() const { return seed_; }

    /// Per-example output shape of layer i.
    const Shape& output_shape(std::size_t layer) const { return out_shapes_.at(layer); }
    /// Layer indices whose outputs are captured as features.
    const std::vector<std::size_t>& capture_points() const { return capture_; }

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    /// Index of the weight tensor of layer i in params(); bias follows it.
    std::optional<std::size_t> param_offset(std::size_t layer) const;
    std::string param_name(std::size_t param_index) const;

    friend bool operator==(const Network&, const Network&);

private:
    Shape input_shape_;
    std::vector<LayerSpec> layers_;
    std::size_t num_classes_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<Shape> out_shapes_;
    std::vector<std::size_t> capture_;
    std::vector<std::optional<std::size_t>> param_offset_;
    std::vector<Tensor> params_;
};

/// Activations of a forward pass: activations[0] is the input batch,
/// activations[i + 1] the output of layer i.
struct ForwardTrace {
    std::vector<Tensor> activations;
    std::vector<std::size_t> capture_points;

    const Tensor& logits() const { return activations.back(); }
    std::size_t num_features() const { return capture_points.size(); }
    const Tensor& feature(std::size_t k) const { return activations.at(capture_points.at(k) + 1); }
    std::size_t batch_size() const { return activations.front().dim(0); }
};

ForwardTrace forward(const Network& net, const Tensor& x);

struct Gradients {
    std::vector<Tensor> params;
    Tensor input;  // empty unless requested
};

/// Exact gradients of a scalar loss given d(loss)/d(logits) for every example.
Gradients backward(const Network& net, const ForwardTrace& trace, const Tensor& dloss_dlogits,
                   bool want_input_grad = false);

/// Backpropagates `upstream` = d(loss)/d(output of layer `from_layer`) down to the input.
Gradients backward_from(const Network& net, const ForwardTrace& trace, std::size_t from_layer,
                        const Tensor& upstream, bool want_input_grad = true);

struct Velocity {
    std::vector<Tensor> buffers;
    static Velocity zeros_like(const Network& net);
};

/// v <- momentum * v + g; theta <- theta - lr * v.
void sgd_step(Network& net, const std::vector<Tensor>& grads, Velocity& velocity, double lr,
              double momentum);

struct StepDecay {
    double initial = 0.1;
    double drop_factor = 0.1;
    std::vector<double> milestones{0.5, 0.75};  // fractions of total steps
};

struct Cosine {
    double initial = 0.001;
};

using LrSchedule = std::variant<StepDecay, Cosine>;

double lr_at(const LrSchedule& schedule, std::size_t step, std::size_t total_steps);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_in = 128;
    std::size_t batch_oe = 256;
    double momentum = 0.9;
    LrSchedule schedule = StepDecay{};
    std::uint64_t seed = 0;
};

/// Fraction of examples whose argmax logit equals the label.
double accuracy(const Network& net, const Tensor& images, std::span<const std::size_t> labels);
std::vector<std::size_t> predict(const Network& net, const Tensor& images);
/// Forward in chunks so memory stays bounded on large sets; returns logits.
Tensor logits_of(const Network& net, const Tensor& images, std::size_t chunk = 512);

struct TrainResult {
    Network net;
    double train_accuracy = 0.0;
};

/// Cross-entropy training; the returned accuracy is measured after the last epoch.
TrainResult train(Network net, const Dataset& d_in, const TrainConfig& config);

/// Cross-entropy-only fine-tuning with the same batch order as finetune_oecc.
Network finetune_ce(Network net, const Dataset& d_in, const TrainConfig& config);

/// Fine-tuning on the OECC objective. Each step concatenates batch_in examples of
/// d_in with batch_oe examples of d_oe and takes one SGD step.
Network finetune_oecc(Network net, const Dataset& d_in, const Dataset& d_oe,
                      const TrainConfig& config, const OeccConfig& oecc);

/// Optional per-step observer used by tests to compare trajectories.
using StepObserver = std::function<void(std::size_t step, const Network&)>;
Network finetune_ce(Network net, const Dataset& d_in, const TrainConfig& config,
                    const StepObserver& observer);
Network finetune_oecc(Network net, const Dataset& d_in, const Dataset& d_oe,
                      const TrainConfig& config, const OeccConfig& oecc,
                      const StepObserver& observer);

struct CheckpointMeta {
    std::optional<double> train_accuracy;
    std::map<std::string, double> scalars;
};

void save_network(const std::filesystem::path& dir, const Network& net, const CheckpointMeta& meta = {});
Network load_network(const std::filesystem::path& dir, CheckpointMeta* meta = nullptr);

}  // namespace oodkit
