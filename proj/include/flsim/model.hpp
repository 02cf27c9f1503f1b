#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flsim/data.hpp"

namespace flsim {

// The only hidden nonlinearity the simulator trains; kept as an explicit
// field so configs and serialized runs name it.
enum class Activation { relu };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Dense feedforward classifier: ReLU on hidden layers, softmax output,
// trained with cross-entropy. layer_sizes runs input -> hidden... -> output;
// two entries means logistic-regression-shaped (no hidden layer).
struct Architecture {
    std::vector<int> layer_sizes;
    Activation activation = Activation::relu;

    void validate() const;
    int input_dim() const { return layer_sizes.front(); }
    int class_count() const { return layer_sizes.back(); }
    int weight_layer_count() const { return static_cast<int>(layer_sizes.size()) - 1; }
    std::size_t parameter_count() const;

    bool operator==(const Architecture&) const = default;
};

Architecture make_architecture(int input_dim, const std::vector<int>& hidden_layers,
                               int class_count);

// Flat parameter storage. Layout per weight layer l, in order l = 0, 1, ...:
// W_l row-major (rows indexed by the layer's output nodes), then b_l. Output
// node j of the last layer therefore owns one contiguous weight row plus one
// bias entry, which is what the defense slices out.
class ParameterVector {
public:
    ParameterVector() = default;
    explicit ParameterVector(const Architecture& arch);  // zero-initialised

    const Architecture& arch() const { return arch_; }
    std::size_t size() const { return values_.size(); }
    bool same_shape(const ParameterVector& other) const { return arch_ == other.arch_; }

    double& weight(int layer, int out_node, int in_node);
    double weight(int layer, int out_node, int in_node) const;
    double& bias(int layer, int out_node);
    double bias(int layer, int out_node) const;

    std::span<double> flat() { return values_; }
    std::span<const double> flat() const { return values_; }

    // Contiguous weight row of one output node (length = fan-in of `layer`).
    std::span<const double> weight_row(int layer, int out_node) const;

    bool operator==(const ParameterVector&) const = default;

private:
    std::size_t weight_index(int layer, int out_node, int in_node) const;
    std::size_t bias_index(int layer, int out_node) const;

    Architecture arch_;
    std::vector<std::size_t> weight_offsets_;  // per weight layer
    std::vector<std::size_t> bias_offsets_;
    std::vector<double> values_;
};

struct Prediction {
    std::vector<double> probabilities;
    int predicted_class = 0;  // argmax, lowest index on ties
};

// Weights ~ N(0, 1/sqrt(fan_in)), biases zero, consumed in flat layout order.
ParameterVector init_params(const Architecture& arch, std::uint64_t seed);

Prediction forward(const ParameterVector& params, std::span<const double> features);
int predict(const ParameterVector& params, std::span<const double> features);

// Cross-entropy of one example, with the predicted probability floored at
// 1e-12 before the log so a confidently wrong model yields a large finite
// loss instead of inf.
double loss(const ParameterVector& params, std::span<const double> features, int label);

// Mean per-example loss over a whole dataset.
double mean_loss(const ParameterVector& params, const LabeledDataset& data);

// Mean cross-entropy gradient over the given rows (all rows by default).
// Exact backpropagation; the ReLU subgradient at 0 is taken as 0.
ParameterVector gradient(const ParameterVector& params, const LabeledDataset& data,
                         std::span<const std::size_t> rows);
ParameterVector gradient(const ParameterVector& params, const LabeledDataset& data);

// One epoch of minibatch SGD over the shard: one seeded permutation, then
// ceil(n / batch_size) consecutive chunks (last one short). Returns the
// updated parameters; the input is untouched.
ParameterVector sgd_epoch(const ParameterVector& params, const LabeledDataset& shard,
                          int batch_size, double learning_rate, std::uint64_t seed);

}  // namespace flsim
