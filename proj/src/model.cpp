#include "flsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "flsim/rng.hpp"

namespace flsim {

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
    }
    throw std::invalid_argument("unknown activation");
}

Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::relu;
    throw std::invalid_argument("unknown activation: " + name);
}

void Architecture::validate() const {
    if (layer_sizes.size() < 2)
        throw std::invalid_argument("architecture: need at least input and output layers");
    for (int s : layer_sizes)
        if (s <= 0) throw std::invalid_argument("architecture: layer sizes must be positive");
    if (layer_sizes.back() < 2)
        throw std::invalid_argument("architecture: need at least two output classes");
}

std::size_t Architecture::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
        n += static_cast<std::size_t>(layer_sizes[l + 1]) *
                 static_cast<std::size_t>(layer_sizes[l]) +
             static_cast<std::size_t>(layer_sizes[l + 1]);
    return n;
}

Architecture make_architecture(int input_dim, const std::vector<int>& hidden_layers,
                               int class_count) {
    Architecture arch;
    arch.layer_sizes.reserve(hidden_layers.size() + 2);
    arch.layer_sizes.push_back(input_dim);
    arch.layer_sizes.insert(arch.layer_sizes.end(), hidden_layers.begin(), hidden_layers.end());
    arch.layer_sizes.push_back(class_count);
    arch.validate();
    return arch;
}

ParameterVector::ParameterVector(const Architecture& arch) : arch_(arch) {
    arch_.validate();
    std::size_t off = 0;
    const int layers = arch_.weight_layer_count();
    weight_offsets_.resize(static_cast<std::size_t>(layers));
    bias_offsets_.resize(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
        const auto fan_in = static_cast<std::size_t>(arch_.layer_sizes[static_cast<std::size_t>(l)]);
        const auto fan_out =
            static_cast<std::size_t>(arch_.layer_sizes[static_cast<std::size_t>(l) + 1]);
        weight_offsets_[static_cast<std::size_t>(l)] = off;
        off += fan_in * fan_out;
        bias_offsets_[static_cast<std::size_t>(l)] = off;
        off += fan_out;
    }
    values_.assign(off, 0.0);
}

std::size_t ParameterVector::weight_index(int layer, int out_node, int in_node) const {
    if (layer < 0 || layer >= arch_.weight_layer_count())
        throw std::out_of_range("parameters: layer out of range");
    const int fan_in = arch_.layer_sizes[static_cast<std::size_t>(layer)];
    const int fan_out = arch_.layer_sizes[static_cast<std::size_t>(layer) + 1];
    if (out_node < 0 || out_node >= fan_out || in_node < 0 || in_node >= fan_in)
        throw std::out_of_range("parameters: node index out of range");
    return weight_offsets_[static_cast<std::size_t>(layer)] +
           static_cast<std::size_t>(out_node) * static_cast<std::size_t>(fan_in) +
           static_cast<std::size_t>(in_node);
}

std::size_t ParameterVector::bias_index(int layer, int out_node) const {
    if (layer < 0 || layer >= arch_.weight_layer_count())
        throw std::out_of_range("parameters: layer out of range");
    const int fan_out = arch_.layer_sizes[static_cast<std::size_t>(layer) + 1];
    if (out_node < 0 || out_node >= fan_out)
        throw std::out_of_range("parameters: node index out of range");
    return bias_offsets_[static_cast<std::size_t>(layer)] + static_cast<std::size_t>(out_node);
}

double& ParameterVector::weight(int layer, int out_node, int in_node) {
    return values_[weight_index(layer, out_node, in_node)];
}
double ParameterVector::weight(int layer, int out_node, int in_node) const {
    return values_[weight_index(layer, out_node, in_node)];
}
double& ParameterVector::bias(int layer, int out_node) {
    return values_[bias_index(layer, out_node)];
}
double ParameterVector::bias(int layer, int out_node) const {
    return values_[bias_index(layer, out_node)];
}

std::span<const double> ParameterVector::weight_row(int layer, int out_node) const {
    const std::size_t start = weight_index(layer, out_node, 0);
    const auto fan_in = static_cast<std::size_t>(arch_.layer_sizes[static_cast<std::size_t>(layer)]);
    return {values_.data() + start, fan_in};
}

ParameterVector init_params(const Architecture& arch, std::uint64_t seed) {
    ParameterVector params(arch);
    Rng rng = make_rng(mix_seed(seed, hash_tag("init-params")));
    for (int l = 0; l < arch.weight_layer_count(); ++l) {
        const int fan_in = arch.layer_sizes[static_cast<std::size_t>(l)];
        const int fan_out = arch.layer_sizes[static_cast<std::size_t>(l) + 1];
        const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (int j = 0; j < fan_out; ++j)
            for (int i = 0; i < fan_in; ++i) params.weight(l, j, i) = stddev * normal01(rng);
        // biases stay zero
    }
    return params;
}

namespace {

// Activations for every layer, kept around for backprop.
struct ForwardTrace {
    std::vector<std::vector<double>> layer_values;  // [0] = input copy
};

void forward_trace(const ParameterVector& params, std::span<const double> features,
                   ForwardTrace& trace) {
    const Architecture& arch = params.arch();
    if (features.size() != static_cast<std::size_t>(arch.input_dim()))
        throw std::invalid_argument("forward: feature length does not match input layer");

    trace.layer_values.assign(arch.layer_sizes.size(), {});
    trace.layer_values[0].assign(features.begin(), features.end());

    for (int l = 0; l < arch.weight_layer_count(); ++l) {
        const int fan_in = arch.layer_sizes[static_cast<std::size_t>(l)];
        const int fan_out = arch.layer_sizes[static_cast<std::size_t>(l) + 1];
        const auto& prev = trace.layer_values[static_cast<std::size_t>(l)];
        auto& cur = trace.layer_values[static_cast<std::size_t>(l) + 1];
        cur.assign(static_cast<std::size_t>(fan_out), 0.0);
        const bool last = (l == arch.weight_layer_count() - 1);
        for (int j = 0; j < fan_out; ++j) {
            double z = params.bias(l, j);
            const auto row = params.weight_row(l, j);
            for (int i = 0; i < fan_in; ++i) z += row[static_cast<std::size_t>(i)] * prev[static_cast<std::size_t>(i)];
            cur[static_cast<std::size_t>(j)] = last ? z : (z > 0.0 ? z : 0.0);
        }
    }

    // Stable softmax on the output layer.
    auto& out = trace.layer_values.back();
    const double zmax = *std::max_element(out.begin(), out.end());
    double sum = 0.0;
    for (double& z : out) {
        z = std::exp(z - zmax);
        sum += z;
    }
    for (double& z : out) z /= sum;
}

int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

constexpr double kProbFloor = 1e-12;

}  // namespace

Prediction forward(const ParameterVector& params, std::span<const double> features) {
    ForwardTrace trace;
    forward_trace(params, features, trace);
    Prediction p;
    p.probabilities = trace.layer_values.back();
    p.predicted_class = argmax_lowest(p.probabilities);
    return p;
}

int predict(const ParameterVector& params, std::span<const double> features) {
    return forward(params, features).predicted_class;
}

double loss(const ParameterVector& params, std::span<const double> features, int label) {
    const Architecture& arch = params.arch();
    if (label < 0 || label >= arch.class_count())
        throw std::invalid_argument("loss: label out of range");
    ForwardTrace trace;
    forward_trace(params, features, trace);
    const double p = trace.layer_values.back()[static_cast<std::size_t>(label)];
    return -std::log(std::max(p, kProbFloor));
}

double mean_loss(const ParameterVector& params, const LabeledDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("mean_loss: empty dataset");
    double sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        sum += loss(params, data.features.row(i), data.labels[i]);
    return sum / static_cast<double>(data.size());
}

namespace {

// Accumulates the single-example gradient into grad (softmax + cross-entropy,
// so the output-layer error is simply p - onehot(y)).
void accumulate_gradient(const ParameterVector& params, std::span<const double> features, int label,
                         ParameterVector& grad) {
    const Architecture& arch = params.arch();
    ForwardTrace trace;
    forward_trace(params, features, trace);

    const int last = arch.weight_layer_count() - 1;
    std::vector<double> delta = trace.layer_values.back();
    delta[static_cast<std::size_t>(label)] -= 1.0;

    for (int l = last; l >= 0; --l) {
        const int fan_in = arch.layer_sizes[static_cast<std::size_t>(l)];
        const int fan_out = arch.layer_sizes[static_cast<std::size_t>(l) + 1];
        const auto& prev = trace.layer_values[static_cast<std::size_t>(l)];

        for (int j = 0; j < fan_out; ++j) {
            const double dj = delta[static_cast<std::size_t>(j)];
            grad.bias(l, j) += dj;
            for (int i = 0; i < fan_in; ++i)
                grad.weight(l, j, i) += dj * prev[static_cast<std::size_t>(i)];
        }

        if (l == 0) break;
        std::vector<double> prev_delta(static_cast<std::size_t>(fan_in), 0.0);
        for (int i = 0; i < fan_in; ++i) {
            if (prev[static_cast<std::size_t>(i)] <= 0.0) continue;  // ReLU gate
            double s = 0.0;
            for (int j = 0; j < fan_out; ++j)
                s += params.weight(l, j, i) * delta[static_cast<std::size_t>(j)];
            prev_delta[static_cast<std::size_t>(i)] = s;
        }
        delta = std::move(prev_delta);
    }
}

}  // namespace

ParameterVector gradient(const ParameterVector& params, const LabeledDataset& data,
                         std::span<const std::size_t> rows) {
    data.validate();
    if (data.class_count != params.arch().class_count())
        throw std::invalid_argument("gradient: dataset class count does not match the model");
    if (rows.empty()) throw std::invalid_argument("gradient: no rows given");

    ParameterVector grad(params.arch());
    for (std::size_t r : rows) {
        if (r >= data.size()) throw std::out_of_range("gradient: row index out of range");
        accumulate_gradient(params, data.features.row(r), data.labels[r], grad);
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (double& g : grad.flat()) g *= inv;
    return grad;
}

ParameterVector gradient(const ParameterVector& params, const LabeledDataset& data) {
    std::vector<std::size_t> rows(data.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return gradient(params, data, rows);
}

ParameterVector sgd_epoch(const ParameterVector& params, const LabeledDataset& shard,
                          int batch_size, double learning_rate, std::uint64_t seed) {
    shard.validate();
    if (batch_size <= 0) throw std::invalid_argument("sgd_epoch: batch size must be positive");
    if (learning_rate < 0.0) throw std::invalid_argument("sgd_epoch: learning rate must be nonnegative");
    if (shard.class_count != params.arch().class_count())
        throw std::invalid_argument("sgd_epoch: shard class count does not match the model");

    const std::size_t n = shard.size();
    Rng rng = make_rng(mix_seed(seed, hash_tag("epoch-order")));
    std::vector<int> perm = random_permutation(static_cast<int>(n), rng);

    ParameterVector cur = params;
    std::vector<std::size_t> batch;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(n, start + static_cast<std::size_t>(batch_size));
        batch.assign(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(stop));
        ParameterVector grad = gradient(cur, shard, batch);
        auto values = cur.flat();
        const auto g = grad.flat();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= learning_rate * g[i];
    }
    return cur;
}

}  // namespace flsim
