#include "flsim/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "flsim/io.hpp"
#include "flsim/rng.hpp"

namespace flsim {

void LabeledDataset::validate() const {
    if (class_count <= 0) throw std::invalid_argument("dataset: class_count must be positive");
    if (features.rows != labels.size())
        throw std::invalid_argument("dataset: feature rows and label count differ");
    if (features.rows > 0 && features.cols == 0)
        throw std::invalid_argument("dataset: examples have no features");
    for (int y : labels)
        if (y < 0 || y >= class_count)
            throw std::invalid_argument("dataset: label outside [0, class_count)");
}

void SyntheticSpec::validate() const {
    if (class_count <= 0) throw std::invalid_argument("synthetic spec: class_count must be positive");
    if (examples_per_class <= 0)
        throw std::invalid_argument("synthetic spec: examples_per_class must be positive");
    if (!(cluster_stddev > 0.0))
        throw std::invalid_argument("synthetic spec: cluster_stddev must be positive");
    if (class_centers.rows != static_cast<std::size_t>(class_count) || class_centers.cols == 0)
        throw std::invalid_argument("synthetic spec: class_centers must be class_count x feature_dim");
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t dim = spec.class_centers.cols;
    const std::size_t n = static_cast<std::size_t>(spec.class_count) *
                          static_cast<std::size_t>(spec.examples_per_class);

    LabeledDataset out;
    out.class_count = spec.class_count;
    out.features = Matrix(n, dim);
    out.labels.resize(n);

    Rng rng = make_rng(mix_seed(spec.seed, hash_tag("synthetic-samples")));
    std::size_t row = 0;
    for (int c = 0; c < spec.class_count; ++c) {
        const auto center = spec.class_centers.row(static_cast<std::size_t>(c));
        for (int i = 0; i < spec.examples_per_class; ++i, ++row) {
            out.labels[row] = c;
            auto dst = out.features.row(row);
            for (std::size_t d = 0; d < dim; ++d)
                dst[d] = center[d] + spec.cluster_stddev * normal01(rng);
        }
    }

    // One global shuffle so class blocks do not survive into the shards.
    Rng order_rng = make_rng(mix_seed(spec.seed, hash_tag("synthetic-order")));
    std::vector<int> perm = random_permutation(static_cast<int>(n), order_rng);
    LabeledDataset shuffled;
    shuffled.class_count = out.class_count;
    shuffled.features = Matrix(n, dim);
    shuffled.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t src = static_cast<std::size_t>(perm[i]);
        shuffled.labels[i] = out.labels[src];
        auto dst = shuffled.features.row(i);
        const auto from = out.features.row(src);
        std::copy(from.begin(), from.end(), dst.begin());
    }
    return shuffled;
}

LabeledDataset generate_synthetic_blobs(int class_count, int feature_dim, int examples_per_class,
                                        double center_scale, double cluster_stddev,
                                        std::uint64_t seed) {
    if (feature_dim <= 0) throw std::invalid_argument("synthetic blobs: feature_dim must be positive");
    if (!(center_scale > 0.0))
        throw std::invalid_argument("synthetic blobs: center_scale must be positive");
    SyntheticSpec spec;
    spec.class_count = class_count;
    spec.examples_per_class = examples_per_class;
    spec.cluster_stddev = cluster_stddev;
    spec.seed = seed;
    spec.class_centers = Matrix(static_cast<std::size_t>(class_count),
                                static_cast<std::size_t>(feature_dim));
    Rng rng = make_rng(mix_seed(seed, hash_tag("synthetic-centers")));
    for (auto& v : spec.class_centers.data) v = (2.0 * uniform01(rng) - 1.0) * center_scale;
    return generate_synthetic(spec);
}

std::vector<Partition> partition_iid(const LabeledDataset& dataset, int participant_count,
                                     std::uint64_t seed) {
    dataset.validate();
    if (participant_count <= 0)
        throw std::invalid_argument("partition_iid: participant_count must be positive");
    if (dataset.size() < static_cast<std::size_t>(participant_count))
        throw std::invalid_argument("partition_iid: fewer examples than participants");

    Rng rng = make_rng(mix_seed(seed, hash_tag("partition")));
    std::vector<int> perm = random_permutation(static_cast<int>(dataset.size()), rng);

    std::vector<Partition> shards(static_cast<std::size_t>(participant_count));
    for (int p = 0; p < participant_count; ++p) {
        shards[static_cast<std::size_t>(p)].owner = p;
        shards[static_cast<std::size_t>(p)].data.class_count = dataset.class_count;
    }
    // Deal shuffled rows round-robin; sizes differ by at most one.
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(participant_count));
    for (std::size_t i = 0; i < perm.size(); ++i)
        rows[i % static_cast<std::size_t>(participant_count)].push_back(perm[i]);

    for (int p = 0; p < participant_count; ++p) {
        auto& shard = shards[static_cast<std::size_t>(p)];
        const auto& idx = rows[static_cast<std::size_t>(p)];
        shard.data.features = Matrix(idx.size(), dataset.features.cols);
        shard.data.labels.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const std::size_t src = static_cast<std::size_t>(idx[i]);
            shard.data.labels[i] = dataset.labels[src];
            const auto from = dataset.features.row(src);
            auto dst = shard.data.features.row(i);
            std::copy(from.begin(), from.end(), dst.begin());
        }
    }
    return shards;
}

Partition flip_labels(const Partition& shard, int source_class, int target_class) {
    shard.data.validate();
    if (source_class < 0 || source_class >= shard.data.class_count)
        throw std::invalid_argument("flip_labels: source class out of range");
    if (target_class < 0 || target_class >= shard.data.class_count)
        throw std::invalid_argument("flip_labels: target class out of range");
    if (source_class == target_class)
        throw std::invalid_argument("flip_labels: source and target class must differ");

    Partition out = shard;
    out.poisoned = true;
    for (int& y : out.data.labels)
        if (y == source_class) y = target_class;
    return out;
}

// Rows are "f0,...,fD-1,label": features first, integer label last, no
// header. Every row must have the same column count.
LabeledDataset load_csv(std::istream& in, const std::string& name) {
    std::vector<double> values;
    std::vector<int> labels;
    std::size_t dim = 0;
    std::size_t lineno = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_fields(line, ',');
        const std::string ctx = name + ":" + std::to_string(lineno);
        if (labels.empty()) {
            if (fields.size() < 2) throw std::runtime_error(ctx + ": no feature columns");
            dim = fields.size() - 1;
        } else if (fields.size() != dim + 1) {
            throw std::runtime_error(ctx + ": expected " + std::to_string(dim + 1) +
                                     " fields, got " + std::to_string(fields.size()));
        }
        for (std::size_t d = 0; d < dim; ++d)
            values.push_back(parse_double_field(fields[d], ctx));
        const long long y = parse_int_field(fields[dim], ctx);
        if (y < 0) throw std::runtime_error(ctx + ": negative label");
        labels.push_back(static_cast<int>(y));
    }
    if (labels.empty()) throw std::runtime_error(name + ": no data rows");

    LabeledDataset out;
    out.labels = std::move(labels);
    out.class_count = *std::max_element(out.labels.begin(), out.labels.end()) + 1;
    out.features = Matrix(out.labels.size(), dim);
    out.features.data = std::move(values);
    out.validate();
    return out;
}

LabeledDataset load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset: " + path);
    return load_csv(in, path);
}

void save_csv(const LabeledDataset& dataset, std::ostream& out) {
    dataset.validate();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        for (double v : dataset.features.row(i)) out << format_double(v) << ',';
        out << dataset.labels[i] << "\n";
    }
}

void save_csv(const LabeledDataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset: " + path);
    save_csv(dataset, out);
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace flsim
