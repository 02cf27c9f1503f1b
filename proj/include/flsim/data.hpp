#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flsim/matrix.hpp"

namespace flsim {

struct LabeledDataset {
    Matrix features;          // one row per example
    std::vector<int> labels;  // values in [0, class_count)
    int class_count = 0;

    std::size_t size() const { return labels.size(); }
    int feature_dim() const { return static_cast<int>(features.cols); }

    // Throws std::invalid_argument when the row/label shapes disagree or a
    // label falls outside [0, class_count).
    void validate() const;
};

struct Partition {
    int owner = 0;
    LabeledDataset data;
    bool poisoned = false;
};

struct SyntheticSpec {
    int class_count = 0;
    Matrix class_centers;        // class_count x feature_dim
    double cluster_stddev = 1.0;
    int examples_per_class = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Gaussian blobs, one per class. Examples are generated class by class
// (class 0 first) and then shuffled once so iid partitioning downstream does
// not see label runs. Deterministic in the spec seed.
LabeledDataset generate_synthetic(const SyntheticSpec& spec);

// Convenience for presets that only want "c classes, d features, n per
// class": centers drawn uniformly from [-center_scale, center_scale]^d using
// the same seed that drives sampling.
LabeledDataset generate_synthetic_blobs(int class_count, int feature_dim, int examples_per_class,
                                        double center_scale, double cluster_stddev,
                                        std::uint64_t seed);

// Shuffles row indices with the seed and deals them round-robin, so shard
// sizes differ by at most one and every row lands in exactly one shard.
std::vector<Partition> partition_iid(const LabeledDataset& dataset, int participant_count,
                                     std::uint64_t seed);

// Returns a copy of the shard with every source_class label rewritten to
// target_class. Features are untouched. The input partition is not modified.
Partition flip_labels(const Partition& shard, int source_class, int target_class);

// CSV with header "label,f0,f1,...". Throws std::runtime_error on malformed
// rows, non-numeric fields or inconsistent column counts.
LabeledDataset load_csv(const std::string& path);
LabeledDataset load_csv(std::istream& in, const std::string& name);

void save_csv(const LabeledDataset& dataset, const std::string& path);
void save_csv(const LabeledDataset& dataset, std::ostream& out);

}  // namespace flsim
