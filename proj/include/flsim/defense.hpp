#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flsim/federation.hpp"
#include "flsim/matrix.hpp"
#include "flsim/model.hpp"

namespace flsim {

// One row of the defense's evidence: the slice of a participant's update
// delta feeding the source-class output node (incoming weights, then bias).
struct UpdateFingerprint {
    int participant = 0;
    int round = 0;
    std::vector<double> values;
};

struct FingerprintLabel {
    int participant = 0;
    int round = 0;

    bool operator==(const FingerprintLabel&) const = default;
    auto operator<=>(const FingerprintLabel&) const = default;
};

struct FingerprintMatrix {
    std::vector<FingerprintLabel> labels;  // one per row of values
    Matrix values;

    void add_row(const UpdateFingerprint& fp);
    std::size_t row_count() const { return labels.size(); }
    void validate() const;
};

// update minus global, coordinate-wise.
ParameterVector compute_delta(const ParameterVector& theta_update,
                              const ParameterVector& theta_global);

// Output-layer weight row into node c_src followed by that node's bias.
// Length is therefore (last hidden width + 1).
UpdateFingerprint extract_source_slice(const ParameterVector& delta, int c_src);

// Column-wise: subtract mean, divide by population stddev. Columns with
// stddev < 1e-12 become all zero instead of exploding.
FingerprintMatrix standardize(const FingerprintMatrix& u);

struct Pca2Result {
    FingerprintMatrix projected;              // 2 columns, same labels
    std::vector<double> component1, component2;  // unit norm, orthogonal
    double variance1 = 0.0, variance2 = 0.0;     // projected variance per component
};

// Projects rows onto the top-2 eigenvectors of the population column
// covariance (power iteration with deflation, tolerance 1e-10, at most
// 10,000 iterations). Sign convention: each component's largest-magnitude
// coordinate is positive.
Pca2Result pca2(const FingerprintMatrix& u);

struct DefenseReport {
    int source_class = -1;
    bool attack_detected = false;
    // Rows sorted by (participant, round); clustering is order-invariant.
    std::vector<FingerprintLabel> labels;
    Matrix points;              // 2 columns
    std::vector<int> clusters;  // per row, 0 or 1
    std::vector<int> participants;         // distinct ids, sorted
    std::vector<int> participant_cluster;  // per entry of participants
    std::vector<int> flagged;              // sorted ids; empty when no attack detected
};

inline constexpr double kDefaultSeparationFactor = 2.0;
inline constexpr std::uint64_t kDefaultClusterSeed = 0x5ca1ab1e;
inline constexpr int kDefaultClusterRestarts = 20;

// 2-means over the projected points (seeded restarts), participants assigned
// to the cluster holding the majority of their rows, and the cluster with
// fewer distinct participants flagged (tie: larger centroid norm). If the
// centroids are closer than separation_factor times the mean point-to-own-
// centroid distance, nothing separates the groups and no attack is reported.
DefenseReport flag_malicious(const FingerprintMatrix& projected,
                             double separation_factor = kDefaultSeparationFactor,
                             std::uint64_t seed = kDefaultClusterSeed,
                             int restarts = kDefaultClusterRestarts);

// Which global parameters a round's deltas are taken against.
enum class DeltaReference {
    post_aggregate,   // theta_r, the same round's aggregated result
    previous_global,  // theta_{r-1}, the parameters the round trained from
};

struct DefenseOptions {
    int round_lo = 10;  // inclusive; skips the noisy initial rounds
    int round_hi = -1;  // inclusive; -1 means the run's final round
    DeltaReference delta_reference = DeltaReference::post_aggregate;
    double separation_factor = kDefaultSeparationFactor;
    std::uint64_t cluster_seed = kDefaultClusterSeed;
    int cluster_restarts = kDefaultClusterRestarts;

    bool operator==(const DefenseOptions&) const = default;
};

// Builds the raw fingerprint matrix for one source class over the round
// range (before standardization).
FingerprintMatrix collect_fingerprints(const RunResult& run, int c_src,
                                       const DefenseOptions& options);

// Full pipeline for one known source class: deltas, slices, standardize,
// pca2, flag. Throws std::invalid_argument on an empty round range.
DefenseReport evaluate_updates(const RunResult& run, int c_src, const DefenseOptions& options);

// Source class unknown: one independent pipeline per class. The union of the
// flagged sets is the blacklist candidate; each report keeps its class.
std::vector<DefenseReport> evaluate_updates_all_classes(const RunResult& run,
                                                        const DefenseOptions& options);

}  // namespace flsim
