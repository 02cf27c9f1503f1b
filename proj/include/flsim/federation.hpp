#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "flsim/data.hpp"
#include "flsim/metrics.hpp"
#include "flsim/model.hpp"

namespace flsim {

struct SeedBundle {
    std::uint64_t designation = 1;  // who is malicious
    std::uint64_t selection = 2;    // per-round participant draws
    std::uint64_t init = 3;         // initial model weights
    std::uint64_t shuffle = 4;      // data partitioning and epoch order

    bool operator==(const SeedBundle&) const = default;
};

// Inclusive round range; lo > hi means "never active".
struct AttackWindow {
    int lo = 1;
    int hi = 0;

    bool empty() const { return lo > hi; }
    bool contains(int r) const { return r >= lo && r <= hi; }
    static AttackWindow none() { return {1, 0}; }
    static AttackWindow full(int rounds) { return {1, rounds}; }

    bool operator==(const AttackWindow&) const = default;
};

struct FederationConfig {
    int participant_count = 20;      // N
    int participants_per_round = 5;  // k
    int round_count = 50;            // R
    double malicious_percent = 10.0; // m
    // Probability that a selection slot is drawn from the malicious side
    // while the attack window is active. nullopt = uniform availability.
    std::optional<double> alpha;
    AttackWindow attack_window{1, 50};
    int source_class = 5;
    int target_class = 3;
    std::vector<int> hidden_layers{16};
    Activation activation = Activation::relu;
    int batch_size = 20;
    double learning_rate = 0.05;
    SeedBundle seeds;
    // Participants excluded from selection entirely (defense output feeds
    // back here).
    std::vector<int> blacklist;

    void validate() const;
    bool operator==(const FederationConfig&) const = default;
};

struct ParticipantPool {
    std::vector<int> honest_ids;     // sorted
    std::vector<int> malicious_ids;  // sorted, disjoint from honest
    std::vector<Partition> partitions;          // by participant id, clean labels
    std::vector<Partition> poisoned_partitions; // only malicious ids filled
    std::vector<int> blacklist;      // sorted

    int participant_count() const {
        return static_cast<int>(honest_ids.size() + malicious_ids.size());
    }
    bool is_malicious(int id) const;
    bool is_blacklisted(int id) const;
};

struct RoundRecord {
    int round = 0;
    std::vector<int> selected;  // sorted ascending
    int malicious_selected = 0;
    std::uint64_t params_hash = 0;  // hash of the post-round global params
    double accuracy = 0.0;
    std::vector<double> recalls;  // per class, NaN when undefined
};

struct RunResult {
    FederationConfig config;
    Architecture arch;
    std::vector<int> malicious_ids;
    ParameterVector initial_params;                 // theta_0
    std::vector<ParameterVector> globals;           // theta_1 .. theta_R
    // Per round, the post-training local parameters of the selected
    // participants, sorted by participant id.
    std::vector<std::vector<std::pair<int, ParameterVector>>> updates;
    std::vector<RoundRecord> rounds;

    const ParameterVector& final_params() const;
    // r in [0, R]; r = 0 returns theta_0.
    const ParameterVector& global_after(int r) const;
    MetricsSeries series() const;
};

// Sorted malicious id set of size round(N * m / 100), half-up rounding.
std::vector<int> designate_malicious(int participant_count, double malicious_percent,
                                     std::uint64_t seed);

// Partitions the training data and designates malicious participants. The
// poisoned shard of every malicious participant is prepared once here.
ParticipantPool build_pool(const FederationConfig& config, const LabeledDataset& train);

// k distinct ids, sorted. Uniform without replacement, except when alpha is
// set and in_window is true: each slot independently draws from the
// not-yet-selected malicious ids with probability alpha, otherwise from the
// honest ids, falling back to the other side when one is exhausted.
// Deterministic in (seed, r). Blacklisted ids are never selected.
std::vector<int> select_participants(const ParticipantPool& pool, int k,
                                     std::optional<double> alpha, bool in_window,
                                     std::uint64_t seed, int r);

// Coordinate-wise mean in the given (fixed) order. Exact mean identity: when
// every update is bitwise identical the common vector is returned as is.
ParameterVector aggregate(std::span<const ParameterVector> updates);

struct TrainingState {
    FederationConfig config;
    Architecture arch;
    ParticipantPool pool;
    LabeledDataset testset;
    ParameterVector params;  // theta_{r-1} going into round r
};

struct RoundOutput {
    RoundRecord record;
    std::vector<std::pair<int, ParameterVector>> updates;  // sorted by id
};

// One full round: select, train locally (flipped shards only while the
// attack window is active), aggregate, evaluate. Advances state.params.
RoundOutput run_round(TrainingState& state, int r);

RunResult run_training(const FederationConfig& config, const LabeledDataset& train,
                       const LabeledDataset& test);

// Stable content hash used in round records and determinism checks.
std::uint64_t hash_params(const ParameterVector& params);

}  // namespace flsim
