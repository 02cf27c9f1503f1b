#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "flsim/data.hpp"
#include "flsim/model.hpp"

namespace flsim {

// rows = true class, cols = predicted class.
struct ConfusionMatrix {
    int class_count = 0;
    std::vector<std::uint64_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes);

    std::uint64_t& at(int true_class, int predicted);
    std::uint64_t at(int true_class, int predicted) const;
    std::uint64_t total() const;
    std::uint64_t trace() const;
    std::uint64_t row_total(int true_class) const;
};

ConfusionMatrix confusion(const ParameterVector& params, const LabeledDataset& testset);

// 100 * trace / total. Throws std::invalid_argument on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

// 100 * TP / (TP + FN). nullopt when the class has no test examples; callers
// must handle that explicitly rather than read it as zero.
std::optional<double> class_recall(const ConfusionMatrix& cm, int c);

// Misclassification count from class i to class j under a non-poisoned
// model's confusion matrix. i == j is a caller bug.
std::uint64_t baseline_miscount(const ConfusionMatrix& non_poisoned_cm, int i, int j);

// Per-round series of one training run. recalls holds NaN where a class was
// absent from the test set that round (it never is for the class-balanced
// test sets the harness builds, but the representation is explicit).
struct MetricsSeries {
    std::vector<double> accuracy;
    std::vector<std::vector<double>> recalls;  // [round][class]
    std::vector<int> malicious_selected;

    int rounds() const { return static_cast<int>(accuracy.size()); }
    void validate() const;
    // Round r is 1-based; r = 1 is the first completed round.
    double recall_at(int round, int c) const;
};

// Source-class recall of the non-poisoned run minus the attacked run at the
// final round. Both runs must have the same length.
double recall_loss_final(const MetricsSeries& baseline, const MetricsSeries& attacked, int c_src);

// Same difference but averaged over rounds [lo, hi] (1-based, inclusive,
// clipped to the series length).
double recall_loss_window_mean(const MetricsSeries& baseline, const MetricsSeries& attacked,
                               int c_src, int lo, int hi);

struct ConsecutiveDelta {
    int delta_malicious = 0;   // malicious_selected[r] - malicious_selected[r-1]
    double delta_recall = 0.0; // recall_src[r] - recall_src[r-1]
};

// One pair per consecutive round pair (r-1, r) with r >= start_round and
// r >= 2 (1-based rounds). start_round is typically the attack window start.
std::vector<ConsecutiveDelta> consecutive_round_deltas(const MetricsSeries& series, int c_src,
                                                       int start_round);

// Mean delta_recall grouped by delta_malicious.
std::map<int, double> grouped_mean_delta(const std::vector<ConsecutiveDelta>& deltas);

}  // namespace flsim
