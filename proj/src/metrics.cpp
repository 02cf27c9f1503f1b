#include "flsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flsim {

ConfusionMatrix::ConfusionMatrix(int classes) : class_count(classes) {
    if (classes <= 0) throw std::invalid_argument("confusion matrix: class count must be positive");
    counts.assign(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0);
}

std::uint64_t& ConfusionMatrix::at(int true_class, int predicted) {
    if (true_class < 0 || true_class >= class_count || predicted < 0 || predicted >= class_count)
        throw std::out_of_range("confusion matrix: class index out of range");
    return counts[static_cast<std::size_t>(true_class) * static_cast<std::size_t>(class_count) +
                  static_cast<std::size_t>(predicted)];
}

std::uint64_t ConfusionMatrix::at(int true_class, int predicted) const {
    return const_cast<ConfusionMatrix*>(this)->at(true_class, predicted);
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (int c = 0; c < class_count; ++c) t += at(c, c);
    return t;
}

std::uint64_t ConfusionMatrix::row_total(int true_class) const {
    std::uint64_t t = 0;
    for (int j = 0; j < class_count; ++j) t += at(true_class, j);
    return t;
}

ConfusionMatrix confusion(const ParameterVector& params, const LabeledDataset& testset) {
    testset.validate();
    if (testset.class_count != params.arch().class_count())
        throw std::invalid_argument("confusion: test set class count does not match the model");
    ConfusionMatrix cm(testset.class_count);
    for (std::size_t i = 0; i < testset.size(); ++i)
        ++cm.at(testset.labels[i], predict(params, testset.features.row(i)));
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("accuracy: empty confusion matrix");
    return 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::optional<double> class_recall(const ConfusionMatrix& cm, int c) {
    if (c < 0 || c >= cm.class_count) throw std::out_of_range("class_recall: class out of range");
    const std::uint64_t row = cm.row_total(c);
    if (row == 0) return std::nullopt;
    return 100.0 * static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
}

std::uint64_t baseline_miscount(const ConfusionMatrix& non_poisoned_cm, int i, int j) {
    if (i == j) throw std::invalid_argument("baseline_miscount: source and target must differ");
    return non_poisoned_cm.at(i, j);
}

void MetricsSeries::validate() const {
    if (recalls.size() != accuracy.size() || malicious_selected.size() != accuracy.size())
        throw std::invalid_argument("metrics series: per-round vectors have different lengths");
    for (std::size_t r = 1; r < recalls.size(); ++r)
        if (recalls[r].size() != recalls[0].size())
            throw std::invalid_argument("metrics series: recall rows have different widths");
}

double MetricsSeries::recall_at(int round, int c) const {
    if (round < 1 || round > rounds()) throw std::out_of_range("metrics series: round out of range");
    const auto& row = recalls[static_cast<std::size_t>(round - 1)];
    if (c < 0 || c >= static_cast<int>(row.size()))
        throw std::out_of_range("metrics series: class out of range");
    return row[static_cast<std::size_t>(c)];
}

namespace {

void check_comparable(const MetricsSeries& a, const MetricsSeries& b, int c_src) {
    a.validate();
    b.validate();
    if (a.rounds() == 0) throw std::invalid_argument("recall_loss: empty series");
    if (a.rounds() != b.rounds())
        throw std::invalid_argument("recall_loss: runs have different round counts");
    if (a.recalls[0].size() != b.recalls[0].size())
        throw std::invalid_argument("recall_loss: runs track different class counts");
    if (c_src < 0 || c_src >= static_cast<int>(a.recalls[0].size()))
        throw std::out_of_range("recall_loss: source class out of range");
}

}  // namespace

double recall_loss_final(const MetricsSeries& baseline, const MetricsSeries& attacked, int c_src) {
    check_comparable(baseline, attacked, c_src);
    const int last = baseline.rounds();
    return baseline.recall_at(last, c_src) - attacked.recall_at(last, c_src);
}

double recall_loss_window_mean(const MetricsSeries& baseline, const MetricsSeries& attacked,
                               int c_src, int lo, int hi) {
    check_comparable(baseline, attacked, c_src);
    lo = std::max(lo, 1);
    hi = std::min(hi, baseline.rounds());
    if (lo > hi) throw std::invalid_argument("recall_loss: empty round window");
    double sum = 0.0;
    for (int r = lo; r <= hi; ++r)
        sum += baseline.recall_at(r, c_src) - attacked.recall_at(r, c_src);
    return sum / static_cast<double>(hi - lo + 1);
}

std::vector<ConsecutiveDelta> consecutive_round_deltas(const MetricsSeries& series, int c_src,
                                                       int start_round) {
    series.validate();
    if (series.rounds() < 2) throw std::invalid_argument("consecutive deltas: need at least two rounds");
    if (c_src < 0 || c_src >= static_cast<int>(series.recalls[0].size()))
        throw std::out_of_range("consecutive deltas: source class out of range");

    std::vector<ConsecutiveDelta> out;
    for (int r = std::max(2, start_round); r <= series.rounds(); ++r) {
        ConsecutiveDelta d;
        d.delta_malicious = series.malicious_selected[static_cast<std::size_t>(r - 1)] -
                            series.malicious_selected[static_cast<std::size_t>(r - 2)];
        d.delta_recall = series.recall_at(r, c_src) - series.recall_at(r - 1, c_src);
        out.push_back(d);
    }
    return out;
}

std::map<int, double> grouped_mean_delta(const std::vector<ConsecutiveDelta>& deltas) {
    std::map<int, double> sums;
    std::map<int, int> counts;
    for (const auto& d : deltas) {
        sums[d.delta_malicious] += d.delta_recall;
        counts[d.delta_malicious] += 1;
    }
    std::map<int, double> means;
    for (const auto& [k, s] : sums) means[k] = s / counts[k];
    return means;
}

}  // namespace flsim
