#include "flsim/federation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "flsim/rng.hpp"

namespace flsim {

void FederationConfig::validate() const {
    if (participant_count < 1) throw std::invalid_argument("config: N must be at least 1");
    if (participants_per_round < 1 || participants_per_round > participant_count)
        throw std::invalid_argument("config: k must satisfy 1 <= k <= N");
    if (round_count < 1) throw std::invalid_argument("config: R must be at least 1");
    if (malicious_percent < 0.0 || malicious_percent > 100.0)
        throw std::invalid_argument("config: m must lie in [0, 100]");
    if (alpha && (*alpha < 0.0 || *alpha > 1.0))
        throw std::invalid_argument("config: alpha must lie in [0, 1]");
    if (!attack_window.empty() && (attack_window.lo < 1 || attack_window.hi > round_count))
        throw std::invalid_argument("config: attack window must lie within [1, R]");
    if (source_class < 0 || target_class < 0)
        throw std::invalid_argument("config: class ids must be nonnegative");
    if (source_class == target_class)
        throw std::invalid_argument("config: source and target class must differ");
    for (int h : hidden_layers)
        if (h <= 0) throw std::invalid_argument("config: hidden layer sizes must be positive");
    if (batch_size < 1) throw std::invalid_argument("config: batch size must be at least 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning rate must be positive");
    for (int id : blacklist)
        if (id < 0 || id >= participant_count)
            throw std::invalid_argument("config: blacklisted id out of range");
}

bool ParticipantPool::is_malicious(int id) const {
    return std::binary_search(malicious_ids.begin(), malicious_ids.end(), id);
}

bool ParticipantPool::is_blacklisted(int id) const {
    return std::binary_search(blacklist.begin(), blacklist.end(), id);
}

const ParameterVector& RunResult::final_params() const {
    if (globals.empty()) throw std::logic_error("run result: no rounds recorded");
    return globals.back();
}

const ParameterVector& RunResult::global_after(int r) const {
    if (r == 0) return initial_params;
    if (r < 0 || r > static_cast<int>(globals.size()))
        throw std::out_of_range("run result: round out of range");
    return globals[static_cast<std::size_t>(r - 1)];
}

MetricsSeries RunResult::series() const {
    MetricsSeries s;
    s.accuracy.reserve(rounds.size());
    s.recalls.reserve(rounds.size());
    s.malicious_selected.reserve(rounds.size());
    for (const auto& rec : rounds) {
        s.accuracy.push_back(rec.accuracy);
        s.recalls.push_back(rec.recalls);
        s.malicious_selected.push_back(rec.malicious_selected);
    }
    return s;
}

std::vector<int> designate_malicious(int participant_count, double malicious_percent,
                                     std::uint64_t seed) {
    if (participant_count < 1) throw std::invalid_argument("designate: N must be at least 1");
    if (malicious_percent < 0.0 || malicious_percent > 100.0)
        throw std::invalid_argument("designate: m must lie in [0, 100]");
    // Half-up rounding of N * m%.
    const int count = static_cast<int>(
        std::floor(static_cast<double>(participant_count) * malicious_percent / 100.0 + 0.5));
    Rng rng = make_rng(mix_seed(seed, hash_tag("designate-malicious")));
    std::vector<int> ids = sample_without_replacement(participant_count, count, rng);
    std::sort(ids.begin(), ids.end());
    return ids;
}

ParticipantPool build_pool(const FederationConfig& config, const LabeledDataset& train) {
    config.validate();
    train.validate();
    if (config.source_class >= train.class_count || config.target_class >= train.class_count)
        throw std::invalid_argument("config: attack classes exceed the dataset class count");

    ParticipantPool pool;
    pool.malicious_ids = designate_malicious(config.participant_count, config.malicious_percent,
                                             config.seeds.designation);
    for (int id = 0; id < config.participant_count; ++id)
        if (!std::binary_search(pool.malicious_ids.begin(), pool.malicious_ids.end(), id))
            pool.honest_ids.push_back(id);

    pool.partitions = partition_iid(train, config.participant_count, config.seeds.shuffle);
    pool.poisoned_partitions.resize(pool.partitions.size());
    for (int id : pool.malicious_ids)
        pool.poisoned_partitions[static_cast<std::size_t>(id)] = flip_labels(
            pool.partitions[static_cast<std::size_t>(id)], config.source_class, config.target_class);

    pool.blacklist = config.blacklist;
    std::sort(pool.blacklist.begin(), pool.blacklist.end());
    pool.blacklist.erase(std::unique(pool.blacklist.begin(), pool.blacklist.end()),
                         pool.blacklist.end());
    return pool;
}

namespace {

std::vector<int> eligible(const std::vector<int>& ids, const ParticipantPool& pool) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (int id : ids)
        if (!pool.is_blacklisted(id)) out.push_back(id);
    return out;
}

int take_at(std::vector<int>& side, std::size_t idx) {
    const int id = side[idx];
    side.erase(side.begin() + static_cast<std::ptrdiff_t>(idx));
    return id;
}

}  // namespace

std::vector<int> select_participants(const ParticipantPool& pool, int k,
                                     std::optional<double> alpha, bool in_window,
                                     std::uint64_t seed, int r) {
    std::vector<int> honest = eligible(pool.honest_ids, pool);
    std::vector<int> malicious = eligible(pool.malicious_ids, pool);
    const int available = static_cast<int>(honest.size() + malicious.size());
    if (k < 1 || k > available)
        throw std::invalid_argument("select: k exceeds the number of eligible participants");

    Rng rng = make_rng(mix_seed(seed, static_cast<std::uint64_t>(r), hash_tag("select-round")));
    std::vector<int> selected;
    selected.reserve(static_cast<std::size_t>(k));

    const bool biased = alpha.has_value() && in_window && !malicious.empty();
    if (!biased) {
        std::vector<int> all;
        all.reserve(static_cast<std::size_t>(available));
        all.insert(all.end(), honest.begin(), honest.end());
        all.insert(all.end(), malicious.begin(), malicious.end());
        std::sort(all.begin(), all.end());
        for (int slot = 0; slot < k; ++slot) {
            const auto idx = static_cast<std::size_t>(uniform_below(rng, all.size()));
            selected.push_back(take_at(all, idx));
        }
    } else {
        for (int slot = 0; slot < k; ++slot) {
            const bool want_malicious = uniform01(rng) < *alpha;
            std::vector<int>& primary = want_malicious ? malicious : honest;
            std::vector<int>& fallback = want_malicious ? honest : malicious;
            std::vector<int>& side = primary.empty() ? fallback : primary;
            const auto idx = static_cast<std::size_t>(uniform_below(rng, side.size()));
            selected.push_back(take_at(side, idx));
        }
    }
    std::sort(selected.begin(), selected.end());
    return selected;
}

ParameterVector aggregate(std::span<const ParameterVector> updates) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
    for (const auto& u : updates)
        if (!u.same_shape(updates[0]))
            throw std::invalid_argument("aggregate: updates have different shapes");

    // Exact mean identity: the naive summation below does not always return
    // v for k copies of v (the rounded sum of k equal doubles divided by k
    // can land one ulp off), so that case is answered directly.
    const bool all_same = std::all_of(updates.begin(), updates.end(),
                                      [&](const ParameterVector& u) { return u == updates[0]; });
    if (all_same) return updates[0];

    ParameterVector mean(updates[0].arch());
    auto out = mean.flat();
    const double inv = 1.0 / static_cast<double>(updates.size());
    for (std::size_t c = 0; c < out.size(); ++c) {
        double s = 0.0;
        for (const auto& u : updates) s += u.flat()[c];
        out[c] = s * inv;
    }
    return mean;
}

std::uint64_t hash_params(const ParameterVector& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : params.flat()) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffULL;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

RoundOutput run_round(TrainingState& state, int r) {
    const FederationConfig& cfg = state.config;
    if (r < 1 || r > cfg.round_count) throw std::invalid_argument("run_round: round out of range");

    const bool in_window = cfg.attack_window.contains(r);
    const std::vector<int> selected = select_participants(
        state.pool, cfg.participants_per_round, cfg.alpha, in_window, cfg.seeds.selection, r);

    RoundOutput out;
    out.record.round = r;
    out.record.selected = selected;
    out.updates.reserve(selected.size());

    std::vector<ParameterVector> update_values;
    update_values.reserve(selected.size());
    for (int id : selected) {
        const bool poisoned = in_window && state.pool.is_malicious(id);
        const Partition& shard = poisoned
                                     ? state.pool.poisoned_partitions[static_cast<std::size_t>(id)]
                                     : state.pool.partitions[static_cast<std::size_t>(id)];
        const std::uint64_t epoch_seed =
            mix_seed(cfg.seeds.shuffle, static_cast<std::uint64_t>(r),
                     static_cast<std::uint64_t>(id));
        ParameterVector local = sgd_epoch(state.params, shard.data, cfg.batch_size,
                                          cfg.learning_rate, epoch_seed);
        update_values.push_back(local);
        out.updates.emplace_back(id, std::move(local));
    }

    out.record.malicious_selected = static_cast<int>(
        std::count_if(selected.begin(), selected.end(),
                      [&](int id) { return state.pool.is_malicious(id); }));

    state.params = aggregate(update_values);
    out.record.params_hash = hash_params(state.params);

    const ConfusionMatrix cm = confusion(state.params, state.testset);
    out.record.accuracy = accuracy(cm);
    out.record.recalls.resize(static_cast<std::size_t>(cm.class_count));
    for (int c = 0; c < cm.class_count; ++c) {
        const auto rec = class_recall(cm, c);
        out.record.recalls[static_cast<std::size_t>(c)] =
            rec ? *rec : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

RunResult run_training(const FederationConfig& config, const LabeledDataset& train,
                       const LabeledDataset& test) {
    config.validate();
    test.validate();
    if (test.class_count != train.class_count)
        throw std::invalid_argument("run_training: train and test class counts differ");

    TrainingState state;
    state.config = config;
    state.pool = build_pool(config, train);
    state.arch = make_architecture(train.feature_dim(), config.hidden_layers, train.class_count);
    state.arch.activation = config.activation;
    state.testset = test;
    state.params = init_params(state.arch, config.seeds.init);

    RunResult result;
    result.config = config;
    result.arch = state.arch;
    result.malicious_ids = state.pool.malicious_ids;
    result.initial_params = state.params;
    result.globals.reserve(static_cast<std::size_t>(config.round_count));
    result.updates.reserve(static_cast<std::size_t>(config.round_count));
    result.rounds.reserve(static_cast<std::size_t>(config.round_count));

    for (int r = 1; r <= config.round_count; ++r) {
        RoundOutput round = run_round(state, r);
        result.globals.push_back(state.params);
        result.updates.push_back(std::move(round.updates));
        result.rounds.push_back(std::move(round.record));
    }
    return result;
}

}  // namespace flsim
