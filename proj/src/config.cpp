#include "flsim/config.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "flsim/io.hpp"
#include "flsim/rng.hpp"

namespace flsim {

void RunConfig::validate() const {
    federation.validate();
    if (data.kind == DataConfig::Kind::synthetic) {
        const auto& s = data.synthetic;
        if (s.classes < 2) throw ConfigError("config: synthetic_classes must be at least 2");
        if (s.features < 1) throw ConfigError("config: synthetic_features must be at least 1");
        if (s.train_per_class < 1 || s.test_per_class < 1)
            throw ConfigError("config: synthetic per-class example counts must be positive");
        if (!(s.center_scale > 0.0)) throw ConfigError("config: synthetic_center_scale must be positive");
        if (!(s.stddev > 0.0)) throw ConfigError("config: synthetic_stddev must be positive");
        if (federation.source_class >= s.classes || federation.target_class >= s.classes)
            throw ConfigError("config: attack classes exceed synthetic_classes");
        if (s.confusable_gap >= 0.0) {
            if (s.confusable_a < 0 || s.confusable_a >= s.classes || s.confusable_b < 0 ||
                s.confusable_b >= s.classes)
                throw ConfigError("config: synthetic_confusable classes exceed synthetic_classes");
            if (s.confusable_a == s.confusable_b)
                throw ConfigError("config: synthetic_confusable classes must differ");
        }
    } else {
        if (data.csv.train_path.empty() || data.csv.test_path.empty())
            throw ConfigError("config: data=csv requires train_csv and test_csv");
    }
    if (defense.round_lo < 1) throw ConfigError("config: defense_rounds must start at round 1 or later");
    if (defense.round_hi >= 0 && defense.round_hi < defense.round_lo)
        throw ConfigError("config: defense_rounds range is empty");
    if (!(defense.separation_factor > 0.0))
        throw ConfigError("config: defense_separation must be positive");
    if (defense.cluster_restarts < 1)
        throw ConfigError("config: defense_cluster_restarts must be positive");
}

void ExperimentPreset::validate() const {
    base.validate();
    for (double m : m_values)
        if (m < 0.0 || m > 100.0) throw ConfigError("preset: sweep_m value outside [0, 100]");
    for (const auto& a : alpha_values) {
        if (a == "uniform") continue;
        const double v = parse_double_field(a, "preset sweep_alpha");
        if (v < 0.0 || v > 1.0) throw ConfigError("preset: sweep_alpha value outside [0, 1]");
    }
    for (const auto& w : window_values) {
        const AttackWindow win = resolve_window(w, base.federation.round_count);
        if (!win.empty() && (win.lo < 1 || win.hi > base.federation.round_count))
            throw ConfigError("preset: sweep_window '" + w + "' falls outside [1, R]");
    }
    if (repeats < 1) throw ConfigError("preset: repeats must be at least 1");
}

AttackWindow resolve_window(const std::string& value, int rounds) {
    if (value == "none") return AttackWindow::none();
    if (value == "full") return AttackWindow::full(rounds);
    if (value == "early") return {1, rounds / 2};
    if (value == "late") return {rounds / 2, rounds};
    const auto parts = split_fields(value, ':');
    if (parts.size() != 2)
        throw ConfigError("config: attack window must be full, none, early, late or lo:hi, got '" +
                          value + "'");
    AttackWindow w;
    w.lo = static_cast<int>(parse_int_field(parts[0], "attack window"));
    w.hi = static_cast<int>(parse_int_field(parts[1], "attack window"));
    if (w.empty()) throw ConfigError("config: attack window '" + value + "' is empty; use none");
    return w;
}

std::string window_label(const AttackWindow& window, int rounds) {
    if (window.empty()) return "none";
    if (window.lo == 1 && window.hi == rounds) return "full";
    return std::to_string(window.lo) + ":" + std::to_string(window.hi);
}

namespace {

struct KeyValues {
    std::map<std::string, std::string> values;
    std::string name;

    bool has(const std::string& key) const { return values.count(key) != 0; }
};

KeyValues parse_lines(const std::string& text, const std::string& name) {
    KeyValues kv;
    kv.name = name;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(name + ":" + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t");
            return s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(name + ":" + std::to_string(lineno) + ": empty key");
        if (kv.values.count(key))
            throw ConfigError(name + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv.values[key] = value;
    }
    return kv;
}

std::vector<int> parse_int_list(const std::string& value, const std::string& context) {
    std::vector<int> out;
    if (value.empty()) return out;
    for (const auto& f : split_fields(value, ','))
        out.push_back(static_cast<int>(parse_int_field(f, context)));
    return out;
}

std::vector<std::string> parse_string_list(const std::string& value) {
    std::vector<std::string> out;
    if (value.empty()) return out;
    for (auto& f : split_fields(value, ','))
        if (!f.empty()) out.push_back(f);
    return out;
}

// Keys with their canonical spelling; aliases map onto them.
const std::map<std::string, std::string>& key_aliases() {
    static const std::map<std::string, std::string> aliases = {
        {"N", "participants"}, {"k", "per_round"}, {"R", "rounds"}, {"m", "malicious_percent"},
    };
    return aliases;
}

const std::set<std::string>& run_keys() {
    static const std::set<std::string> keys = {
        "participants", "per_round", "rounds", "malicious_percent", "alpha", "attack_window",
        "source_class", "target_class", "hidden_layers", "activation", "batch_size",
        "learning_rate", "seed_designation", "seed_selection", "seed_init", "seed_shuffle",
        "blacklist", "data", "synthetic_classes", "synthetic_features",
        "synthetic_train_per_class", "synthetic_test_per_class", "synthetic_center_scale",
        "synthetic_stddev", "synthetic_confusable_a", "synthetic_confusable_b",
        "synthetic_confusable_gap", "synthetic_seed", "train_csv", "test_csv", "defense_rounds",
        "defense_delta", "defense_separation", "defense_cluster_seed",
        "defense_cluster_restarts",
    };
    return keys;
}

const std::set<std::string>& sweep_keys() {
    static const std::set<std::string> keys = {
        "preset_name", "sweep_m", "sweep_alpha", "sweep_window", "repeats", "base_seed",
        "reduction",
    };
    return keys;
}

RunConfig build_run_config(const KeyValues& kv, std::map<std::string, std::string> pending) {
    RunConfig cfg;
    auto& fed = cfg.federation;

    auto get = [&](const std::string& key) -> const std::string& {
        pending.erase(key);
        return kv.values.at(key);
    };
    auto get_int = [&](const std::string& key) {
        return static_cast<int>(parse_int_field(get(key), kv.name + " " + key));
    };
    auto get_double = [&](const std::string& key) {
        return parse_double_field(get(key), kv.name + " " + key);
    };
    auto get_seed = [&](const std::string& key) {
        return parse_uint64_field(get(key), kv.name + " " + key);
    };

    if (kv.has("participants")) fed.participant_count = get_int("participants");
    if (kv.has("per_round")) fed.participants_per_round = get_int("per_round");
    if (kv.has("rounds")) fed.round_count = get_int("rounds");
    if (kv.has("malicious_percent")) fed.malicious_percent = get_double("malicious_percent");
    if (kv.has("alpha")) {
        const std::string& a = get("alpha");
        if (a == "uniform")
            fed.alpha.reset();
        else
            fed.alpha = parse_double_field(a, kv.name + " alpha");
    }
    // The window defaults to all rounds, so it must resolve after R is known.
    if (kv.has("attack_window"))
        fed.attack_window = resolve_window(get("attack_window"), fed.round_count);
    else
        fed.attack_window = AttackWindow::full(fed.round_count);
    if (kv.has("source_class")) fed.source_class = get_int("source_class");
    if (kv.has("target_class")) fed.target_class = get_int("target_class");
    if (kv.has("hidden_layers"))
        fed.hidden_layers = parse_int_list(get("hidden_layers"), kv.name + " hidden_layers");
    if (kv.has("activation")) fed.activation = activation_from_name(get("activation"));
    if (kv.has("batch_size")) fed.batch_size = get_int("batch_size");
    if (kv.has("learning_rate")) fed.learning_rate = get_double("learning_rate");
    if (kv.has("seed_designation")) fed.seeds.designation = get_seed("seed_designation");
    if (kv.has("seed_selection")) fed.seeds.selection = get_seed("seed_selection");
    if (kv.has("seed_init")) fed.seeds.init = get_seed("seed_init");
    if (kv.has("seed_shuffle")) fed.seeds.shuffle = get_seed("seed_shuffle");
    if (kv.has("blacklist")) fed.blacklist = parse_int_list(get("blacklist"), kv.name + " blacklist");

    if (kv.has("data")) {
        const std::string& d = get("data");
        if (d == "synthetic")
            cfg.data.kind = DataConfig::Kind::synthetic;
        else if (d == "csv")
            cfg.data.kind = DataConfig::Kind::csv;
        else
            throw ConfigError(kv.name + ": data must be synthetic or csv, got '" + d + "'");
    }
    auto& syn = cfg.data.synthetic;
    if (kv.has("synthetic_classes")) syn.classes = get_int("synthetic_classes");
    if (kv.has("synthetic_features")) syn.features = get_int("synthetic_features");
    if (kv.has("synthetic_train_per_class")) syn.train_per_class = get_int("synthetic_train_per_class");
    if (kv.has("synthetic_test_per_class")) syn.test_per_class = get_int("synthetic_test_per_class");
    if (kv.has("synthetic_center_scale")) syn.center_scale = get_double("synthetic_center_scale");
    if (kv.has("synthetic_stddev")) syn.stddev = get_double("synthetic_stddev");
    if (kv.has("synthetic_confusable_a")) syn.confusable_a = get_int("synthetic_confusable_a");
    if (kv.has("synthetic_confusable_b")) syn.confusable_b = get_int("synthetic_confusable_b");
    if (kv.has("synthetic_confusable_gap"))
        syn.confusable_gap = get_double("synthetic_confusable_gap");
    if (kv.has("synthetic_seed")) syn.seed = get_seed("synthetic_seed");
    if (kv.has("train_csv")) cfg.data.csv.train_path = get("train_csv");
    if (kv.has("test_csv")) cfg.data.csv.test_path = get("test_csv");

    if (kv.has("defense_rounds")) {
        const auto parts = split_fields(get("defense_rounds"), ':');
        if (parts.size() != 2)
            throw ConfigError(kv.name + ": defense_rounds must be lo:hi (hi empty for end of run)");
        cfg.defense.round_lo = static_cast<int>(parse_int_field(parts[0], "defense_rounds"));
        cfg.defense.round_hi =
            parts[1].empty() ? -1 : static_cast<int>(parse_int_field(parts[1], "defense_rounds"));
    }
    if (kv.has("defense_delta")) {
        const std::string& v = get("defense_delta");
        if (v == "post_aggregate")
            cfg.defense.delta_reference = DeltaReference::post_aggregate;
        else if (v == "previous_global")
            cfg.defense.delta_reference = DeltaReference::previous_global;
        else
            throw ConfigError(kv.name +
                              ": defense_delta must be post_aggregate or previous_global");
    }
    if (kv.has("defense_separation")) cfg.defense.separation_factor = get_double("defense_separation");
    if (kv.has("defense_cluster_seed")) cfg.defense.cluster_seed = get_seed("defense_cluster_seed");
    if (kv.has("defense_cluster_restarts"))
        cfg.defense.cluster_restarts = get_int("defense_cluster_restarts");

    if (!pending.empty())
        throw ConfigError(kv.name + ": unknown key '" + pending.begin()->first + "'");

    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(kv.name + ": " + e.what());
    }
    return cfg;
}

KeyValues canonicalize(const std::string& text, const std::string& name, bool allow_sweep) {
    KeyValues kv = parse_lines(text, name);
    // Apply aliases.
    for (const auto& [alias, canonical] : key_aliases()) {
        auto it = kv.values.find(alias);
        if (it == kv.values.end()) continue;
        if (kv.values.count(canonical))
            throw ConfigError(name + ": both '" + alias + "' and '" + canonical + "' given");
        kv.values[canonical] = it->second;
        kv.values.erase(it);
    }
    for (const auto& entry : kv.values) {
        const std::string& key = entry.first;
        if (run_keys().count(key)) continue;
        if (allow_sweep && sweep_keys().count(key)) continue;
        throw ConfigError(name + ": unknown key '" + key + "'");
    }
    return kv;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& name) {
    KeyValues kv = canonicalize(text, name, false);
    std::map<std::string, std::string> pending = kv.values;
    return build_run_config(kv, pending);
}

ExperimentPreset parse_preset(const std::string& text, const std::string& name) {
    KeyValues kv = canonicalize(text, name, true);
    std::map<std::string, std::string> pending = kv.values;

    ExperimentPreset preset;
    auto get = [&](const std::string& key) -> const std::string& {
        pending.erase(key);
        return kv.values.at(key);
    };
    if (kv.has("preset_name")) preset.name = get("preset_name");
    if (kv.has("sweep_m")) {
        for (const auto& f : split_fields(get("sweep_m"), ','))
            preset.m_values.push_back(parse_double_field(f, name + " sweep_m"));
    }
    if (kv.has("sweep_alpha")) preset.alpha_values = parse_string_list(get("sweep_alpha"));
    if (kv.has("sweep_window")) preset.window_values = parse_string_list(get("sweep_window"));
    if (kv.has("repeats"))
        preset.repeats = static_cast<int>(parse_int_field(get("repeats"), name + " repeats"));
    if (kv.has("base_seed")) preset.base_seed = parse_uint64_field(get("base_seed"), name + " base_seed");
    if (kv.has("reduction")) {
        const std::string& r = get("reduction");
        if (r == "final_round")
            preset.reduction = ExperimentPreset::Reduction::final_round;
        else if (r == "window_mean")
            preset.reduction = ExperimentPreset::Reduction::window_mean;
        else
            throw ConfigError(name + ": reduction must be final_round or window_mean");
    }

    preset.base = build_run_config(kv, pending);
    try {
        preset.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(name + ": " + e.what());
    }
    return preset;
}

RunConfig parse_config_file(const std::string& path) {
    return parse_config(read_text_file(path), path);
}

ExperimentPreset parse_preset_file(const std::string& path) {
    return parse_preset(read_text_file(path), path);
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

void emit_run_keys(std::ostringstream& out, const RunConfig& cfg) {
    const auto& fed = cfg.federation;
    out << "participants=" << fed.participant_count << "\n";
    out << "per_round=" << fed.participants_per_round << "\n";
    out << "rounds=" << fed.round_count << "\n";
    out << "malicious_percent=" << format_double(fed.malicious_percent) << "\n";
    out << "alpha=" << (fed.alpha ? format_double(*fed.alpha) : "uniform") << "\n";
    out << "attack_window="
        << (fed.attack_window.empty() ? "none"
                                      : std::to_string(fed.attack_window.lo) + ":" +
                                            std::to_string(fed.attack_window.hi))
        << "\n";
    out << "source_class=" << fed.source_class << "\n";
    out << "target_class=" << fed.target_class << "\n";
    out << "hidden_layers=" << join_ints(fed.hidden_layers) << "\n";
    out << "activation=" << activation_name(fed.activation) << "\n";
    out << "batch_size=" << fed.batch_size << "\n";
    out << "learning_rate=" << format_double(fed.learning_rate) << "\n";
    out << "seed_designation=" << fed.seeds.designation << "\n";
    out << "seed_selection=" << fed.seeds.selection << "\n";
    out << "seed_init=" << fed.seeds.init << "\n";
    out << "seed_shuffle=" << fed.seeds.shuffle << "\n";
    if (!fed.blacklist.empty()) out << "blacklist=" << join_ints(fed.blacklist) << "\n";

    out << "data=" << (cfg.data.kind == DataConfig::Kind::synthetic ? "synthetic" : "csv") << "\n";
    if (cfg.data.kind == DataConfig::Kind::synthetic) {
        const auto& s = cfg.data.synthetic;
        out << "synthetic_classes=" << s.classes << "\n";
        out << "synthetic_features=" << s.features << "\n";
        out << "synthetic_train_per_class=" << s.train_per_class << "\n";
        out << "synthetic_test_per_class=" << s.test_per_class << "\n";
        out << "synthetic_center_scale=" << format_double(s.center_scale) << "\n";
        out << "synthetic_stddev=" << format_double(s.stddev) << "\n";
        out << "synthetic_confusable_a=" << s.confusable_a << "\n";
        out << "synthetic_confusable_b=" << s.confusable_b << "\n";
        out << "synthetic_confusable_gap=" << format_double(s.confusable_gap) << "\n";
        out << "synthetic_seed=" << s.seed << "\n";
    } else {
        out << "train_csv=" << cfg.data.csv.train_path << "\n";
        out << "test_csv=" << cfg.data.csv.test_path << "\n";
    }

    out << "defense_rounds=" << cfg.defense.round_lo << ":"
        << (cfg.defense.round_hi < 0 ? "" : std::to_string(cfg.defense.round_hi)) << "\n";
    out << "defense_delta="
        << (cfg.defense.delta_reference == DeltaReference::post_aggregate ? "post_aggregate"
                                                                          : "previous_global")
        << "\n";
    out << "defense_separation=" << format_double(cfg.defense.separation_factor) << "\n";
    out << "defense_cluster_seed=" << cfg.defense.cluster_seed << "\n";
    out << "defense_cluster_restarts=" << cfg.defense.cluster_restarts << "\n";
}

}  // namespace

std::string emit_config(const RunConfig& config) {
    std::ostringstream out;
    emit_run_keys(out, config);
    return out.str();
}

std::string emit_preset(const ExperimentPreset& preset) {
    std::ostringstream out;
    out << "preset_name=" << preset.name << "\n";
    emit_run_keys(out, preset.base);
    if (!preset.m_values.empty()) {
        out << "sweep_m=";
        for (std::size_t i = 0; i < preset.m_values.size(); ++i)
            out << (i ? "," : "") << format_double(preset.m_values[i]);
        out << "\n";
    }
    auto emit_list = [&](const char* key, const std::vector<std::string>& values) {
        if (values.empty()) return;
        out << key << "=";
        for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
        out << "\n";
    };
    emit_list("sweep_alpha", preset.alpha_values);
    emit_list("sweep_window", preset.window_values);
    out << "repeats=" << preset.repeats << "\n";
    out << "base_seed=" << preset.base_seed << "\n";
    out << "reduction="
        << (preset.reduction == ExperimentPreset::Reduction::final_round ? "final_round"
                                                                         : "window_mean")
        << "\n";
    return out.str();
}

ExperimentPreset builtin_preset(const std::string& name) {
    ExperimentPreset p;
    p.name = name;
    if (name == "desk") {
        // Single attacked run at the defaults, three repeats.
        p.m_values = {10.0};
    } else if (name == "feasibility") {
        p.m_values = {0.0, 10.0, 20.0, 40.0};
        p.window_values = {"full"};
        // Attack depth is read as the window mean; the final round alone is a
        // lottery on how many malicious participants the last draw selected.
        p.reduction = ExperimentPreset::Reduction::window_mean;
    } else if (name == "recovery") {
        p.m_values = {20.0};
        p.window_values = {"early"};
    } else if (name == "availability") {
        p.m_values = {20.0};
        p.window_values = {"late"};
        p.alpha_values = {"uniform", "0.6", "0.9"};
        p.reduction = ExperimentPreset::Reduction::window_mean;
    } else if (name == "feasibility-full") {
        p.base.federation.participant_count = 50;
        p.base.federation.round_count = 200;
        p.base.federation.attack_window = AttackWindow::full(200);
        p.m_values = {2.0, 4.0, 10.0, 20.0, 30.0, 40.0, 50.0};
        p.window_values = {"full"};
        p.repeats = 10;
        p.reduction = ExperimentPreset::Reduction::window_mean;
    } else if (name == "recovery-full") {
        p.base.federation.participant_count = 50;
        p.base.federation.round_count = 200;
        p.base.federation.attack_window = AttackWindow::full(200);
        p.m_values = {20.0};
        p.window_values = {"1:74"};
    } else if (name == "availability-full") {
        p.base.federation.participant_count = 50;
        p.base.federation.round_count = 200;
        p.base.federation.attack_window = AttackWindow::full(200);
        p.m_values = {10.0};
        p.window_values = {"75:200"};
        p.alpha_values = {"uniform", "0.6", "0.7", "0.8", "0.9", "1.0"};
        p.reduction = ExperimentPreset::Reduction::window_mean;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    p.validate();
    return p;
}

std::vector<std::string> list_presets() {
    return {"desk",        "feasibility",      "recovery",        "availability",
            "feasibility-full", "recovery-full", "availability-full"};
}

void apply_seed_override(RunConfig& config, std::uint64_t seed) {
    config.federation.seeds.designation = mix_seed(seed, hash_tag("designation"));
    config.federation.seeds.selection = mix_seed(seed, hash_tag("selection"));
    config.federation.seeds.init = mix_seed(seed, hash_tag("init"));
    config.federation.seeds.shuffle = mix_seed(seed, hash_tag("shuffle"));
}

}  // namespace flsim
