#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flsim/defense.hpp"
#include "flsim/federation.hpp"

namespace flsim {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SyntheticDataConfig {
    int classes = 10;
    int features = 16;
    int train_per_class = 1600;
    int test_per_class = 200;
    double center_scale = 7.07;
    double stddev = 2.5;
    // One deliberately hard class pair: center b is re-placed at this distance
    // from center a, so a targeted attack between them has room to bite while
    // the other classes stay well separated. Negative gap disables the pair.
    int confusable_a = 5;
    int confusable_b = 3;
    double confusable_gap = 6.5;
    std::uint64_t seed = 7;

    bool operator==(const SyntheticDataConfig&) const = default;
};

struct CsvDataConfig {
    std::string train_path;
    std::string test_path;

    bool operator==(const CsvDataConfig&) const = default;
};

struct DataConfig {
    enum class Kind { synthetic, csv };
    Kind kind = Kind::synthetic;
    SyntheticDataConfig synthetic;
    CsvDataConfig csv;

    bool operator==(const DataConfig&) const = default;
};

// Everything one training run needs: the federation protocol parameters,
// where the data comes from, and how the defense is configured.
struct RunConfig {
    FederationConfig federation;
    DataConfig data;
    DefenseOptions defense;

    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

// A sweep: the base run plus axis values as written in the config (axis
// strings are resolved lazily so "early"/"late" windows track R).
struct ExperimentPreset {
    std::string name = "custom";
    RunConfig base;
    std::vector<double> m_values;             // empty = just the base m
    std::vector<std::string> alpha_values;    // "uniform" or a number
    std::vector<std::string> window_values;   // full | none | early | late | lo:hi
    int repeats = 3;
    std::uint64_t base_seed = 1;
    enum class Reduction { final_round, window_mean };
    Reduction reduction = Reduction::final_round;

    void validate() const;
    bool operator==(const ExperimentPreset&) const = default;
};

// Key=value text, one pair per line, '#' comments. Unknown keys are
// rejected. parse_config accepts run-level keys only; parse_preset
// additionally accepts the sweep_* keys.
RunConfig parse_config(const std::string& text, const std::string& name = "config");
ExperimentPreset parse_preset(const std::string& text, const std::string& name = "config");
RunConfig parse_config_file(const std::string& path);
ExperimentPreset parse_preset_file(const std::string& path);

// Canonical snapshot: every run-level key explicit; parse(emit(c)) == c.
std::string emit_config(const RunConfig& config);
std::string emit_preset(const ExperimentPreset& preset);

// Built-in presets ("desk", "feasibility", "recovery", "availability" and
// their paper-scale "-full" variants). Throws ConfigError on an unknown
// name; list_presets names them all.
ExperimentPreset builtin_preset(const std::string& name);
std::vector<std::string> list_presets();

// Window axis value -> concrete window for a given R ("early" = [1, R/2],
// "late" = [R/2, R]).
AttackWindow resolve_window(const std::string& value, int rounds);
std::string window_label(const AttackWindow& window, int rounds);

// Replaces all four protocol seeds with values derived from one base value.
void apply_seed_override(RunConfig& config, std::uint64_t seed);

}  // namespace flsim
