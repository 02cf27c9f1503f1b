#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flsim/config.hpp"
#include "flsim/defense.hpp"
#include "flsim/federation.hpp"

namespace flsim {

struct DatasetPair {
    LabeledDataset train;
    LabeledDataset test;
};

// Materializes the configured dataset (synthetic generation or CSV load).
DatasetPair build_datasets(const DataConfig& data);

struct RunOptions {
    bool with_baseline = true;  // also run the seed-matched non-poisoned reference
    bool with_defense = true;   // run the defense on the recorded updates
    bool save_updates = true;   // persist per-round globals/updates for post-hoc defense
};

struct RunSummary {
    double final_accuracy = 0.0;
    double final_recall_source = 0.0;
    double window_mean_recall_source = 0.0;  // over the attack window (whole run if none)
    std::optional<double> baseline_final_recall_source;
    std::optional<double> recall_loss_final;
    std::optional<double> recall_loss_window_mean;
    std::optional<std::uint64_t> baseline_miscount_source_target;
    int malicious_selected_final = 0;
    std::optional<bool> defense_detected;
    std::optional<double> defense_balanced_accuracy;
    std::vector<int> defense_flagged;
};

struct RunArtifact {
    std::filesystem::path dir;
    RunConfig config;
    RunResult run;
    std::optional<RunResult> baseline;
    std::optional<DefenseReport> defense;
    RunSummary summary;
};

// Runs one configured experiment into `dir` (created if needed): config
// snapshot, seed manifest, per-round metrics CSV, parameter dumps, update
// log, optional baseline subdirectory, optional defense CSV + blacklist,
// and a key=value summary.
RunArtifact execute_run(const RunConfig& config, const std::filesystem::path& dir,
                        const RunOptions& options);

// Percent of correctly judged participants, averaged over the malicious and
// honest sides. Unobserved participants count against the defense. nullopt
// when there are no designated malicious participants.
std::optional<double> defense_balanced_accuracy(const std::vector<int>& flagged,
                                                const std::vector<int>& malicious_ids,
                                                int participant_count);

// --- run directory pieces -------------------------------------------------

void save_metrics_csv(const RunResult& run, const std::filesystem::path& path);
MetricsSeries load_metrics_csv(const std::filesystem::path& path);

void save_params_flat(const ParameterVector& params, const std::filesystem::path& path);
ParameterVector load_params_flat(const Architecture& arch, const std::filesystem::path& path);

// globals.csv, updates.csv, params_init.csv, arch.txt, malicious.txt —
// everything the post-hoc defense needs beyond config.txt.
void save_update_log(const RunResult& run, const std::filesystem::path& dir);
RunResult load_update_log(const std::filesystem::path& dir);

void save_defense_csv(const DefenseReport& report, const std::filesystem::path& path);
void save_blacklist(const std::vector<int>& ids, const std::filesystem::path& path);
std::vector<int> load_blacklist(const std::filesystem::path& path);

// --- sweeps ----------------------------------------------------------------

struct CellCoordinate {
    double m = 0.0;
    std::string alpha;   // "uniform" or a number, as written in the preset
    std::string window;  // axis value as written
    int repeat = 0;

    // Filesystem-safe, seed-derivation-stable identifier.
    std::string tag() const;
};

struct CellRow {
    CellCoordinate coordinate;
    RunSummary summary;
};

struct SweepResult {
    std::filesystem::path root;
    ExperimentPreset preset;
    std::vector<CellRow> cells;
};

// Executes the preset's m x alpha x window x repeat grid under root/cells/,
// each cell with seeds derived from (base_seed, coordinate tag). Writes
// preset.txt, sweep_cells.csv (one row per cell) and sweep_summary.csv
// (mean/std grouped over repeats). workers > 1 runs cells concurrently;
// outputs are identical either way.
SweepResult run_sweep(const ExperimentPreset& preset, const std::filesystem::path& root,
                      int workers = 1);

// Re-derives the summary tables from a sweep directory: recall-loss grid,
// per-class recall changes, final-round participation split, consecutive
// round deltas, and the defense summary. Writes into out_dir.
void export_report(const std::filesystem::path& sweep_root, const std::filesystem::path& out_dir);

}  // namespace flsim
