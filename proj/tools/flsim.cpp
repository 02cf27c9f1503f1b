// flsim: federated-learning poisoning simulator CLI.
//
// Verbs:
//   run     train one configured federation and write its artifacts
//   sweep   run a preset grid (m / alpha / window x repeats)
//   defend  re-run the update-fingerprint defense on a recorded run
//   report  re-derive summary tables from a sweep directory
//
// Exit codes: 0 success, 2 usage/config error, 3 file I/O error, 4 runtime
// failure.

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flsim/config.hpp"
#include "flsim/defense.hpp"
#include "flsim/experiment.hpp"
#include "flsim/io.hpp"

namespace fs = std::filesystem;
using namespace flsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitRuntime = 4;

void print_summary(const RunSummary& s) {
    std::cout << "final_accuracy=" << format_double(s.final_accuracy) << "\n";
    std::cout << "final_recall_source=" << format_double(s.final_recall_source) << "\n";
    if (s.recall_loss_final)
        std::cout << "recall_loss_final=" << format_double(*s.recall_loss_final) << "\n";
    if (s.recall_loss_window_mean)
        std::cout << "recall_loss_window_mean=" << format_double(*s.recall_loss_window_mean)
                  << "\n";
    if (s.defense_detected) {
        std::cout << "defense_detected=" << (*s.defense_detected ? 1 : 0) << "\n";
        std::cout << "defense_flagged=";
        for (std::size_t i = 0; i < s.defense_flagged.size(); ++i)
            std::cout << (i ? "," : "") << s.defense_flagged[i];
        std::cout << "\n";
    }
    if (s.defense_balanced_accuracy)
        std::cout << "defense_balanced_accuracy=" << format_double(*s.defense_balanced_accuracy)
                  << "\n";
}

AttackWindow parse_rounds_flag(const std::string& value) {
    const auto colon = value.find(':');
    if (colon == std::string::npos)
        throw ConfigError("--rounds expects lo:hi (hi may be omitted)");
    AttackWindow window;
    window.lo = static_cast<int>(parse_int_field(value.substr(0, colon), "--rounds"));
    const std::string hi = value.substr(colon + 1);
    window.hi = hi.empty() ? -1 : static_cast<int>(parse_int_field(hi, "--rounds"));
    return window;
}

int run_command(const std::string& config_path, const std::string& out_dir,
                std::optional<std::uint64_t> seed, bool no_baseline, bool no_defense,
                bool no_updates) {
    RunConfig config = parse_config_file(config_path);
    if (seed) apply_seed_override(config, *seed);
    RunOptions options;
    options.with_baseline = !no_baseline;
    options.with_defense = !no_defense;
    options.save_updates = !no_updates;
    const RunArtifact artifact = execute_run(config, out_dir, options);
    print_summary(artifact.summary);
    std::cout << "run written to " << artifact.dir.string() << "\n";
    return kExitOk;
}

int sweep_command(const std::string& preset_name, const std::string& preset_path,
                  const std::string& out_dir, int workers, std::optional<std::uint64_t> seed,
                  std::optional<int> repeats) {
    ExperimentPreset preset =
        !preset_path.empty() ? parse_preset_file(preset_path) : builtin_preset(preset_name);
    if (seed) preset.base_seed = *seed;
    if (repeats) preset.repeats = *repeats;
    preset.validate();
    const SweepResult result = run_sweep(preset, out_dir, workers);
    std::cout << result.cells.size() << " cells written to " << result.root.string() << "\n";
    return kExitOk;
}

int defend_command(const std::string& run_dir, std::optional<int> source_class, bool all_classes,
                   const std::string& rounds, const std::string& delta,
                   std::optional<double> separation, const std::string& out_path) {
    const fs::path dir(run_dir);
    const RunConfig stored = parse_config_file((dir / "config.txt").string());
    const RunResult run = load_update_log(dir);

    DefenseOptions options = stored.defense;
    if (!rounds.empty()) {
        const AttackWindow window = parse_rounds_flag(rounds);
        options.round_lo = window.lo;
        options.round_hi = window.hi;
    }
    if (!delta.empty()) {
        if (delta == "post")
            options.delta_reference = DeltaReference::post_aggregate;
        else if (delta == "previous")
            options.delta_reference = DeltaReference::previous_global;
        else
            throw ConfigError("--delta expects 'post' or 'previous'");
    }
    if (separation) options.separation_factor = *separation;

    if (all_classes) {
        const fs::path out = out_path.empty() ? dir : fs::path(out_path);
        fs::create_directories(out);
        const auto reports = evaluate_updates_all_classes(run, options);
        for (const auto& report : reports) {
            save_defense_csv(report, out / ("defense_c" + std::to_string(report.source_class) +
                                            ".csv"));
            std::cout << "class " << report.source_class << ": "
                      << (report.attack_detected ? "attack detected, flagged" : "no attack");
            for (int id : report.flagged) std::cout << " " << id;
            std::cout << "\n";
        }
        return kExitOk;
    }

    const int src = source_class ? *source_class : stored.federation.source_class;
    const DefenseReport report = evaluate_updates(run, src, options);
    const fs::path out = out_path.empty() ? dir / "defense.csv" : fs::path(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_defense_csv(report, out);
    save_blacklist(report.flagged, dir / "blacklist.txt");

    std::cout << "attack_detected=" << (report.attack_detected ? 1 : 0) << "\n";
    std::cout << "flagged=";
    for (std::size_t i = 0; i < report.flagged.size(); ++i)
        std::cout << (i ? "," : "") << report.flagged[i];
    std::cout << "\n";
    if (const auto balanced = defense_balanced_accuracy(report.flagged, run.malicious_ids,
                                                        stored.federation.participant_count))
        std::cout << "balanced_accuracy=" << format_double(*balanced) << "\n";
    std::cout << "defense written to " << out.string() << "\n";
    return kExitOk;
}

int report_command(const std::string& sweep_dir, const std::string& out_dir) {
    const fs::path out = out_dir.empty() ? fs::path(sweep_dir) / "report" : fs::path(out_dir);
    export_report(sweep_dir, out);
    std::cout << "report written to " << out.string() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated-learning label-flip poisoning simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    bool no_baseline = false, no_defense = false, no_updates = false;
    auto* run = app.add_subcommand("run", "Run one configured federation");
    run->add_option("--config", config_path, "run config file")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--seed", seed, "override all role seeds from one value");
    run->add_flag("--no-baseline", no_baseline, "skip the matched honest reference run");
    run->add_flag("--no-defense", no_defense, "skip the update-fingerprint defense");
    run->add_flag("--no-updates", no_updates, "skip persisting per-round update logs");

    std::string preset_name, preset_path, sweep_out;
    int workers = 1;
    std::optional<std::uint64_t> sweep_seed;
    std::optional<int> repeats;
    auto* sweep = app.add_subcommand("sweep", "Run a preset experiment grid");
    auto* name_opt =
        sweep->add_option("--preset", preset_name,
                          "built-in preset (" + [] {
                              std::string names;
                              for (const auto& n : list_presets())
                                  names += (names.empty() ? "" : ", ") + n;
                              return names;
                          }() + ")");
    auto* file_opt = sweep->add_option("--preset-file", preset_path, "preset config file");
    name_opt->excludes(file_opt);
    sweep->add_option("--out", sweep_out, "sweep output directory")->required();
    sweep->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    sweep->add_option("--seed", sweep_seed, "override the preset base seed");
    sweep->add_option("--repeats", repeats, "override the preset repeat count")
        ->check(CLI::PositiveNumber);

    std::string run_dir, rounds, delta, defense_out;
    std::optional<int> source_class;
    std::optional<double> separation;
    bool all_classes = false;
    auto* defend = app.add_subcommand("defend", "Run the defense on a recorded run");
    defend->add_option("--run", run_dir, "recorded run directory")->required();
    auto* class_opt = defend->add_option("--source-class", source_class,
                                         "class whose output parameters are fingerprinted");
    auto* all_opt = defend->add_flag("--all-classes", all_classes,
                                     "sweep every class when the attacked one is unknown");
    class_opt->excludes(all_opt);
    defend->add_option("--rounds", rounds, "fingerprint window lo:hi (hi may be omitted)");
    defend->add_option("--delta", delta, "delta reference: post | previous");
    defend->add_option("--separation", separation, "cluster separation gate factor");
    defend->add_option("--out", defense_out, "defense CSV path (or directory with --all-classes)");

    std::string sweep_dir, report_out;
    auto* report = app.add_subcommand("report", "Re-derive summary tables from a sweep");
    report->add_option("--sweep", sweep_dir, "sweep root directory")->required();
    report->add_option("--out", report_out, "report output directory (default <sweep>/report)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run->parsed())
            return run_command(config_path, out_dir, seed, no_baseline, no_defense, no_updates);
        if (sweep->parsed()) {
            if (preset_name.empty() && preset_path.empty())
                throw ConfigError("sweep needs --preset or --preset-file");
            return sweep_command(preset_name, preset_path, sweep_out, workers, sweep_seed,
                                 repeats);
        }
        if (defend->parsed())
            return defend_command(run_dir, source_class, all_classes, rounds, delta, separation,
                                  defense_out);
        if (report->parsed()) return report_command(sweep_dir, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
