#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "flsim/experiment.hpp"
#include "flsim/io.hpp"

using namespace flsim;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "flsim_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

RunConfig small_config() {
    RunConfig cfg;
    cfg.federation.participant_count = 10;
    cfg.federation.participants_per_round = 3;
    cfg.federation.round_count = 8;
    cfg.federation.malicious_percent = 20.0;
    cfg.federation.attack_window = AttackWindow::full(8);
    cfg.federation.source_class = 1;
    cfg.federation.target_class = 0;
    cfg.federation.hidden_layers = {6};
    cfg.federation.batch_size = 5;
    cfg.data.synthetic.classes = 3;
    cfg.data.synthetic.features = 4;
    cfg.data.synthetic.confusable_a = 1;
    cfg.data.synthetic.confusable_b = 0;
    cfg.data.synthetic.train_per_class = 60;
    cfg.data.synthetic.test_per_class = 20;
    cfg.data.synthetic.center_scale = 8.0;
    cfg.data.synthetic.stddev = 1.5;
    cfg.data.synthetic.seed = 5;
    cfg.defense.round_lo = 2;
    return cfg;
}

bool same_series(const MetricsSeries& a, const MetricsSeries& b) {
    if (a.accuracy != b.accuracy) return false;
    if (a.malicious_selected != b.malicious_selected) return false;
    if (a.recalls.size() != b.recalls.size()) return false;
    for (std::size_t r = 0; r < a.recalls.size(); ++r) {
        if (a.recalls[r].size() != b.recalls[r].size()) return false;
        for (std::size_t c = 0; c < a.recalls[r].size(); ++c) {
            const double x = a.recalls[r][c], y = b.recalls[r][c];
            if (std::isnan(x) != std::isnan(y)) return false;
            if (!std::isnan(x) && x != y) return false;
        }
    }
    return true;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& line : split_fields(read_text_file(path.string()), '\n')) {
        const std::string clean = strip_cr(line);
        if (clean.empty()) continue;
        rows.push_back(split_fields(clean, ','));
    }
    return rows;
}

}  // namespace

TEST_SUITE("experiment") {
    TEST_CASE("synthetic datasets have the configured shape and are reproducible") {
        DataConfig data;
        data.synthetic.classes = 4;
        data.synthetic.features = 5;
        data.synthetic.train_per_class = 7;
        data.synthetic.test_per_class = 3;
        data.synthetic.seed = 21;
        const DatasetPair a = build_datasets(data);
        CHECK(a.train.size() == 28);
        CHECK(a.test.size() == 12);
        CHECK(a.train.feature_dim() == 5);
        CHECK(a.train.class_count == 4);
        CHECK(a.test.class_count == 4);
        std::map<int, int> counts;
        for (int label : a.train.labels) counts[label] += 1;
        for (int c = 0; c < 4; ++c) CHECK(counts[c] == 7);

        const DatasetPair b = build_datasets(data);
        CHECK(a.train.features == b.train.features);
        CHECK(a.train.labels == b.train.labels);
        CHECK(a.test.features == b.test.features);
        // train and test are distinct draws
        CHECK(a.train.features != a.test.features);
    }

    TEST_CASE("csv datasets are loaded with a shared class count") {
        const fs::path dir = temp_dir("csv_pair");
        write_text_file((dir / "train.csv").string(), "0.5,1.5,0\n-1,2,1\n3,4,1\n");
        write_text_file((dir / "test.csv").string(), "1,1,2\n0,0,0\n");
        DataConfig data;
        data.kind = DataConfig::Kind::csv;
        data.csv.train_path = (dir / "train.csv").string();
        data.csv.test_path = (dir / "test.csv").string();
        const DatasetPair pair = build_datasets(data);
        CHECK(pair.train.size() == 3);
        CHECK(pair.test.size() == 2);
        CHECK(pair.train.class_count == 3);  // the test split introduces class 2
        CHECK(pair.test.class_count == 3);
        CHECK(pair.train.features.at(0, 1) == 1.5);
        CHECK(pair.test.labels == std::vector<int>{2, 0});
    }

    TEST_CASE("balanced accuracy judges each side separately") {
        CHECK_FALSE(defense_balanced_accuracy({1}, {}, 10).has_value());
        CHECK(*defense_balanced_accuracy({1, 3}, {1, 3}, 10) == 100.0);
        CHECK(*defense_balanced_accuracy({}, {1, 3}, 10) == 50.0);
        CHECK(*defense_balanced_accuracy({1}, {1, 3}, 10) == 75.0);
        CHECK(*defense_balanced_accuracy({0}, {1}, 4) ==
              doctest::Approx(100.0 / 3.0).epsilon(1e-12));
        // no honest participants: plain detection rate
        CHECK(*defense_balanced_accuracy({0}, {0, 1}, 2) == 50.0);
    }

    TEST_CASE("metrics csv round-trips the series exactly") {
        const RunConfig cfg = small_config();
        const DatasetPair data = build_datasets(cfg.data);
        const RunResult run = run_training(cfg.federation, data.train, data.test);
        const fs::path dir = temp_dir("metrics_roundtrip");
        save_metrics_csv(run, dir / "metrics.csv");
        const MetricsSeries loaded = load_metrics_csv(dir / "metrics.csv");
        CHECK(same_series(loaded, run.series()));
    }

    TEST_CASE("parameter dumps round-trip bitwise") {
        const RunConfig cfg = small_config();
        const DatasetPair data = build_datasets(cfg.data);
        const RunResult run = run_training(cfg.federation, data.train, data.test);
        const fs::path dir = temp_dir("params_roundtrip");
        save_params_flat(run.final_params(), dir / "params.csv");
        const ParameterVector loaded = load_params_flat(run.arch, dir / "params.csv");
        CHECK(loaded == run.final_params());
    }

    TEST_CASE("blacklists round-trip including the empty one") {
        const fs::path dir = temp_dir("blacklist_roundtrip");
        save_blacklist({2, 5, 7}, dir / "some.txt");
        CHECK(load_blacklist(dir / "some.txt") == std::vector<int>{2, 5, 7});
        save_blacklist({}, dir / "none.txt");
        CHECK(load_blacklist(dir / "none.txt").empty());
    }

    TEST_CASE("run artifacts land on disk with a faithful summary") {
        const RunConfig cfg = small_config();
        const fs::path dir = temp_dir("run_artifacts");
        const RunArtifact artifact = execute_run(cfg, dir, RunOptions{});

        for (const char* name :
             {"config.txt", "seeds.txt", "metrics.csv", "params_final.csv", "params_init.csv",
              "globals.csv", "updates.csv", "arch.txt", "malicious.txt", "summary.txt",
              "defense.csv", "blacklist.txt"})
            CHECK(fs::exists(dir / name));
        CHECK(fs::exists(dir / "baseline" / "config.txt"));
        CHECK(fs::exists(dir / "baseline" / "metrics.csv"));
        CHECK(fs::exists(dir / "baseline" / "params_final.csv"));

        const RunSummary& s = artifact.summary;
        CHECK(s.final_accuracy >= 0.0);
        CHECK(s.final_accuracy <= 100.0);
        CHECK(s.malicious_selected_final == artifact.run.rounds.back().malicious_selected);
        REQUIRE(s.baseline_final_recall_source.has_value());
        REQUIRE(s.recall_loss_final.has_value());
        CHECK(*s.recall_loss_final == *s.baseline_final_recall_source - s.final_recall_source);
        REQUIRE(s.defense_detected.has_value());
        CHECK(std::is_sorted(s.defense_flagged.begin(), s.defense_flagged.end()));
        for (int id : s.defense_flagged) {
            CHECK(id >= 0);
            CHECK(id < cfg.federation.participant_count);
        }
        // the config snapshot reproduces the run configuration
        CHECK(parse_config_file((dir / "config.txt").string()) == cfg);
    }

    TEST_CASE("options switch the optional artifacts off") {
        RunConfig cfg = small_config();
        RunOptions options;
        options.with_baseline = false;
        options.with_defense = false;
        options.save_updates = false;
        const fs::path dir = temp_dir("run_bare");
        const RunArtifact artifact = execute_run(cfg, dir, options);
        CHECK_FALSE(fs::exists(dir / "baseline"));
        CHECK_FALSE(fs::exists(dir / "defense.csv"));
        CHECK_FALSE(fs::exists(dir / "updates.csv"));
        CHECK_FALSE(fs::exists(dir / "globals.csv"));
        CHECK_FALSE(artifact.baseline.has_value());
        CHECK_FALSE(artifact.defense.has_value());
        CHECK_FALSE(artifact.summary.recall_loss_final.has_value());
        CHECK_FALSE(artifact.summary.defense_detected.has_value());
    }

    TEST_CASE("the update log reconstructs the run for the defense") {
        const RunConfig cfg = small_config();
        const fs::path dir = temp_dir("update_log");
        const RunArtifact artifact = execute_run(cfg, dir, RunOptions{});
        const RunResult loaded = load_update_log(dir);

        CHECK(loaded.arch == artifact.run.arch);
        CHECK(loaded.malicious_ids == artifact.run.malicious_ids);
        CHECK(loaded.initial_params == artifact.run.initial_params);
        REQUIRE(loaded.globals.size() == artifact.run.globals.size());
        for (std::size_t r = 0; r < loaded.globals.size(); ++r)
            CHECK(loaded.globals[r] == artifact.run.globals[r]);
        REQUIRE(loaded.updates.size() == artifact.run.updates.size());
        for (std::size_t r = 0; r < loaded.updates.size(); ++r) {
            REQUIRE(loaded.updates[r].size() == artifact.run.updates[r].size());
            for (std::size_t i = 0; i < loaded.updates[r].size(); ++i) {
                CHECK(loaded.updates[r][i].first == artifact.run.updates[r][i].first);
                CHECK(loaded.updates[r][i].second == artifact.run.updates[r][i].second);
            }
        }

        // the reloaded log supports the same defense verdict
        REQUIRE(artifact.defense.has_value());
        const DefenseReport replay = evaluate_updates(loaded, cfg.federation.source_class, cfg.defense);
        CHECK(replay.attack_detected == artifact.defense->attack_detected);
        CHECK(replay.flagged == artifact.defense->flagged);
    }

    TEST_CASE("reruns write byte-identical artifacts") {
        const RunConfig cfg = small_config();
        const fs::path a = temp_dir("rerun_a");
        const fs::path b = temp_dir("rerun_b");
        execute_run(cfg, a, RunOptions{});
        execute_run(cfg, b, RunOptions{});
        for (const char* name :
             {"config.txt", "metrics.csv", "params_final.csv", "summary.txt", "defense.csv",
              "updates.csv", "globals.csv"})
            CHECK(read_text_file((a / name).string()) == read_text_file((b / name).string()));
    }

    TEST_CASE("cell tags are filesystem-safe and stable") {
        CHECK(CellCoordinate{20.0, "uniform", "late", 2}.tag() == "m20_auniform_wlate_rep2");
        CHECK(CellCoordinate{12.5, "0.6", "1:74", 0}.tag() == "m12.5_a0.6_w1-74_rep0");
    }

    TEST_CASE("a small sweep writes one artifact per cell plus rollups") {
        ExperimentPreset preset;
        preset.base = small_config();
        preset.m_values = {0.0, 20.0};
        preset.repeats = 2;
        preset.base_seed = 9;
        const fs::path root = temp_dir("sweep_small");
        const SweepResult result = run_sweep(preset, root);

        REQUIRE(result.cells.size() == 4);
        CHECK(fs::exists(root / "preset.txt"));
        for (const char* tag : {"m0_auniform_wfull_rep0", "m0_auniform_wfull_rep1",
                                "m20_auniform_wfull_rep0", "m20_auniform_wfull_rep1"}) {
            CHECK(fs::exists(root / "cells" / tag / "summary.txt"));
            CHECK(fs::exists(root / "cells" / tag / "metrics.csv"));
        }

        const auto cells_csv = read_csv(root / "sweep_cells.csv");
        REQUIRE(cells_csv.size() == 5);
        CHECK(cells_csv[1][0] == "m0_auniform_wfull_rep0");
        CHECK(cells_csv[4][0] == "m20_auniform_wfull_rep1");
        // the non-poisoned cells lose nothing against their own baseline
        const std::size_t loss_col = 9;
        CHECK(cells_csv[0][loss_col] == "recall_loss_final");
        CHECK(cells_csv[1][loss_col] == "0");
        CHECK(cells_csv[2][loss_col] == "0");

        const auto summary_csv = read_csv(root / "sweep_summary.csv");
        REQUIRE(summary_csv.size() == 3);  // header + one group per m
        CHECK(summary_csv[1][0] == "0");
        CHECK(summary_csv[2][0] == "20");
        CHECK(summary_csv[1][3] == "2");  // repeats per group
    }

    TEST_CASE("sweeps are deterministic and worker-count independent") {
        ExperimentPreset preset;
        preset.base = small_config();
        preset.m_values = {0.0, 20.0};
        preset.repeats = 2;
        preset.base_seed = 9;
        const fs::path a = temp_dir("sweep_det_a");
        const fs::path b = temp_dir("sweep_det_b");
        const fs::path c = temp_dir("sweep_det_c");
        run_sweep(preset, a, 1);
        run_sweep(preset, b, 1);
        run_sweep(preset, c, 3);
        for (const char* name : {"sweep_cells.csv", "sweep_summary.csv", "preset.txt"}) {
            CHECK(read_text_file((a / name).string()) == read_text_file((b / name).string()));
            CHECK(read_text_file((a / name).string()) == read_text_file((c / name).string()));
        }
        CHECK(read_text_file((a / "cells/m20_auniform_wfull_rep1/metrics.csv").string()) ==
              read_text_file((c / "cells/m20_auniform_wfull_rep1/metrics.csv").string()));
    }

    TEST_CASE("reports recompute the rollups from the recorded cells") {
        ExperimentPreset preset;
        preset.base = small_config();
        preset.m_values = {0.0, 20.0};
        preset.repeats = 2;
        preset.base_seed = 9;
        const fs::path root = temp_dir("sweep_report");
        run_sweep(preset, root);
        export_report(root, root / "report");

        for (const char* name : {"recall_loss_grid.csv", "recall_change_by_class.csv",
                                 "final_round_split.csv", "consecutive_deltas.csv",
                                 "defense_summary.csv"})
            CHECK(fs::exists(root / "report" / name));

        // grid means must equal the mean of the recorded per-cell losses
        const auto cells_csv = read_csv(root / "sweep_cells.csv");
        std::map<std::string, std::vector<double>> losses_by_m;
        for (std::size_t i = 1; i < cells_csv.size(); ++i)
            losses_by_m[cells_csv[i][1]].push_back(parse_double_field(cells_csv[i][9], "loss"));

        const auto grid = read_csv(root / "report" / "recall_loss_grid.csv");
        REQUIRE(grid.size() == 3);
        CHECK(grid[0][7] == "recall_loss_mean");
        for (std::size_t i = 1; i < grid.size(); ++i) {
            const auto& expect = losses_by_m.at(grid[i][4]);
            const double mean = (expect[0] + expect[1]) / 2.0;
            CHECK(parse_double_field(grid[i][7], "grid mean") ==
                  doctest::Approx(mean).epsilon(1e-12));
        }

        // the m=0 group's per-class deltas are exactly zero
        const auto by_class = read_csv(root / "report" / "recall_change_by_class.csv");
        REQUIRE(by_class.size() == 3);
        const std::size_t m_col = 2;
        for (std::size_t i = 1; i < by_class.size(); ++i) {
            if (by_class[i][m_col] != "0") continue;
            CHECK(by_class[i][4] == "0");
            CHECK(by_class[i][5] == "0");
            CHECK(by_class[i][6] == "0");
            CHECK(by_class[i][7] == "0");
        }

        const auto split = read_csv(root / "report" / "final_round_split.csv");
        CHECK(split.size() >= 2);
        const auto defense = read_csv(root / "report" / "defense_summary.csv");
        CHECK(defense.size() >= 2);
    }
}
