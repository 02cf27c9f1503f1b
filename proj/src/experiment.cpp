#include "flsim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "flsim/io.hpp"
#include "flsim/metrics.hpp"
#include "flsim/rng.hpp"

namespace fs = std::filesystem;

namespace flsim {

DatasetPair build_datasets(const DataConfig& data) {
    DatasetPair pair;
    if (data.kind == DataConfig::Kind::synthetic) {
        const auto& s = data.synthetic;
        // One set of class centers for both splits; only the sample noise
        // differs, so test measures generalization on the same mixture.
        SyntheticSpec spec;
        spec.class_count = s.classes;
        spec.cluster_stddev = s.stddev;
        spec.class_centers = Matrix(static_cast<std::size_t>(s.classes),
                                    static_cast<std::size_t>(s.features));
        Rng rng = make_rng(mix_seed(s.seed, hash_tag("dataset-centers")));
        for (auto& v : spec.class_centers.data) v = (2.0 * uniform01(rng) - 1.0) * s.center_scale;
        const bool pair_valid = s.confusable_a >= 0 && s.confusable_a < s.classes &&
                                s.confusable_b >= 0 && s.confusable_b < s.classes &&
                                s.confusable_a != s.confusable_b;
        if (s.confusable_gap >= 0.0 && pair_valid) {
            // Re-place center b on a random direction at a fixed distance from
            // center a; the pair's difficulty is then set by gap/stddev alone.
            std::vector<double> direction(static_cast<std::size_t>(s.features));
            double norm2 = 0.0;
            for (auto& x : direction) {
                x = normal01(rng);
                norm2 += x * x;
            }
            const double inv = 1.0 / std::sqrt(norm2);
            for (int j = 0; j < s.features; ++j)
                spec.class_centers.at(s.confusable_b, j) =
                    spec.class_centers.at(s.confusable_a, j) + s.confusable_gap * inv * direction[j];
        }

        spec.examples_per_class = s.train_per_class;
        spec.seed = mix_seed(s.seed, hash_tag("train-split"));
        pair.train = generate_synthetic(spec);

        spec.examples_per_class = s.test_per_class;
        spec.seed = mix_seed(s.seed, hash_tag("test-split"));
        pair.test = generate_synthetic(spec);
    } else {
        pair.train = load_csv(data.csv.train_path);
        pair.test = load_csv(data.csv.test_path);
        if (pair.train.feature_dim() != pair.test.feature_dim())
            throw std::runtime_error("datasets: train and test feature widths differ");
        const int classes = std::max(pair.train.class_count, pair.test.class_count);
        pair.train.class_count = classes;
        pair.test.class_count = classes;
    }
    return pair;
}

std::optional<double> defense_balanced_accuracy(const std::vector<int>& flagged,
                                                const std::vector<int>& malicious_ids,
                                                int participant_count) {
    if (malicious_ids.empty()) return std::nullopt;
    auto is_malicious = [&](int id) {
        return std::binary_search(malicious_ids.begin(), malicious_ids.end(), id);
    };
    int tp = 0, fp = 0;
    for (int id : flagged)
        (is_malicious(id) ? tp : fp) += 1;
    const int positives = static_cast<int>(malicious_ids.size());
    const int negatives = participant_count - positives;
    const double tpr = static_cast<double>(tp) / positives;
    if (negatives == 0) return 100.0 * tpr;
    const double tnr = static_cast<double>(negatives - fp) / negatives;
    return 100.0 * (tpr + tnr) / 2.0;
}

// --- run directory pieces ---------------------------------------------------

void save_metrics_csv(const RunResult& run, const fs::path& path) {
    std::ostringstream out;
    const int classes = run.arch.class_count();
    out << "round,selected,malicious_selected,accuracy";
    for (int c = 0; c < classes; ++c) out << ",recall_" << c;
    out << "\n";
    for (const auto& rec : run.rounds) {
        out << rec.round << ",";
        for (std::size_t i = 0; i < rec.selected.size(); ++i)
            out << (i ? ";" : "") << rec.selected[i];
        out << "," << rec.malicious_selected << "," << format_double(rec.accuracy);
        for (double r : rec.recalls) out << "," << format_double(r);
        out << "\n";
    }
    write_text_file(path.string(), out.str());
}

MetricsSeries load_metrics_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics csv: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty metrics csv: " + path.string());
    const auto header = split_fields(strip_cr(line), ',');
    if (header.size() < 5 || header[0] != "round")
        throw std::runtime_error("unexpected metrics csv header: " + path.string());
    const std::size_t classes = header.size() - 4;

    MetricsSeries series;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_fields(line, ',');
        if (fields.size() != header.size())
            throw std::runtime_error("ragged metrics csv row: " + path.string());
        const std::string ctx = path.string();
        series.malicious_selected.push_back(static_cast<int>(parse_int_field(fields[2], ctx)));
        series.accuracy.push_back(parse_double_field(fields[3], ctx));
        std::vector<double> recalls(classes);
        for (std::size_t c = 0; c < classes; ++c)
            recalls[c] = parse_double_field(fields[4 + c], ctx);
        series.recalls.push_back(std::move(recalls));
    }
    series.validate();
    return series;
}

void save_params_flat(const ParameterVector& params, const fs::path& path) {
    std::ostringstream out;
    for (double v : params.flat()) out << format_double(v) << "\n";
    write_text_file(path.string(), out.str());
}

ParameterVector load_params_flat(const Architecture& arch, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open params file: " + path.string());
    ParameterVector params(arch);
    auto flat = params.flat();
    std::string line;
    std::size_t i = 0;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty()) continue;
        if (i >= flat.size()) throw std::runtime_error("too many values in " + path.string());
        flat[i++] = parse_double_field(line, path.string());
    }
    if (i != flat.size()) throw std::runtime_error("too few values in " + path.string());
    return params;
}

namespace {

void append_param_row(std::ostringstream& out, const ParameterVector& params) {
    for (double v : params.flat()) out << "," << format_double(v);
    out << "\n";
}

}  // namespace

void save_update_log(const RunResult& run, const fs::path& dir) {
    {
        std::ostringstream out;
        for (std::size_t i = 0; i < run.arch.layer_sizes.size(); ++i)
            out << (i ? "," : "") << run.arch.layer_sizes[i];
        out << "\n" << activation_name(run.arch.activation) << "\n";
        write_text_file((dir / "arch.txt").string(), out.str());
    }
    save_params_flat(run.initial_params, dir / "params_init.csv");
    {
        std::ostringstream out;
        for (std::size_t r = 0; r < run.globals.size(); ++r) {
            out << (r + 1);
            append_param_row(out, run.globals[r]);
        }
        write_text_file((dir / "globals.csv").string(), out.str());
    }
    {
        std::ostringstream out;
        for (std::size_t r = 0; r < run.updates.size(); ++r)
            for (const auto& [id, params] : run.updates[r]) {
                out << (r + 1) << "," << id;
                append_param_row(out, params);
            }
        write_text_file((dir / "updates.csv").string(), out.str());
    }
    {
        std::ostringstream out;
        for (int id : run.malicious_ids) out << id << "\n";
        write_text_file((dir / "malicious.txt").string(), out.str());
    }
}

namespace {

Architecture load_arch(const fs::path& dir) {
    std::ifstream in(dir / "arch.txt");
    if (!in) throw IoError("cannot open " + (dir / "arch.txt").string());
    std::string sizes_line, act_line;
    if (!std::getline(in, sizes_line)) throw std::runtime_error("arch.txt: missing layer sizes");
    Architecture arch;
    for (const auto& f : split_fields(strip_cr(sizes_line), ','))
        arch.layer_sizes.push_back(static_cast<int>(parse_int_field(f, "arch.txt")));
    if (std::getline(in, act_line)) {
        act_line = strip_cr(act_line);
        if (!act_line.empty()) arch.activation = activation_from_name(act_line);
    }
    arch.validate();
    return arch;
}

ParameterVector parse_param_fields(const Architecture& arch,
                                   const std::vector<std::string>& fields, std::size_t start,
                                   const std::string& ctx) {
    ParameterVector params(arch);
    auto flat = params.flat();
    if (fields.size() - start != flat.size())
        throw std::runtime_error(ctx + ": expected " + std::to_string(flat.size()) +
                                 " parameter values");
    for (std::size_t i = 0; i < flat.size(); ++i)
        flat[i] = parse_double_field(fields[start + i], ctx);
    return params;
}

}  // namespace

RunResult load_update_log(const fs::path& dir) {
    RunResult run;
    run.config = parse_config_file((dir / "config.txt").string()).federation;
    run.arch = load_arch(dir);
    run.initial_params = load_params_flat(run.arch, dir / "params_init.csv");

    {
        std::ifstream in(dir / "globals.csv");
        if (!in) throw IoError("cannot open " + (dir / "globals.csv").string());
        std::string line;
        while (std::getline(in, line)) {
            line = strip_cr(line);
            if (line.empty()) continue;
            const auto fields = split_fields(line, ',');
            const int r = static_cast<int>(parse_int_field(fields[0], "globals.csv"));
            if (r != static_cast<int>(run.globals.size()) + 1)
                throw std::runtime_error("globals.csv: rounds out of order");
            run.globals.push_back(parse_param_fields(run.arch, fields, 1, "globals.csv"));
        }
    }
    run.updates.assign(run.globals.size(), {});
    {
        std::ifstream in(dir / "updates.csv");
        if (!in) throw IoError("cannot open " + (dir / "updates.csv").string());
        std::string line;
        while (std::getline(in, line)) {
            line = strip_cr(line);
            if (line.empty()) continue;
            const auto fields = split_fields(line, ',');
            const int r = static_cast<int>(parse_int_field(fields[0], "updates.csv"));
            const int id = static_cast<int>(parse_int_field(fields[1], "updates.csv"));
            if (r < 1 || r > static_cast<int>(run.updates.size()))
                throw std::runtime_error("updates.csv: round outside the recorded range");
            run.updates[static_cast<std::size_t>(r - 1)].emplace_back(
                id, parse_param_fields(run.arch, fields, 2, "updates.csv"));
        }
        for (auto& round : run.updates)
            std::sort(round.begin(), round.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
    }
    if (fs::exists(dir / "malicious.txt")) {
        std::ifstream in(dir / "malicious.txt");
        std::string line;
        while (std::getline(in, line)) {
            line = strip_cr(line);
            if (!line.empty())
                run.malicious_ids.push_back(static_cast<int>(parse_int_field(line, "malicious.txt")));
        }
        std::sort(run.malicious_ids.begin(), run.malicious_ids.end());
    }
    return run;
}

void save_defense_csv(const DefenseReport& report, const fs::path& path) {
    std::ostringstream out;
    out << "participant,round,pc1,pc2,cluster,flagged\n";
    auto flagged = [&](int id) {
        return std::binary_search(report.flagged.begin(), report.flagged.end(), id);
    };
    for (std::size_t r = 0; r < report.labels.size(); ++r) {
        const auto& label = report.labels[r];
        out << label.participant << "," << label.round << ","
            << format_double(report.points.at(r, 0)) << ","
            << format_double(report.points.at(r, 1)) << "," << report.clusters[r] << ","
            << (flagged(label.participant) ? 1 : 0) << "\n";
    }
    write_text_file(path.string(), out.str());
}

void save_blacklist(const std::vector<int>& ids, const fs::path& path) {
    std::ostringstream out;
    for (int id : ids) out << id << "\n";
    write_text_file(path.string(), out.str());
}

std::vector<int> load_blacklist(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open blacklist: " + path.string());
    std::vector<int> ids;
    std::string line;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (!line.empty()) ids.push_back(static_cast<int>(parse_int_field(line, path.string())));
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

// --- single run --------------------------------------------------------------

namespace {

void save_seed_manifest(const RunConfig& cfg, const fs::path& path) {
    std::ostringstream out;
    out << "seed_designation=" << cfg.federation.seeds.designation << "\n";
    out << "seed_selection=" << cfg.federation.seeds.selection << "\n";
    out << "seed_init=" << cfg.federation.seeds.init << "\n";
    out << "seed_shuffle=" << cfg.federation.seeds.shuffle << "\n";
    if (cfg.data.kind == DataConfig::Kind::synthetic)
        out << "synthetic_seed=" << cfg.data.synthetic.seed << "\n";
    write_text_file(path.string(), out.str());
}

void save_summary(const RunSummary& s, const fs::path& path) {
    std::ostringstream out;
    out << "final_accuracy=" << format_double(s.final_accuracy) << "\n";
    out << "final_recall_source=" << format_double(s.final_recall_source) << "\n";
    out << "window_mean_recall_source=" << format_double(s.window_mean_recall_source) << "\n";
    if (s.baseline_final_recall_source)
        out << "baseline_final_recall_source=" << format_double(*s.baseline_final_recall_source)
            << "\n";
    if (s.recall_loss_final)
        out << "recall_loss_final=" << format_double(*s.recall_loss_final) << "\n";
    if (s.recall_loss_window_mean)
        out << "recall_loss_window_mean=" << format_double(*s.recall_loss_window_mean) << "\n";
    if (s.baseline_miscount_source_target)
        out << "baseline_miscount_source_target=" << *s.baseline_miscount_source_target << "\n";
    out << "malicious_selected_final=" << s.malicious_selected_final << "\n";
    if (s.defense_detected) out << "defense_detected=" << (*s.defense_detected ? 1 : 0) << "\n";
    if (s.defense_balanced_accuracy)
        out << "defense_balanced_accuracy=" << format_double(*s.defense_balanced_accuracy) << "\n";
    if (s.defense_detected) {
        out << "defense_flagged=";
        for (std::size_t i = 0; i < s.defense_flagged.size(); ++i)
            out << (i ? "," : "") << s.defense_flagged[i];
        out << "\n";
    }
    write_text_file(path.string(), out.str());
}

}  // namespace

RunArtifact execute_run(const RunConfig& config, const fs::path& dir, const RunOptions& options) {
    config.validate();
    const DatasetPair data = build_datasets(config.data);

    fs::create_directories(dir);
    RunArtifact artifact;
    artifact.dir = dir;
    artifact.config = config;
    artifact.run = run_training(config.federation, data.train, data.test);

    write_text_file((dir / "config.txt").string(), emit_config(config));
    save_seed_manifest(config, dir / "seeds.txt");
    save_metrics_csv(artifact.run, dir / "metrics.csv");
    save_params_flat(artifact.run.final_params(), dir / "params_final.csv");
    if (options.save_updates) save_update_log(artifact.run, dir);

    const MetricsSeries attacked = artifact.run.series();
    const int rounds = attacked.rounds();
    const int src = config.federation.source_class;
    const int tgt = config.federation.target_class;
    const AttackWindow& window = config.federation.attack_window;
    const int win_lo = window.empty() ? 1 : std::max(1, window.lo);
    const int win_hi = window.empty() ? rounds : std::min(rounds, window.hi);

    RunSummary& s = artifact.summary;
    s.final_accuracy = attacked.accuracy.back();
    s.final_recall_source = attacked.recall_at(rounds, src);
    {
        double sum = 0.0;
        for (int r = win_lo; r <= win_hi; ++r) sum += attacked.recall_at(r, src);
        s.window_mean_recall_source = sum / (win_hi - win_lo + 1);
    }
    s.malicious_selected_final = attacked.malicious_selected.back();

    if (options.with_baseline) {
        const bool attack_active = !window.empty() && !artifact.run.malicious_ids.empty();
        if (attack_active) {
            RunConfig baseline_cfg = config;
            baseline_cfg.federation.malicious_percent = 0.0;
            baseline_cfg.federation.attack_window = AttackWindow::none();
            const fs::path bdir = dir / "baseline";
            fs::create_directories(bdir);
            artifact.baseline =
                run_training(baseline_cfg.federation, data.train, data.test);
            write_text_file((bdir / "config.txt").string(), emit_config(baseline_cfg));
            save_metrics_csv(*artifact.baseline, bdir / "metrics.csv");
            save_params_flat(artifact.baseline->final_params(), bdir / "params_final.csv");
        } else {
            artifact.baseline = artifact.run;  // no attack ever ran; the run is its own reference
        }
        const MetricsSeries base = artifact.baseline->series();
        s.baseline_final_recall_source = base.recall_at(rounds, src);
        s.recall_loss_final = recall_loss_final(base, attacked, src);
        s.recall_loss_window_mean = recall_loss_window_mean(base, attacked, src, win_lo, win_hi);
        const ConfusionMatrix cm = confusion(artifact.baseline->final_params(), data.test);
        s.baseline_miscount_source_target = baseline_miscount(cm, src, tgt);
    }

    if (options.with_defense) {
        artifact.defense = evaluate_updates(artifact.run, src, config.defense);
        save_defense_csv(*artifact.defense, dir / "defense.csv");
        save_blacklist(artifact.defense->flagged, dir / "blacklist.txt");
        s.defense_detected = artifact.defense->attack_detected;
        s.defense_flagged = artifact.defense->flagged;
        s.defense_balanced_accuracy = defense_balanced_accuracy(
            artifact.defense->flagged, artifact.run.malicious_ids,
            config.federation.participant_count);
    }

    save_summary(s, dir / "summary.txt");
    return artifact;
}

// --- sweeps ------------------------------------------------------------------

namespace {

std::string sanitize(std::string v) {
    for (char& c : v)
        if (c == ':') c = '-';
    return v;
}

}  // namespace

std::string CellCoordinate::tag() const {
    return "m" + format_double(m) + "_a" + sanitize(alpha) + "_w" + sanitize(window) + "_rep" +
           std::to_string(repeat);
}

namespace {

std::vector<CellCoordinate> grid(const ExperimentPreset& preset) {
    const auto& fed = preset.base.federation;
    std::vector<double> ms = preset.m_values;
    if (ms.empty()) ms = {fed.malicious_percent};
    std::vector<std::string> alphas = preset.alpha_values;
    if (alphas.empty()) alphas = {fed.alpha ? format_double(*fed.alpha) : "uniform"};
    std::vector<std::string> windows = preset.window_values;
    if (windows.empty()) windows = {window_label(fed.attack_window, fed.round_count)};

    std::vector<CellCoordinate> cells;
    for (double m : ms)
        for (const auto& a : alphas)
            for (const auto& w : windows)
                for (int rep = 0; rep < preset.repeats; ++rep)
                    cells.push_back({m, a, w, rep});
    return cells;
}

RunConfig cell_config(const ExperimentPreset& preset, const CellCoordinate& cell) {
    RunConfig cfg = preset.base;
    cfg.federation.malicious_percent = cell.m;
    if (cell.alpha == "uniform")
        cfg.federation.alpha.reset();
    else
        cfg.federation.alpha = parse_double_field(cell.alpha, "sweep alpha");
    cfg.federation.attack_window = resolve_window(cell.window, cfg.federation.round_count);

    const std::string tag = cell.tag();
    cfg.federation.seeds.designation = mix_seed(preset.base_seed, hash_tag(tag + "|designation"));
    cfg.federation.seeds.selection = mix_seed(preset.base_seed, hash_tag(tag + "|selection"));
    cfg.federation.seeds.init = mix_seed(preset.base_seed, hash_tag(tag + "|init"));
    cfg.federation.seeds.shuffle = mix_seed(preset.base_seed, hash_tag(tag + "|shuffle"));
    // One dataset for the whole sweep so cells are comparable.
    if (cfg.data.kind == DataConfig::Kind::synthetic)
        cfg.data.synthetic.seed = mix_seed(preset.base_seed, hash_tag("dataset"));
    cfg.validate();
    return cfg;
}

std::string opt_field(const std::optional<double>& v) {
    return v ? format_double(*v) : "";
}

void write_cells_csv(const std::vector<CellRow>& cells, const fs::path& path) {
    std::ostringstream out;
    out << "tag,m,alpha,window,repeat,final_accuracy,final_recall_source,"
           "window_mean_recall_source,baseline_final_recall_source,recall_loss_final,"
           "recall_loss_window_mean,baseline_miscount,malicious_selected_final,"
           "defense_detected,defense_balanced_accuracy,defense_flagged_count\n";
    for (const auto& cell : cells) {
        const auto& s = cell.summary;
        out << cell.coordinate.tag() << "," << format_double(cell.coordinate.m) << ","
            << cell.coordinate.alpha << "," << cell.coordinate.window << ","
            << cell.coordinate.repeat << "," << format_double(s.final_accuracy) << ","
            << format_double(s.final_recall_source) << ","
            << format_double(s.window_mean_recall_source) << ","
            << opt_field(s.baseline_final_recall_source) << "," << opt_field(s.recall_loss_final)
            << "," << opt_field(s.recall_loss_window_mean) << ","
            << (s.baseline_miscount_source_target
                    ? std::to_string(*s.baseline_miscount_source_target)
                    : "")
            << "," << s.malicious_selected_final << ","
            << (s.defense_detected ? (*s.defense_detected ? "1" : "0") : "") << ","
            << opt_field(s.defense_balanced_accuracy) << "," << s.defense_flagged.size() << "\n";
    }
    write_text_file(path.string(), out.str());
}

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // sample stddev, 0 for a single value
    int count = 0;
};

Aggregate aggregate_values(const std::vector<double>& values) {
    Aggregate a;
    a.count = static_cast<int>(values.size());
    if (values.empty()) return a;
    for (double v : values) a.mean += v;
    a.mean /= a.count;
    if (a.count > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / (a.count - 1));
    }
    return a;
}

struct CoordinateKey {
    std::string m, alpha, window;
    auto operator<=>(const CoordinateKey&) const = default;
};

void write_sweep_summary(const std::vector<CellRow>& cells, const fs::path& path) {
    // Group repeats, preserving first-appearance order.
    std::vector<CoordinateKey> order;
    std::map<CoordinateKey, std::vector<const CellRow*>> groups;
    for (const auto& cell : cells) {
        CoordinateKey key{format_double(cell.coordinate.m), cell.coordinate.alpha,
                          cell.coordinate.window};
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&cell);
    }

    std::ostringstream out;
    out << "m,alpha,window,repeats,final_accuracy_mean,final_accuracy_std,"
           "final_recall_source_mean,final_recall_source_std,window_mean_recall_source_mean,"
           "window_mean_recall_source_std,recall_loss_final_mean,recall_loss_final_std,"
           "recall_loss_window_mean_mean,recall_loss_window_mean_std,baseline_miscount_mean,"
           "defense_detected_rate,defense_balanced_accuracy_mean,defense_flagged_count_mean\n";
    for (const auto& key : order) {
        const auto& rows = groups[key];
        auto gather = [&](auto&& pick) {
            std::vector<double> vals;
            for (const CellRow* row : rows) {
                const auto v = pick(row->summary);
                if (v) vals.push_back(*v);
            }
            return aggregate_values(vals);
        };
        const Aggregate acc = gather([](const RunSummary& s) { return std::optional(s.final_accuracy); });
        const Aggregate rec = gather([](const RunSummary& s) { return std::optional(s.final_recall_source); });
        const Aggregate wrec =
            gather([](const RunSummary& s) { return std::optional(s.window_mean_recall_source); });
        const Aggregate lossf = gather([](const RunSummary& s) { return s.recall_loss_final; });
        const Aggregate lossw = gather([](const RunSummary& s) { return s.recall_loss_window_mean; });
        const Aggregate miscount = gather([](const RunSummary& s) {
            return s.baseline_miscount_source_target
                       ? std::optional(static_cast<double>(*s.baseline_miscount_source_target))
                       : std::nullopt;
        });
        const Aggregate detected = gather([](const RunSummary& s) {
            return s.defense_detected ? std::optional(*s.defense_detected ? 1.0 : 0.0)
                                      : std::nullopt;
        });
        const Aggregate balacc = gather([](const RunSummary& s) { return s.defense_balanced_accuracy; });
        const Aggregate flags = gather([](const RunSummary& s) {
            return s.defense_detected ? std::optional(static_cast<double>(s.defense_flagged.size()))
                                      : std::nullopt;
        });

        out << key.m << "," << key.alpha << "," << key.window << "," << rows.size() << ","
            << format_double(acc.mean) << "," << format_double(acc.stddev) << ","
            << format_double(rec.mean) << "," << format_double(rec.stddev) << ","
            << format_double(wrec.mean) << "," << format_double(wrec.stddev) << ","
            << (lossf.count ? format_double(lossf.mean) : "") << ","
            << (lossf.count ? format_double(lossf.stddev) : "") << ","
            << (lossw.count ? format_double(lossw.mean) : "") << ","
            << (lossw.count ? format_double(lossw.stddev) : "") << ","
            << (miscount.count ? format_double(miscount.mean) : "") << ","
            << (detected.count ? format_double(detected.mean) : "") << ","
            << (balacc.count ? format_double(balacc.mean) : "") << ","
            << (flags.count ? format_double(flags.mean) : "") << "\n";
    }
    write_text_file(path.string(), out.str());
}

}  // namespace

SweepResult run_sweep(const ExperimentPreset& preset, const fs::path& root, int workers) {
    preset.validate();
    if (workers < 1) throw std::invalid_argument("run_sweep: workers must be at least 1");

    fs::create_directories(root);
    write_text_file((root / "preset.txt").string(), emit_preset(preset));

    const std::vector<CellCoordinate> cells = grid(preset);
    std::vector<CellRow> rows(cells.size());

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                const RunConfig cfg = cell_config(preset, cells[i]);
                const fs::path dir = root / "cells" / cells[i].tag();
                const RunArtifact artifact = execute_run(cfg, dir, RunOptions{});
                rows[i] = CellRow{cells[i], artifact.summary};
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) {
                    try {
                        std::throw_with_nested(
                            std::runtime_error("sweep cell '" + cells[i].tag() + "' failed"));
                    } catch (...) {
                        failure = std::current_exception();
                    }
                }
                return;
            }
        }
    };

    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        const int count = std::min<int>(workers, static_cast<int>(cells.size()));
        threads.reserve(static_cast<std::size_t>(count));
        for (int t = 0; t < count; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    write_cells_csv(rows, root / "sweep_cells.csv");
    write_sweep_summary(rows, root / "sweep_summary.csv");

    SweepResult result;
    result.root = root;
    result.preset = preset;
    result.cells = std::move(rows);
    return result;
}

// --- report ------------------------------------------------------------------

namespace {

struct LoadedCell {
    CellCoordinate coordinate;
    std::map<std::string, std::string> fields;  // column -> raw value
};

std::vector<LoadedCell> load_cells_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty " + path.string());
    const auto header = split_fields(strip_cr(line), ',');

    std::vector<LoadedCell> cells;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_fields(line, ',');
        if (fields.size() != header.size())
            throw std::runtime_error("ragged row in " + path.string());
        LoadedCell cell;
        for (std::size_t i = 0; i < header.size(); ++i) cell.fields[header[i]] = fields[i];
        cell.coordinate.m = parse_double_field(cell.fields.at("m"), "sweep_cells m");
        cell.coordinate.alpha = cell.fields.at("alpha");
        cell.coordinate.window = cell.fields.at("window");
        cell.coordinate.repeat =
            static_cast<int>(parse_int_field(cell.fields.at("repeat"), "sweep_cells repeat"));
        cells.push_back(std::move(cell));
    }
    if (cells.empty()) throw std::runtime_error("no cells recorded in " + path.string());
    return cells;
}

std::optional<double> opt_value(const LoadedCell& cell, const std::string& key) {
    const auto it = cell.fields.find(key);
    if (it == cell.fields.end() || it->second.empty()) return std::nullopt;
    return parse_double_field(it->second, "sweep_cells " + key);
}

}  // namespace

void export_report(const fs::path& sweep_root, const fs::path& out_dir) {
    const ExperimentPreset preset = parse_preset_file((sweep_root / "preset.txt").string());
    const std::vector<LoadedCell> cells = load_cells_csv(sweep_root / "sweep_cells.csv");
    fs::create_directories(out_dir);

    const int rounds = preset.base.federation.round_count;
    const int src = preset.base.federation.source_class;
    const int tgt = preset.base.federation.target_class;
    const bool final_reduction = preset.reduction == ExperimentPreset::Reduction::final_round;

    // Group cells by coordinate (all repeats together), keeping order.
    std::vector<CoordinateKey> order;
    std::map<CoordinateKey, std::vector<const LoadedCell*>> groups;
    for (const auto& cell : cells) {
        CoordinateKey key{format_double(cell.coordinate.m), cell.coordinate.alpha,
                          cell.coordinate.window};
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&cell);
    }

    // (a) recall-loss grid over the sweep coordinates.
    {
        std::ostringstream out;
        out << "source,target,window,alpha,m,repeats,baseline_miscount_mean,recall_loss_mean,"
               "recall_loss_std,reduction\n";
        for (const auto& key : order) {
            const auto& rows = groups[key];
            std::vector<double> losses, miscounts;
            for (const LoadedCell* cell : rows) {
                const auto loss = opt_value(
                    *cell, final_reduction ? "recall_loss_final" : "recall_loss_window_mean");
                if (loss) losses.push_back(*loss);
                const auto mc = opt_value(*cell, "baseline_miscount");
                if (mc) miscounts.push_back(*mc);
            }
            const Aggregate loss = aggregate_values(losses);
            const Aggregate mc = aggregate_values(miscounts);
            out << src << "," << tgt << "," << key.window << "," << key.alpha << "," << key.m
                << "," << rows.size() << "," << (mc.count ? format_double(mc.mean) : "") << ","
                << (loss.count ? format_double(loss.mean) : "") << ","
                << (loss.count ? format_double(loss.stddev) : "") << ","
                << (final_reduction ? "final_round" : "window_mean") << "\n";
        }
        write_text_file((out_dir / "recall_loss_grid.csv").string(), out.str());
    }

    // (b) per-class recall changes at the final round, against the matched
    // baseline, recomputed from the per-round CSVs.
    {
        std::ostringstream out;
        out << "window,alpha,m,repeats,delta_source_mean,delta_target_mean,delta_others_sum_mean,"
               "delta_others_mean_abs\n";
        for (const auto& key : order) {
            const auto& rows = groups[key];
            std::vector<double> dsrc, dtgt, dsum, dabs;
            for (const LoadedCell* cell : rows) {
                const fs::path cell_dir = sweep_root / "cells" / cell->coordinate.tag();
                const MetricsSeries attacked = load_metrics_csv(cell_dir / "metrics.csv");
                const fs::path bpath = cell_dir / "baseline" / "metrics.csv";
                const MetricsSeries baseline =
                    fs::exists(bpath) ? load_metrics_csv(bpath) : attacked;
                const int classes = static_cast<int>(attacked.recalls[0].size());
                double others_sum = 0.0, others_abs = 0.0;
                int others = 0;
                for (int c = 0; c < classes; ++c) {
                    const double delta =
                        attacked.recall_at(attacked.rounds(), c) - baseline.recall_at(baseline.rounds(), c);
                    if (c == src) {
                        dsrc.push_back(delta);
                    } else if (c == tgt) {
                        dtgt.push_back(delta);
                    } else {
                        others_sum += delta;
                        others_abs += std::abs(delta);
                        ++others;
                    }
                }
                dsum.push_back(others_sum);
                dabs.push_back(others ? others_abs / others : 0.0);
            }
            out << key.window << "," << key.alpha << "," << key.m << "," << rows.size() << ","
                << format_double(aggregate_values(dsrc).mean) << ","
                << format_double(aggregate_values(dtgt).mean) << ","
                << format_double(aggregate_values(dsum).mean) << ","
                << format_double(aggregate_values(dabs).mean) << "\n";
        }
        write_text_file((out_dir / "recall_change_by_class.csv").string(), out.str());
    }

    // (c) final-round split by malicious presence in the last selection.
    {
        std::ostringstream out;
        out << "window,alpha,m,with_malicious_count,with_malicious_recall_mean,"
               "without_malicious_count,without_malicious_recall_mean\n";
        for (const auto& key : order) {
            const auto& rows = groups[key];
            std::vector<double> with_mal, without_mal;
            for (const LoadedCell* cell : rows) {
                const auto recall = opt_value(*cell, "final_recall_source");
                const auto count = opt_value(*cell, "malicious_selected_final");
                if (!recall || !count) continue;
                (*count > 0 ? with_mal : without_mal).push_back(*recall);
            }
            const Aggregate w = aggregate_values(with_mal);
            const Aggregate wo = aggregate_values(without_mal);
            out << key.window << "," << key.alpha << "," << key.m << "," << w.count << ","
                << (w.count ? format_double(w.mean) : "") << "," << wo.count << ","
                << (wo.count ? format_double(wo.mean) : "") << "\n";
        }
        write_text_file((out_dir / "final_round_split.csv").string(), out.str());
    }

    // (d) consecutive-round deltas pooled over repeats, grouped by the change
    // in malicious participation.
    {
        std::ostringstream out;
        out << "window,alpha,m,delta_malicious,mean_delta_recall,pair_count\n";
        for (const auto& key : order) {
            const AttackWindow window = resolve_window(key.window, rounds);
            if (window.empty()) continue;
            std::map<int, std::pair<double, int>> pooled;
            for (const LoadedCell* cell : groups[key]) {
                const fs::path cell_dir = sweep_root / "cells" / cell->coordinate.tag();
                const MetricsSeries series = load_metrics_csv(cell_dir / "metrics.csv");
                for (const auto& d : consecutive_round_deltas(series, src, window.lo)) {
                    pooled[d.delta_malicious].first += d.delta_recall;
                    pooled[d.delta_malicious].second += 1;
                }
            }
            for (const auto& [dm, sum_count] : pooled)
                out << key.window << "," << key.alpha << "," << key.m << "," << dm << ","
                    << format_double(sum_count.first / sum_count.second) << ","
                    << sum_count.second << "\n";
        }
        write_text_file((out_dir / "consecutive_deltas.csv").string(), out.str());
    }

    // (e) defense summary.
    {
        std::ostringstream out;
        out << "window,alpha,m,cells,detected_count,balanced_accuracy_mean,flagged_count_mean\n";
        for (const auto& key : order) {
            const auto& rows = groups[key];
            int detected = 0, reported = 0;
            std::vector<double> balacc, flag_counts;
            for (const LoadedCell* cell : rows) {
                const auto det = opt_value(*cell, "defense_detected");
                if (!det) continue;
                ++reported;
                if (*det > 0.5) ++detected;
                if (const auto ba = opt_value(*cell, "defense_balanced_accuracy"))
                    balacc.push_back(*ba);
                if (const auto fc = opt_value(*cell, "defense_flagged_count"))
                    flag_counts.push_back(*fc);
            }
            if (reported == 0) continue;
            const Aggregate ba = aggregate_values(balacc);
            const Aggregate fc = aggregate_values(flag_counts);
            out << key.window << "," << key.alpha << "," << key.m << "," << reported << ","
                << detected << "," << (ba.count ? format_double(ba.mean) : "") << ","
                << (fc.count ? format_double(fc.mean) : "") << "\n";
        }
        write_text_file((out_dir / "defense_summary.csv").string(), out.str());
    }
}

}  // namespace flsim
