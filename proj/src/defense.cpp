#include "flsim/defense.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "flsim/rng.hpp"

namespace flsim {

void FingerprintMatrix::add_row(const UpdateFingerprint& fp) {
    if (labels.empty()) {
        values = Matrix(0, fp.values.size());
    } else if (fp.values.size() != values.cols) {
        throw std::invalid_argument("fingerprints: row lengths differ");
    }
    labels.push_back({fp.participant, fp.round});
    values.data.insert(values.data.end(), fp.values.begin(), fp.values.end());
    ++values.rows;
}

void FingerprintMatrix::validate() const {
    if (labels.size() != values.rows)
        throw std::invalid_argument("fingerprints: label count does not match rows");
}

ParameterVector compute_delta(const ParameterVector& theta_update,
                              const ParameterVector& theta_global) {
    if (!theta_update.same_shape(theta_global))
        throw std::invalid_argument("compute_delta: parameter shapes differ");
    ParameterVector delta = theta_update;
    auto d = delta.flat();
    const auto g = theta_global.flat();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    return delta;
}

UpdateFingerprint extract_source_slice(const ParameterVector& delta, int c_src) {
    const Architecture& arch = delta.arch();
    if (c_src < 0 || c_src >= arch.class_count())
        throw std::invalid_argument("extract_source_slice: class out of range");
    const int last = arch.weight_layer_count() - 1;
    const auto row = delta.weight_row(last, c_src);
    UpdateFingerprint fp;
    fp.values.assign(row.begin(), row.end());
    fp.values.push_back(delta.bias(last, c_src));
    return fp;
}

FingerprintMatrix standardize(const FingerprintMatrix& u) {
    u.validate();
    const std::size_t n = u.values.rows;
    const std::size_t d = u.values.cols;
    if (n < 2) throw std::invalid_argument("standardize: need at least two rows");

    FingerprintMatrix out = u;
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += u.values.at(r, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double x = u.values.at(r, c) - mean;
            var += x * x;
        }
        var /= static_cast<double>(n);  // population variance
        const double sd = std::sqrt(var);
        if (sd < 1e-12) {
            for (std::size_t r = 0; r < n; ++r) out.values.at(r, c) = 0.0;
        } else {
            for (std::size_t r = 0; r < n; ++r)
                out.values.at(r, c) = (u.values.at(r, c) - mean) / sd;
        }
    }
    return out;
}

namespace {

constexpr double kPowerTolerance = 1e-10;
constexpr int kPowerMaxIterations = 10000;

std::vector<double> matvec(const Matrix& m, const std::vector<double>& v) {
    std::vector<double> out(m.rows, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) s += m.at(r, c) * v[c];
        out[r] = s;
    }
    return out;
}

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Leading eigenpair of a symmetric PSD matrix by power iteration. Returns
// the (possibly unconverged after the iteration cap) Rayleigh estimate.
std::pair<double, std::vector<double>> leading_eigenpair(const Matrix& cov, Rng& rng) {
    const std::size_t d = cov.cols;
    std::vector<double> v(d);
    for (double& x : v) x = normal01(rng);
    double n = norm2(v);
    if (n == 0.0) {
        v.assign(d, 0.0);
        v[0] = 1.0;
        n = 1.0;
    }
    for (double& x : v) x /= n;

    double lambda = 0.0;
    for (int it = 0; it < kPowerMaxIterations; ++it) {
        std::vector<double> w = matvec(cov, v);
        lambda = dot(v, w);  // Rayleigh quotient while v is unit norm
        // residual ||Cv - lambda v||
        double res = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double r = w[i] - lambda * v[i];
            res += r * r;
        }
        if (std::sqrt(res) <= kPowerTolerance * std::max(1.0, std::abs(lambda))) break;
        const double wn = norm2(w);
        if (wn < 1e-300) break;  // effectively the zero matrix
        for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / wn;
    }
    return {std::max(lambda, 0.0), v};
}

void fix_sign(std::vector<double>& v) {
    std::size_t idx = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[idx])) idx = i;
    if (v[idx] < 0.0)
        for (double& x : v) x = -x;
}

}  // namespace

Pca2Result pca2(const FingerprintMatrix& u) {
    u.validate();
    const std::size_t n = u.values.rows;
    const std::size_t d = u.values.cols;
    if (n < 2 || d < 2) throw std::invalid_argument("pca2: need at least 2 rows and 2 columns");

    // Column means, then population covariance.
    std::vector<double> mean(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) mean[c] += u.values.at(r, c);
    for (double& m : mean) m /= static_cast<double>(n);

    Matrix cov(d, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t a = 0; a < d; ++a) {
            const double xa = u.values.at(r, a) - mean[a];
            for (std::size_t b = a; b < d; ++b)
                cov.at(a, b) += xa * (u.values.at(r, b) - mean[b]);
        }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov.at(a, b) /= static_cast<double>(n);
            cov.at(b, a) = cov.at(a, b);
        }

    Rng rng = make_rng(mix_seed(0x9e3779b9ULL, static_cast<std::uint64_t>(d), hash_tag("pca2")));
    auto [lambda1, v1] = leading_eigenpair(cov, rng);

    // Deflate and repeat for the second component.
    Matrix deflated = cov;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) deflated.at(a, b) -= lambda1 * v1[a] * v1[b];
    auto [lambda2, v2] = leading_eigenpair(deflated, rng);

    // Re-orthogonalize against v1 (deflation already does most of the work).
    const double proj = dot(v2, v1);
    for (std::size_t i = 0; i < d; ++i) v2[i] -= proj * v1[i];
    double n2 = norm2(v2);
    if (n2 < 1e-12) {
        // v2 collapsed onto v1 (covariance of rank <= 1): pick any unit
        // vector orthogonal to v1, deterministically.
        for (std::size_t basis = 0; basis < d; ++basis) {
            v2.assign(d, 0.0);
            v2[basis] = 1.0;
            const double p = dot(v2, v1);
            for (std::size_t i = 0; i < d; ++i) v2[i] -= p * v1[i];
            n2 = norm2(v2);
            if (n2 > 1e-6) break;
        }
    }
    for (double& x : v2) x /= n2;

    fix_sign(v1);
    fix_sign(v2);

    Pca2Result result;
    result.component1 = v1;
    result.component2 = v2;
    result.variance1 = lambda1;
    result.variance2 = lambda2;
    result.projected.labels = u.labels;
    result.projected.values = Matrix(n, 2);
    for (std::size_t r = 0; r < n; ++r) {
        double p1 = 0.0, p2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double x = u.values.at(r, c) - mean[c];
            p1 += x * v1[c];
            p2 += x * v2[c];
        }
        result.projected.values.at(r, 0) = p1;
        result.projected.values.at(r, 1) = p2;
    }
    return result;
}

namespace {

struct TwoMeans {
    std::vector<int> assignment;      // per row
    double centroid[2][2] = {{0, 0}, {0, 0}};
    double sse = std::numeric_limits<double>::infinity();
};

double sq_dist(const double* p, const double* c) {
    const double dx = p[0] - c[0];
    const double dy = p[1] - c[1];
    return dx * dx + dy * dy;
}

TwoMeans run_two_means(const Matrix& pts, std::uint64_t seed, int restarts) {
    const std::size_t n = pts.rows;
    TwoMeans best;
    for (int attempt = 0; attempt < restarts; ++attempt) {
        Rng rng = make_rng(mix_seed(seed, static_cast<std::uint64_t>(attempt),
                                    hash_tag("two-means")));
        // Pick two distinct starting points (distinct coordinates, not just
        // distinct indices, so both clusters can move).
        const std::size_t i = static_cast<std::size_t>(uniform_below(rng, n));
        std::size_t j = i;
        for (int tries = 0; tries < 64; ++tries) {
            j = static_cast<std::size_t>(uniform_below(rng, n));
            if (pts.at(j, 0) != pts.at(i, 0) || pts.at(j, 1) != pts.at(i, 1)) break;
        }
        double c[2][2] = {{pts.at(i, 0), pts.at(i, 1)}, {pts.at(j, 0), pts.at(j, 1)}};

        std::vector<int> assign(n, 0);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            for (std::size_t r = 0; r < n; ++r) {
                const double p[2] = {pts.at(r, 0), pts.at(r, 1)};
                const int a = sq_dist(p, c[1]) < sq_dist(p, c[0]) ? 1 : 0;
                if (a != assign[r]) {
                    assign[r] = a;
                    changed = true;
                }
            }
            double sum[2][2] = {{0, 0}, {0, 0}};
            std::size_t cnt[2] = {0, 0};
            for (std::size_t r = 0; r < n; ++r) {
                sum[assign[r]][0] += pts.at(r, 0);
                sum[assign[r]][1] += pts.at(r, 1);
                ++cnt[assign[r]];
            }
            for (int k = 0; k < 2; ++k)
                if (cnt[k] > 0) {
                    c[k][0] = sum[k][0] / static_cast<double>(cnt[k]);
                    c[k][1] = sum[k][1] / static_cast<double>(cnt[k]);
                }
            if (!changed && iter > 0) break;
        }

        double sse = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double p[2] = {pts.at(r, 0), pts.at(r, 1)};
            sse += sq_dist(p, c[assign[r]]);
        }
        if (sse < best.sse) {
            best.sse = sse;
            best.assignment = assign;
            for (int k = 0; k < 2; ++k) {
                best.centroid[k][0] = c[k][0];
                best.centroid[k][1] = c[k][1];
            }
        }
    }
    return best;
}

}  // namespace

DefenseReport flag_malicious(const FingerprintMatrix& projected, double separation_factor,
                             std::uint64_t seed, int restarts) {
    projected.validate();
    if (projected.values.cols != 2)
        throw std::invalid_argument("flag_malicious: expected 2-D projected points");
    const std::size_t n = projected.row_count();

    // Canonical row order: clustering must not depend on how rows arrived.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return projected.labels[a] < projected.labels[b];
    });

    DefenseReport report;
    report.labels.reserve(n);
    report.points = Matrix(n, 2);
    for (std::size_t r = 0; r < n; ++r) {
        report.labels.push_back(projected.labels[order[r]]);
        report.points.at(r, 0) = projected.values.at(order[r], 0);
        report.points.at(r, 1) = projected.values.at(order[r], 1);
    }

    for (const auto& label : report.labels) report.participants.push_back(label.participant);
    std::sort(report.participants.begin(), report.participants.end());
    report.participants.erase(
        std::unique(report.participants.begin(), report.participants.end()),
        report.participants.end());
    if (report.participants.size() < 2)
        throw std::invalid_argument("flag_malicious: need at least two distinct participants");

    // All points identical: nothing to separate.
    bool all_identical = true;
    for (std::size_t r = 1; r < n && all_identical; ++r)
        all_identical = report.points.at(r, 0) == report.points.at(0, 0) &&
                        report.points.at(r, 1) == report.points.at(0, 1);
    report.clusters.assign(n, 0);
    report.participant_cluster.assign(report.participants.size(), 0);
    if (all_identical) return report;  // attack_detected stays false

    const TwoMeans km = run_two_means(report.points, seed, restarts);
    report.clusters = km.assignment;

    // Separation gate: centroid distance vs mean point-to-own-centroid
    // distance. Below the threshold the "clusters" are one drifting mass.
    double spread = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double p[2] = {report.points.at(r, 0), report.points.at(r, 1)};
        spread += std::sqrt(sq_dist(p, km.centroid[report.clusters[r]]));
    }
    spread /= static_cast<double>(n);
    const double centroid_gap =
        std::sqrt(sq_dist(km.centroid[0], km.centroid[1]));
    if (centroid_gap <= 0.0 || centroid_gap < separation_factor * spread)
        return report;  // no attack detected

    // Majority cluster per participant; ties resolved toward the cluster
    // whose centroid is nearer to the participant's mean point.
    std::vector<std::array<int, 2>> votes(report.participants.size(), {0, 0});
    std::vector<std::array<double, 2>> mean_point(report.participants.size(), {0.0, 0.0});
    std::vector<int> row_count(report.participants.size(), 0);
    auto participant_index = [&](int id) {
        return static_cast<std::size_t>(
            std::lower_bound(report.participants.begin(), report.participants.end(), id) -
            report.participants.begin());
    };
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t pi = participant_index(report.labels[r].participant);
        ++votes[pi][static_cast<std::size_t>(report.clusters[r])];
        mean_point[pi][0] += report.points.at(r, 0);
        mean_point[pi][1] += report.points.at(r, 1);
        ++row_count[pi];
    }
    std::array<int, 2> members = {0, 0};
    for (std::size_t pi = 0; pi < report.participants.size(); ++pi) {
        int cluster;
        if (votes[pi][0] != votes[pi][1]) {
            cluster = votes[pi][1] > votes[pi][0] ? 1 : 0;
        } else {
            const double p[2] = {mean_point[pi][0] / row_count[pi],
                                 mean_point[pi][1] / row_count[pi]};
            cluster = sq_dist(p, km.centroid[1]) < sq_dist(p, km.centroid[0]) ? 1 : 0;
        }
        report.participant_cluster[pi] = cluster;
        ++members[static_cast<std::size_t>(cluster)];
    }

    // Minority cluster (fewer distinct participants) is the suspect; on a
    // tie the cluster whose centroid sits further out is.
    int flagged_cluster;
    if (members[0] != members[1]) {
        flagged_cluster = members[0] < members[1] ? 0 : 1;
    } else {
        const double n0 = km.centroid[0][0] * km.centroid[0][0] +
                          km.centroid[0][1] * km.centroid[0][1];
        const double n1 = km.centroid[1][0] * km.centroid[1][0] +
                          km.centroid[1][1] * km.centroid[1][1];
        flagged_cluster = n1 > n0 ? 1 : 0;
    }
    if (members[static_cast<std::size_t>(flagged_cluster)] == 0) return report;

    report.attack_detected = true;
    for (std::size_t pi = 0; pi < report.participants.size(); ++pi)
        if (report.participant_cluster[pi] == flagged_cluster)
            report.flagged.push_back(report.participants[pi]);
    return report;
}

FingerprintMatrix collect_fingerprints(const RunResult& run, int c_src,
                                       const DefenseOptions& options) {
    const int rounds = static_cast<int>(run.updates.size());
    if (rounds == 0) throw std::invalid_argument("defense: run has no recorded updates");
    const int lo = std::max(1, options.round_lo);
    const int hi = options.round_hi < 0 ? rounds : std::min(options.round_hi, rounds);
    if (lo > hi) throw std::invalid_argument("defense: empty round range");

    FingerprintMatrix u;
    for (int r = lo; r <= hi; ++r) {
        const ParameterVector& reference = options.delta_reference == DeltaReference::post_aggregate
                                               ? run.global_after(r)
                                               : run.global_after(r - 1);
        for (const auto& [id, params] : run.updates[static_cast<std::size_t>(r - 1)]) {
            UpdateFingerprint fp =
                extract_source_slice(compute_delta(params, reference), c_src);
            fp.participant = id;
            fp.round = r;
            u.add_row(fp);
        }
    }
    return u;
}

DefenseReport evaluate_updates(const RunResult& run, int c_src, const DefenseOptions& options) {
    const FingerprintMatrix u = collect_fingerprints(run, c_src, options);
    const Pca2Result pca = pca2(standardize(u));
    DefenseReport report = flag_malicious(pca.projected, options.separation_factor,
                                          options.cluster_seed, options.cluster_restarts);
    report.source_class = c_src;
    return report;
}

std::vector<DefenseReport> evaluate_updates_all_classes(const RunResult& run,
                                                        const DefenseOptions& options) {
    std::vector<DefenseReport> reports;
    const int classes = run.arch.class_count();
    reports.reserve(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) reports.push_back(evaluate_updates(run, c, options));
    return reports;
}

}  // namespace flsim
