#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "factguard/errors.hpp"
#include "factguard/metrics.hpp"

namespace factguard {

// Eleven points from 0.0 to 1.0; the regime where the reported loss-weight
// optima live.
inline std::vector<Real> default_fine_grid() {
    std::vector<Real> g;
    for (int i = 0; i <= 10; ++i) g.push_back(Real(i) / 10);
    return g;
}

// Eleven integer points from 0 to 10; used for the distillation weight and
// selectable for the loss weights.
inline std::vector<Real> default_coarse_grid() {
    std::vector<Real> g;
    for (int i = 0; i <= 10; ++i) g.push_back(Real(i));
    return g;
}

struct SurfaceRow {
    Real alpha = 0;
    Real beta = 0;
    MetricsReport report;
};

// Trains one model per (alpha, beta) cell via the supplied closure and
// collects the metric surface, rows ordered alpha-major.
inline std::vector<SurfaceRow> grid_search(const std::vector<Real>& alpha_grid,
                                           const std::vector<Real>& beta_grid,
                                           const std::function<MetricsReport(Real, Real)>& fit) {
    if (alpha_grid.empty() || beta_grid.empty())
        throw ArgumentError("grid search needs nonempty grids");
    std::vector<SurfaceRow> rows;
    rows.reserve(alpha_grid.size() * beta_grid.size());
    for (Real alpha : alpha_grid)
        for (Real beta : beta_grid) {
            SurfaceRow row;
            row.alpha = alpha;
            row.beta = beta;
            row.report = fit(alpha, beta);
            rows.push_back(row);
        }
    return rows;
}

struct LambdaRow {
    Real lambda = 0;
    MetricsReport report;
    Real val_mse = 0;
};

struct LambdaOutcome {
    MetricsReport report;
    Real val_mse = 0;
};

// One distillation run per lambda value.
inline std::vector<LambdaRow> lambda_sweep(const std::vector<Real>& lambda_grid,
                                           const std::function<LambdaOutcome(Real)>& fit) {
    if (lambda_grid.empty()) throw ArgumentError("lambda sweep needs a nonempty grid");
    std::vector<LambdaRow> rows;
    rows.reserve(lambda_grid.size());
    for (Real lambda : lambda_grid) {
        LambdaOutcome out = fit(lambda);
        rows.push_back({lambda, out.report, out.val_mse});
    }
    return rows;
}

// --- CSV reports -------------------------------------------------------------

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write " + path.string());
    return out;
}

inline std::string fmt_real(Real v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", double(v));
    return buf;
}

} // namespace detail

inline void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
    auto out = detail::open_csv(path);
    out << "acc,macf1,f1_real,f1_fake\n"
        << detail::fmt_real(report.acc) << ',' << detail::fmt_real(report.macf1) << ','
        << detail::fmt_real(report.f1_real) << ',' << detail::fmt_real(report.f1_fake) << '\n';
}

inline void write_surface_csv(const std::vector<SurfaceRow>& rows,
                              const std::filesystem::path& path) {
    auto out = detail::open_csv(path);
    out << "alpha,beta,macf1,acc,f1_real,f1_fake\n";
    for (const SurfaceRow& r : rows)
        out << detail::fmt_real(r.alpha) << ',' << detail::fmt_real(r.beta) << ','
            << detail::fmt_real(r.report.macf1) << ',' << detail::fmt_real(r.report.acc) << ','
            << detail::fmt_real(r.report.f1_real) << ',' << detail::fmt_real(r.report.f1_fake)
            << '\n';
}

inline void write_lambda_csv(const std::vector<LambdaRow>& rows,
                             const std::filesystem::path& path) {
    auto out = detail::open_csv(path);
    out << "lambda,macf1,acc,f1_real,f1_fake,val_mse\n";
    for (const LambdaRow& r : rows)
        out << detail::fmt_real(r.lambda) << ',' << detail::fmt_real(r.report.macf1) << ','
            << detail::fmt_real(r.report.acc) << ',' << detail::fmt_real(r.report.f1_real) << ','
            << detail::fmt_real(r.report.f1_fake) << ',' << detail::fmt_real(r.val_mse) << '\n';
}

inline void write_confidence_csv(const ConfidenceHistogram& hist,
                                 const std::filesystem::path& path) {
    auto out = detail::open_csv(path);
    out << "bin_lo,bin_hi,count_real,count_fake\n";
    for (std::size_t i = 0; i < hist.bins; ++i)
        out << detail::fmt_real(hist.bin_lo(i)) << ',' << detail::fmt_real(hist.bin_hi(i)) << ','
            << hist.count_real[i] << ',' << hist.count_fake[i] << '\n';
}

} // namespace factguard
