// Trial statistics: mean/sample-std, Gaussian confidence intervals and
// difference confusion matrices.
#pragma once

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "spikebench/common.hpp"

namespace sb::stats {

enum class Unit { fraction, percent };

inline const char* unit_name(Unit u) { return u == Unit::percent ? "percent" : "fraction"; }

struct TrialSeries {
    std::vector<double> values;
    Unit unit = Unit::percent;  // recorded to keep percent/fraction from mixing

    std::size_t n() const { return values.size(); }
};

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;        // sample standard deviation (divisor n-1)
    bool single_sample = false; // n == 1: stddev reported as 0
};

inline MeanStd mean_std(const TrialSeries& series) {
    if (series.values.empty()) throw ArgumentError("mean_std: empty series");
    MeanStd out;
    const auto n = static_cast<double>(series.values.size());
    for (const double v : series.values) out.mean += v;
    out.mean /= n;
    if (series.values.size() == 1) {
        out.single_sample = true;
        return out;
    }
    double ss = 0.0;
    for (const double v : series.values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / (n - 1.0));
    return out;
}

// mean +/- z * sd / sqrt(n), Gaussian prior
inline std::pair<double, double> confidence_interval(double mean, double sd, std::size_t n, double z = 1.96) {
    if (n == 0) throw ArgumentError("confidence_interval: n must be positive");
    if (sd < 0.0) throw ArgumentError("confidence_interval: sd must be non-negative");
    const double half = z * sd / std::sqrt(static_cast<double>(n));
    return {mean - half, mean + half};
}

struct DiffConfusion {
    std::vector<std::vector<std::int64_t>> diff;  // confusion(A) - confusion(B)
    std::size_t classes = 0;
};

inline DiffConfusion diff_confusion(const std::vector<std::vector<std::int64_t>>& a,
                                    const std::vector<std::vector<std::int64_t>>& b) {
    if (a.size() != b.size() || a.empty()) throw ArgumentError("diff_confusion: shape mismatch");
    DiffConfusion out;
    out.classes = a.size();
    out.diff.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != a.size() || b[i].size() != b.size())
            throw ArgumentError("diff_confusion: matrices must be square and equally sized");
        out.diff[i].resize(a.size());
        for (std::size_t j = 0; j < a.size(); ++j) out.diff[i][j] = a[i][j] - b[i][j];
    }
    return out;
}

inline void write_matrix_csv(const std::vector<std::vector<std::int64_t>>& m, std::ostream& os) {
    for (const auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
        os << "\n";
    }
}

} // namespace sb::stats
