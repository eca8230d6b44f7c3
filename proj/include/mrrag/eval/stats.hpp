#pragma once

// Wilcoxon rank-sum test, Vargha-Delaney A12 effect size, Pearson correlation.

#include "mrrag/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mrrag::eval {

/// Mid-ranks (1-based) of the pooled sample, doubled so they stay integral.
inline std::vector<long long> doubled_midranks(const std::vector<double>& pooled) {
    const std::size_t n = pooled.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
    std::vector<long long> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        // positions i..j share the rank (i+1 + j+1)/2; doubled: i + j + 2
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = static_cast<long long>(i + j + 2);
        i = j + 1;
    }
    return ranks;
}

namespace detail {

inline void check_samples(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.empty() || ys.empty()) throw ValidationError("both samples need at least one value");
    for (double v : xs) {
        if (!std::isfinite(v)) throw ValidationError("samples must be finite");
    }
    for (double v : ys) {
        if (!std::isfinite(v)) throw ValidationError("samples must be finite");
    }
}

inline bool all_identical(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double v = xs.front();
    return std::all_of(xs.begin(), xs.end(), [&](double x) { return x == v; }) &&
           std::all_of(ys.begin(), ys.end(), [&](double y) { return y == v; });
}

} // namespace detail

/// Exact two-sided rank-sum p-value: 2 * min(P(W <= w), P(W >= w)) under the
/// permutation distribution of the (tie-aware) rank sum W of `xs`, capped at 1.
inline double wilcoxon_rank_sum_exact(const std::vector<double>& xs, const std::vector<double>& ys) {
    detail::check_samples(xs, ys);
    if (detail::all_identical(xs, ys)) return 1.0;
    std::vector<double> pooled(xs);
    pooled.insert(pooled.end(), ys.begin(), ys.end());
    const auto ranks = doubled_midranks(pooled);
    const std::size_t n = xs.size();
    const std::size_t total = pooled.size();
    long long observed = 0;
    for (std::size_t i = 0; i < n; ++i) observed += ranks[i];
    const long long max_sum = std::accumulate(ranks.begin(), ranks.end(), 0LL);

    // ways[j][s]: subsets of size j whose doubled rank sum is s
    std::vector<std::vector<double>> ways(n + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t item = 0; item < total; ++item) {
        const auto r = static_cast<std::size_t>(ranks[item]);
        for (std::size_t j = std::min(n, item + 1); j >= 1; --j) {
            auto& dst = ways[j];
            const auto& src = ways[j - 1];
            for (std::size_t s = static_cast<std::size_t>(max_sum); s >= r; --s) {
                if (src[s - r] != 0.0) dst[s] += src[s - r];
                if (s == r) break;
            }
        }
    }
    double all = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    for (std::size_t s = 0; s < ways[n].size(); ++s) {
        const double w = ways[n][s];
        if (w == 0.0) continue;
        all += w;
        if (static_cast<long long>(s) <= observed) lower += w;
        if (static_cast<long long>(s) >= observed) upper += w;
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / all);
}

/// Normal approximation with tie correction and a 0.5 continuity correction.
inline double wilcoxon_rank_sum_normal(const std::vector<double>& xs, const std::vector<double>& ys) {
    detail::check_samples(xs, ys);
    if (detail::all_identical(xs, ys)) return 1.0;
    std::vector<double> pooled(xs);
    pooled.insert(pooled.end(), ys.begin(), ys.end());
    const auto ranks = doubled_midranks(pooled);
    const double n = static_cast<double>(xs.size());
    const double m = static_cast<double>(ys.size());
    const double big_n = n + m;
    double w = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) w += static_cast<double>(ranks[i]) / 2.0;
    const double u = w - n * (n + 1.0) / 2.0;
    const double mu = n * m / 2.0;

    std::vector<double> sorted(pooled);
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    const double variance = n * m / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if (variance <= 0.0) return 1.0;
    const double z = std::max(0.0, std::abs(u - mu) - 0.5) / std::sqrt(variance);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

inline constexpr std::size_t exact_limit = 12;

/// Two-sided rank-sum p-value: exact for n + m <= 12, normal approximation otherwise.
inline double wilcoxon_rank_sum(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() + ys.size() <= exact_limit) return wilcoxon_rank_sum_exact(xs, ys);
    return wilcoxon_rank_sum_normal(xs, ys);
}

enum class Magnitude { negligible, small, medium, large };

inline const char* to_string(Magnitude m) {
    switch (m) {
    case Magnitude::negligible: return "negligible";
    case Magnitude::small: return "small";
    case Magnitude::medium: return "medium";
    case Magnitude::large: return "large";
    }
    return "negligible";
}

struct EffectSize {
    double a12 = 0.5;
    Magnitude magnitude = Magnitude::negligible;
};

/// A12 = (#{x > y} + 0.5 * #{x = y}) / (|xs| * |ys|). The magnitude compares
/// |A12 - 0.5| to 0.06 / 0.14 / 0.21 in integer arithmetic, so values sitting
/// exactly on a threshold are classified without rounding error.
inline EffectSize vargha_delaney_a12(const std::vector<double>& xs, const std::vector<double>& ys) {
    detail::check_samples(xs, ys);
    long long greater = 0;
    long long equal = 0;
    for (double x : xs) {
        for (double y : ys) {
            if (x > y) {
                ++greater;
            } else if (x == y) {
                ++equal;
            }
        }
    }
    const long long pairs = static_cast<long long>(xs.size() * ys.size());
    EffectSize e;
    e.a12 = (static_cast<double>(greater) + 0.5 * static_cast<double>(equal)) / static_cast<double>(pairs);
    // |A12 - 0.5| = |2g + e - pairs| / (2 pairs)
    const long long dev = std::llabs(2 * greater + equal - pairs);
    if (100 * dev >= 42 * pairs) {
        e.magnitude = Magnitude::large;
    } else if (100 * dev >= 28 * pairs) {
        e.magnitude = Magnitude::medium;
    } else if (100 * dev >= 12 * pairs) {
        e.magnitude = Magnitude::small;
    }
    return e;
}

/// Product-moment correlation; undefined when either sample has zero variance.
inline std::optional<double> pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ValidationError("pearson needs paired samples");
    if (xs.size() < 2) return std::nullopt;
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline constexpr double significance_level = 0.01;

struct StatComparison {
    std::string metric;
    double p_value = 1.0;
    double a12 = 0.5;
    Magnitude magnitude = Magnitude::negligible;
    bool significant = false;
    std::size_t n_x = 0;
    std::size_t n_y = 0;
};

inline StatComparison compare(const std::string& metric, const std::vector<double>& xs, const std::vector<double>& ys) {
    StatComparison c;
    c.metric = metric;
    c.n_x = xs.size();
    c.n_y = ys.size();
    c.p_value = wilcoxon_rank_sum(xs, ys);
    const auto e = vargha_delaney_a12(xs, ys);
    c.a12 = e.a12;
    c.magnitude = e.magnitude;
    c.significant = c.p_value < significance_level;
    return c;
}

inline void to_json(nlohmann::json& j, const StatComparison& c) {
    j = {{"metric", c.metric},   {"p_value", c.p_value},     {"a12", c.a12},  {"magnitude", to_string(c.magnitude)},
         {"significant", c.significant}, {"n_x", c.n_x}, {"n_y", c.n_y}};
}

} // namespace mrrag::eval
