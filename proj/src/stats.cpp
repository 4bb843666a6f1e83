#include "elastreg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "elastreg/error.hpp"

namespace elastreg {

double mean(const std::vector<double>& v) {
    if (v.empty()) throw ValidationError("mean of an empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

double sample_std(const std::vector<double>& v) { return std::sqrt(sample_variance(v)); }

RankTest mann_whitney(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw ValidationError("rank test needs two non-empty samples");
    struct Item {
        double value;
        bool first;
    };
    std::vector<Item> all;
    for (double x : a) all.push_back({x, true});
    for (double x : b) all.push_back({x, false});
    std::sort(all.begin(), all.end(), [](const Item& l, const Item& r) { return l.value < r.value; });

    const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size()), n = n1 + n2;
    double rank_sum = 0.0, tie_term = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].value == all[i].value) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        for (std::size_t k = i; k < j; ++k) {
            if (all[k].first) rank_sum += midrank;
        }
        i = j;
    }

    RankTest out;
    out.u = rank_sum - n1 * (n1 + 1.0) / 2.0;
    std::vector<double> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    out.identical = sa == sb;
    const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if (var > 0.0) {
        out.z = (out.u - n1 * n2 / 2.0) / std::sqrt(var);
        out.p_value = std::erfc(std::abs(out.z) / std::sqrt(2.0));
    }
    return out;
}

} // namespace elastreg
