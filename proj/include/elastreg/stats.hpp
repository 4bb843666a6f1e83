#pragma once

#include <vector>

namespace elastreg {

double mean(const std::vector<double>& v);
/// Unbiased (n - 1) sample variance; 0 for fewer than two values.
double sample_variance(const std::vector<double>& v);
double sample_std(const std::vector<double>& v);

/// Two-sample Mann-Whitney rank test with midranks for ties.
struct RankTest {
    double u = 0.0;       ///< U statistic of the first sample
    double z = 0.0;       ///< normal approximation with tie correction, 0 when undefined
    double p_value = 1.0; ///< two-sided
    bool identical = false; ///< both samples hold the same multiset of values
};

RankTest mann_whitney(const std::vector<double>& a, const std::vector<double>& b);

} // namespace elastreg
