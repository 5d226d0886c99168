#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace crowdemp::stats {

struct SampleGroup {
  std::string label;
  std::vector<double> values;
};

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> rank_with_ties(std::span<const double> values);

// Shapiro-Wilk W with Royston's coefficient and p-value approximations,
// valid for 3 <= n <= 5000. Throws DegenerateInput on a constant sample.
TestResult shapiro_wilk(std::span<const double> values);

// Tie-corrected H; p from the chi-squared upper tail with k - 1 degrees of
// freedom. All-identical data gives H = 0, p = 1.
TestResult kruskal_wallis(std::span<const SampleGroup> groups);

struct DunnPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double z = 0.0;
  double p_unadjusted = 1.0;
  double p = 1.0;  // Bonferroni-adjusted, clamped to 1
};

struct DunnResult {
  std::vector<DunnPair> pairs;            // a < b, lexicographic
  std::vector<std::vector<double>> p;     // adjusted, symmetric, unit diagonal
};

// Two-sided Dunn test from mean ranks with the pooled tie-corrected variance.
DunnResult dunn_posthoc(std::span<const SampleGroup> groups);

double chi_squared_sf(double x, double dof);

void write_shapiro_csv(std::ostream& out, std::span<const SampleGroup> groups, std::span<const TestResult> results);
void write_kruskal_csv(std::ostream& out, const TestResult& result, std::size_t group_count);
void write_dunn_csv(std::ostream& out, std::span<const SampleGroup> groups, const DunnResult& result);

}  // namespace crowdemp::stats
