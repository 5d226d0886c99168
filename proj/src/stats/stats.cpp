#include "crowdemp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "crowdemp/error.hpp"

namespace crowdemp::stats {

namespace {

double poly(std::span<const double> c, double x) {
  double r = 0.0;
  for (std::size_t i = c.size(); i-- > 0;) r = r * x + c[i];
  return r;
}

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

double normal_upper_tail(double z) { return 0.5 * boost::math::erfc(z / std::sqrt(2.0)); }

void check_groups(std::span<const SampleGroup> groups) {
  if (groups.size() < 2) throw ValidationError("rank tests need at least 2 groups");
  for (const auto& g : groups) {
    if (g.values.size() < 3) throw ValidationError("group '" + g.label + "' has fewer than 3 values");
    for (double v : g.values)
      if (!std::isfinite(v)) throw ValidationError("group '" + g.label + "' has a non-finite value");
  }
}

struct PooledRanks {
  std::vector<double> rank_sums;
  std::vector<std::size_t> sizes;
  std::size_t n = 0;
  double tie_sum = 0.0;  // sum over tie groups of t^3 - t
};

PooledRanks pool(std::span<const SampleGroup> groups) {
  PooledRanks out;
  std::vector<double> all;
  for (const auto& g : groups) all.insert(all.end(), g.values.begin(), g.values.end());
  const auto ranks = rank_with_ties(all);
  out.n = all.size();
  std::size_t pos = 0;
  for (const auto& g : groups) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.values.size(); ++i) s += ranks[pos + i];
    pos += g.values.size();
    out.rank_sums.push_back(s);
    out.sizes.push_back(g.values.size());
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j] == all[i]) ++j;
    const double t = static_cast<double>(j - i);
    out.tie_sum += t * t * t - t;
    i = j;
  }
  return out;
}

}  // namespace

std::vector<double> rank_with_ties(std::span<const double> values) {
  if (values.empty()) throw ValidationError("rank_with_ties: empty input");
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && values[idx[j]] == values[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = avg;
    i = j;
  }
  return ranks;
}

TestResult shapiro_wilk(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 3 || n > 5000) throw ValidationError("shapiro_wilk: sample size must be in [3, 5000]");
  std::vector<double> x(values.begin(), values.end());
  for (double v : x)
    if (!std::isfinite(v)) throw ValidationError("shapiro_wilk: non-finite value");
  std::sort(x.begin(), x.end());
  if (x.back() == x.front())
    throw DegenerateInput("shapiro_wilk: all values are identical");

  static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056};
  static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  static constexpr double c3[] = {0.5440, -0.39978, 0.025054, -6.714e-4};
  static constexpr double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double c6[] = {-0.4803, -0.082676, 0.0030302};
  static constexpr double g[] = {-2.273, 0.459};

  // Half-coefficients for the lower order statistics (positive values).
  const std::size_t half = n / 2;
  const double an = static_cast<double>(n);
  std::vector<double> a(half);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
  } else {
    std::vector<double> m(half);
    double summ2 = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / (an + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = poly(c1, rsn) - m[0] / ssumm2;
    std::size_t first;
    double fac;
    if (n > 5) {
      const double a2 = -m[1] / ssumm2 + poly(c2, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      a[1] = a2;
      first = 2;
    } else {
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
      first = 1;
    }
    a[0] = a1;
    for (std::size_t i = first; i < half; ++i) a[i] = -m[i] / fac;
  }

  // W as the squared correlation between the full antisymmetric coefficient
  // vector and the ordered sample.
  std::vector<double> coef(n, 0.0);
  for (std::size_t i = 0; i < half; ++i) {
    coef[i] = -a[i];
    coef[n - 1 - i] = a[i];
  }
  const double mean_x = std::accumulate(x.begin(), x.end(), 0.0) / an;
  const double mean_a = std::accumulate(coef.begin(), coef.end(), 0.0) / an;
  double saa = 0.0, sxx = 0.0, sax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = coef[i] - mean_a;
    const double dx = x[i] - mean_x;
    saa += da * da;
    sxx += dx * dx;
    sax += da * dx;
  }
  double w = sax * sax / (saa * sxx);
  w = std::min(w, 1.0);

  TestResult r;
  r.statistic = w;
  if (n == 3) {
    const double pi6 = 6.0 / std::numbers::pi;
    const double stqr = std::numbers::pi / 3.0;
    r.p_value = std::max(0.0, pi6 * (std::asin(std::sqrt(std::max(w, 0.75))) - stqr));
    return r;
  }
  double y = std::log1p(-w);
  double mu, sigma;
  if (n <= 11) {
    const double gamma = poly(g, an);
    if (y >= gamma) {
      r.p_value = 1e-99;
      return r;
    }
    y = -std::log(gamma - y);
    mu = poly(c3, an);
    sigma = std::exp(poly(c4, an));
  } else {
    const double ln_n = std::log(an);
    mu = poly(c5, ln_n);
    sigma = std::exp(poly(c6, ln_n));
  }
  r.p_value = std::clamp(normal_upper_tail((y - mu) / sigma), 0.0, 1.0);
  return r;
}

double chi_squared_sf(double x, double dof) {
  if (!(dof > 0.0)) throw ValidationError("chi_squared_sf: dof must be positive");
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

TestResult kruskal_wallis(std::span<const SampleGroup> groups) {
  check_groups(groups);
  const PooledRanks pr = pool(groups);
  const double n = static_cast<double>(pr.n);
  const double correction = 1.0 - pr.tie_sum / (n * n * n - n);
  TestResult r;
  if (correction <= 0.0) return r;  // every value identical
  double s = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) s += pr.rank_sums[i] * pr.rank_sums[i] / static_cast<double>(pr.sizes[i]);
  const double h = (12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / correction;
  r.statistic = std::max(h, 0.0);
  r.p_value = chi_squared_sf(r.statistic, static_cast<double>(groups.size() - 1));
  return r;
}

DunnResult dunn_posthoc(std::span<const SampleGroup> groups) {
  check_groups(groups);
  const PooledRanks pr = pool(groups);
  const double n = static_cast<double>(pr.n);
  const double variance = n * (n + 1.0) / 12.0 - pr.tie_sum / (12.0 * (n - 1.0));
  const std::size_t k = groups.size();
  const double n_pairs = static_cast<double>(k * (k - 1) / 2);

  DunnResult out;
  out.p.assign(k, std::vector<double>(k, 1.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      DunnPair pair;
      pair.a = i;
      pair.b = j;
      const double ni = static_cast<double>(pr.sizes[i]);
      const double nj = static_cast<double>(pr.sizes[j]);
      const double se = std::sqrt(std::max(variance, 0.0) * (1.0 / ni + 1.0 / nj));
      if (se > 0.0) {
        pair.z = (pr.rank_sums[i] / ni - pr.rank_sums[j] / nj) / se;
        pair.p_unadjusted = std::min(1.0, 2.0 * normal_upper_tail(std::abs(pair.z)));
      }
      pair.p = std::min(1.0, pair.p_unadjusted * n_pairs);
      out.p[i][j] = out.p[j][i] = pair.p;
      out.pairs.push_back(pair);
    }
  return out;
}

void write_shapiro_csv(std::ostream& out, std::span<const SampleGroup> groups, std::span<const TestResult> results) {
  if (groups.size() != results.size()) throw ValidationError("write_shapiro_csv: size mismatch");
  out << "policy,n,W,p\n" << std::setprecision(9);
  for (std::size_t i = 0; i < groups.size(); ++i)
    out << groups[i].label << ',' << groups[i].values.size() << ',' << results[i].statistic << ','
        << results[i].p_value << '\n';
}

void write_kruskal_csv(std::ostream& out, const TestResult& result, std::size_t group_count) {
  out << "groups,H,dof,p\n" << std::setprecision(9);
  out << group_count << ',' << result.statistic << ',' << group_count - 1 << ',' << result.p_value << '\n';
}

void write_dunn_csv(std::ostream& out, std::span<const SampleGroup> groups, const DunnResult& result) {
  out << "policy_a,policy_b,z,p_unadjusted,p\n" << std::setprecision(9);
  for (const auto& pair : result.pairs)
    out << groups[pair.a].label << ',' << groups[pair.b].label << ',' << pair.z << ',' << pair.p_unadjusted << ','
        << pair.p << '\n';
}

}  // namespace crowdemp::stats
