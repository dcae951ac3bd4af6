#pragma once

// Paired comparison of per-subject scores: Wilcoxon signed-rank test with
// exact sign-enumeration p-values for small samples, and Bonferroni
// correction across comparisons.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "alc/errors.hpp"

namespace alc::stats {

inline constexpr std::size_t kExactLimit = 20;

enum class Method : std::uint8_t { Exact, NormalApproximation };

inline const char* to_string(Method m) { return m == Method::Exact ? "exact" : "normal_approximation"; }

struct TestResult {
  double statistic = 0.0;  // W = min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p_value = 1.0;  // two-sided
  Method method = Method::Exact;
  std::size_t n_effective = 0;
};

/// Mid-ranks (1-based) of |d| for the nonzero differences, in input order.
inline std::vector<double> signed_rank_magnitudes(std::span<const double> nonzero) {
  const std::size_t n = nonzero.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::fabs(nonzero[a]) < std::fabs(nonzero[b]); });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::fabs(nonzero[order[j + 1]]) == std::fabs(nonzero[order[i]])) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

/// Two-sided exact p: the fraction of all 2^n sign assignments whose
/// min(W+, W-) is at most the observed one. Ranks are doubled so mid-ranks
/// stay integral. Walks the assignments in Gray-code order.
inline double exact_p_value(std::span<const double> ranks, double observed_w) {
  const std::size_t n = ranks.size();
  if (n > 62) throw ParamError("exact enumeration limited to 62 differences");
  std::vector<std::int64_t> r2(n);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    r2[i] = std::llround(2.0 * ranks[i]);
    total += r2[i];
  }
  const auto w2 = std::llround(2.0 * observed_w);
  const std::uint64_t patterns = std::uint64_t{1} << n;
  std::uint64_t hits = 0;
  std::int64_t plus = 0;  // sum over the "positive" set, starting empty
  std::uint64_t gray = 0;
  for (std::uint64_t k = 0; k < patterns; ++k) {
    if (k > 0) {
      const int bit = __builtin_ctzll(k);
      gray ^= std::uint64_t{1} << bit;
      plus += (gray >> bit) & 1 ? r2[bit] : -r2[bit];
    }
    if (std::min(plus, total - plus) <= w2) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(patterns);
}

inline TestResult wilcoxon_signed_rank(std::span<const double> diffs, std::size_t exact_limit = kExactLimit) {
  std::vector<double> nonzero;
  for (double d : diffs) {
    if (!std::isfinite(d)) throw ParamError("non-finite difference");
    if (d != 0.0) nonzero.push_back(d);
  }
  if (nonzero.empty()) throw DegenerateError("all paired differences are zero");
  const auto ranks = signed_rank_magnitudes(nonzero);
  TestResult r;
  r.n_effective = nonzero.size();
  for (std::size_t i = 0; i < nonzero.size(); ++i) (nonzero[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
  r.statistic = std::min(r.w_plus, r.w_minus);

  if (r.n_effective <= exact_limit) {
    r.method = Method::Exact;
    r.p_value = exact_p_value(ranks, r.statistic);
  } else {
    r.method = Method::NormalApproximation;
    const double n = static_cast<double>(r.n_effective);
    const double mean = n * (n + 1.0) / 4.0;
    double tie_term = 0.0;
    std::map<double, std::size_t> groups;
    for (double rk : ranks) ++groups[rk];
    for (const auto& [rk, t] : groups) {
      const double td = static_cast<double>(t);
      tie_term += td * td * td - td;
    }
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::fabs(r.statistic - mean) - 0.5) / std::sqrt(var);
    r.p_value = std::min(1.0, std::erfc(z / std::numbers::sqrt2));
  }
  return r;
}

struct BonferroniResult {
  double threshold = 0.0;
  std::vector<bool> significant;
};

/// Significance at the corrected level alpha / m, decided as p < threshold.
inline BonferroniResult bonferroni(std::span<const double> p_values, double alpha, std::size_t m) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParamError("alpha must lie in (0, 1)");
  if (m == 0) throw ParamError("comparison count must be >= 1");
  BonferroniResult out{alpha / static_cast<double>(m), {}};
  for (double p : p_values) out.significant.push_back(p < out.threshold);
  return out;
}

struct ScoreKey {
  std::uint16_t subject = 0;
  std::uint32_t repeat = 0;
  auto operator<=>(const ScoreKey&) const = default;
};

struct KeyedScore {
  ScoreKey key;
  double value = 0.0;
};

struct PairedScores {
  std::string label_a, label_b;
  std::vector<ScoreKey> keys;
  std::vector<double> diffs;  // b - a
};

/// Aligns two keyed score lists; both must carry exactly the same keys.
inline PairedScores compare_configs(std::span<const KeyedScore> a, std::span<const KeyedScore> b,
                                    std::string label_a = "A", std::string label_b = "B") {
  auto index = [](std::span<const KeyedScore> s, const char* which) {
    std::map<ScoreKey, double> m;
    for (const auto& k : s) {
      if (!m.emplace(k.key, k.value).second) throw KeyMismatchError(std::string("duplicate key in ") + which);
    }
    return m;
  };
  const auto ma = index(a, label_a.c_str());
  const auto mb = index(b, label_b.c_str());
  if (ma.size() != mb.size()) throw KeyMismatchError("score lists cover different (subject, repeat) keys");
  PairedScores out{std::move(label_a), std::move(label_b), {}, {}};
  for (const auto& [key, va] : ma) {
    auto it = mb.find(key);
    if (it == mb.end()) {
      throw KeyMismatchError("key (subject " + std::to_string(key.subject) + ", repeat " + std::to_string(key.repeat) +
                             ") missing from " + out.label_b);
    }
    out.keys.push_back(key);
    out.diffs.push_back(it->second - va);
  }
  return out;
}

}  // namespace alc::stats
