#pragma once

// Fixtures and brute-force oracles shared by the test binaries. The oracles
// recompute everything from raw rows and never call into the histogram code.

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nidens/dataset.hpp"
#include "nidens/rng.hpp"
#include "nidens/features.hpp"
#include "nidens/tree.hpp"

namespace nidens::testing {

/// One NSL-KDD record with all numeric fields zero except `numeric_overrides`.
inline std::string nslkdd_line(const std::string& protocol, const std::string& service, const std::string& flag,
                               const std::string& attack, std::optional<int> difficulty = 20,
                               std::vector<std::pair<std::size_t, double>> numeric_overrides = {}) {
  std::vector<std::string> fields(41, "0");
  fields[1] = protocol;
  fields[2] = service;
  fields[3] = flag;
  for (auto [i, v] : numeric_overrides) {
    std::ostringstream os;
    os << v;
    fields[i] = os.str();
  }
  std::string line;
  for (const auto& f : fields) line += f + ",";
  line += attack;
  if (difficulty) line += "," + std::to_string(*difficulty);
  return line + "\n";
}

/// BinnedView straight from small integer bins, [feature][row].
inline BinnedView view_from_bins(const std::vector<std::vector<int>>& bins) {
  BinnedView v;
  v.max_bins = 255;
  v.n_rows = bins.empty() ? 0 : bins[0].size();
  for (const auto& col : bins) {
    std::vector<std::uint8_t> b;
    int top = 0;
    for (int x : col) {
      b.push_back(static_cast<std::uint8_t>(x));
      if (x != kMissingBin) top = std::max(top, x);
    }
    v.bins.push_back(std::move(b));
    v.n_bins.push_back(static_cast<std::uint16_t>(top + 1));
  }
  return v;
}

struct OracleSplit {
  std::size_t feature = 0;
  std::size_t threshold = 0;
  double gain = 0.0;
};

namespace detail {

inline void oracle_consider(std::optional<OracleSplit>& best, std::size_t f, std::size_t t, double gain) {
  if (!(gain > kMinSplitGain)) return;
  if (best && !(gain > best->gain + 1e-12)) return;
  best = OracleSplit{f, t, gain};
}

}  // namespace detail

/// Exhaustive Gini oracle: every (feature, threshold), sums straight from rows.
inline std::optional<OracleSplit> brute_force_gini(const BinnedView& view, const std::vector<std::size_t>& rows,
                                                   const std::vector<std::uint8_t>& labels,
                                                   const std::vector<std::size_t>& features,
                                                   const RegularizationParams& reg) {
  if (static_cast<double>(rows.size()) < static_cast<double>(reg.min_samples_split)) return std::nullopt;
  auto gini = [](double pos, double n) {
    if (n <= 0) return 0.0;
    const double p1 = pos / n;
    const double p0 = 1.0 - p1;
    return 1.0 - p0 * p0 - p1 * p1;
  };
  double n = 0, pos = 0;
  for (auto r : rows) {
    n += 1;
    pos += labels[r];
  }
  std::optional<OracleSplit> best;
  for (auto f : features) {
    for (std::size_t t = 0; t + 1 < view.n_bins[f]; ++t) {
      double ln = 0, lp = 0, rn = 0, rp = 0, mn = 0, mp = 0;
      for (auto r : rows) {
        const auto b = view.bins[f][r];
        if (b == kMissingBin) {
          mn += 1;
          mp += labels[r];
        } else if (b <= t) {
          ln += 1;
          lp += labels[r];
        } else {
          rn += 1;
          rp += labels[r];
        }
      }
      if (ln >= rn) {
        ln += mn;
        lp += mp;
      } else {
        rn += mn;
        rp += mp;
      }
      const double min_leaf = static_cast<double>(std::max<std::size_t>(1, reg.min_data_in_leaf));
      if (ln < min_leaf || rn < min_leaf) continue;
      const double g = gini(pos, n) - ln / n * gini(lp, ln) - rn / n * gini(rp, rn);
      detail::oracle_consider(best, f, t, g);
    }
  }
  return best;
}

/// Exhaustive second-order gain oracle.
inline std::optional<OracleSplit> brute_force_grad(const BinnedView& view, const std::vector<std::size_t>& rows,
                                                   const std::vector<double>& g, const std::vector<double>& h,
                                                   const std::vector<std::size_t>& features,
                                                   const RegularizationParams& reg) {
  if (static_cast<double>(rows.size()) < static_cast<double>(reg.min_samples_split)) return std::nullopt;
  const double l2 = reg.penalty == PenaltyForm::l2_alpha ? 2 * reg.lambda : reg.lambda;
  const double pen = reg.penalty == PenaltyForm::l2_alpha ? reg.alpha : reg.gamma;
  auto term = [&](double gs, double hs) { return hs + l2 > 0 ? gs * gs / (hs + l2) : 0.0; };
  double G = 0, H = 0;
  for (auto r : rows) {
    G += g[r];
    H += h[r];
  }
  std::optional<OracleSplit> best;
  for (auto f : features) {
    for (std::size_t t = 0; t + 1 < view.n_bins[f]; ++t) {
      double ln = 0, lg = 0, lh = 0, rn = 0, rg = 0, rh = 0, mn = 0, mg = 0, mh = 0;
      for (auto r : rows) {
        const auto b = view.bins[f][r];
        if (b == kMissingBin) {
          mn += 1, mg += g[r], mh += h[r];
        } else if (b <= t) {
          ln += 1, lg += g[r], lh += h[r];
        } else {
          rn += 1, rg += g[r], rh += h[r];
        }
      }
      if (ln >= rn) {
        ln += mn, lg += mg, lh += mh;
      } else {
        rn += mn, rg += mg, rh += mh;
      }
      const double min_leaf = static_cast<double>(std::max<std::size_t>(1, reg.min_data_in_leaf));
      if (ln < min_leaf || rn < min_leaf || lh < reg.min_child_weight || rh < reg.min_child_weight) continue;
      const double gain = 0.5 * (term(lg, lh) + term(rg, rh) - term(G, H)) - pen;
      detail::oracle_consider(best, f, t, gain);
    }
  }
  return best;
}

struct MicroDataset {
  BinnedView view;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> features;
  std::vector<std::uint8_t> labels;
  std::vector<double> grad;
  std::vector<double> hess;
  RegularizationParams reg;
};

/// Random problem with <= 200 rows and <= 5 features, some missing bins,
/// repeated rows and varied regularization.
inline MicroDataset random_micro(Rng& rng) {
  MicroDataset m;
  const std::size_t n = 2 + rng.below(199);
  const std::size_t d = 1 + rng.below(5);
  std::vector<std::vector<int>> bins(d, std::vector<int>(n));
  for (auto& col : bins) {
    const int levels = 1 + static_cast<int>(rng.below(12));
    const bool with_missing = rng.below(4) == 0;
    for (auto& b : col) b = with_missing && rng.below(20) == 0 ? kMissingBin : static_cast<int>(rng.below(levels));
  }
  m.view = view_from_bins(bins);
  const double bias = rng.uniform();
  for (std::size_t r = 0; r < n; ++r) {
    // labels and gradients loosely tied to the first feature so splits matter
    const double signal = bins[0][r] == kMissingBin ? 0.0 : bins[0][r] / 12.0;
    m.labels.push_back(rng.uniform() < 0.5 * bias + 0.5 * signal ? 1 : 0);
    m.grad.push_back(rng.uniform(-1, 1) + signal);
    m.hess.push_back(rng.below(10) == 0 ? 0.0 : rng.uniform(0, 0.25));
  }
  const std::size_t n_rows = 1 + rng.below(n);
  for (std::size_t i = 0; i < n_rows; ++i) m.rows.push_back(rng.below(3) == 0 ? rng.below(n) : i);
  for (std::size_t f = 0; f < d; ++f) {
    if (rng.below(4) != 0) m.features.push_back(f);
  }
  if (m.features.empty()) m.features.push_back(0);
  const double lambdas[] = {0.0, 0.5, 1.0};
  m.reg.lambda = lambdas[rng.below(3)];
  m.reg.gamma = rng.below(2) ? 0.0 : 0.05;
  m.reg.alpha = rng.below(2) ? 0.0 : 0.05;
  m.reg.min_data_in_leaf = 1 + rng.below(5);
  m.reg.min_child_weight = rng.below(2) ? 0.0 : 0.3;
  m.reg.min_samples_split = rng.below(2) ? 2 : 10;
  m.reg.penalty = rng.below(2) ? PenaltyForm::half_l2_gamma : PenaltyForm::l2_alpha;
  return m;
}

/// NSL-KDD text where attacks carry large src_bytes. `overlap` is the share
/// of rows drawn from a common range, which makes them ambiguous.
inline Dataset two_class_dataset(std::size_t n_normal, std::size_t n_attack, std::uint64_t seed,
                                 double overlap = 0.0) {
  Rng rng(seed);
  const char* protocols[] = {"tcp", "udp", "icmp"};
  const char* services[] = {"http", "ftp", "smtp", "private"};
  std::string text;
  for (std::size_t i = 0; i < n_normal + n_attack; ++i) {
    const bool attack = i >= n_normal;
    double bytes = attack ? rng.uniform(1000, 2000) : rng.uniform(0, 500);
    if (rng.uniform() < overlap) bytes = rng.uniform(0, 2000);
    text += nslkdd_line(protocols[rng.below(3)], services[rng.below(4)], "SF", attack ? "neptune" : "normal", 10,
                        {{4, std::round(bytes)}, {22, static_cast<double>(rng.below(50))}});
  }
  return parse_nslkdd_text(text, DatasetSchema::nslkdd());
}

}  // namespace nidens::testing
