#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbfi/io.hpp"
#include "vbfi/matrix.hpp"
#include "vbfi/random.hpp"

namespace vbfi {

// Self-similarity placed on the diagonal of S. Larger values yield more clusters.
struct Preference {
  enum class Kind { kMedian, kMinimum, kValue };
  Kind kind = Kind::kMedian;
  double value = 0.0;

  static Preference median() { return {Kind::kMedian, 0.0}; }
  static Preference minimum() { return {Kind::kMinimum, 0.0}; }
  static Preference fixed(double v) { return {Kind::kValue, v}; }

  // "median", "min", or a number.
  static Preference parse(std::string_view s) {
    if (s == "median") return median();
    if (s == "min") return minimum();
    double v = 0.0;
    if (!parse_double(s, v) || !std::isfinite(v)) {
      throw std::invalid_argument("preference must be `median`, `min` or a number");
    }
    return fixed(v);
  }

  std::string str() const {
    switch (kind) {
      case Kind::kMedian: return "median";
      case Kind::kMinimum: return "min";
      case Kind::kValue: return format_double(value);
    }
    return {};
  }
};

inline constexpr double kApSettleTolerance = 1e-6;

struct ApConfig {
  double damping = 0.9;
  std::size_t max_iter = 500;
  std::size_t convergence_iter = 25;
  Preference preference = Preference::median();
  std::uint64_t noise_seed = 0;

  void validate() const {
    if (!(damping >= 0.5 && damping < 1.0)) throw std::invalid_argument("damping must be in [0.5, 1)");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
    if (convergence_iter < 1) throw std::invalid_argument("convergence_iter must be >= 1");
  }
};

struct ApCluster {
  std::size_t exemplar = 0;
  std::vector<std::size_t> members;  // ascending
};

struct ApResult {
  std::vector<std::size_t> exemplar_of;
  std::vector<ApCluster> clusters;  // by size descending, then exemplar ascending
  bool converged = false;
  std::size_t iterations = 0;
};

/// S[i][j] = -||f_i - f_j||^2 off the diagonal; the diagonal holds the preference.
inline Matrix similarity_matrix(const MatrixView& features, Preference pref = Preference::median()) {
  const std::size_t n = features.rows();
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t f = 0; f < features.cols(); ++f) {
        const double diff = features(i, f) - features(j, f);
        d2 += diff * diff;
      }
      s(i, j) = -d2;
      s(j, i) = -d2;
    }
  }
  double diag = 0.0;
  if (pref.kind == Preference::Kind::kValue) {
    diag = pref.value;
  } else if (n > 1) {
    std::vector<double> off;
    off.reserve(n * (n - 1));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) off.push_back(s(i, j));
      }
    }
    if (pref.kind == Preference::Kind::kMinimum) {
      diag = *std::min_element(off.begin(), off.end());
    } else {
      std::sort(off.begin(), off.end());
      const std::size_t m = off.size();
      diag = m % 2 == 1 ? off[m / 2] : (off[m / 2 - 1] + off[m / 2]) / 2.0;
    }
  }
  for (std::size_t i = 0; i < n; ++i) s(i, i) = diag;
  return s;
}

/// Sum over items of S[i][exemplar_of[i]]; exemplars contribute their preference.
inline double net_similarity(const Matrix& s, std::span<const std::size_t> exemplar_of) {
  double total = 0.0;
  for (std::size_t i = 0; i < exemplar_of.size(); ++i) total += s(i, exemplar_of[i]);
  return total;
}

namespace detail {

inline std::vector<std::size_t> assign_to_exemplars(const Matrix& s,
                                                    const std::vector<std::size_t>& exemplars) {
  const std::size_t n = s.rows();
  std::vector<std::size_t> out(n);
  std::vector<bool> is_ex(n, false);
  for (std::size_t e : exemplars) is_ex[e] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_ex[i]) {
      out[i] = i;
      continue;
    }
    std::size_t best = exemplars.front();
    for (std::size_t e : exemplars) {
      if (s(i, e) > s(i, best)) best = e;
    }
    out[i] = best;
  }
  return out;
}

inline ApResult finish_clusters(std::vector<std::size_t> exemplar_of) {
  ApResult r;
  const std::size_t n = exemplar_of.size();
  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < n; ++i) members[exemplar_of[i]].push_back(i);
  for (std::size_t e = 0; e < n; ++e) {
    if (!members[e].empty()) r.clusters.push_back({e, std::move(members[e])});
  }
  std::stable_sort(r.clusters.begin(), r.clusters.end(), [](const ApCluster& a, const ApCluster& b) {
    return a.members.size() > b.members.size();
  });
  r.exemplar_of = std::move(exemplar_of);
  return r;
}

}  // namespace detail

/// Affinity propagation (responsibility/availability message passing).
///
/// Iterates until the exemplar set has been stable, with messages settled,
/// for `convergence_iter` sweeps or `max_iter` is hit; the latter is reported via converged=false
/// rather than thrown. Items are then assigned to their most similar
/// exemplar, each cluster re-elects the member with the highest summed
/// similarity to the others, and items are reassigned once more.
inline ApResult affinity_propagation(const Matrix& s_in, const ApConfig& cfg = {}) {
  cfg.validate();
  const std::size_t n = s_in.rows();
  if (n == 0) throw std::invalid_argument("affinity_propagation: no items");
  if (s_in.cols() != n) throw std::invalid_argument("affinity_propagation: S must be square");
  for (double v : s_in.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("affinity_propagation: non-finite similarity");
  }
  if (n == 1) {
    ApResult r = detail::finish_clusters({0});
    r.converged = true;
    return r;
  }

  // Tiny per-entry jitter breaks exact symmetries that make messages oscillate.
  Matrix s = s_in;
  {
    Rng rng(cfg.noise_seed, "ap/jitter");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        s(i, k) += (1e-12 + DBL_EPSILON * std::abs(s(i, k))) * rng.uniform();
      }
    }
  }

  // Message updates below this count as settled.
  double scale = 0.0;
  for (double v : s_in.data()) scale = std::max(scale, std::abs(v));
  const double settle_tol = kApSettleTolerance * (1.0 + scale);

  Matrix resp(n, n), avail(n, n);
  std::vector<char> prev_ex(n, 0), cur_ex(n, 0);
  std::size_t stable = 0;
  ApResult result;
  const double lam = cfg.damping;

  std::size_t it = 0;
  for (; it < cfg.max_iter; ++it) {
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double max1 = -std::numeric_limits<double>::infinity();
      double max2 = max1;
      std::size_t arg = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = avail(i, k) + s(i, k);
        if (v > max1) {
          max2 = max1;
          max1 = v;
          arg = k;
        } else if (v > max2) {
          max2 = v;
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        const double fresh = s(i, k) - (k == arg ? max2 : max1);
        const double next = lam * resp(i, k) + (1.0 - lam) * fresh;
        change = std::max(change, std::abs(next - resp(i, k)));
        resp(i, k) = next;
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      double pos_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (i != k) pos_sum += std::max(0.0, resp(i, k));
      }
      for (std::size_t i = 0; i < n; ++i) {
        double fresh;
        if (i == k) {
          fresh = pos_sum;
        } else {
          fresh = std::min(0.0, resp(k, k) + pos_sum - std::max(0.0, resp(i, k)));
        }
        const double next = lam * avail(i, k) + (1.0 - lam) * fresh;
        change = std::max(change, std::abs(next - avail(i, k)));
        avail(i, k) = next;
      }
    }

    bool any = false;
    for (std::size_t k = 0; k < n; ++k) {
      cur_ex[k] = (avail(k, k) + resp(k, k)) > 0.0 ? 1 : 0;
      any = any || cur_ex[k];
    }
    // With heavy damping an early exemplar set can persist for many sweeps
    // while the messages are still moving, so only settled sweeps count.
    stable = (cur_ex == prev_ex && change <= settle_tol) ? stable + 1 : 0;
    prev_ex = cur_ex;
    if (any && stable >= cfg.convergence_iter) {
      result.converged = true;
      ++it;
      break;
    }
  }

  std::vector<std::size_t> exemplars;
  for (std::size_t k = 0; k < n; ++k) {
    if (cur_ex[k]) exemplars.push_back(k);
  }
  if (exemplars.empty()) {
    // No positive evidence anywhere: fall back to the single strongest candidate.
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k) {
      if (avail(k, k) + resp(k, k) > avail(best, best) + resp(best, best)) best = k;
    }
    exemplars.push_back(best);
  }

  auto labels = detail::assign_to_exemplars(s_in, exemplars);
  std::vector<std::size_t> refined;
  for (std::size_t e : exemplars) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] == e) members.push_back(i);
    }
    std::size_t best = e;
    double best_sum = -std::numeric_limits<double>::infinity();
    for (std::size_t c : members) {
      double sum = 0.0;
      for (std::size_t i : members) sum += s_in(i, c);
      if (sum > best_sum) {
        best_sum = sum;
        best = c;
      }
    }
    refined.push_back(best);
  }
  std::sort(refined.begin(), refined.end());
  refined.erase(std::unique(refined.begin(), refined.end()), refined.end());

  ApResult out = detail::finish_clusters(detail::assign_to_exemplars(s_in, refined));
  out.converged = result.converged;
  out.iterations = it;
  return out;
}

}  // namespace vbfi
