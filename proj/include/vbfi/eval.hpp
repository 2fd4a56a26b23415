#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "vbfi/cart.hpp"
#include "vbfi/concept_catalog.hpp"
#include "vbfi/data_model.hpp"
#include "vbfi/io.hpp"
#include "vbfi/matrix.hpp"
#include "vbfi/random.hpp"
#include "vbfi/vgbdt.hpp"

namespace vbfi {

inline double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rmse: length mismatch");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double stddev_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Shuffles 0..n-1 and deals it round-robin into `folds` parts, so parts
/// are disjoint, covering, and differ in size by at most one.
inline std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t folds, Rng& rng) {
  if (folds < 2) throw std::invalid_argument("need at least 2 folds");
  if (n < folds) throw std::invalid_argument("too few samples for " + std::to_string(folds) + " folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < n; ++i) out[i % folds].push_back(perm[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

struct PairedTest {
  double t_statistic = 0.0;
  double degrees_of_freedom = 0.0;
  double mean_difference = 0.0;
  double p_value = 1.0;
};

/// Two-sided paired t-test on per-fold differences a - b.
/// Zero-variance differences give p = 1 when the mean difference is zero
/// and p = 0 otherwise.
inline PairedTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired test: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired test: need at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  PairedTest out;
  out.mean_difference = mean_of(d);
  out.degrees_of_freedom = static_cast<double>(d.size() - 1);
  const double sd = stddev_of(d);
  if (sd == 0.0) {
    out.p_value = out.mean_difference == 0.0 ? 1.0 : 0.0;
    out.t_statistic = out.mean_difference == 0.0 ? 0.0 : std::copysign(INFINITY, out.mean_difference);
    return out;
  }
  out.t_statistic = out.mean_difference / (sd / std::sqrt(static_cast<double>(d.size())));
  boost::math::students_t dist(out.degrees_of_freedom);
  out.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t_statistic))), 0.0, 1.0);
  return out;
}

inline double paired_significance(std::span<const double> rmse_a, std::span<const double> rmse_b) {
  return paired_t_test(rmse_a, rmse_b).p_value;
}

// A learner maps (training rows, training targets) to a predictor over full rows.
using Predictor = std::function<double(std::span<const double>)>;
using Learner = std::function<Predictor(const MatrixView&, std::span<const double>)>;

inline Learner vgbdt_learner(BoostingConfig cfg, std::size_t feature_dim, Trait trait = Trait::O) {
  return [cfg, feature_dim, trait](const MatrixView& x, std::span<const double> y) -> Predictor {
    std::vector<std::string> names(x.cols() / feature_dim);
    auto model = std::make_shared<VgbdtModel>(train(x, y, feature_dim, std::move(names), cfg, trait));
    return [model](std::span<const double> row) { return model->predict(row); };
  };
}

// Plain CART on the labels of one view block (the single-concept baseline).
inline Learner single_view_cart_learner(std::size_t view, std::size_t feature_dim, std::size_t leaves,
                                        std::size_t min_leaf) {
  return [=](const MatrixView& x, std::span<const double> y) -> Predictor {
    auto tree = std::make_shared<RegressionTree>(fit_tree(x.block(view * feature_dim, feature_dim), y, leaves, min_leaf));
    return [tree, view, feature_dim](std::span<const double> row) {
      return tree->predict(row.subspan(view * feature_dim, feature_dim));
    };
  };
}

inline Learner mean_learner() {
  return [](const MatrixView&, std::span<const double> y) -> Predictor {
    const double m = mean_of(y);
    return [m](std::span<const double>) { return m; };
  };
}

struct CvReport {
  Trait trait = Trait::O;
  std::string learner;
  std::vector<double> fold_rmse;  // repeat-major: fold_rmse[r * folds + f]
  std::size_t folds = 0;
  std::size_t repeats = 0;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;
  std::optional<double> p_value;  // against `baseline`
  std::string baseline;
  BoostingConfig config;

  void finalize() {
    mean_rmse = mean_of(fold_rmse);
    std_rmse = stddev_of(fold_rmse);
  }
};

struct CvPlan {
  std::size_t folds = 10;
  std::size_t repeats = 10;
  std::uint64_t seed = 42;
};

/// Every (repeat, fold) split of `n` rows, reproducible from the seed.
/// Repeat r reshuffles with the named sub-stream "cv/repeat/r".
inline std::vector<std::vector<std::vector<std::size_t>>> cv_partitions(std::size_t n, const CvPlan& plan) {
  std::vector<std::vector<std::vector<std::size_t>>> out;
  for (std::size_t r = 0; r < plan.repeats; ++r) {
    Rng rng(plan.seed, "cv/repeat/" + std::to_string(r));
    out.push_back(make_folds(n, plan.folds, rng));
  }
  return out;
}

namespace detail {

inline void split_rows(std::size_t n, const std::vector<std::size_t>& test, std::vector<std::size_t>& train_idx) {
  train_idx.clear();
  std::size_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t < test.size() && test[t] == i) {
      ++t;
      continue;
    }
    train_idx.push_back(i);
  }
}

}  // namespace detail

/// Repeated k-fold cross-validation of any learner. Reports one held-out
/// RMSE per (repeat, fold).
inline CvReport cross_validate(const MatrixView& x, std::span<const double> labels, const Learner& learner,
                               const CvPlan& plan, Trait trait = Trait::O, std::string name = "model") {
  if (labels.size() != x.rows()) throw std::invalid_argument("label count does not match rows");
  if (x.rows() < plan.folds) throw std::invalid_argument("too few samples for cross-validation");
  Matrix full(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto src = x.row(i);
    std::copy(src.begin(), src.end(), full.row(i).begin());
  }
  CvReport rep;
  rep.trait = trait;
  rep.learner = std::move(name);
  rep.folds = plan.folds;
  rep.repeats = plan.repeats;
  std::vector<std::size_t> train_idx;
  for (const auto& partition : cv_partitions(x.rows(), plan)) {
    for (const auto& test : partition) {
      detail::split_rows(x.rows(), test, train_idx);
      Matrix tx = full.select_rows(train_idx);
      std::vector<double> ty;
      for (std::size_t i : train_idx) ty.push_back(labels[i]);
      Predictor predict = learner(tx, ty);
      std::vector<double> pred, truth;
      for (std::size_t i : test) {
        pred.push_back(predict(full.row(i)));
        truth.push_back(labels[i]);
      }
      rep.fold_rmse.push_back(rmse(pred, truth));
    }
  }
  rep.finalize();
  return rep;
}

inline CvReport cross_validate(const MatrixView& x, std::span<const double> labels, std::size_t feature_dim,
                               const BoostingConfig& cfg, const CvPlan& plan, Trait trait = Trait::O) {
  CvReport rep = cross_validate(x, labels, vgbdt_learner(cfg, feature_dim, trait), plan, trait, "vgbdt");
  rep.config = cfg;
  return rep;
}

inline void attach_p_value(CvReport& rep, const CvReport& baseline) {
  rep.p_value = paired_significance(rep.fold_rmse, baseline.fold_rmse);
  rep.baseline = baseline.learner;
}

enum class SweepParam { kRounds, kLeaves };

inline std::string_view to_string(SweepParam p) { return p == SweepParam::kRounds ? "M" : "J"; }

struct SweepRow {
  SweepParam param = SweepParam::kRounds;
  std::size_t value = 0;
  CvReport report;
};

/// One CV report per parameter value, everything else held at `base`.
/// Each report carries a paired p-value against the mean predictor on the
/// same folds. Sweeping M trains once per fold at the largest M and scores
/// every prefix, which equals training each M separately since a boosting
/// round never depends on later rounds.
inline std::vector<SweepRow> sweep(const MatrixView& x, std::span<const double> labels, std::size_t feature_dim,
                                   const BoostingConfig& base, SweepParam param, const std::vector<std::size_t>& values,
                                   const CvPlan& plan, Trait trait = Trait::O) {
  if (values.empty()) throw std::invalid_argument("sweep: empty value list");
  const CvReport baseline = cross_validate(x, labels, mean_learner(), plan, trait, "mean");
  std::vector<SweepRow> rows;
  if (param == SweepParam::kLeaves) {
    for (std::size_t v : values) {
      BoostingConfig cfg = base;
      cfg.leaves = v;
      SweepRow row{param, v, cross_validate(x, labels, feature_dim, cfg, plan, trait)};
      attach_p_value(row.report, baseline);
      rows.push_back(std::move(row));
    }
    return rows;
  }

  const std::size_t max_m = *std::max_element(values.begin(), values.end());
  BoostingConfig cfg = base;
  cfg.rounds = max_m;
  cfg.validate();
  for (std::size_t v : values) {
    SweepRow row;
    row.param = param;
    row.value = v;
    row.report.trait = trait;
    row.report.learner = "vgbdt";
    row.report.folds = plan.folds;
    row.report.repeats = plan.repeats;
    row.report.config = base;
    row.report.config.rounds = v;
    rows.push_back(std::move(row));
  }
  Matrix full(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto src = x.row(i);
    std::copy(src.begin(), src.end(), full.row(i).begin());
  }
  std::vector<std::size_t> train_idx;
  for (const auto& partition : cv_partitions(x.rows(), plan)) {
    for (const auto& test : partition) {
      detail::split_rows(x.rows(), test, train_idx);
      Matrix tx = full.select_rows(train_idx);
      std::vector<double> ty;
      for (std::size_t i : train_idx) ty.push_back(labels[i]);
      VgbdtModel model = train(tx, ty, feature_dim, std::vector<std::string>(x.cols() / feature_dim), cfg, trait);
      for (auto& row : rows) {
        VgbdtModel prefix = model;
        prefix.rounds.resize(std::min(row.value, model.rounds.size()));
        std::vector<double> pred, truth;
        for (std::size_t i : test) {
          pred.push_back(prefix.predict(full.row(i)));
          truth.push_back(labels[i]);
        }
        row.report.fold_rmse.push_back(rmse(pred, truth));
      }
    }
  }
  for (auto& row : rows) {
    row.report.finalize();
    attach_p_value(row.report, baseline);
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "param,value,trait,mean_rmse,std_rmse,p_value\n";
  for (const auto& r : rows) {
    out += std::string(to_string(r.param)) + "," + std::to_string(r.value) + "," +
           std::string(to_string(r.report.trait)) + "," + format_double(r.report.mean_rmse) + "," +
           format_double(r.report.std_rmse) + "," + (r.report.p_value ? format_double(*r.report.p_value) : "") + "\n";
  }
  return out;
}

/// Minimal SVG line chart of mean RMSE against the swept value, one line per trait.
inline std::string sweep_svg(const std::vector<SweepRow>& rows) {
  const double w = 480, h = 320, pad = 48;
  std::map<Trait, std::vector<std::pair<double, double>>> lines;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& r : rows) {
    const double xv = static_cast<double>(r.value), yv = r.report.mean_rmse;
    lines[r.report.trait].emplace_back(xv, yv);
    xmin = std::min(xmin, xv);
    xmax = std::max(xmax, xv);
    ymin = std::min(ymin, yv);
    ymax = std::max(ymax, yv);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double v) { return pad + (v - xmin) / (xmax - xmin) * (w - 2 * pad); };
  auto py = [&](double v) { return h - pad - (v - ymin) / (ymax - ymin) * (h - 2 * pad); };
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::string param = rows.empty() ? "M" : std::string(to_string(rows.front().param));
  svg += "<text x=\"240\" y=\"310\" text-anchor=\"middle\" font-size=\"12\">" + param + "</text>\n";
  svg += "<text x=\"12\" y=\"160\" font-size=\"12\" transform=\"rotate(-90 12 160)\">mean RMSE</text>\n";
  for (const auto& [trait, pts] : lines) {
    std::string path;
    for (const auto& [xv, yv] : pts) {
      path += (path.empty() ? "M" : " L") + format_double(px(xv)) + " " + format_double(py(yv));
    }
    svg += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + colors[index_of(trait)] + "\"/>\n";
    svg += "<text x=\"" + format_double(px(pts.back().first) + 4) + "\" y=\"" + format_double(py(pts.back().second)) +
           "\" font-size=\"11\">" + std::string(to_string(trait)) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Synthetic data with planted signal.
//
// Every user favors exactly one image under each of the K co-favored
// concepts. On an informative view the user's image is one of five anchor
// images, one per planted level; anchors differ only in the view's signal
// feature, so trees on that view can only split between levels. Levels are
// assigned from a strength-2 orthogonal array over GF(5), which makes the
// planted additive signal exactly recoverable by one tree per view. Each
// concept's image pool has two style clusters of near-equal size (so
// median-preference affinity propagation separates exactly those two), and
// every planted level is present in both.

inline constexpr std::size_t kSynthLevels = 5;
inline constexpr std::size_t kSynthMaxInformative = 6;

struct SynthSpec {
  std::uint64_t seed = 42;
  std::size_t num_users = 104;
  std::size_t num_views = 36;
  std::size_t feature_dim = 82;
  std::vector<std::size_t> informative_views{0, 7, 14, 21, 28};
  double noise_std = 0.5;
  std::size_t extra_concepts = 4;     // concepts outside the co-favored set
  std::size_t pool_per_level = 5;     // per style cluster
  std::size_t noise_choices = 8;      // distinct favorites on a noise view
  double style_separation = 30.0;

  // `count` informative views spread evenly over K.
  static std::vector<std::size_t> spread_views(std::size_t count, std::size_t k) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(i * k / std::max<std::size_t>(count, 1));
    return out;
  }
};

struct SynthData {
  Dataset dataset;
  ViewMatrix views;
  std::map<Trait, std::map<std::string, double>> labels;
  std::vector<std::string> concepts;  // planted co-favored concepts, in view order
  ConceptHierarchy hierarchy;
};

inline std::string synth_concept_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "concept_%02zu", k);
  return buf;
}

// Signal feature of informative view v.
inline std::size_t synth_signal_feature(std::size_t view, std::size_t d) { return (view * 7) % d; }

// Planted weight and sign of the i-th informative view for a trait: a
// geometric ladder rotated per trait so each trait leans on different views.
inline double synth_weight(Trait t, std::size_t i, std::size_t count) {
  const std::size_t rank = (i + index_of(t)) % count;
  const double sign = (i + index_of(t)) % 2 == 0 ? 1.0 : -1.0;
  return sign * std::ldexp(1.0, -static_cast<int>(rank));
}

inline SynthData generate_synthetic(const SynthSpec& spec) {
  const std::size_t n = spec.num_users, k_views = spec.num_views, d = spec.feature_dim;
  if (n < 2) throw DataError("infeasible synthetic spec: need at least 2 users");
  if (k_views < 1 || d < 1) throw DataError("infeasible synthetic spec: need K >= 1 and d >= 1");
  if (!(spec.noise_std >= 0.0)) throw DataError("infeasible synthetic spec: noise_std must be >= 0");
  if (spec.informative_views.size() > kSynthMaxInformative) {
    throw DataError("infeasible synthetic spec: at most " + std::to_string(kSynthMaxInformative) +
                    " informative views");
  }
  std::set<std::size_t> inf_set(spec.informative_views.begin(), spec.informative_views.end());
  if (inf_set.size() != spec.informative_views.size()) throw DataError("infeasible synthetic spec: duplicate informative view");
  for (std::size_t v : inf_set) {
    if (v >= k_views) throw DataError("infeasible synthetic spec: informative view out of range");
  }
  if (spec.pool_per_level < 1) throw DataError("infeasible synthetic spec: pool_per_level must be >= 1");
  if (spec.noise_choices < 1 || spec.noise_choices > 2 * kSynthLevels * (spec.pool_per_level + 1) - 1) {
    throw DataError("infeasible synthetic spec: noise_choices out of range");
  }

  SynthData out;
  Dataset& ds = out.dataset;
  ds.feature_dim = d;

  std::vector<std::string> users;
  for (std::size_t u = 0; u < n; ++u) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "user_%04zu", u);
    users.emplace_back(buf);
  }

  // Orthogonal-array rows (a, b) in GF(5)^2, replicated, remainder drawn at random.
  std::vector<std::pair<std::size_t, std::size_t>> oa_rows;
  {
    Rng rng(spec.seed, "synth/levels");
    std::vector<std::pair<std::size_t, std::size_t>> base;
    for (std::size_t a = 0; a < kSynthLevels; ++a) {
      for (std::size_t b = 0; b < kSynthLevels; ++b) base.emplace_back(a, b);
    }
    while (oa_rows.size() + base.size() <= n) oa_rows.insert(oa_rows.end(), base.begin(), base.end());
    auto rest = base;
    rng.shuffle(rest);
    for (std::size_t i = 0; oa_rows.size() < n; ++i) oa_rows.push_back(rest[i]);
    rng.shuffle(oa_rows);
  }
  auto level_of = [&](std::size_t user, std::size_t inf_pos) {
    const auto [a, b] = oa_rows[user];
    if (inf_pos == kSynthLevels) return b;
    return (a + inf_pos * b) % kSynthLevels;
  };

  Rng feat_rng(spec.seed, "synth/features");
  std::size_t image_counter = 0;
  auto new_image = [&](const std::string& concept_name) -> ImageRecord& {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%06zu", ++image_counter);
    ImageRecord rec;
    rec.image_id = buf;
    rec.features.assign(d, 0.0);
    rec.concepts.insert(concept_name);
    return ds.images.emplace(rec.image_id, std::move(rec)).first->second;
  };
  // Style cluster 0 sits at the origin, cluster 1 is shifted on every
  // feature except `skip` (the signal feature, or none).
  auto style = [&](ImageRecord& img, int cluster, bool jitter, std::size_t skip) {
    for (std::size_t f = 0; f < d; ++f) {
      if (f == skip) continue;
      img.features[f] = (cluster == 1 ? spec.style_separation : 0.0) + (jitter ? feat_rng.normal() : 0.0);
    }
  };

  std::map<std::string, std::vector<std::string>> favorites;
  std::vector<std::size_t> inf_pos_of(k_views, SIZE_MAX);
  for (std::size_t i = 0; i < spec.informative_views.size(); ++i) inf_pos_of[spec.informative_views[i]] = i;

  for (std::size_t k = 0; k < k_views; ++k) {
    const std::string name = synth_concept_name(k);
    out.concepts.push_back(name);
    if (inf_pos_of[k] != SIZE_MAX) {
      const std::size_t sig = synth_signal_feature(k, d);
      std::vector<std::string> anchors;
      for (std::size_t l = 0; l < kSynthLevels; ++l) {
        ImageRecord& img = new_image(name);
        style(img, 0, false, sig);
        img.features[sig] = 2.0 * static_cast<double>(l);
        anchors.push_back(img.image_id);
      }
      // Cluster 0 holds the anchors plus pool_per_level per level; cluster 1
      // is one image smaller, so both keep every level.
      const std::size_t size0 = kSynthLevels * (spec.pool_per_level + 1);
      const std::size_t size1 = size0 - 1;
      for (std::size_t j = 0; j < size0 - kSynthLevels + size1; ++j) {
        const int cluster = j < size0 - kSynthLevels ? 0 : 1;
        const std::size_t pos = cluster == 0 ? j : j - (size0 - kSynthLevels);
        const std::size_t l = pos % kSynthLevels;
        ImageRecord& img = new_image(name);
        style(img, cluster, true, sig);
        img.features[sig] = 2.0 * static_cast<double>(l) + feat_rng.uniform(-0.6, 0.6);
      }
      for (std::size_t u = 0; u < n; ++u) favorites[users[u]].push_back(anchors[level_of(u, inf_pos_of[k])]);
    } else {
      // Same two-cluster pool; users pick uniformly among a few popular
      // images drawn from both clusters.
      const std::size_t size0 = kSynthLevels * (spec.pool_per_level + 1);
      const std::size_t size1 = size0 - 1;
      std::vector<std::string> popular;
      for (std::size_t j = 0; j < size0 + size1; ++j) {
        const int cluster = j < size0 ? 0 : 1;
        const std::size_t pos = cluster == 0 ? j : j - size0;
        ImageRecord& img = new_image(name);
        style(img, cluster, true, SIZE_MAX);
        const std::size_t want = cluster == 0 ? (spec.noise_choices + 1) / 2 : spec.noise_choices / 2;
        if (pos < want) popular.push_back(img.image_id);
      }
      for (std::size_t u = 0; u < n; ++u) favorites[users[u]].push_back(popular[feat_rng.index(popular.size())]);
    }
  }

  // Extra concepts favored by strict subsets of users (user 0 never), so
  // neither they nor their shared parent reach the co-favored threshold.
  std::vector<std::pair<std::string, std::string>> edges;
  if (n > 1) {
    Rng rng(spec.seed, "synth/extra");
    for (std::size_t e = 0; e < spec.extra_concepts; ++e) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "extra_%02zu", e);
      const std::string name = buf;
      edges.emplace_back(name, "extra_group");
      std::vector<std::size_t> pool(n - 1);
      std::iota(pool.begin(), pool.end(), std::size_t{1});
      rng.shuffle(pool);
      const std::size_t take = std::max<std::size_t>(1, (n - 1) / 2 + rng.index((n - 1) / 2 + 1));
      for (std::size_t j = 0; j < take && j < pool.size(); ++j) {
        ImageRecord& img = new_image(name);
        style(img, static_cast<int>(j % 2), true, SIZE_MAX);
        favorites[users[pool[j]]].push_back(img.image_id);
      }
    }
  }
  out.hierarchy = ConceptHierarchy::from_edges(edges);

  Rng noise_rng(spec.seed, "synth/noise");
  const std::size_t count = spec.informative_views.size();
  for (std::size_t u = 0; u < n; ++u) {
    UserRecord rec;
    rec.user_id = users[u];
    rec.favorite_image_ids = favorites[users[u]];
    for (Trait t : kAllTraits) {
      double y = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        y += synth_weight(t, i, count) * (static_cast<double>(level_of(u, i)) - 2.0);
      }
      if (spec.noise_std > 0.0) y += noise_rng.normal(0.0, spec.noise_std);
      rec.traits[index_of(t)] = std::clamp(y, kTraitMin, kTraitMax);
    }
    ds.users.emplace(rec.user_id, std::move(rec));
  }

  if (count > 0) {
    for (Trait t : kAllTraits) {
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& [id, user] : ds.users) {
        lo = std::min(lo, user.trait(t));
        hi = std::max(hi, user.trait(t));
      }
      if (lo == hi) throw DataError("infeasible synthetic spec: range clamp removed all signal");
    }
  }

  out.views = build_views(ds, out.concepts, std::set<std::string>(users.begin(), users.end()));
  for (Trait t : kAllTraits) out.labels[t] = trait_labels(ds, out.views, t);
  return out;
}

}  // namespace vbfi
