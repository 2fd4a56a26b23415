#pragma once

#include <cmath>
#include <cstdio>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vbfi/cart.hpp"
#include "vbfi/concept_catalog.hpp"
#include "vbfi/data_model.hpp"
#include "vbfi/io.hpp"
#include "vbfi/matrix.hpp"
#include "vbfi/random.hpp"

namespace vbfi {

inline constexpr int kModelSchemaVersion = 1;

struct BoostingConfig {
  std::size_t rounds = 5;  // M: concept-questions
  std::size_t leaves = 5;  // J: image-options per question
  double shrinkage = 0.5;
  std::size_t min_leaf = 2;
  bool distinct_views = false;

  void validate() const {
    if (leaves < 1) throw std::invalid_argument("J must be >= 1");
    if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw std::invalid_argument("shrinkage must be in (0, 1]");
    if (min_leaf < 1) throw std::invalid_argument("min_leaf must be >= 1");
  }
};

struct BoostingRound {
  std::size_t view = 0;
  std::string concept_name;
  RegressionTree tree;
};

// Additive ensemble F(x) = F0 + shrinkage * sum_m T_m(block V_m of x).
//
// Every evaluation path (predict, route reconstruction, questionnaire
// scoring) accumulates as acc = F0; acc += shrinkage * T_m in round order,
// so all three agree to the last bit.
struct VgbdtModel {
  Trait trait = Trait::O;
  double f0 = 0.0;
  double shrinkage = 1.0;
  std::size_t feature_dim = 0;
  std::vector<std::string> views;
  std::vector<BoostingRound> rounds;

  std::size_t num_views() const noexcept { return views.size(); }

  std::span<const double> block(std::span<const double> x, std::size_t view) const {
    return x.subspan(view * feature_dim, feature_dim);
  }

  void check_input(std::span<const double> x) const {
    if (x.size() != views.size() * feature_dim) {
      throw std::invalid_argument("input has " + std::to_string(x.size()) + " values, model expects " +
                                  std::to_string(views.size() * feature_dim));
    }
  }

  double predict(std::span<const double> x) const {
    check_input(x);
    double acc = f0;
    for (const auto& r : rounds) acc += shrinkage * r.tree.predict(block(x, r.view));
    return acc;
  }

  std::vector<int> route(std::span<const double> x) const {
    check_input(x);
    std::vector<int> out;
    out.reserve(rounds.size());
    for (const auto& r : rounds) out.push_back(r.tree.assign_leaf(block(x, r.view)));
    return out;
  }

  // Score from one leaf choice per round.
  double score_leaves(std::span<const int> leaves) const {
    if (leaves.size() != rounds.size()) throw std::invalid_argument("one leaf per round required");
    double acc = f0;
    for (std::size_t m = 0; m < rounds.size(); ++m) acc += shrinkage * rounds[m].tree.leaf_value(leaves[m]);
    return acc;
  }

  nlohmann::json to_json() const;
  static VgbdtModel from_json(const nlohmann::json& j);
};

struct TrainingTrace {
  std::vector<double> sse;     // sse[m] = training SSE of F_m; sse[0] is the F0 model
  std::vector<double> fitted;  // F_M at each training row
  std::vector<std::vector<double>> view_sse;  // per round, residual SSE of each candidate view
};

/// View-restricted gradient boosting on a row-major N x (K*d) matrix.
///
/// Each round fits a J-leaf tree to the current residuals on every candidate
/// view block and keeps the one with the lowest residual SSE (lowest view
/// index on ties). `presorted`, when given, holds one SortedColumns per view.
inline VgbdtModel train(const MatrixView& x, std::span<const double> labels, std::size_t feature_dim,
                        std::vector<std::string> view_names, const BoostingConfig& cfg, Trait trait,
                        TrainingTrace* trace = nullptr,
                        const std::vector<SortedColumns>* presorted = nullptr) {
  cfg.validate();
  const std::size_t n = x.rows();
  if (labels.empty() || n == 0) throw std::invalid_argument("empty label set");
  if (labels.size() != n) throw std::invalid_argument("label count does not match rows");
  if (n < 2) throw std::invalid_argument("need at least two labelled rows");
  if (feature_dim == 0 || x.cols() % feature_dim != 0) {
    throw std::invalid_argument("row width is not a multiple of the feature dimension");
  }
  const std::size_t k_views = x.cols() / feature_dim;
  if (view_names.size() != k_views) throw std::invalid_argument("view name count mismatch");
  if (cfg.distinct_views && cfg.rounds > k_views) {
    throw std::invalid_argument("M=" + std::to_string(cfg.rounds) + " exceeds K=" + std::to_string(k_views) +
                                " with distinct views");
  }

  std::vector<SortedColumns> own_sorted;
  if (presorted == nullptr) {
    own_sorted.reserve(k_views);
    for (std::size_t k = 0; k < k_views; ++k) own_sorted.emplace_back(x.block(k * feature_dim, feature_dim));
    presorted = &own_sorted;
  } else if (presorted->size() != k_views) {
    throw std::invalid_argument("presorted view count mismatch");
  }

  VgbdtModel model;
  model.trait = trait;
  model.shrinkage = cfg.shrinkage;
  model.feature_dim = feature_dim;
  model.views = std::move(view_names);

  double sum = 0.0;
  for (double p : labels) sum += p;
  model.f0 = sum / static_cast<double>(n);

  std::vector<double> fitted(n, model.f0);
  std::vector<double> residual(n);
  std::vector<bool> used(k_views, false);
  auto sse_of = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (labels[i] - fitted[i]) * (labels[i] - fitted[i]);
    return s;
  };
  if (trace) trace->sse.push_back(sse_of());

  for (std::size_t m = 0; m < cfg.rounds; ++m) {
    double residual_sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      residual[i] = labels[i] - fitted[i];
      residual_sse += residual[i] * residual[i];
    }
    const double tol = kGainTieTolerance * residual_sse;

    std::size_t best_view = k_views;
    RegressionTree best_tree;
    std::vector<double> view_sse;
    for (std::size_t k = 0; k < k_views; ++k) {
      if (cfg.distinct_views && used[k]) {
        view_sse.push_back(std::nan(""));
        continue;
      }
      RegressionTree t = fit_tree(x.block(k * feature_dim, feature_dim), residual, cfg.leaves,
                                  cfg.min_leaf, &(*presorted)[k]);
      view_sse.push_back(t.training_sse());
      if (best_view == k_views || t.training_sse() < best_tree.training_sse() - tol) {
        best_view = k;
        best_tree = std::move(t);
      }
    }
    if (trace) trace->view_sse.push_back(std::move(view_sse));

    used[best_view] = true;
    const auto view_x = x.block(best_view * feature_dim, feature_dim);
    for (std::size_t i = 0; i < n; ++i) fitted[i] += cfg.shrinkage * best_tree.predict(view_x.row(i));
    model.rounds.push_back({best_view, model.views[best_view], std::move(best_tree)});
    if (trace) trace->sse.push_back(sse_of());
  }
  if (trace) trace->fitted = fitted;
  return model;
}

/// Trains on every user of the view matrix; `labels` must cover them all.
inline VgbdtModel train(const ViewMatrix& views, const std::map<std::string, double>& labels,
                        const BoostingConfig& cfg, Trait trait, TrainingTrace* trace = nullptr) {
  if (labels.empty()) throw std::invalid_argument("empty label set");
  std::vector<double> y;
  y.reserve(views.users.size());
  for (const auto& u : views.users) {
    auto it = labels.find(u);
    if (it == labels.end()) throw std::invalid_argument("no label for user " + u);
    y.push_back(it->second);
  }
  return train(views.rows.view(), y, views.feature_dim, views.concepts, cfg, trait, trace);
}

/// Trait labels of the view-matrix users, in view-matrix order.
inline std::map<std::string, double> trait_labels(const Dataset& ds, const ViewMatrix& views, Trait t) {
  std::map<std::string, double> out;
  for (const auto& u : views.users) out[u] = ds.users.at(u).trait(t);
  return out;
}

inline nlohmann::json VgbdtModel::to_json() const {
  nlohmann::json rounds_json = nlohmann::json::array();
  for (const auto& r : rounds) {
    rounds_json.push_back({{"view", r.view}, {"concept", r.concept_name}, {"tree", r.tree.to_json()}});
  }
  return {{"version", kModelSchemaVersion},
          {"trait", std::string(to_string(trait))},
          {"F0", f0},
          {"shrinkage", shrinkage},
          {"feature_dim", feature_dim},
          {"views", views},
          {"rounds", rounds_json}};
}

inline VgbdtModel VgbdtModel::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("version")) throw DataError("model: missing version tag");
  if (j.at("version") != kModelSchemaVersion) {
    throw DataError("model: unsupported schema version " + j.at("version").dump());
  }
  try {
    VgbdtModel m;
    const auto trait = parse_trait(j.at("trait").get<std::string>());
    if (!trait) throw DataError("model: unknown trait " + j.at("trait").dump());
    m.trait = *trait;
    m.f0 = j.at("F0").get<double>();
    m.shrinkage = j.at("shrinkage").get<double>();
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.views = j.at("views").get<std::vector<std::string>>();
    for (const auto& r : j.at("rounds")) {
      BoostingRound round;
      round.view = r.at("view").get<std::size_t>();
      round.concept_name = r.at("concept").get<std::string>();
      round.tree = RegressionTree::from_json(r.at("tree"));
      if (round.view >= m.views.size()) throw DataError("model: view index out of range");
      if (m.views[round.view] != round.concept_name) throw DataError("model: round concept does not match view");
      if (round.tree.max_feature() >= static_cast<int>(m.feature_dim)) {
        throw DataError("model: split feature exceeds feature_dim");
      }
      m.rounds.push_back(std::move(round));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model: corrupt file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("model: corrupt tree: ") + e.what());
  }
}

inline std::string model_bytes(const VgbdtModel& m) { return m.to_json().dump(2) + "\n"; }

inline std::string model_hash(const VgbdtModel& m) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(m.to_json().dump())));
  return buf;
}

inline void save_model(const VgbdtModel& m, const std::filesystem::path& path) {
  write_file_atomic(path, model_bytes(m));
}

inline VgbdtModel load_model(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": corrupt model file: " + e.what());
  }
  return VgbdtModel::from_json(j);
}

}  // namespace vbfi
