#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vbfi/clustering.hpp"
#include "vbfi/concept_catalog.hpp"
#include "vbfi/data_model.hpp"
#include "vbfi/io.hpp"
#include "vbfi/random.hpp"
#include "vbfi/vgbdt.hpp"

namespace vbfi {

struct ImageOption {
  std::string image_id;
  int leaf_index = 1;
  double leaf_value = 0.0;
  int cluster_rank = 1;

  bool operator==(const ImageOption&) const = default;
};

struct Question {
  Trait trait = Trait::O;
  int round = 1;  // 1-based
  std::string concept_name;
  std::vector<ImageOption> options;        // ascending leaf_index
  std::vector<std::size_t> display_order;  // on-screen position -> index into options

  const ImageOption* option_for_leaf(int leaf) const {
    for (const auto& o : options) {
      if (o.leaf_index == leaf) return &o;
    }
    return nullptr;
  }

  bool operator==(const Question&) const = default;
};

struct TraitSection {
  double f0 = 0.0;
  double shrinkage = 1.0;
  std::vector<Question> questions;  // ascending round

  bool operator==(const TraitSection&) const = default;
};

struct Questionnaire {
  std::string version_id;
  int cluster_choice = 1;
  std::uint64_t seed = 0;
  std::map<Trait, TraitSection> traits;
  std::map<Trait, std::string> model_hashes;
  std::vector<std::string> warnings;  // design diagnostics, not serialized

  std::size_t question_count() const {
    std::size_t n = 0;
    for (const auto& [t, s] : traits) n += s.questions.size();
    return n;
  }

  const Question* find(Trait t, int round) const {
    auto it = traits.find(t);
    if (it == traits.end()) return nullptr;
    for (const auto& q : it->second.questions) {
      if (q.round == round) return &q;
    }
    return nullptr;
  }
};

// Invalid or incomplete response sheet.
class ResponseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ResponseChoice {
  Trait trait = Trait::O;
  int round = 1;
  int leaf_index = 1;

  bool operator==(const ResponseChoice&) const = default;
};

struct ResponseSheet {
  std::string subject_id;
  std::string version_id;
  std::vector<ResponseChoice> choices;
  std::optional<int> self_rating;  // 1..7
  std::string started_at;          // ISO-8601, may be empty
  std::string finished_at;

  bool operator==(const ResponseSheet&) const = default;

  nlohmann::json to_json() const {
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : choices) {
      cs.push_back({{"trait", std::string(to_string(c.trait))}, {"round", c.round}, {"leaf_index", c.leaf_index}});
    }
    nlohmann::json j = {{"subject_id", subject_id}, {"version_id", version_id}, {"choices", cs}};
    j["self_rating"] = self_rating ? nlohmann::json(*self_rating) : nlohmann::json(nullptr);
    j["started_at"] = started_at.empty() ? nlohmann::json(nullptr) : nlohmann::json(started_at);
    j["finished_at"] = finished_at.empty() ? nlohmann::json(nullptr) : nlohmann::json(finished_at);
    return j;
  }

  static ResponseSheet from_json(const nlohmann::json& j) {
    try {
      ResponseSheet r;
      r.subject_id = j.at("subject_id").get<std::string>();
      r.version_id = j.value("version_id", std::string());
      for (const auto& c : j.at("choices")) {
        const auto t = parse_trait(c.at("trait").get<std::string>());
        if (!t) throw ResponseError("unknown trait " + c.at("trait").dump());
        r.choices.push_back({*t, c.at("round").get<int>(), c.at("leaf_index").get<int>()});
      }
      if (j.contains("self_rating") && !j.at("self_rating").is_null()) {
        const int rating = j.at("self_rating").get<int>();
        if (rating < 1 || rating > 7) throw ResponseError("self_rating must be in 1..7");
        r.self_rating = rating;
      }
      if (j.contains("started_at") && j.at("started_at").is_string()) r.started_at = j.at("started_at");
      if (j.contains("finished_at") && j.at("finished_at").is_string()) r.finished_at = j.at("finished_at");
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw ResponseError(std::string("malformed response sheet: ") + e.what());
    }
  }
};

/// Reads responses.jsonl. When a subject appears more than once for the same
/// version, the last row wins, so a journal replay never double-counts.
inline std::vector<ResponseSheet> load_responses(const std::filesystem::path& path) {
  std::vector<ResponseSheet> rows;
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  const auto lines = read_lines(path);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    ResponseSheet sheet;
    try {
      sheet = ResponseSheet::from_json(nlohmann::json::parse(lines[ln]));
    } catch (const std::exception& e) {
      throw DataError(path, ln + 1, e.what());
    }
    auto key = std::make_pair(sheet.subject_id, sheet.version_id);
    if (auto it = slot.find(key); it != slot.end()) {
      rows[it->second] = std::move(sheet);
    } else {
      slot.emplace(key, rows.size());
      rows.push_back(std::move(sheet));
    }
  }
  return rows;
}

/// Per trait: F0 + shrinkage * (sum of chosen leaf
/// values), accumulated round by round exactly like VgbdtModel::predict.
/// Throws ResponseError on a missing, duplicate, or unknown choice.
inline std::map<Trait, double> score_response(const Questionnaire& q, const ResponseSheet& r) {
  std::map<std::pair<Trait, int>, int> chosen;
  for (const auto& c : r.choices) {
    if (!q.find(c.trait, c.round)) {
      throw ResponseError("no question for trait " + std::string(to_string(c.trait)) + " round " +
                          std::to_string(c.round));
    }
    if (!chosen.emplace(std::make_pair(c.trait, c.round), c.leaf_index).second) {
      throw ResponseError("duplicate choice for trait " + std::string(to_string(c.trait)) + " round " +
                          std::to_string(c.round));
    }
  }
  std::map<Trait, double> scores;
  for (const auto& [trait, section] : q.traits) {
    double acc = section.f0;
    for (const auto& question : section.questions) {
      auto it = chosen.find({trait, question.round});
      if (it == chosen.end()) {
        throw ResponseError("missing choice for trait " + std::string(to_string(trait)) + " round " +
                            std::to_string(question.round));
      }
      const ImageOption* opt = question.option_for_leaf(it->second);
      if (!opt) {
        throw ResponseError("unknown leaf_index " + std::to_string(it->second) + " for trait " +
                            std::string(to_string(trait)) + " round " + std::to_string(question.round));
      }
      acc += section.shrinkage * opt->leaf_value;
    }
    scores[trait] = acc;
  }
  return scores;
}

namespace detail {

struct ConceptClusters {
  std::vector<std::string> image_ids;  // ascending
  Matrix features;
  ApResult ap;
  std::vector<std::size_t> rank_of;  // item -> 1-based cluster rank
};

inline ConceptClusters cluster_concept(const Dataset& ds, const std::set<std::string>& images,
                                       const ApConfig& cfg) {
  ConceptClusters cc;
  cc.image_ids.assign(images.begin(), images.end());
  cc.features = Matrix(cc.image_ids.size(), ds.feature_dim);
  for (std::size_t i = 0; i < cc.image_ids.size(); ++i) {
    const auto& f = ds.images.at(cc.image_ids[i]).features;
    std::copy(f.begin(), f.end(), cc.features.row(i).begin());
  }
  cc.ap = affinity_propagation(similarity_matrix(cc.features, cfg.preference), cfg);
  cc.rank_of.assign(cc.image_ids.size(), 0);
  for (std::size_t c = 0; c < cc.ap.clusters.size(); ++c) {
    for (std::size_t m : cc.ap.clusters[c].members) cc.rank_of[m] = c + 1;
  }
  return cc;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

}  // namespace detail

/// Compiles per-trait models into a visual questionnaire.
///
/// For each trait and round, every image of the round's concept is routed
/// through the round's tree to get its leaf label, and the concept's images
/// are grouped with affinity propagation. Options come from the cluster of
/// rank `cluster_choice` (1 = largest): per leaf label, the member closest to
/// the cluster exemplar, lexicographically smallest id on ties, images
/// already used elsewhere in the questionnaire last. A label absent from
/// that cluster is taken from the following clusters in rank order
/// (wrapping around). A label that no image of the concept carries is an
/// error, since that answer bucket would be unreachable.
inline Questionnaire design_questionnaire(const std::map<Trait, VgbdtModel>& models, const Dataset& ds,
                                          const ConceptIndex& idx, int cluster_choice, const ApConfig& ap_cfg,
                                          std::uint64_t seed, std::string version_id = {}) {
  if (cluster_choice < 1) throw std::invalid_argument("cluster_choice must be >= 1");
  ap_cfg.validate();
  Questionnaire q;
  q.version_id = version_id.empty() ? "vbfi-" + std::to_string(cluster_choice) : std::move(version_id);
  q.cluster_choice = cluster_choice;
  q.seed = seed;

  std::map<std::string, detail::ConceptClusters> cache;
  std::set<std::string> used_images;
  std::vector<std::string> missing;

  for (const auto& [trait, model] : models) {
    if (model.trait != trait) throw std::invalid_argument("model keyed under the wrong trait");
    if (model.feature_dim != ds.feature_dim) {
      throw DataError("model for trait " + std::string(to_string(trait)) + " expects feature_dim " +
                      std::to_string(model.feature_dim) + ", dataset has " + std::to_string(ds.feature_dim));
    }
    TraitSection section;
    section.f0 = model.f0;
    section.shrinkage = model.shrinkage;
    q.model_hashes[trait] = model_hash(model);

    for (std::size_t m = 0; m < model.rounds.size(); ++m) {
      const auto& round = model.rounds[m];
      const std::string where = "trait " + std::string(to_string(trait)) + " round " + std::to_string(m + 1);
      auto img_it = idx.image_sets.find(round.concept_name);
      if (img_it == idx.image_sets.end() || img_it->second.empty()) {
        throw DataError(where + ": concept " + round.concept_name + " has no images");
      }
      auto cit = cache.find(round.concept_name);
      if (cit == cache.end()) {
        cit = cache.emplace(round.concept_name, detail::cluster_concept(ds, img_it->second, ap_cfg)).first;
        if (!cit->second.ap.converged) {
          q.warnings.push_back("affinity propagation did not converge for concept " + round.concept_name);
        }
      }
      const auto& cc = cit->second;
      const std::size_t n_clusters = cc.ap.clusters.size();
      if (static_cast<std::size_t>(cluster_choice) > n_clusters) {
        q.warnings.push_back(where + ": concept " + round.concept_name + " has only " +
                             std::to_string(n_clusters) + " cluster(s); using fallback order");
      }

      std::vector<int> label(cc.image_ids.size());
      for (std::size_t i = 0; i < cc.image_ids.size(); ++i) label[i] = round.tree.assign_leaf(cc.features.row(i));

      // Ranks to search, starting at the requested one and wrapping.
      std::vector<std::size_t> rank_order;
      const std::size_t start = std::min<std::size_t>(static_cast<std::size_t>(cluster_choice), n_clusters);
      for (std::size_t k = 0; k < n_clusters; ++k) rank_order.push_back((start - 1 + k) % n_clusters + 1);

      Question question;
      question.trait = trait;
      question.round = static_cast<int>(m + 1);
      question.concept_name = round.concept_name;
      const auto leaf_values = round.tree.leaf_values();
      for (int leaf = 1; leaf <= static_cast<int>(round.tree.num_leaves()); ++leaf) {
        std::optional<ImageOption> pick;
        for (std::size_t rank : rank_order) {
          const auto& cluster = cc.ap.clusters[rank - 1];
          const auto ex = cc.features.row(cluster.exemplar);
          // (already used, distance to exemplar, id)
          std::optional<std::tuple<bool, double, std::string>> best;
          for (std::size_t i : cluster.members) {
            if (label[i] != leaf) continue;
            std::tuple<bool, double, std::string> key{used_images.contains(cc.image_ids[i]),
                                                     detail::squared_distance(cc.features.row(i), ex),
                                                     cc.image_ids[i]};
            if (!best || key < *best) best = std::move(key);
          }
          if (best) {
            pick = ImageOption{std::get<2>(*best), leaf, leaf_values[static_cast<std::size_t>(leaf - 1)],
                               static_cast<int>(rank)};
            break;
          }
        }
        if (!pick) {
          missing.push_back(where + " leaf " + std::to_string(leaf) + " (concept " + round.concept_name + ")");
          continue;
        }
        question.options.push_back(std::move(*pick));
      }
      for (const auto& o : question.options) used_images.insert(o.image_id);

      question.display_order.resize(question.options.size());
      std::iota(question.display_order.begin(), question.display_order.end(), std::size_t{0});
      Rng rng(seed, "display/" + std::string(to_string(trait)) + "/" + std::to_string(m + 1));
      rng.shuffle(question.display_order);
      section.questions.push_back(std::move(question));
    }
    q.traits.emplace(trait, std::move(section));
  }
  if (!missing.empty()) {
    std::string msg = "no image carries leaf label for: " + missing.front();
    for (std::size_t i = 1; i < missing.size(); ++i) msg += "; " + missing[i];
    throw DataError(msg);
  }
  return q;
}

inline nlohmann::json questionnaire_to_json(const Questionnaire& q) {
  nlohmann::json traits = nlohmann::json::object();
  for (const auto& [trait, section] : q.traits) {
    nlohmann::json questions = nlohmann::json::array();
    for (const auto& question : section.questions) {
      nlohmann::json options = nlohmann::json::array();
      for (const auto& o : question.options) {
        options.push_back({{"image_id", o.image_id},
                           {"leaf_index", o.leaf_index},
                           {"leaf_value", o.leaf_value},
                           {"cluster_rank", o.cluster_rank}});
      }
      questions.push_back({{"round", question.round},
                           {"concept", question.concept_name},
                           {"options", options},
                           {"display_order", question.display_order}});
    }
    traits[std::string(to_string(trait))] = {
        {"F0", section.f0}, {"shrinkage", section.shrinkage}, {"questions", questions}};
  }
  nlohmann::json hashes = nlohmann::json::object();
  for (const auto& [t, h] : q.model_hashes) hashes[std::string(to_string(t))] = h;
  return {{"version_id", q.version_id},
          {"cluster_choice", q.cluster_choice},
          {"traits", traits},
          {"metadata", {{"seed", q.seed}, {"model_hashes", hashes}}}};
}

/// Manifest bytes (questionnaire.json). Deterministic for a given questionnaire.
inline std::string render_manifest(const Questionnaire& q) { return questionnaire_to_json(q).dump(2) + "\n"; }

inline Questionnaire questionnaire_from_json(const nlohmann::json& j) {
  try {
    Questionnaire q;
    q.version_id = j.at("version_id").get<std::string>();
    q.cluster_choice = j.at("cluster_choice").get<int>();
    if (j.contains("metadata")) {
      const auto& meta = j.at("metadata");
      q.seed = meta.value("seed", std::uint64_t{0});
      if (meta.contains("model_hashes")) {
        for (const auto& [k, v] : meta.at("model_hashes").items()) {
          if (auto t = parse_trait(k)) q.model_hashes[*t] = v.get<std::string>();
        }
      }
    }
    for (const auto& [key, sj] : j.at("traits").items()) {
      const auto trait = parse_trait(key);
      if (!trait) throw DataError("questionnaire: unknown trait " + key);
      TraitSection section;
      section.f0 = sj.at("F0").get<double>();
      section.shrinkage = sj.at("shrinkage").get<double>();
      for (const auto& qj : sj.at("questions")) {
        Question question;
        question.trait = *trait;
        question.round = qj.at("round").get<int>();
        question.concept_name = qj.at("concept").get<std::string>();
        std::set<int> leaves;
        for (const auto& oj : qj.at("options")) {
          ImageOption o{oj.at("image_id").get<std::string>(), oj.at("leaf_index").get<int>(),
                        oj.at("leaf_value").get<double>(), oj.value("cluster_rank", 1)};
          if (!leaves.insert(o.leaf_index).second) {
            throw DataError("questionnaire: duplicate leaf_index in trait " + key + " round " +
                            std::to_string(question.round));
          }
          question.options.push_back(std::move(o));
        }
        question.display_order = qj.at("display_order").get<std::vector<std::size_t>>();
        auto sorted = question.display_order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
          if (sorted[i] != i || sorted.size() != question.options.size()) {
            throw DataError("questionnaire: display_order is not a permutation in trait " + key + " round " +
                            std::to_string(question.round));
          }
        }
        section.questions.push_back(std::move(question));
      }
      std::sort(section.questions.begin(), section.questions.end(),
                [](const Question& a, const Question& b) { return a.round < b.round; });
      q.traits.emplace(*trait, std::move(section));
    }
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("questionnaire: malformed manifest: ") + e.what());
  }
}

inline Questionnaire load_questionnaire(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed questionnaire: " + e.what());
  }
  return questionnaire_from_json(j);
}

inline void save_questionnaire(const Questionnaire& q, const std::filesystem::path& path) {
  write_file_atomic(path, render_manifest(q));
}

}  // namespace vbfi
