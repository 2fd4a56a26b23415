#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vbfi/data_model.hpp"
#include "vbfi/io.hpp"
#include "vbfi/matrix.hpp"
#include "vbfi/random.hpp"

namespace vbfi {

// Hypernym DAG. Level 1 is a concept with no children; a parent sits one
// level above its nearest child.
struct ConceptHierarchy {
  std::map<std::string, std::vector<std::string>> parents;
  std::map<std::string, int> level;

  static ConceptHierarchy from_edges(const std::vector<std::pair<std::string, std::string>>& edges);
  static ConceptHierarchy from_json(const nlohmann::json& j);
  static ConceptHierarchy load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // Throws std::invalid_argument naming a concept on a cycle.
  void check_acyclic() const;
};

inline void ConceptHierarchy::check_acyclic() const {
  enum class Mark { kNone, kActive, kDone };
  std::map<std::string, Mark> mark;
  // Iterative DFS; WordNet-sized hierarchies are deep enough to make recursion risky.
  for (const auto& [start, _] : parents) {
    if (mark[start] != Mark::kNone) continue;
    std::vector<std::pair<std::string, std::size_t>> stack{{start, 0}};
    mark[start] = Mark::kActive;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      auto it = parents.find(node);
      if (it == parents.end() || next >= it->second.size()) {
        mark[node] = Mark::kDone;
        stack.pop_back();
        continue;
      }
      const std::string& p = it->second[next++];
      Mark& m = mark[p];
      if (m == Mark::kActive) throw std::invalid_argument("cycle detected in hierarchy at " + p);
      if (m == Mark::kNone) {
        m = Mark::kActive;
        stack.emplace_back(p, 0);
      }
    }
  }
}

inline ConceptHierarchy ConceptHierarchy::from_edges(
    const std::vector<std::pair<std::string, std::string>>& edges) {
  ConceptHierarchy h;
  std::map<std::string, std::vector<std::string>> children;
  std::set<std::string> all;
  for (const auto& [child, parent] : edges) {
    auto& ps = h.parents[child];
    if (std::find(ps.begin(), ps.end(), parent) == ps.end()) ps.push_back(parent);
    children[parent].push_back(child);
    all.insert(child);
    all.insert(parent);
  }
  h.check_acyclic();

  // Multi-source BFS upward from the leaves gives the shortest distance.
  std::deque<std::string> queue;
  for (const auto& c : all) {
    if (!children.contains(c)) {
      h.level[c] = 1;
      queue.push_back(c);
    }
  }
  while (!queue.empty()) {
    const std::string c = queue.front();
    queue.pop_front();
    auto it = h.parents.find(c);
    if (it == h.parents.end()) continue;
    for (const auto& p : it->second) {
      if (!h.level.contains(p)) {
        h.level[p] = h.level[c] + 1;
        queue.push_back(p);
      }
    }
  }
  return h;
}

inline ConceptHierarchy ConceptHierarchy::from_json(const nlohmann::json& j) {
  std::vector<std::pair<std::string, std::string>> edges;
  for (const auto& e : j.at("edges")) {
    edges.emplace_back(e.at("child").get<std::string>(), e.at("parent").get<std::string>());
  }
  return from_edges(edges);
}

inline ConceptHierarchy ConceptHierarchy::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed hierarchy: " + e.what());
  }
}

inline nlohmann::json ConceptHierarchy::to_json() const {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [child, ps] : parents) {
    for (const auto& p : ps) edges.push_back({{"child", child}, {"parent", p}});
  }
  return {{"edges", edges}};
}

/// Adds to every image all ancestors reachable within `extra_levels` parent
/// steps. Original concepts are kept; the result is deduplicated.
inline Dataset expand_concepts(const Dataset& ds, const ConceptHierarchy& hierarchy,
                               int extra_levels) {
  if (extra_levels < 0) throw std::invalid_argument("extra_levels must be >= 0");
  hierarchy.check_acyclic();
  Dataset out = ds;
  std::map<std::string, std::set<std::string>> memo;
  auto ancestors = [&](const std::string& c) -> const std::set<std::string>& {
    auto [it, fresh] = memo.try_emplace(c);
    if (!fresh) return it->second;
    std::set<std::string> frontier{c};
    for (int step = 0; step < extra_levels && !frontier.empty(); ++step) {
      std::set<std::string> next;
      for (const auto& f : frontier) {
        auto p = hierarchy.parents.find(f);
        if (p == hierarchy.parents.end()) continue;
        for (const auto& parent : p->second) {
          if (it->second.insert(parent).second) next.insert(parent);
        }
      }
      frontier = std::move(next);
    }
    return it->second;
  };
  for (auto& [id, img] : out.images) {
    std::set<std::string> expanded = img.concepts;
    for (const auto& c : img.concepts) {
      const auto& anc = ancestors(c);
      expanded.insert(anc.begin(), anc.end());
    }
    img.concepts = std::move(expanded);
  }
  return out;
}

struct ConceptIndex {
  std::map<std::string, std::set<std::string>> image_sets;
  std::map<std::string, std::set<std::string>> user_sets;
};

inline ConceptIndex build_index(const Dataset& ds) {
  ConceptIndex idx;
  for (const auto& [id, img] : ds.images) {
    for (const auto& c : img.concepts) idx.image_sets[c].insert(id);
  }
  for (const auto& [uid, user] : ds.users) {
    for (const auto& img_id : user.favorite_image_ids) {
      auto it = ds.images.find(img_id);
      if (it == ds.images.end()) continue;
      for (const auto& c : it->second.concepts) idx.user_sets[c].insert(uid);
    }
  }
  return idx;
}

/// Concepts favored by at least `min_users` users, each with a seeded
/// uniform sample of `sample_to` of its users (returned sorted). The sample
/// for a concept depends only on (seed, concept name).
inline std::map<std::string, std::vector<std::string>> eligible_concepts(const ConceptIndex& idx,
                                                                         std::size_t min_users,
                                                                         std::size_t sample_to,
                                                                         std::uint64_t seed) {
  if (min_users < 1) throw std::invalid_argument("min_users must be >= 1");
  if (sample_to > min_users) throw std::invalid_argument("sample_to must be <= min_users");
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [name, users] : idx.user_sets) {
    if (users.size() < min_users) continue;
    std::vector<std::string> pool(users.begin(), users.end());
    Rng rng(seed, "eligible/" + name);
    // Partial Fisher-Yates: the first sample_to slots are a uniform subset.
    for (std::size_t i = 0; i < sample_to; ++i) {
      std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
    }
    pool.resize(sample_to);
    std::sort(pool.begin(), pool.end());
    out.emplace(name, std::move(pool));
  }
  return out;
}

struct CoFavored {
  std::vector<std::string> concepts;
  std::set<std::string> common_users;
};

/// Greedy selection of a concept list whose user sets intersect in at least
/// `min_common_users` users. Seeds with the most-favored concept, then keeps
/// adding whichever remaining concept leaves the intersection largest
/// (ties go to the earlier concept in size-descending, name-ascending order).
inline CoFavored co_favored_concepts(const ConceptIndex& idx, std::size_t min_common_users) {
  if (min_common_users < 1) throw std::invalid_argument("min_common_users must be >= 1");
  std::vector<const std::pair<const std::string, std::set<std::string>>*> order;
  for (const auto& entry : idx.user_sets) order.push_back(&entry);
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->second.size() > b->second.size();
  });
  if (order.empty() || order.front()->second.size() < min_common_users) {
    throw DataError("no concept is favored by " + std::to_string(min_common_users) + " users");
  }

  CoFavored out;
  out.concepts.push_back(order.front()->first);
  out.common_users = order.front()->second;
  std::vector<bool> used(order.size(), false);
  used[0] = true;
  while (true) {
    std::size_t best = order.size();
    std::size_t best_size = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (used[i]) continue;
      // Candidates smaller than the current best cannot beat it.
      if (best != order.size() && order[i]->second.size() <= best_size) break;
      std::size_t common = 0;
      for (const auto& u : order[i]->second) common += out.common_users.count(u);
      if (best == order.size() || common > best_size) {
        best = i;
        best_size = common;
      }
    }
    if (best == order.size() || best_size < min_common_users) break;
    used[best] = true;
    out.concepts.push_back(order[best]->first);
    std::set<std::string> next;
    for (const auto& u : order[best]->second) {
      if (out.common_users.contains(u)) next.insert(u);
    }
    out.common_users = std::move(next);
  }
  return out;
}

/// One concept per non-empty line; `#` starts a comment.
inline std::vector<std::string> read_concept_list(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (const auto& raw : read_lines(path)) {
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    out.push_back(std::move(line));
  }
  if (out.empty()) throw DataError(path.string() + ": empty concept list");
  return out;
}

enum class ViewAggregation { kMean, kFirst };

// K-view user representation. Row i of `rows` belongs to users[i]; block k
// (columns [k*d, (k+1)*d)) is the user's representation under concepts[k].
struct ViewMatrix {
  std::vector<std::string> concepts;
  std::vector<std::string> users;
  std::size_t feature_dim = 0;
  Matrix rows;
  std::map<std::pair<std::string, std::string>, std::size_t> coverage;

  std::size_t num_views() const noexcept { return concepts.size(); }

  std::span<const double> row(const std::string& user) const {
    auto it = std::lower_bound(users.begin(), users.end(), user);
    if (it == users.end() || *it != user) throw std::out_of_range("unknown user " + user);
    return rows.row(static_cast<std::size_t>(it - users.begin()));
  }
};

inline ViewMatrix build_views(const Dataset& ds, const std::vector<std::string>& concepts,
                              const std::set<std::string>& common_users,
                              ViewAggregation agg = ViewAggregation::kMean) {
  ViewMatrix vm;
  vm.concepts = concepts;
  vm.users.assign(common_users.begin(), common_users.end());
  vm.feature_dim = ds.feature_dim;
  const std::size_t d = ds.feature_dim;
  vm.rows = Matrix(vm.users.size(), concepts.size() * d);
  for (std::size_t u = 0; u < vm.users.size(); ++u) {
    auto uit = ds.users.find(vm.users[u]);
    if (uit == ds.users.end()) throw DataError("unknown user " + vm.users[u]);
    auto row = vm.rows.row(u);
    for (std::size_t k = 0; k < concepts.size(); ++k) {
      std::size_t count = 0;
      auto block = row.subspan(k * d, d);
      for (const auto& img_id : uit->second.favorite_image_ids) {
        const auto& img = ds.images.at(img_id);
        if (!img.concepts.contains(concepts[k])) continue;
        ++count;
        if (agg == ViewAggregation::kFirst && count > 1) continue;
        for (std::size_t j = 0; j < d; ++j) block[j] += img.features[j];
      }
      if (count == 0) {
        throw DataError("user " + vm.users[u] + " has no favorite image under concept " +
                        concepts[k]);
      }
      if (agg == ViewAggregation::kMean) {
        for (auto& v : block) v /= static_cast<double>(count);
      }
      vm.coverage[{vm.users[u], concepts[k]}] = count;
    }
  }
  return vm;
}

}  // namespace vbfi
