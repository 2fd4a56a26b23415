#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vbfi/io.hpp"

namespace vbfi {

enum class Trait { O = 0, C, E, A, N };

inline constexpr std::array<Trait, 5> kAllTraits{Trait::O, Trait::C, Trait::E, Trait::A,
                                                 Trait::N};

inline constexpr double kTraitMin = -4.0;
inline constexpr double kTraitMax = 4.0;

inline std::string_view to_string(Trait t) {
  constexpr std::array<std::string_view, 5> names{"O", "C", "E", "A", "N"};
  return names[static_cast<std::size_t>(t)];
}

inline std::string_view trait_long_name(Trait t) {
  constexpr std::array<std::string_view, 5> names{"Openness", "Conscientiousness", "Extraversion",
                                                  "Agreeableness", "Neuroticism"};
  return names[static_cast<std::size_t>(t)];
}

inline std::optional<Trait> parse_trait(std::string_view s) {
  for (Trait t : kAllTraits) {
    if (s == to_string(t) || s == trait_long_name(t)) return t;
  }
  return std::nullopt;
}

inline std::size_t index_of(Trait t) { return static_cast<std::size_t>(t); }

struct ImageRecord {
  std::string image_id;
  std::vector<double> features;
  std::set<std::string> concepts;

  bool operator==(const ImageRecord&) const = default;
};

struct UserRecord {
  std::string user_id;
  std::vector<std::string> favorite_image_ids;
  std::array<double, 5> traits{};

  double trait(Trait t) const { return traits[index_of(t)]; }

  bool operator==(const UserRecord&) const = default;
};

struct Dataset {
  std::map<std::string, ImageRecord> images;
  std::map<std::string, UserRecord> users;
  std::size_t feature_dim = 0;

  bool operator==(const Dataset&) const = default;
};

/// Checks every Dataset invariant and returns one human-readable line per
/// violation, each naming the offending image or user. Empty means valid.
inline std::vector<std::string> validate_dataset(const Dataset& ds) {
  std::vector<std::string> out;
  for (const auto& [id, img] : ds.images) {
    if (img.image_id != id) out.push_back("image " + id + ": id does not match its key");
    if (img.features.size() != ds.feature_dim) {
      out.push_back("image " + id + ": has " + std::to_string(img.features.size()) +
                    " features, expected " + std::to_string(ds.feature_dim));
    }
    for (double v : img.features) {
      if (!std::isfinite(v)) {
        out.push_back("image " + id + ": non-finite feature value");
        break;
      }
    }
    if (img.concepts.empty()) out.push_back("image " + id + ": no concepts");
  }
  for (const auto& [id, user] : ds.users) {
    if (user.user_id != id) out.push_back("user " + id + ": id does not match its key");
    if (user.favorite_image_ids.empty()) out.push_back("user " + id + ": empty favorites");
    for (const auto& img : user.favorite_image_ids) {
      if (!ds.images.contains(img)) {
        out.push_back("user " + id + ": dangling reference to image " + img);
      }
    }
    for (Trait t : kAllTraits) {
      const double v = user.trait(t);
      if (!std::isfinite(v) || v < kTraitMin || v > kTraitMax) {
        out.push_back("user " + id + ": trait " + std::string(to_string(t)) + " out of range");
      }
    }
  }
  return out;
}

struct DatasetPaths {
  std::filesystem::path images;
  std::filesystem::path favorites;
  std::filesystem::path traits;

  static DatasetPaths in_dir(const std::filesystem::path& dir) {
    return {dir / "images.jsonl", dir / "favorites.csv", dir / "traits.csv"};
  }
};

namespace detail {

inline void require_header(const std::vector<std::string>& lines, const std::filesystem::path& p,
                           std::string_view expected) {
  if (lines.empty()) throw DataError(p, 1, "missing header");
  std::string header;
  for (char c : lines.front()) {
    if (c != ' ') header.push_back(c);
  }
  // Strip a UTF-8 byte-order mark.
  if (header.rfind("\xEF\xBB\xBF", 0) == 0) header.erase(0, 3);
  if (header != expected) {
    throw DataError(p, 1, "bad header, expected `" + std::string(expected) + "`");
  }
}

}  // namespace detail

inline std::map<std::string, ImageRecord> load_images(const std::filesystem::path& path,
                                                      std::size_t& feature_dim) {
  std::map<std::string, ImageRecord> images;
  const auto lines = read_lines(path);
  std::optional<std::size_t> dim;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string line = trim(lines[ln]);
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path, ln + 1, std::string("malformed JSON: ") + e.what());
    }
    ImageRecord rec;
    try {
      rec.image_id = j.at("image_id").get<std::string>();
      rec.features = j.at("features").get<std::vector<double>>();
      for (const auto& c : j.at("concepts")) rec.concepts.insert(c.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path, ln + 1, std::string("malformed image record: ") + e.what());
    }
    if (rec.image_id.empty()) throw DataError(path, ln + 1, "empty image_id");
    for (double v : rec.features) {
      if (!std::isfinite(v)) throw DataError(path, ln + 1, "non-finite feature value");
    }
    if (!dim) dim = rec.features.size();
    if (rec.features.size() != *dim) {
      throw DataError(path, ln + 1,
                      "inconsistent feature dimension: " + std::to_string(rec.features.size()) +
                          " vs " + std::to_string(*dim));
    }
    if (rec.concepts.empty()) throw DataError(path, ln + 1, "image has no concepts");
    const std::string id = rec.image_id;
    if (!images.emplace(id, std::move(rec)).second) {
      throw DataError(path, ln + 1, "duplicate image_id " + id);
    }
  }
  feature_dim = dim.value_or(0);
  return images;
}

/// Reads the three dataset files and returns a fully validated Dataset.
/// Throws DataError carrying file and line for the first problem found.
inline Dataset load_dataset(const std::filesystem::path& images_path,
                            const std::filesystem::path& favorites_path,
                            const std::filesystem::path& traits_path) {
  Dataset ds;
  ds.images = load_images(images_path, ds.feature_dim);

  std::map<std::string, std::vector<std::string>> favorites;
  {
    const auto lines = read_lines(favorites_path);
    detail::require_header(lines, favorites_path, "user_id,image_id");
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
      if (trim(lines[ln]).empty()) continue;
      const auto f = split_csv(lines[ln]);
      if (f.size() != 2 || f[0].empty() || f[1].empty()) {
        throw DataError(favorites_path, ln + 1, "expected `user_id,image_id`");
      }
      if (!ds.images.contains(f[1])) {
        throw DataError(favorites_path, ln + 1, "dangling reference to image " + f[1]);
      }
      favorites[f[0]].push_back(f[1]);
    }
  }

  {
    const auto lines = read_lines(traits_path);
    detail::require_header(lines, traits_path, "user_id,O,C,E,A,N");
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
      if (trim(lines[ln]).empty()) continue;
      const auto f = split_csv(lines[ln]);
      if (f.size() != 6 || f[0].empty()) {
        throw DataError(traits_path, ln + 1, "expected 6 fields `user_id,O,C,E,A,N`");
      }
      UserRecord user;
      user.user_id = f[0];
      for (std::size_t t = 0; t < 5; ++t) {
        double v = 0.0;
        if (!parse_double(f[t + 1], v)) {
          throw DataError(traits_path, ln + 1, "missing or non-numeric trait " +
                                                   std::string(to_string(kAllTraits[t])));
        }
        if (!std::isfinite(v) || v < kTraitMin || v > kTraitMax) {
          throw DataError(traits_path, ln + 1,
                          "trait out of range: " + std::string(to_string(kAllTraits[t])) + "=" +
                              f[t + 1]);
        }
        user.traits[t] = v;
      }
      if (ds.users.contains(user.user_id)) {
        throw DataError(traits_path, ln + 1, "duplicate user_id " + user.user_id);
      }
      ds.users.emplace(user.user_id, std::move(user));
    }
  }

  for (auto& [uid, favs] : favorites) {
    auto it = ds.users.find(uid);
    if (it == ds.users.end()) {
      throw DataError(favorites_path.string() + ": user " + uid + " has no traits row");
    }
    it->second.favorite_image_ids = std::move(favs);
  }

  if (auto problems = validate_dataset(ds); !problems.empty()) {
    throw DataError("invalid dataset: " + problems.front());
  }
  return ds;
}

inline Dataset load_dataset(const DatasetPaths& p) {
  return load_dataset(p.images, p.favorites, p.traits);
}

inline nlohmann::json image_to_json(const ImageRecord& img) {
  return {{"image_id", img.image_id},
          {"features", img.features},
          {"concepts", std::vector<std::string>(img.concepts.begin(), img.concepts.end())}};
}

/// Writes the dataset in the three ingestion formats; output is
/// deterministic and loads back to an equal Dataset.
inline void save_dataset(const Dataset& ds, const DatasetPaths& p) {
  std::string images;
  for (const auto& [id, img] : ds.images) {
    images += image_to_json(img).dump();
    images += '\n';
  }
  std::string favorites = "user_id,image_id\n";
  std::string traits = "user_id,O,C,E,A,N\n";
  for (const auto& [id, user] : ds.users) {
    for (const auto& img : user.favorite_image_ids) favorites += id + "," + img + "\n";
    traits += id;
    for (double v : user.traits) traits += "," + format_double(v);
    traits += '\n';
  }
  write_file_atomic(p.images, images);
  write_file_atomic(p.favorites, favorites);
  write_file_atomic(p.traits, traits);
}

}  // namespace vbfi
