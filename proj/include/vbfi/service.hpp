#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "vbfi/data_model.hpp"
#include "vbfi/io.hpp"
#include "vbfi/questionnaire.hpp"
#include "vbfi/random.hpp"

namespace vbfi {

struct ServiceConfig {
  std::vector<Questionnaire> questionnaires;  // the first is the default version
  std::filesystem::path images_dir;
  std::filesystem::path journal = "responses.jsonl";
  std::string allow_origin;                   // empty: no CORS headers
  std::filesystem::path static_dir;           // empty: nothing mounted at /
};

struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Opaque option token: a hash of everything that identifies the option, so
// nothing about its leaf or value can be read off it.
inline std::string option_token(const Questionnaire& q, Trait t, int round, const ImageOption& o) {
  const std::string key = q.version_id + "|" + std::string(to_string(t)) + "|" + std::to_string(round) + "|" +
                          std::to_string(o.leaf_index) + "|" + o.image_id + "|" + std::to_string(q.seed);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(key)));
  return buf;
}

inline std::string image_content_type(const std::filesystem::path& p) {
  static const std::map<std::string, std::string> types{
      {".jpg", "image/jpeg"}, {".jpeg", "image/jpeg"}, {".png", "image/png"},   {".gif", "image/gif"},
      {".webp", "image/webp"}, {".svg", "image/svg+xml"}, {".bmp", "image/bmp"}};
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  auto it = types.find(ext);
  return it == types.end() ? "application/octet-stream" : it->second;
}

inline bool valid_image_id(std::string_view id) {
  static const std::regex re("^[A-Za-z0-9_.-]{1,200}$");
  return std::regex_match(id.begin(), id.end(), re) && id.find("..") == std::string_view::npos;
}

inline bool valid_session_id(std::string_view id) {
  static const std::regex re("^[A-Za-z0-9_-]{1,64}$");
  return std::regex_match(id.begin(), id.end(), re);
}

/// Questionnaire delivery and scoring backend.
///
/// Questionnaires are immutable after construction. Completed sessions live
/// in an index rebuilt from the journal at startup; the journal is appended
/// (and flushed) before a reply is sent, under one writer lock that also
/// covers the index update, so concurrent duplicate submissions persist once.
class QuestionnaireService {
 public:
  explicit QuestionnaireService(ServiceConfig cfg) : cfg_(std::move(cfg)), started_(std::chrono::steady_clock::now()) {
    if (cfg_.questionnaires.empty()) throw std::invalid_argument("service needs at least one questionnaire");
    for (const auto& q : cfg_.questionnaires) {
      if (versions_.contains(q.version_id)) throw std::invalid_argument("duplicate questionnaire version " + q.version_id);
      Version v;
      v.q = &q;
      for (const auto& [trait, section] : q.traits) {
        for (const auto& question : section.questions) {
          for (const auto& o : question.options) {
            v.tokens.emplace(option_token(q, trait, question.round, o), ResponseChoice{trait, question.round, o.leaf_index});
          }
        }
      }
      v.view = render_view(q);
      versions_.emplace(q.version_id, std::move(v));
    }
    replay_journal();
  }

  QuestionnaireService(const QuestionnaireService&) = delete;
  QuestionnaireService& operator=(const QuestionnaireService&) = delete;

  const std::string& default_version() const { return cfg_.questionnaires.front().version_id; }

  Reply questionnaire_view(const std::string& version) const {
    auto it = versions_.find(version.empty() ? default_version() : version);
    if (it == versions_.end()) return error(404, "unknown questionnaire version " + version);
    return {200, it->second.view};
  }

  Reply health() const {
    const double up = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    nlohmann::json j = {{"status", "ok"}, {"questionnaire_version", default_version()}, {"uptime", up},
                        {"responses", scored_.load()}};
    return {200, j.dump()};
  }

  Reply submit(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      return error(400, "request body is not valid JSON");
    }
    if (!j.is_object()) return error(400, "request body must be a JSON object");

    std::string version = default_version();
    if (j.contains("version_id") && !j["version_id"].is_null()) {
      if (!j["version_id"].is_string()) return error(400, "version_id must be a string");
      version = j["version_id"].get<std::string>();
    }
    auto vit = versions_.find(version);
    if (vit == versions_.end()) return error(400, "unknown questionnaire version " + version);
    const Version& v = vit->second;

    if (!j.contains("choices") || !j["choices"].is_array()) return error(400, "choices must be an array of option tokens");
    ResponseSheet sheet;
    sheet.version_id = version;
    for (const auto& tok : j["choices"]) {
      if (!tok.is_string()) return error(400, "choices must be option token strings");
      auto t = v.tokens.find(tok.get<std::string>());
      if (t == v.tokens.end()) return error(400, "invalid option token " + tok.get<std::string>());
      sheet.choices.push_back(t->second);
    }
    std::sort(sheet.choices.begin(), sheet.choices.end(), [](const ResponseChoice& a, const ResponseChoice& b) {
      return std::tie(a.trait, a.round, a.leaf_index) < std::tie(b.trait, b.round, b.leaf_index);
    });
    if (j.contains("self_rating") && !j["self_rating"].is_null()) {
      if (!j["self_rating"].is_number_integer()) return error(400, "self_rating must be an integer in 1..7");
      const auto rating = j["self_rating"].get<long long>();
      if (rating < 1 || rating > 7) return error(400, "self_rating must be an integer in 1..7");
      sheet.self_rating = static_cast<int>(rating);
    }
    if (j.contains("started_at") && j["started_at"].is_string()) sheet.started_at = j["started_at"];

    std::map<Trait, double> scores;
    try {
      scores = score_response(*v.q, sheet);
    } catch (const ResponseError& e) {
      return error(400, e.what());
    }

    std::string session;
    if (j.contains("session_id") && !j["session_id"].is_null()) {
      if (!j["session_id"].is_string() || !valid_session_id(j["session_id"].get<std::string>())) {
        return error(400, "session_id must be 1-64 characters of [A-Za-z0-9_-]");
      }
      session = j["session_id"].get<std::string>();
    }

    if (!session.empty()) {
      std::shared_lock lock(index_mutex_);
      if (auto it = sessions_.find(session); it != sessions_.end()) {
        if (auto r = settled(it->second, sheet)) return *r;
      }
    }

    std::lock_guard writer(journal_mutex_);
    if (session.empty()) {
      session = fresh_session_id();
    } else {
      std::shared_lock lock(index_mutex_);
      if (auto it = sessions_.find(session); it != sessions_.end()) {
        if (auto r = settled(it->second, sheet)) return *r;
        // Same choices with a new self-rating: falls through and supersedes.
      }
    }
    sheet.subject_id = session;
    sheet.finished_at = utc_timestamp();
    append_journal(sheet);
    Session rec{sheet, result_body(scores, session)};
    {
      std::unique_lock lock(index_mutex_);
      sessions_[session] = rec;
    }
    ++scored_;
    return {200, rec.body};
  }

  Reply image(const std::string& id) const {
    if (!valid_image_id(id)) return error(400, "malformed image id");
    if (cfg_.images_dir.empty()) return error(404, "no image directory configured");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::path found;
    if (fs::is_regular_file(cfg_.images_dir / id, ec)) {
      found = cfg_.images_dir / id;
    } else {
      for (const char* ext : {".jpg", ".jpeg", ".png", ".gif", ".webp", ".svg"}) {
        if (fs::is_regular_file(cfg_.images_dir / (id + ext), ec)) {
          found = cfg_.images_dir / (id + ext);
          break;
        }
      }
    }
    if (found.empty()) return error(404, "unknown image " + id);
    try {
      return {200, read_file(found), image_content_type(found)};
    } catch (const DataError&) {
      return error(404, "unknown image " + id);
    }
  }

  std::size_t session_count() const {
    std::shared_lock lock(index_mutex_);
    return sessions_.size();
  }

  void mount(httplib::Server& server) {
    auto send = [this](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body, r.content_type);
      add_cors(res);
    };
    server.Get("/api/questionnaire", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, questionnaire_view(req.has_param("version") ? req.get_param_value("version") : std::string()));
    });
    server.Post("/api/responses", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, submit(req.body));
    });
    server.Get("/api/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Get(R"(/images/(.+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, image(req.matches[1].str()));
    });
    server.Options(R"(/api/.*)", [this](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
      add_cors(res);
    });
    if (!cfg_.static_dir.empty()) server.set_mount_point("/", cfg_.static_dir.string());
  }

 private:
  struct Version {
    const Questionnaire* q = nullptr;
    std::unordered_map<std::string, ResponseChoice> tokens;
    std::string view;
  };

  struct Session {
    ResponseSheet sheet;
    std::string body;
  };

  static Reply error(int status, const std::string& msg) { return {status, nlohmann::json{{"error", msg}}.dump()}; }

  static std::string result_body(const std::map<Trait, double>& scores, const std::string& session) {
    nlohmann::json s = nlohmann::json::object();
    for (const auto& [t, v] : scores) s[std::string(to_string(t))] = v;
    return nlohmann::json{{"scores", s}, {"session_id", session}}.dump();
  }

  // Reply for a submission against an existing completed session, or
  // nothing if the submission should be journaled as a superseding row.
  static std::optional<Reply> settled(const Session& s, const ResponseSheet& incoming) {
    if (s.sheet.version_id != incoming.version_id || s.sheet.choices != incoming.choices) {
      return error(409, "session already completed with different choices");
    }
    if (!incoming.self_rating || incoming.self_rating == s.sheet.self_rating) return Reply{200, s.body};
    return std::nullopt;
  }

  std::string render_view(const Questionnaire& q) const {
    nlohmann::json questions = nlohmann::json::array();
    for (const auto& [trait, section] : q.traits) {
      for (const auto& question : section.questions) {
        nlohmann::json options = nlohmann::json::array();
        for (std::size_t pos : question.display_order) {
          const auto& o = question.options[pos];
          options.push_back({{"token", option_token(q, trait, question.round, o)},
                             {"image_url", "/images/" + o.image_id}});
        }
        questions.push_back({{"trait", std::string(to_string(trait))},
                             {"round", question.round},
                             {"concept", question.concept_name},
                             {"options", options}});
      }
    }
    return nlohmann::json{{"version_id", q.version_id}, {"question_count", questions.size()}, {"questions", questions}}
        .dump();
  }

  void replay_journal() {
    std::error_code ec;
    if (!std::filesystem::exists(cfg_.journal, ec)) return;
    for (auto& sheet : load_responses(cfg_.journal)) {
      auto vit = versions_.find(sheet.version_id);
      if (vit == versions_.end()) continue;  // another questionnaire's rows
      std::sort(sheet.choices.begin(), sheet.choices.end(), [](const ResponseChoice& a, const ResponseChoice& b) {
        return std::tie(a.trait, a.round, a.leaf_index) < std::tie(b.trait, b.round, b.leaf_index);
      });
      std::map<Trait, double> scores;
      try {
        scores = score_response(*vit->second.q, sheet);
      } catch (const ResponseError& e) {
        throw DataError(cfg_.journal.string() + ": session " + sheet.subject_id + ": " + e.what());
      }
      const std::string id = sheet.subject_id;
      sessions_[id] = Session{std::move(sheet), result_body(scores, id)};
    }
  }

  void append_journal(const ResponseSheet& sheet) {
    if (cfg_.journal.has_parent_path()) std::filesystem::create_directories(cfg_.journal.parent_path());
    std::ofstream out(cfg_.journal, std::ios::app | std::ios::binary);
    out << sheet.to_json().dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to journal " + cfg_.journal.string());
  }

  std::string fresh_session_id() {
    static thread_local std::mt19937_64 gen{std::random_device{}()};
    for (;;) {
      char buf[33];
      std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(gen()),
                    static_cast<unsigned long long>(gen()));
      std::shared_lock lock(index_mutex_);
      if (!sessions_.contains(buf)) return buf;
    }
  }

  void add_cors(httplib::Response& res) const {
    if (cfg_.allow_origin.empty()) return;
    res.set_header("Access-Control-Allow-Origin", cfg_.allow_origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  }

  ServiceConfig cfg_;
  std::map<std::string, Version> versions_;
  std::chrono::steady_clock::time_point started_;
  std::unordered_map<std::string, Session> sessions_;
  mutable std::shared_mutex index_mutex_;
  std::mutex journal_mutex_;
  std::atomic<std::size_t> scored_{0};
};

}  // namespace vbfi
