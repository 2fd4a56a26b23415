#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "support.hpp"
#include "vbfi/service.hpp"

using namespace vbfi;
using nlohmann::json;
using testing_support::synth_bundle;

namespace {

// A service bound to an ephemeral localhost port for the lifetime of the object.
class LiveServer {
 public:
  explicit LiveServer(ServiceConfig cfg) : service_(std::move(cfg)) {
    service_.mount(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LiveServer() {
    server_.stop();
    thread_.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(10, 0);
    return c;
  }
  QuestionnaireService& service() { return service_; }

 private:
  QuestionnaireService service_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

struct Env {
  testing_support::TempDir dir;
  ServiceConfig cfg;

  Env() {
    std::filesystem::create_directories(dir / "images");
    dir.write("images/img_000001.png", "PNGDATA");
    dir.write("secret", "do not serve");
    cfg.questionnaires = {synth_bundle().v1, synth_bundle().v2};
    cfg.images_dir = dir / "images";
    cfg.journal = dir / "responses.jsonl";
  }
};

json get_view(httplib::Client& c, const std::string& query = "") {
  auto r = c.Get("/api/questionnaire" + query);
  EXPECT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  return json::parse(r->body);
}

// One token per question; `pick` selects the on-screen position.
json choose(const json& view, std::size_t pick = 0) {
  json tokens = json::array();
  for (const auto& q : view["questions"]) tokens.push_back(q["options"][pick % q["options"].size()]["token"]);
  return tokens;
}

httplib::Result post(httplib::Client& c, const json& body) {
  return c.Post("/api/responses", body.dump(), "application/json");
}

std::size_t journal_rows(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) return 0;
  std::size_t n = 0;
  for (const auto& line : read_lines(p)) n += !trim(line).empty();
  return n;
}

}  // namespace

TEST(Service, ViewListsEveryQuestionWithoutAnswerKeys) {
  Env env;
  LiveServer s(env.cfg);
  auto c = s.client();
  const auto view = get_view(c);
  EXPECT_EQ(view["version_id"], "vbfi-1");
  EXPECT_EQ(view["question_count"], 25);
  ASSERT_EQ(view["questions"].size(), 25u);
  for (const auto& q : view["questions"]) EXPECT_EQ(q["options"].size(), 5u);
  const std::string raw = view.dump();
  for (const char* key : {"leaf_value", "leaf_index", "F0", "shrinkage", "cluster_rank", "model_hashes"}) {
    EXPECT_EQ(raw.find(key), std::string::npos) << key;
  }
  EXPECT_EQ(get_view(c, "?version=vbfi-2")["version_id"], "vbfi-2");
  EXPECT_EQ(c.Get("/api/questionnaire?version=nope")->status, 404);
}

TEST(Service, ViewBytesAreStable) {
  Env env;
  LiveServer s(env.cfg);
  auto c = s.client();
  EXPECT_EQ(c.Get("/api/questionnaire")->body, c.Get("/api/questionnaire")->body);
  LiveServer again(env.cfg);
  auto c2 = again.client();
  EXPECT_EQ(c.Get("/api/questionnaire")->body, c2.Get("/api/questionnaire")->body);
}

TEST(Service, ScoresMatchOfflineScoring) {
  Env env;
  LiveServer s(env.cfg);
  auto c = s.client();
  const auto view = get_view(c);
  auto r = post(c, {{"choices", choose(view, 2)}, {"self_rating", 5}});
  ASSERT_EQ(r->status, 200) << r->body;
  const auto body = json::parse(r->body);
  const auto sheets = load_responses(env.cfg.journal);
  ASSERT_EQ(sheets.size(), 1u);
  EXPECT_EQ(sheets[0].subject_id, body["session_id"]);
  EXPECT_EQ(sheets[0].self_rating, 5);
  const auto offline = score_response(synth_bundle().v1, sheets[0]);
  for (const auto& [t, v] : offline) EXPECT_EQ(body["scores"][std::string(to_string(t))].get<double>(), v);
}

TEST(Service, IncompleteSubmissionNamesTheGap) {
  Env env;
  LiveServer s(env.cfg);
  auto c = s.client();
  const auto view = get_view(c);
  auto tokens = choose(view);
  tokens.erase(tokens.size() - 1);
  const auto& last = view["questions"].back();
  auto r = post(c, {{"choices", tokens}});
  ASSERT_EQ(r->status, 400);
  const std::string msg = json::parse(r->body)["error"];
  EXPECT_NE(msg.find("trait " + last["trait"].get<std::string>() + " round " + std::to_string(last["round"].get<int>())),
            std::string::npos)
      << msg;
  EXPECT_EQ(journal_rows(env.cfg.journal), 0u);
}

TEST(Service, MalformedSubmissionsAreRejected) {
  Env env;
  LiveServer s(env.cfg);
  auto c = s.client();
  const auto view = get_view(c);
  EXPECT_EQ(c.Post("/api/responses", "{not json", "application/json")->status, 400);
  EXPECT_EQ(post(c, {{"choices", {"deadbeefdeadbeef"}}})->status, 400);
  EXPECT_EQ(post(c, {{"choices", choose(view)}, {"self_rating", 9}})->status, 400);
  EXPECT_EQ(post(c, {{"choices", choose(view)}, {"version_id", "nope"}})->status, 400);
  EXPECT_EQ(post(c, {{"choices", choose(view)}, {"session_id", "../x"}})->status, 400);
  // Tokens of another version are not accepted.
  EXPECT_EQ(post(c, {{"choices", choose(view)}, {"version_id", "vbfi-2"}})->status, 400);
  auto dup = choose(view);
  dup.push_back(dup[0]);
  EXPECT_EQ(post(c, {{"choices", dup}})->status, 400);
  EXPECT_EQ(journal_rows(env.cfg.journal), 0u);
}

TEST(Service, ResubmissionIsIdempotent) {
  Env env;
  LiveServer s(env.cfg);
  auto c = s.client();
  const auto view = get_view(c);
  const json body = {{"choices", choose(view, 1)}, {"session_id", "abc-1"}};
  auto first = post(c, body);
  auto second = post(c, body);
  ASSERT_EQ(first->status, 200);
  EXPECT_EQ(second->status, 200);
  EXPECT_EQ(first->body, second->body);
  EXPECT_EQ(journal_rows(env.cfg.journal), 1u);

  auto conflict = post(c, {{"choices", choose(view, 3)}, {"session_id", "abc-1"}});
  EXPECT_EQ(conflict->status, 409);
  EXPECT_EQ(journal_rows(env.cfg.journal), 1u);
}

TEST(Service, NewSelfRatingSupersedes) {
  Env env;
  LiveServer s(env.cfg);
  auto c = s.client();
  const auto view = get_view(c);
  json body = {{"choices", choose(view)}, {"session_id", "rated"}, {"self_rating", 2}};
  ASSERT_EQ(post(c, body)->status, 200);
  body["self_rating"] = 6;
  ASSERT_EQ(post(c, body)->status, 200);
  EXPECT_EQ(journal_rows(env.cfg.journal), 2u);
  const auto sheets = load_responses(env.cfg.journal);
  ASSERT_EQ(sheets.size(), 1u);
  EXPECT_EQ(sheets[0].self_rating, 6);
}

TEST(Service, JournalSurvivesRestart) {
  Env env;
  std::string first_body;
  json view;
  {
    LiveServer s(env.cfg);
    auto c = s.client();
    view = get_view(c);
    first_body = post(c, {{"choices", choose(view, 4)}, {"session_id", "persist"}})->body;
    ASSERT_EQ(post(c, {{"choices", choose(view, 1)}})->status, 200);
  }
  LiveServer again(env.cfg);
  EXPECT_EQ(again.service().session_count(), 2u);
  auto c = again.client();
  auto r = post(c, {{"choices", choose(view, 4)}, {"session_id", "persist"}});
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, first_body);
  EXPECT_EQ(post(c, {{"choices", choose(view, 0)}, {"session_id", "persist"}})->status, 409);
  EXPECT_EQ(journal_rows(env.cfg.journal), 2u);
}

TEST(Service, ConcurrentDuplicatesWriteOneRow) {
  Env env;
  LiveServer s(env.cfg);
  auto c0 = s.client();
  const auto view = get_view(c0);
  const json body = {{"choices", choose(view, 2)}, {"session_id", "race"}};
  std::vector<std::thread> threads;
  std::vector<std::string> bodies(8);
  std::atomic<int> ok{0};
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    threads.emplace_back([&, i] {
      auto c = s.client();
      auto r = post(c, body);
      if (r && r->status == 200) {
        ++ok;
        bodies[i] = r->body;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 8);
  for (const auto& b : bodies) EXPECT_EQ(b, bodies[0]);
  EXPECT_EQ(journal_rows(env.cfg.journal), 1u);
}

TEST(Service, ImagesAreServedFromTheImageDirectoryOnly) {
  Env env;
  LiveServer s(env.cfg);
  auto c = s.client();
  auto r = c.Get("/images/img_000001.png");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(r->body, "PNGDATA");
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(c.Get("/images/img_000001")->status, 200);
  EXPECT_EQ(c.Get("/images/img_999999")->status, 404);
  EXPECT_EQ(s.service().image("../secret").status, 400);
  EXPECT_NE(c.Get("/images/..%2Fsecret")->status, 200);
  EXPECT_FALSE(valid_image_id(".."));
  EXPECT_TRUE(valid_image_id("img_000001.png"));
}

TEST(Service, HealthReportsVersionAndCount) {
  Env env;
  LiveServer s(env.cfg);
  auto c = s.client();
  auto h = json::parse(c.Get("/api/health")->body);
  EXPECT_EQ(h["status"], "ok");
  EXPECT_EQ(h["questionnaire_version"], "vbfi-1");
  EXPECT_EQ(h["responses"], 0);
  post(c, {{"choices", choose(get_view(c))}});
  EXPECT_EQ(json::parse(c.Get("/api/health")->body)["responses"], 1);
}

TEST(Service, CorsHeadersOnlyWhenConfigured) {
  Env env;
  {
    LiveServer s(env.cfg);
    auto c = s.client();
    EXPECT_FALSE(c.Get("/api/health")->has_header("Access-Control-Allow-Origin"));
  }
  env.cfg.allow_origin = "https://example.org";
  LiveServer s(env.cfg);
  auto c = s.client();
  EXPECT_EQ(c.Get("/api/health")->get_header_value("Access-Control-Allow-Origin"), "https://example.org");
  auto pre = c.Options("/api/responses");
  EXPECT_EQ(pre->status, 204);
  EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "https://example.org");
}

TEST(Service, TokensAreOpaqueAndVersionSpecific) {
  const auto& q1 = synth_bundle().v1;
  const auto& q2 = synth_bundle().v2;
  const auto& question = q1.traits.at(Trait::O).questions[0];
  const auto tok = option_token(q1, Trait::O, 1, question.options[0]);
  EXPECT_EQ(tok.size(), 16u);
  EXPECT_EQ(tok, option_token(q1, Trait::O, 1, question.options[0]));
  EXPECT_NE(tok, option_token(q2, Trait::O, 1, q2.traits.at(Trait::O).questions[0].options[0]));
  EXPECT_EQ(tok.find(question.options[0].image_id), std::string::npos);
}
