#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"
#include "vbfi/cli.hpp"

using namespace vbfi;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), {"--log-level", "error"});
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Shared pipeline state: synthetic data and trained models, built once.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing_support::TempDir();
    ASSERT_EQ(run({"synth", "--seed", "7", "--out", (*dir_ / "data").string()}).code, 0);
    ASSERT_EQ(run({"train", "--data", (*dir_ / "data").string(), "--out", (*dir_ / "models").string()}).code, 0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string path(const std::string& name) { return (*dir_ / name).string(); }

  static testing_support::TempDir* dir_;
};

testing_support::TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST_F(CliPipeline, SynthWritesADatasetDirectory) {
  for (const char* f : {"images.jsonl", "favorites.csv", "traits.csv", "hierarchy.json", "concepts.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(path("data/") + f)) << f;
  }
  const auto ds = load_dataset(DatasetPaths::in_dir(path("data")));
  EXPECT_EQ(ds.users.size(), 104u);
  EXPECT_TRUE(validate_dataset(ds).empty());
}

TEST_F(CliPipeline, TrainWritesOneModelPerTrait) {
  for (auto t : kAllTraits) {
    const auto m = load_model(cli::model_path(path("models"), t));
    EXPECT_EQ(m.trait, t);
    EXPECT_EQ(m.rounds.size(), 5u);
  }
}

TEST_F(CliPipeline, TrainIsDeterministic) {
  ASSERT_EQ(run({"train", "--data", path("data"), "--out", path("models_again")}).code, 0);
  for (auto t : kAllTraits) {
    EXPECT_EQ(read_file(cli::model_path(path("models"), t)), read_file(cli::model_path(path("models_again"), t)));
  }
}

TEST_F(CliPipeline, EvaluateWritesOneRowPerFold) {
  const auto r = run({"evaluate", "--data", path("data"), "--trait", "O", "--out", path("eval.csv"), "--summary",
                      path("summary.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_file(path("eval.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "trait,repeat,fold,rmse");
  EXPECT_EQ(count_lines(csv), 101u);
  const auto summary = read_lines(path("summary.csv"));
  ASSERT_EQ(summary.size(), 4u);
  EXPECT_EQ(summary[0], "trait,learner,mean_rmse,std_rmse,p_value");
  EXPECT_EQ(summary[1].rfind("O,vgbdt,", 0), 0u);
}

TEST_F(CliPipeline, SweepWritesCsvAndPlot) {
  const auto r = run({"sweep", "--data", path("data"), "--trait", "E", "--param", "M", "--values", "0,2,4", "--folds",
                      "3", "--repeats", "1", "--plot", path("sweep.svg")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(r.out), 4u);
  EXPECT_NE(read_file(path("sweep.svg")).find("<svg"), std::string::npos);
}

TEST_F(CliPipeline, DesignThenScore) {
  ASSERT_EQ(run({"design", "--models", path("models"), "--data", path("data"), "--out", path("q1.json")}).code, 0);
  ASSERT_EQ(run({"design", "--models", path("models"), "--data", path("data"), "--cluster-choice", "2", "--out",
                 path("q2.json")})
                .code,
            0);
  const auto q1 = load_questionnaire(path("q1.json"));
  const auto q2 = load_questionnaire(path("q2.json"));
  EXPECT_EQ(q1.version_id, "vbfi-1");
  EXPECT_EQ(q2.version_id, "vbfi-2");
  EXPECT_EQ(q1.question_count(), 25u);

  std::string lines;
  for (const auto* q : {&q1, &q2}) {
    ResponseSheet s;
    s.subject_id = "subject_" + q->version_id;
    s.version_id = q->version_id;
    for (const auto& [t, section] : q->traits)
      for (const auto& question : section.questions) s.choices.push_back({t, question.round, question.options.back().leaf_index});
    lines += s.to_json().dump() + "\n";
  }
  testing_support::TempDir tmp;
  tmp.write("responses.jsonl", lines);
  const auto r = run({"score", "--questionnaire", path("q1.json"), "--questionnaire", path("q2.json"), "--responses",
                      (tmp / "responses.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string header, row;
  std::getline(in, header);
  EXPECT_EQ(header, "subject_id,version_id,O,C,E,A,N");
  std::size_t rows = 0;
  while (std::getline(in, row)) ++rows;
  EXPECT_EQ(rows, 2u);
}

TEST_F(CliPipeline, ScoringSkipsOtherVersionsAndRejectsBadSheets) {
  ASSERT_EQ(run({"design", "--models", path("models"), "--data", path("data"), "--out", path("q_only.json")}).code, 0);
  testing_support::TempDir tmp;
  tmp.write("responses.jsonl", R"({"subject_id":"x","version_id":"other","choices":[]})" "\n");
  const auto skipped = run({"score", "--questionnaire", path("q_only.json"), "--responses", (tmp / "responses.jsonl").string()});
  EXPECT_EQ(skipped.code, 0);
  EXPECT_EQ(count_lines(skipped.out), 1u);
  tmp.write("responses.jsonl", R"({"subject_id":"x","version_id":"vbfi-1","choices":[]})" "\n");
  const auto bad = run({"score", "--questionnaire", path("q_only.json"), "--responses", (tmp / "responses.jsonl").string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("subject x"), std::string::npos) << bad.err;
}

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run({"bogus"}).code, 1);
  EXPECT_EQ(run({"train"}).code, 1);
  EXPECT_EQ(run({"synth", "--out", "/tmp/x", "--users", "many"}).code, 1);
}

TEST(Cli, DataErrorsExitWithTwo) {
  testing_support::TempDir tmp;
  EXPECT_EQ(run({"train", "--data", (tmp / "missing").string(), "--out", (tmp / "m").string()}).code, 2);
  tmp.write("data/images.jsonl", "{\"image_id\": \"a\"\n");
  tmp.write("data/favorites.csv", "user_id,image_id\n");
  tmp.write("data/traits.csv", "user_id,O,C,E,A,N\n");
  const auto r = run({"train", "--data", (tmp / "data").string(), "--out", (tmp / "m").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("images.jsonl:1"), std::string::npos) << r.err;
}

TEST(Cli, HelpListsSubcommands) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* cmd : {"synth", "expand-concepts", "train", "evaluate", "sweep", "design", "score", "serve"}) {
    EXPECT_NE(r.out.find(cmd), std::string::npos) << cmd;
  }
}
