#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const char* kSpec = R"({
  "labels": ["PER", "GPE", "FAC"],
  "train": 150, "dev": 30, "test": 30,
  "entities": {"PER": ["George Washington", "Abraham Lincoln", "Maria Lopez", "Smith"],
               "GPE": ["New York", "Texas", "France"]},
  "compositions": [{"inner": "PER", "heads": ["Bridge", "Memorial"], "label": "FAC"}],
  "composition_rate": 0.4,
  "templates": ["{M} said {F} .", "they flew from {M} to {M} .", "{F} {M} visited {M} .", "she works near {M} ."],
  "fillers": ["today", "again", "later", "soon"],
  "max_filler": 2
})";

const char* kRlFlags =
    " --steps 10000 --eval-every 2500 --mode mention_partial --min-count 2 --alpha 0.05 --alpha-end 0.005"
    " --set features.hidden_dim=32 --seed 2";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("mentree_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    spit(dir / "spec.json", kSpec);
    ASSERT_EQ(run("synth --seed 3 --spec spec.json --out data"), 0);
    ASSERT_EQ(run(std::string("train-rl --data data --out rl.json --metrics rl.jsonl") + kRlFlags), 0);
    ASSERT_EQ(run("train-sl --data data --out sl.json --metrics sl.jsonl --epochs 5 --set features.hidden_dim=32 "
                  "--seed 2"),
              0);
  }

  static void TearDownTestSuite() { fs::remove_all(dir); }

  // Runs the CLI inside `dir`; stdout to out.txt and stderr to err.txt.
  static int run(const std::string& args) {
    const std::string cmd =
        "cd '" + dir.string() + "' && '" + MENTREE_CLI + "' " + args + " > out.txt 2> err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string out() { return slurp(dir / "out.txt"); }
  static std::string err() { return slurp(dir / "err.txt"); }
};

fs::path Cli::dir;

}  // namespace

TEST_F(Cli, SynthIsDeterministic) {
  ASSERT_EQ(run("synth --seed 3 --spec spec.json --out again"), 0);
  for (const char* f : {"train.conll", "dev.conll", "test.conll", "manifest.json"})
    EXPECT_EQ(slurp(dir / "data" / f), slurp(dir / "again" / f)) << f;
  ASSERT_EQ(run("synth --seed 4 --spec spec.json --out other"), 0);
  EXPECT_NE(slurp(dir / "data" / "train.conll"), slurp(dir / "other" / "train.conll"));
  const auto manifest = nlohmann::json::parse(slurp(dir / "data" / "manifest.json"));
  EXPECT_EQ(manifest.at("seed"), 3);
}

TEST_F(Cli, TrainingIsDeterministic) {
  ASSERT_EQ(run(std::string("train-rl --data data --out rl2.json --metrics rl2.jsonl") + kRlFlags), 0);
  EXPECT_EQ(slurp(dir / "rl.json"), slurp(dir / "rl2.json"));
  EXPECT_EQ(slurp(dir / "rl.jsonl"), slurp(dir / "rl2.jsonl"));
  ASSERT_EQ(run("train-sl --data data --out sl2.json --metrics sl2.jsonl --epochs 5 --set features.hidden_dim=32 "
                "--seed 2"),
            0);
  EXPECT_EQ(slurp(dir / "sl.json"), slurp(dir / "sl2.json"));
}

TEST_F(Cli, MetricsAreJsonLines) {
  std::istringstream in(slurp(dir / "rl.jsonl"));
  std::string line;
  std::vector<long> steps;
  while (std::getline(in, line)) steps.push_back(nlohmann::json::parse(line).at("step").get<long>());
  EXPECT_EQ(steps, (std::vector<long>{2500, 5000, 7500, 10000}));
  std::istringstream sl(slurp(dir / "sl.jsonl"));
  int epochs = 0;
  while (std::getline(sl, line)) EXPECT_EQ(nlohmann::json::parse(line).at("epoch"), ++epochs);
  EXPECT_EQ(epochs, 5);
}

TEST_F(Cli, TagWritesTrees) {
  spit(dir / "gwb.conll", "George B-FAC\nWashington I-FAC\nBridge I-FAC\nopened O\n. O\n");
  ASSERT_EQ(run("tag --model rl.json --in gwb.conll --out gwb.out --trees"), 0);
  EXPECT_EQ(slurp(dir / "gwb.out"), "George B-FAC\nWashington I-FAC\nBridge I-FAC\nopened O\n. O\n\n");
  EXPECT_NE(slurp(dir / "gwb.out.trees").find("[[George Washington]_PER Bridge]_FAC"), std::string::npos)
      << slurp(dir / "gwb.out.trees");
  EXPECT_EQ(run("tag --model sl.json --in gwb.conll --out sl.out --trees"), 1);
  EXPECT_EQ(run("tag --model sl.json --in gwb.conll --out sl.out"), 0);
}

TEST_F(Cli, EvalAndAnalyses) {
  ASSERT_EQ(run("eval --model rl.json --data data/test.conll --json eval.json"), 0);
  EXPECT_NE(out().find("overall"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(dir / "eval.json"));
  EXPECT_GE(report.at("f1").get<double>(), 0.9);
  ASSERT_EQ(run("analyze-submentions --model rl.json --data data --json sub.json"), 0);
  EXPECT_NE(out().find("Corr lbl"), std::string::npos);
  const auto sub = nlohmann::json::parse(slurp(dir / "sub.json"));
  EXPECT_EQ(sub.at("rows").size(), 4u);
  ASSERT_EQ(run("analyze-bias --sl sl.json --rl rl.json --data data --split dev --json bias.json"), 0);
  EXPECT_NE(out().find("#RL errors"), std::string::npos);
  EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "bias.json")).contains("sl"));
  EXPECT_EQ(run("analyze-submentions --model sl.json --data data"), 1);
}

TEST_F(Cli, TraceIsJsonLines) {
  ASSERT_EQ(run("trace --model rl.json --sentence 'Smith visited Texas .'"), 0);
  std::istringstream in(out());
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_GE(rows.size(), 2u);
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    EXPECT_EQ(rows[i].at("step"), static_cast<int>(i));
    const auto& legal = rows[i].at("legal");
    const std::string action = rows[i].at("action");
    EXPECT_NE(std::find(legal.begin(), legal.end(), action), legal.end());
    EXPECT_EQ(rows[i].at("q").size(), legal.size());
  }
  EXPECT_EQ(rows.back().at("tags").size(), 4u);
  const std::string first = out();
  ASSERT_EQ(run("trace --model rl.json --sentence 'Smith visited Texas .'"), 0);
  EXPECT_EQ(out(), first);
}

TEST_F(Cli, Gradcheck) {
  ASSERT_EQ(run("gradcheck --seed 1"), 0);
  EXPECT_NE(out().find("max relative error"), std::string::npos);
  EXPECT_EQ(run("gradcheck --seed 1 --networks 2 --tolerance 0"), 3);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("synth --seed 1 --out x --bogus"), 1);
  EXPECT_EQ(run("synth --out x"), 1);
  spit(dir / "bad.json", R"({"learner": {"stpes": 10}})");
  EXPECT_EQ(run("train-rl --config bad.json --data data --out m.json"), 1);
  EXPECT_NE(err().find("stpes"), std::string::npos);
  EXPECT_EQ(run("train-rl --data data --out m.json --set learner.gama=0.5"), 1);
  EXPECT_EQ(run("train-rl --data data --out m.json --curriculum maybe"), 1);
  EXPECT_EQ(run("train-rl --data missing --out m.json"), 2);
  EXPECT_EQ(run("eval --model nothere.json --data data/test.conll"), 2);
  spit(dir / "broken.conll", "John B-PER\nSmith Q-PER\n");
  EXPECT_EQ(run("eval --model rl.json --data broken.conll"), 2);
  EXPECT_NE(err().find("broken.conll: line 2"), std::string::npos) << err();
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, ShippedConfigsParse) {
  for (const char* cfg : {"rl_mention.json", "rl_sarsa.json", "rl_partial.json", "rl_sentence.json"})
    EXPECT_EQ(run(std::string("train-rl --config ") + MENTREE_SOURCE_DIR + "/configs/" + cfg +
                  " --data data --out cfg.json --steps 20 --eval-every 10"),
              0)
        << cfg << err();
  EXPECT_EQ(run(std::string("train-sl --config ") + MENTREE_SOURCE_DIR +
                "/configs/sl.json --data data --out cfg.json --epochs 1"),
            0)
      << err();
  EXPECT_EQ(run(std::string("synth --seed 1 --spec ") + MENTREE_SOURCE_DIR + "/configs/synth.json --out full"), 0);
}
