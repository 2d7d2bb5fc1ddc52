// Runs the msfs executable end to end.

#include "support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

using namespace msfs;
using testing_support::data_path;
using testing_support::read_file;
using testing_support::scratch_dir;
using testing_support::write_file;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::string& args, const std::filesystem::path& dir) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string(MSFS_CLI) + " " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

std::string tiny_args() { return "--data " + data_path("tiny.csv") + " --labels 3"; }

}  // namespace

TEST(CliStats, TinyFixtureJson) {
  const auto dir = scratch_dir("cli_stats");
  const auto r = run("stats " + tiny_args(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["dim"], 5);
  EXPECT_EQ(j["labels"], 3);
  EXPECT_EQ(j["size"], 8);
  EXPECT_EQ(j["pmc"], 0.5);
  EXPECT_EQ(j["anl"], 1.5);
  EXPECT_EQ(j["dens"], 0.5);
}

TEST(CliStats, ArffWithXmlLabels) {
  const auto dir = scratch_dir("cli_stats_arff");
  const auto r = run("stats --format arff --data " + data_path("mini.arff") + " --labels " +
                         data_path("mini.xml"),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["size"], 5);
}

TEST(CliStats, MissingFileIsIoError) {
  const auto dir = scratch_dir("cli_missing");
  const auto r = run("stats --data " + (dir / "nope.csv").string() + " --labels 2", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.csv"), std::string::npos);
}

TEST(CliUsage, BadFlagsExitFour) {
  const auto dir = scratch_dir("cli_usage");
  EXPECT_EQ(run("stats --labels 3", dir).code, 4);
  EXPECT_EQ(run("frobnicate", dir).code, 4);
  EXPECT_EQ(run("graph " + tiny_args() + " --mode sideways --out " + dir.string(), dir).code, 4);
  EXPECT_EQ(run("stats --data " + data_path("tiny.csv") + " --labels 9", dir).code, 4);
}

TEST(CliGraph, RepeatedRunsAreByteIdentical) {
  const auto dir = scratch_dir("cli_graph");
  const std::string common = "graph " + tiny_args() + " --steps 5 --mode bfs --seed 1 --out ";
  ASSERT_EQ(run(common + (dir / "a").string(), dir).code, 0);
  ASSERT_EQ(run(common + (dir / "b").string(), dir).code, 0);
  EXPECT_EQ(read_file(dir / "a" / "S.tsv"), read_file(dir / "b" / "S.tsv"));
  EXPECT_EQ(read_file(dir / "a" / "diagnostics.json"), read_file(dir / "b" / "diagnostics.json"));
  EXPECT_FALSE(read_file(dir / "a" / "S.tsv").empty());
  ASSERT_EQ(run("graph " + tiny_args() + " --steps 5 --mode bfs --seed 2 --out " +
                    (dir / "c").string(),
                dir)
                .code,
            0);
  EXPECT_NE(read_file(dir / "a" / "S.tsv"), read_file(dir / "c" / "S.tsv"));
}

TEST(CliGraph, TwoNodeChain) {
  // Both rows share their only label, so each node's only move is to the other.
  const auto dir = scratch_dir("cli_chain");
  const std::string data = "--data " + data_path("chain.csv") + " --labels 1 --steps 5";
  ASSERT_EQ(run("graph " + data + " --mode bfs --out " + (dir / "bfs").string(), dir).code, 0);
  EXPECT_EQ(read_file(dir / "bfs" / "S.tsv"), "0\t1\t5\n1\t0\t5\n");
  ASSERT_EQ(run("graph " + data + " --mode dfs --out " + (dir / "dfs").string(), dir).code, 0);
  EXPECT_EQ(read_file(dir / "dfs" / "S.tsv"), "0\t1\t1\n1\t0\t1\n");
  const auto diag = nlohmann::json::parse(read_file(dir / "dfs" / "diagnostics.json"));
  EXPECT_EQ(diag["early_terminations"].size(), 2u);
  EXPECT_EQ(diag["early_terminations"][0]["steps_taken"], 1);
}

TEST(CliGraph, DisjointLabelsAreAllIsolated) {
  const auto dir = scratch_dir("cli_isolated");
  ASSERT_EQ(run("graph --data " + data_path("isolated.csv") + " --labels 3 --out " + dir.string(),
                dir)
                .code,
            0);
  const auto diag = nlohmann::json::parse(read_file(dir / "diagnostics.json"));
  EXPECT_EQ(diag["isolated"], nlohmann::json::parse("[0,1,2,3]"));
}

TEST(CliSelect, AllFeaturesInScoreOrder) {
  const auto dir = scratch_dir("cli_select_all");
  const auto r = run("select " + tiny_args() + " --alpha 0.1 --beta 1 -l 5", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  const auto sel = j["selected_indices"].get<std::vector<Index>>();
  const auto scores = j["scores"].get<std::vector<double>>();
  ASSERT_EQ(sel.size(), 5u);
  for (std::size_t i = 1; i < sel.size(); ++i) EXPECT_GE(scores[sel[i - 1]], scores[sel[i]]);
  auto sorted = sel;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<Index>{0, 1, 2, 3, 4}));
  const auto trace = j["objective_trace"].get<std::vector<double>>();
  for (std::size_t t = 1; t < trace.size(); ++t) {
    EXPECT_LE(trace[t], trace[t - 1] + 1e-9 * std::max(1.0, std::abs(trace[t - 1])));
  }
}

TEST(CliSelect, DeterministicWithoutManifoldOrWithGraphFile) {
  const auto dir = scratch_dir("cli_select_det");
  const auto a = run("select " + tiny_args() + " --rho 0 --seed 1 -l 3", dir);
  const auto b = run("select " + tiny_args() + " --rho 0 --seed 2 -l 3", dir);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);

  ASSERT_EQ(run("graph " + tiny_args() + " --seed 5 --out " + (dir / "g").string(), dir).code, 0);
  const std::string with_graph = "select " + tiny_args() + " --alpha 1 --graph-file " +
                                 (dir / "g" / "S.tsv").string() + " -l 3";
  const auto c = run(with_graph + " --seed 1", dir);
  const auto d = run(with_graph + " --seed 99", dir);
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(c.out, d.out);
  // The same graph built in-process gives the same selection.
  const auto e = run("select " + tiny_args() + " --alpha 1 --seed 5 -l 3", dir);
  EXPECT_EQ(c.out, e.out);
}

TEST(CliSelect, ErrorsMapToExitCodes) {
  const auto dir = scratch_dir("cli_select_err");
  EXPECT_EQ(run("select " + tiny_args() + " -l 6", dir).code, 4);
  EXPECT_EQ(run("select " + tiny_args() + " --beta 0 -l 2", dir).code, 4);
  EXPECT_EQ(run("select " + tiny_args() + " --graph-file " + (dir / "none.tsv").string() + " -l 2",
                dir)
                .code,
            2);
  // A negative similarity makes the Laplacian indefinite and the W system singular.
  write_file(dir / "neg.tsv", "0\t1\t-1000\n1\t0\t-1000\n");
  const auto r = run("select " + tiny_args() + " --alpha 10 --beta 0.001 --graph-file " +
                         (dir / "neg.tsv").string() + " -l 2",
                     dir);
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(CliEval, MatchesInProcessEvaluation) {
  const auto dir = scratch_dir("cli_eval");
  write_file(dir / "sel.json", R"({"selected_indices": [0, 3, 1]})");
  const std::string split = " --train-count 6 --test-count 2";
  const auto r = run("eval " + tiny_args() + split + " -k 3 --selection " +
                         (dir / "sel.json").string(),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);

  const Dataset ds = load_csv(data_path("tiny.csv"), 3);
  const auto tr = ds.rows({0, 1, 2, 3, 4, 5}).select_features({0, 3, 1});
  const auto te = ds.rows({6, 7}).select_features({0, 3, 1});
  const auto model = mlknn_fit(tr.features, tr.labels, 3);
  const auto pred = mlknn_predict(model, te.features);
  const auto ref = evaluate(pred.scores, pred.binary, te.labels);
  EXPECT_EQ(j["hamming_loss"], ref.hamming_loss);
  EXPECT_EQ(j["ranking_loss"], ref.ranking_loss);
  EXPECT_EQ(j["average_precision"], ref.average_precision);
  EXPECT_EQ(j["coverage"], ref.coverage);
}

TEST(CliEval, IndexOutOfRangeExitsFour) {
  const auto dir = scratch_dir("cli_eval_bad");
  write_file(dir / "sel.json", R"({"selected_indices": [0, 5]})");
  const auto r = run("eval " + tiny_args() + " --train-count 6 --test-count 2 --selection " +
                         (dir / "sel.json").string(),
                     dir);
  EXPECT_EQ(r.code, 4);
  write_file(dir / "junk.json", "{not json");
  EXPECT_EQ(run("eval " + tiny_args() + " --train-count 6 --test-count 2 --selection " +
                    (dir / "junk.json").string(),
                dir)
                .code,
            2);
}

TEST(CliBench, SingleCellGrid) {
  const auto dir = scratch_dir("cli_bench");
  const std::string cfg = R"({
    "datasets": [{"name": "tiny", "path": ")" + data_path("tiny.csv") + R"(", "labels": 3,
                  "split": {"train_count": 6, "test_count": 2}}],
    "solver": {"alpha": [0.1], "beta": [1], "rho": [0.5]},
    "feature_counts": [3], "mlknn": {"k": 3}, "walk": {"steps": 10}, "seed": 4
  })";
  write_file(dir / "cfg.json", cfg);
  const auto r = run("bench " + (dir / "cfg.json").string() + " --out " + (dir / "out").string(),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string summary = read_file(dir / "out" / "summary.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 2);
  EXPECT_EQ(summary.substr(0, summary.find('\n')),
            "dataset,alpha,beta,rho,l,rep,hamming_loss,ranking_loss,one_error,coverage,"
            "coverage_normalized,average_precision,error");
  for (const char* f : {"aggregate.csv", "best.csv", "baseline.csv", "run.json",
                        "ranks_average_precision.csv", "cd_summary.txt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / f)) << f;
  }
  write_file(dir / "bad.json", R"({"datasets": [], "bogus": 1})");
  EXPECT_EQ(run("bench " + (dir / "bad.json").string() + " --out " + dir.string(), dir).code, 4);
  EXPECT_EQ(run("bench " + (dir / "absent.json").string() + " --out " + dir.string(), dir).code, 2);
}
