#include "support.hpp"

#include <gtest/gtest.h>

using namespace msfs;
using testing_support::Gen;
using testing_support::read_file;
using testing_support::scratch_dir;
using testing_support::write_file;

namespace {

// Labels are thresholded linear functions of the first few features.
Dataset synthetic(std::uint64_t seed, Index n, Index p, Index m) {
  Gen g(seed);
  Dataset ds = g.dataset(n, p, m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      ds.labels(i, j) = ds.features(i, j % p) + 0.3 * g.normal() > 0.2 ? 1.0 : 0.0;
    }
  }
  return ds;
}

std::string to_csv(const Dataset& ds) {
  std::string out;
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index j = 0; j < ds.dim(); ++j) out += format_double(ds.features(i, j)) + ",";
    for (Index j = 0; j < ds.label_count(); ++j) {
      out += (ds.labels(i, j) == 1.0 ? "1" : "0");
      out += j + 1 < ds.label_count() ? "," : "\n";
    }
  }
  return out;
}

Json base_config(const std::filesystem::path& dir) {
  write_file(dir / "a.csv", to_csv(synthetic(1, 60, 10, 3)));
  write_file(dir / "b.csv", to_csv(synthetic(2, 50, 8, 3)));
  return Json::parse(R"({
    "datasets": [
      {"name": "a", "path": ")" + (dir / "a.csv").string() + R"(", "labels": 3},
      {"name": "b", "path": ")" + (dir / "b.csv").string() + R"(", "labels": 3,
       "split": {"train_count": 30, "test_count": 20, "mode": "shuffled"}}
    ],
    "split": {"train_count": 40, "test_count": 20},
    "noise": {"ratio": 0.1},
    "walk": {"steps": 15},
    "solver": {"alpha": [0.1, 1], "beta": [0.1, 10], "rho": [0, 0.5, 1], "max_iters": 20},
    "feature_counts": [2, 5, 9],
    "mlknn": {"k": 5},
    "repetitions": 2,
    "seed": 11
  })");
}

}  // namespace

TEST(BenchConfig, DefaultsFollowTheProtocol) {
  const auto dir = scratch_dir("bench_defaults");
  Json j = base_config(dir);
  j.erase("solver");
  j.erase("feature_counts");
  j.erase("mlknn");
  j.erase("walk");
  const auto cfg = parse_config(j);
  EXPECT_EQ(cfg.alpha_list, default_decades());
  EXPECT_EQ(cfg.alpha_list.size(), 9u);
  EXPECT_EQ(cfg.alpha_list.front(), 1e-5);
  EXPECT_EQ(cfg.beta_list.back(), 1e3);
  EXPECT_EQ(cfg.rho_list.size(), 11u);
  EXPECT_EQ(cfg.feature_counts.size(), 20u);
  EXPECT_EQ(cfg.feature_counts.back(), 100);
  EXPECT_EQ(cfg.mlknn_k, 7);
  EXPECT_EQ(cfg.walk_steps, 80);
  EXPECT_EQ(cfg.max_iters, 50);
  EXPECT_EQ(usable_counts(cfg, 12), (std::vector<Index>{5, 10}));
}

TEST(BenchConfig, UnknownKeysAndBadValuesRejected) {
  const auto dir = scratch_dir("bench_reject");
  const Json good = base_config(dir);
  for (const auto& path : {"/bogus", "/solver/gamma", "/walk/depth", "/datasets/0/weight",
                           "/split/ratio", "/mlknn/metric"}) {
    Json j = good;
    j[Json::json_pointer(path)] = 1;
    EXPECT_THROW(parse_config(j), UsageError) << path;
  }
  Json neg = good;
  neg["solver"]["beta"] = {0.0};
  EXPECT_THROW(parse_config(neg), UsageError);
  Json empty = good;
  empty["solver"]["rho"] = Json::array();
  EXPECT_THROW(parse_config(empty), UsageError);
  Json dup = good;
  dup["datasets"][1]["name"] = "a";
  EXPECT_THROW(parse_config(dup), UsageError);
}

TEST(BenchConfig, FingerprintIgnoresKeyOrderOutputAndThreads) {
  const auto dir = scratch_dir("bench_fp");
  const Json j = base_config(dir);
  // Same content with keys emitted in reverse order.
  std::string reversed = "{";
  std::vector<std::string> keys;
  for (const auto& [k, _] : j.items()) keys.push_back(k);
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) {
    reversed += "\"" + *it + "\":" + j[*it].dump() + (std::next(it) == keys.rend() ? "" : ",");
  }
  reversed += "}";
  const auto a = parse_config(j);
  Json other = Json::parse(reversed);
  other["output"] = "/somewhere/else";
  other["threads"] = 8;
  EXPECT_EQ(config_fingerprint(a), config_fingerprint(parse_config(other)));
  Json reseeded = j;
  reseeded["seed"] = 12;
  EXPECT_NE(config_fingerprint(a), config_fingerprint(parse_config(reseeded)));
}

TEST(Bench, SequentialAndParallelOutputsAreIdentical) {
  const auto dir = scratch_dir("bench_parallel");
  auto cfg = parse_config(base_config(dir));
  cfg.threads = 1;
  const auto seq = run_bench(cfg, dir / "seq");
  cfg.threads = 4;
  const auto par = run_bench(cfg, dir / "par");
  // Dataset b has 8 features, so l = 9 is dropped there.
  EXPECT_EQ(seq.cells.size(), 2u * 2 * 3 * 2 * (3 + 2));
  for (const char* f : {"summary.csv", "aggregate.csv", "best.csv", "baseline.csv",
                        "ranks_ranking_loss.csv", "cd_summary.txt"}) {
    EXPECT_EQ(read_file(dir / "seq" / f), read_file(dir / "par" / f)) << f;
  }
  const auto again = run_bench(cfg, dir / "again");
  EXPECT_EQ(read_file(dir / "seq" / "summary.csv"), read_file(dir / "again" / "summary.csv"));
  EXPECT_EQ(again.resumed, 0u);
}

TEST(Bench, InterruptedRunResumesToSameResult) {
  const auto dir = scratch_dir("bench_resume");
  const auto cfg = parse_config(base_config(dir));
  const auto full = run_bench(cfg, dir / "full");
  const auto partial = run_bench(cfg, dir / "resumed", 5);
  EXPECT_LT(partial.cells.size(), full.cells.size());
  const auto resumed = run_bench(cfg, dir / "resumed");
  EXPECT_EQ(resumed.cells.size(), full.cells.size());
  EXPECT_EQ(resumed.resumed, partial.cells.size());
  EXPECT_EQ(resumed.computed + resumed.resumed, full.cells.size());
  EXPECT_EQ(read_file(dir / "full" / "summary.csv"), read_file(dir / "resumed" / "summary.csv"));
  const auto finished = run_bench(cfg, dir / "resumed");
  EXPECT_EQ(finished.computed, 0u);
}

TEST(Bench, SummaryIsSortedAndComplete) {
  const auto dir = scratch_dir("bench_sorted");
  const auto cfg = parse_config(base_config(dir));
  const auto r = run_bench(cfg, dir / "out");
  for (std::size_t i = 1; i < r.cells.size(); ++i) {
    EXPECT_TRUE(r.cells[i - 1].key < r.cells[i].key);
  }
  for (const auto& c : r.cells) {
    EXPECT_TRUE(c.metrics.has_value()) << c.error;
    EXPECT_TRUE(c.error.empty());
  }
  const std::string summary = read_file(dir / "out" / "summary.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(summary.begin(), summary.end(), '\n')),
            r.cells.size() + 1);
  const auto run = Json::parse(read_file(dir / "out" / "run.json"));
  EXPECT_EQ(run["fingerprint"], r.fingerprint);
  EXPECT_EQ(run["seeds"].size(), 4u);
  EXPECT_TRUE(run["wall_clock_seconds"].contains("graph"));
}

TEST(Bench, BestCellReproducesOnReevaluation) {
  const auto dir = scratch_dir("bench_best");
  Json j = base_config(dir);
  j["repetitions"] = 1;
  const auto cfg = parse_config(j);
  const auto r = run_bench(cfg, dir / "out");
  const std::size_t ap = 5;
  for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
    const auto best = best_row(r.aggregate, d, ap);
    ASSERT_TRUE(best);
    const auto& row = r.aggregate[*best];
    const auto src = load_source(cfg.datasets[d].source);
    const auto ctx = make_context(cfg, d, src, 0);
    const auto cells = evaluate_group(cfg, ctx, d, 0, row.alpha, row.beta, row.rho, {row.l});
    ASSERT_TRUE(cells[0].metrics);
    EXPECT_NEAR(cells[0].metrics->average_precision, row.mean[ap], 1e-12);
    EXPECT_NEAR(cells[0].metrics->ranking_loss, row.mean[1], 1e-12);
    EXPECT_NEAR(cells[0].metrics->hamming_loss, row.mean[0], 1e-12);
  }
}

TEST(Bench, BestOverRhoGridDominatesRhoOne) {
  const auto dir = scratch_dir("bench_gridmax");
  Json j = base_config(dir);
  j["solver"] = Json::parse(R"({"alpha": [0.1], "beta": [10], "rho": [0, 0.5, 1]})");
  j["feature_counts"] = {5};
  j["repetitions"] = 3;
  const auto cfg = parse_config(j);
  const auto r = run_bench(cfg, dir / "out");
  for (std::size_t d = 0; d < cfg.datasets.size(); ++d) {
    const auto all = best_row(r.aggregate, d, 5);
    const auto rho1 = best_row(r.aggregate, d, 5, [](const AggregateRow& a) { return a.rho == 1.0; });
    ASSERT_TRUE(all && rho1);
    EXPECT_GE(r.aggregate[*all].mean[5], r.aggregate[*rho1].mean[5]);
    EXPECT_EQ(r.aggregate[*all].reps, 3);
  }
}

TEST(Bench, FailingCellsAreRecordedAndRunContinues) {
  const auto dir = scratch_dir("bench_fail");
  Json j = base_config(dir);
  j["mlknn"]["k"] = 35;  // larger than dataset b's 30 training rows
  j["repetitions"] = 1;
  const auto cfg = parse_config(j);
  const auto r = run_bench(cfg, dir / "out");
  std::size_t failed = 0;
  for (const auto& c : r.cells) {
    if (c.key.dataset == 1) {
      EXPECT_FALSE(c.metrics);
      EXPECT_NE(c.error.find("k=35"), std::string::npos) << c.error;
      ++failed;
    } else {
      EXPECT_TRUE(c.metrics);
    }
  }
  EXPECT_GT(failed, 0u);
  EXPECT_EQ(r.baseline_errors.count(1), 1u);
  EXPECT_NE(read_file(dir / "out" / "summary.csv").find("k=35"), std::string::npos);
}
